"""Binary PGM (P5) emission of discrete sets and fuzzy sets.

The raster is aligned with the net's source grid: (n+1) x (n+1) pixels
in dimension 2 (aleatory nets rasterize through the grid their points
were drawn from), a single row of n+1 pixels in dimension 1.  Rows run
top to bottom with the top row at maximal y.

Grey convention: a fuzzy membership of 1 is a white pixel (byte 255) and
0 is black; crisp set members are black on a white background.  The
``invert`` flag flips both conventions.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

from .nets import Net
from .operators import DiscreteFuzzySet, DiscreteSet


def image_bytes(data: Union[DiscreteSet, DiscreteFuzzySet], net: Net,
                invert: bool = False) -> bytes:
    """The full PGM file contents for ``data`` on ``net``."""
    n = net.n
    width = n + 1
    height = width if net.dimension == 2 else 1
    flat = np.zeros(width * height, dtype=np.uint8)
    if isinstance(data, DiscreteFuzzySet):
        support = data.support()
        flat[net.grid_from_local(support)] = data.values[support]
    elif isinstance(data, DiscreteSet):
        flat.fill(255)
        flat[net.grid_from_local(data.indices)] = 0
    else:
        raise TypeError("expected a DiscreteSet or DiscreteFuzzySet")
    if invert:
        flat = 255 - flat
    if net.dimension == 2:
        raster = flat.reshape(width, width).T[::-1, :]  # rows: y max -> min
    else:
        raster = flat.reshape(1, width)
    header = b"P5\n%d %d\n255\n" % (width, height)
    return header + raster.tobytes()


def write_image(data: Union[DiscreteSet, DiscreteFuzzySet], net: Net,
                path: Union[str, Path], invert: bool = False) -> Path:
    path = Path(path)
    path.write_bytes(image_bytes(data, net, invert))
    return path
