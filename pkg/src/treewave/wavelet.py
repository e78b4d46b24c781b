"""Orthonormal multi-level 2-D Haar transform and its coefficient layout.

The transform maps an image to a flat coefficient vector in a fixed
canonical order: the scaling (approximation) block first, then detail
levels 1..L from coarsest to finest, each level holding its H, V, D
orientation bands row-major.  Detail coefficients form a forest of
quad-trees: every node at level l > 1 has a parent at level l - 1, same
orientation, at the spatially co-located position.

Conventions (fixed so dumps are comparable across runs):
  * analysis filters (1/sqrt2)(1, 1) and (1/sqrt2)(1, -1), low-pass
    before high-pass, rows filtered before columns;
  * orientation H = high-pass along rows, V = high-pass along columns,
    D = high-pass along both.
"""

from dataclasses import dataclass, field

import numpy as np

_SQRT2 = np.sqrt(2.0)

ORIENT_SCALING = 0
ORIENT_H = 1
ORIENT_V = 2
ORIENT_D = 3

ORIENT_NAMES = {ORIENT_SCALING: "scaling", ORIENT_H: "H", ORIENT_V: "V", ORIENT_D: "D"}


@dataclass(frozen=True)
class WaveletLayout:
    """Coefficient metadata for a (height, width) image at depth L.

    Arrays are indexed by canonical coefficient position.  ``level`` is 0
    for scaling coefficients and 1..L for detail levels (1 = coarsest).
    ``parent`` is -1 for scaling coefficients and level-1 roots.
    """

    height: int
    width: int
    levels: int
    level: np.ndarray = field(repr=False)
    orientation: np.ndarray = field(repr=False)
    parent: np.ndarray = field(repr=False)
    row: np.ndarray = field(repr=False)
    col: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.height * self.width

    @property
    def n_scaling(self) -> int:
        return (self.height >> self.levels) * (self.width >> self.levels)

    @property
    def n_detail(self) -> int:
        return self.n - self.n_scaling

    def band_shape(self, level: int) -> tuple[int, int]:
        """Shape of one orientation band at ``level`` (0 = scaling block)."""
        shift = self.levels if level == 0 else self.levels - level + 1
        return (self.height >> shift, self.width >> shift)

    def band_slice(self, level: int, orientation: int) -> slice:
        """Canonical-vector slice of one (level, orientation) band."""
        if level == 0:
            if orientation != ORIENT_SCALING:
                raise ValueError("level 0 holds only the scaling band")
            return slice(0, self.n_scaling)
        h, w = self.band_shape(level)
        start = self.n_scaling
        for l in range(1, level):
            hl, wl = self.band_shape(l)
            start += 3 * hl * wl
        start += (orientation - ORIENT_H) * h * w
        return slice(start, start + h * w)

    def level_slice(self, level: int) -> slice:
        """Slice covering all three orientation bands of a detail level."""
        first = self.band_slice(level, ORIENT_H)
        last = self.band_slice(level, ORIENT_D)
        return slice(first.start, last.stop)


def make_layout(height: int, width: int, levels: int) -> WaveletLayout:
    """Build the coefficient layout for an image of the given size.

    Raises ValueError unless 2**levels divides both dimensions.
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    div = 1 << levels
    if height % div or width % div:
        raise ValueError(
            f"image dims ({height}, {width}) must be multiples of 2^{levels} = {div}"
        )

    n = height * width
    level = np.zeros(n, dtype=np.int16)
    orientation = np.zeros(n, dtype=np.int16)
    parent = np.full(n, -1, dtype=np.int64)
    row = np.zeros(n, dtype=np.int64)
    col = np.zeros(n, dtype=np.int64)

    sh, sw = height >> levels, width >> levels
    pos = sh * sw
    rr, cc = np.divmod(np.arange(sh * sw), sw)
    row[:pos], col[:pos] = rr, cc

    band_start = {}
    for l in range(1, levels + 1):
        h = height >> (levels - l + 1)
        w = width >> (levels - l + 1)
        size = h * w
        rr, cc = np.divmod(np.arange(size), w)
        for o in (ORIENT_H, ORIENT_V, ORIENT_D):
            sl = slice(pos, pos + size)
            band_start[(l, o)] = pos
            level[sl] = l
            orientation[sl] = o
            row[sl], col[sl] = rr, cc
            if l > 1:
                pw = w >> 1
                parent[sl] = band_start[(l - 1, o)] + (rr >> 1) * pw + (cc >> 1)
            pos += size

    return WaveletLayout(height, width, levels, level, orientation, parent, row, col)


def _analysis_step(a: np.ndarray):
    """One 2-D Haar analysis step: rows first, then columns."""
    lo = (a[:, 0::2] + a[:, 1::2]) / _SQRT2
    hi = (a[:, 0::2] - a[:, 1::2]) / _SQRT2
    ll = (lo[0::2, :] + lo[1::2, :]) / _SQRT2
    v = (lo[0::2, :] - lo[1::2, :]) / _SQRT2
    h = (hi[0::2, :] + hi[1::2, :]) / _SQRT2
    d = (hi[0::2, :] - hi[1::2, :]) / _SQRT2
    return ll, h, v, d


def _synthesis_step(ll, h, v, d) -> np.ndarray:
    """Inverse of :func:`_analysis_step` (transpose of the orthonormal map)."""
    rows, cols = ll.shape
    lo = np.empty((2 * rows, cols))
    hi = np.empty((2 * rows, cols))
    lo[0::2, :] = (ll + v) / _SQRT2
    lo[1::2, :] = (ll - v) / _SQRT2
    hi[0::2, :] = (h + d) / _SQRT2
    hi[1::2, :] = (h - d) / _SQRT2
    a = np.empty((2 * rows, 2 * cols))
    a[:, 0::2] = (lo + hi) / _SQRT2
    a[:, 1::2] = (lo - hi) / _SQRT2
    return a


def forward(image: np.ndarray, layout: WaveletLayout) -> np.ndarray:
    """Apply the orthonormal transform: image (h, w) -> coefficients (n,)."""
    if image.shape != (layout.height, layout.width):
        raise ValueError(
            f"image shape {image.shape} does not match layout "
            f"({layout.height}, {layout.width})"
        )
    out = np.empty(layout.n)
    a = np.asarray(image, dtype=np.float64)
    for l in range(layout.levels, 0, -1):
        a, h, v, d = _analysis_step(a)
        out[layout.band_slice(l, ORIENT_H)] = h.ravel()
        out[layout.band_slice(l, ORIENT_V)] = v.ravel()
        out[layout.band_slice(l, ORIENT_D)] = d.ravel()
    out[: layout.n_scaling] = a.ravel()
    return out


def inverse(coeffs: np.ndarray, layout: WaveletLayout) -> np.ndarray:
    """Apply the transpose (= inverse) transform: coefficients -> image."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (layout.n,):
        raise ValueError(
            f"coefficient vector length {coeffs.shape} does not match layout n={layout.n}"
        )
    a = coeffs[: layout.n_scaling].reshape(layout.band_shape(0))
    for l in range(1, layout.levels + 1):
        shape = layout.band_shape(l)
        h = coeffs[layout.band_slice(l, ORIENT_H)].reshape(shape)
        v = coeffs[layout.band_slice(l, ORIENT_V)].reshape(shape)
        d = coeffs[layout.band_slice(l, ORIENT_D)].reshape(shape)
        a = _synthesis_step(a, h, v, d)
    return a


def dump_coefficients_csv(path, layout: WaveletLayout, values: np.ndarray) -> None:
    """Write a debug CSV: index, level, orientation, row, col, parent_index, value."""
    values = np.asarray(values)
    if values.shape != (layout.n,):
        raise ValueError("values length does not match layout")
    with open(path, "w") as fh:
        fh.write("index,level,orientation,row,col,parent_index,value\n")
        for j in range(layout.n):
            fh.write(
                f"{j},{layout.level[j]},{ORIENT_NAMES[int(layout.orientation[j])]},"
                f"{layout.row[j]},{layout.col[j]},{layout.parent[j]},{float(values[j])!r}\n"
            )
