"""Finite-difference stencils as convolution kernels.

Weights come from solving the moment (Vandermonde) system in exact rational
arithmetic, so any derivative order and any even accuracy order is
available.  A :class:`Kernel` is a dense, centrally anchored coefficient
array acting on a subset of a grid's axes; kernels add and scale like the
linear operators they represent.

Kernels are stored in correlation orientation: ``coeffs[centre + o]``
multiplies ``f[i + o]``.  :meth:`Kernel.convolution_array` returns the
flipped array for code that expects convolution orientation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import _accel
from .errors import CompositionError, ConfigurationError, StencilSizeError
from .grid import FieldTensor, Grid, _ORDER, _canonical_kind

_SPACING_RTOL = 1e-9


@dataclass(frozen=True)
class StencilWeights:
    order: int          # derivative order m
    accuracy: int       # p
    offsets: tuple[int, ...]
    exact: tuple[Fraction, ...]

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([float(c) for c in self.exact])

    @property
    def radius(self) -> int:
        return max(abs(o) for o in self.offsets)


def fd_weights(order: int, offsets: Sequence[int]) -> tuple[Fraction, ...]:
    """Exact weights ``c`` with ``sum_j c_j o_j**k == k! * [k == order]`` for ``k < len(offsets)``."""
    offs = [int(o) for o in offsets]
    n = len(offs)
    if order < 0 or order >= n:
        raise ConfigurationError(f"derivative order {order} needs more than {n} points")
    # augmented system, rows k = 0..n-1
    rows = [[Fraction(o) ** k for o in offs] + [Fraction(math.factorial(k)) if k == order else Fraction(0)]
            for k in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if rows[r][col] != 0), None)
        if piv is None:
            raise ConfigurationError(f"offsets {offs} are degenerate")
        rows[col], rows[piv] = rows[piv], rows[col]
        p = rows[col][col]
        rows[col] = [v / p for v in rows[col]]
        for r in range(n):
            if r != col and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[col])]
    return tuple(rows[k][n] for k in range(n))


def central_difference_weights(m: int, p: int = 2) -> StencilWeights:
    """Central stencil for the ``m``-th derivative with truncation error O(h**p)."""
    if int(m) != m or m < 0:
        raise ConfigurationError("derivative order must be a non-negative integer")
    if int(p) != p or p < 2 or p % 2:
        raise ConfigurationError("accuracy order must be an even integer >= 2")
    if m == 0:
        return StencilWeights(0, p, (0,), (Fraction(1),))
    npts = 2 * ((m + 1) // 2) - 1 + p
    r = (npts - 1) // 2
    offs = tuple(range(-r, r + 1))
    return StencilWeights(m, p, offs, fd_weights(m, offs))


def one_sided_weights(m: int, p: int, direction: int) -> StencilWeights:
    """One-sided stencil reaching into ``direction`` (+1 forward, -1 backward)."""
    if direction not in (1, -1):
        raise ConfigurationError("direction must be +1 or -1")
    npts = m + p
    offs = tuple(direction * k for k in range(npts))
    if direction < 0:
        offs = offs[::-1]
    return StencilWeights(m, p, offs, fd_weights(m, offs))


class Kernel:
    """Centrally anchored stencil over ``axes`` of a grid with the given spacings."""

    __slots__ = ("coeffs", "axes", "signature", "label", "total")

    def __init__(self, coeffs, axes: Sequence[str], signature: Mapping[str, float], label: str = ""):
        arr = np.array(coeffs, dtype=np.float64)
        axes = tuple(_canonical_kind(a) for a in axes)
        if arr.ndim != len(axes):
            raise ConfigurationError(f"coefficient array has {arr.ndim} dims for axes {axes}")
        if any(s % 2 == 0 for s in arr.shape):
            raise ConfigurationError(f"kernel extents must be odd, got {arr.shape}")
        if list(axes) != sorted(axes, key=_ORDER.__getitem__):
            raise ConfigurationError(f"kernel axes must follow grid order, got {axes}")
        missing = set(axes) - set(signature)
        if missing:
            raise ConfigurationError(f"kernel axes {sorted(missing)} missing from grid signature")
        arr.flags.writeable = False
        self.coeffs = arr
        self.axes = axes
        self.signature = dict(signature)
        self.label = label
        flat = arr.ravel()
        total = math.fsum(flat)
        # weights obeying the zero-sum moment condition must sum to exactly zero
        if abs(total) <= 64 * np.finfo(float).eps * math.fsum(abs(flat)):
            total = 0.0
        self.total = total

    def __repr__(self):
        name = f" {self.label!r}" if self.label else ""
        return f"Kernel({name.strip() or 'anon'}, axes={self.axes}, shape={self.coeffs.shape})"

    @property
    def shape(self):
        return self.coeffs.shape

    @property
    def radii(self) -> dict[str, int]:
        return {a: s // 2 for a, s in zip(self.axes, self.coeffs.shape)}

    def convolution_array(self) -> np.ndarray:
        return self.coeffs[(slice(None, None, -1),) * self.coeffs.ndim]

    def compatible(self, other: "Kernel") -> bool:
        if set(self.signature) != set(other.signature):
            return False
        return all(math.isclose(self.signature[k], other.signature[k], rel_tol=_SPACING_RTOL)
                   for k in self.signature)

    def embedded(self, axes: Sequence[str], shape: Sequence[int]) -> np.ndarray:
        """Coefficients zero-padded onto ``axes`` with the (odd) ``shape``."""
        out = np.zeros(tuple(shape))
        sl = []
        src_shape = []
        for ax, s in zip(axes, shape):
            k = self.coeffs.shape[self.axes.index(ax)] if ax in self.axes else 1
            if k > s:
                raise CompositionError("target shape smaller than kernel")
            pad = (s - k) // 2
            sl.append(slice(pad, pad + k))
            src_shape.append(k)
        out[tuple(sl)] = self.coeffs.reshape(src_shape)
        return out

    def __add__(self, other):
        return add_kernels(self, other, 1.0, 1.0)

    def __sub__(self, other):
        return add_kernels(self, other, 1.0, -1.0)

    def __mul__(self, scalar):
        if isinstance(scalar, Kernel):
            return NotImplemented
        return Kernel(float(scalar) * self.coeffs, self.axes, self.signature, self.label)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def _signature(grid: Grid) -> dict[str, float]:
    return {a.kind: a.spacing for a in grid.axes}


def identity_kernel(grid: Grid) -> Kernel:
    return Kernel(np.array(1.0), (), _signature(grid), label="I")


def derivative_kernel(grid: Grid, orders: Mapping[str, int], p: int = 2) -> Kernel:
    """Product stencil ``prod_axis d^m/d(axis)^m``; one axis gives a plain derivative,
    two axes give a mixed derivative (outer product of 1D stencils)."""
    items = sorted(((grid.kinds[grid.index(a)], int(m)) for a, m in orders.items()),
                   key=lambda kv: _ORDER[kv[0]])
    items = [(a, m) for a, m in items if m > 0]
    if not items:
        return identity_kernel(grid)
    arr = np.array(1.0)
    for ax, m in items:
        w = central_difference_weights(m, p).coefficients / grid.spacing(ax) ** m
        arr = np.multiply.outer(arr, w)
    label = "D_" + "".join(a * m for a, m in items)
    return Kernel(arr, [a for a, _ in items], _signature(grid), label=label)


def build_kernel(grid: Grid, spec: Sequence, p: int = 2) -> Kernel:
    """Sum of derivative kernels.

    ``spec`` entries are ``(axis, m)`` pairs or ``{axis: m, ...}`` mappings
    (mixed derivatives).  ``[("x", 2), ("y", 2)]`` is the Laplacian;
    an empty spec is the identity.
    """
    if not spec:
        return identity_kernel(grid)
    kernels = []
    for entry in spec:
        orders = dict(entry) if isinstance(entry, Mapping) else {entry[0]: entry[1]}
        for ax in orders:
            grid.index(ax)  # raises ConfigurationError for unknown axes
        kernels.append(derivative_kernel(grid, orders, p))
    out = kernels[0]
    for k in kernels[1:]:
        out = add_kernels(out, k)
    if len(kernels) > 1:
        out.label = " + ".join(k.label for k in kernels)
    return out


def add_kernels(a: Kernel, b: Kernel, alpha: float = 1.0, beta: float = 1.0) -> Kernel:
    """``alpha * a + beta * b`` on the union of their axes, zero-padded to a common odd shape."""
    if not a.compatible(b):
        raise CompositionError(f"kernels built on different grids: {a.signature} vs {b.signature}")
    axes = sorted(set(a.axes) | set(b.axes), key=_ORDER.__getitem__)

    def extent(k, ax):
        return k.coeffs.shape[k.axes.index(ax)] if ax in k.axes else 1

    shape = [max(extent(a, ax), extent(b, ax)) for ax in axes]
    arr = alpha * a.embedded(axes, shape) + beta * b.embedded(axes, shape)
    return Kernel(arr, axes, a.signature, label="")


def _taps(kernel_full: np.ndarray):
    centre = tuple(s // 2 for s in kernel_full.shape)
    idx = np.argwhere(kernel_full != 0)
    offs, coefs = [], []
    for ix in idx:
        ix = tuple(int(v) for v in ix)
        if ix == centre:
            continue
        offs.append([i - c for i, c in zip(ix, centre)])
        coefs.append(kernel_full[ix])
    offsets = np.array(offs, dtype=np.int64).reshape(-1, 3)
    return offsets, np.array(coefs, dtype=np.float64)


def apply(kernel: Kernel, field: FieldTensor, mode: str = "interior") -> FieldTensor:
    """Apply ``kernel`` to ``field`` along the kernel's axes.

    ``mode="interior"`` keeps only cells where the stencil fits (the grid is
    cropped accordingly); ``mode="periodic"`` wraps indices and keeps the
    shape.  The operation is a correlation with the stored coefficients.
    Batch and unmapped axes pass through.
    """
    if mode not in ("interior", "periodic"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    g = field.grid
    if g.ndim > 3:
        raise ConfigurationError("at most three grid axes are supported")
    for ax in kernel.axes:
        if ax not in g.kinds:
            raise CompositionError(f"kernel axis {ax!r} not present on {g!r}")
        if not math.isclose(kernel.signature[ax], g.spacing(ax), rel_tol=_SPACING_RTOL):
            raise CompositionError(
                f"kernel built for spacing {kernel.signature[ax]} on axis {ax}, field has {g.spacing(ax)}")
    full_shape = [kernel.coeffs.shape[kernel.axes.index(k)] if k in kernel.axes else 1 for k in g.kinds]
    for k, ext, n in zip(g.kinds, full_shape, g.shape):
        if ext > n:
            raise StencilSizeError(f"kernel extent {ext} exceeds {n} points on axis {k}")
    kfull = kernel.embedded(g.kinds, full_shape) if g.ndim else kernel.coeffs
    pad3 = (1,) * (3 - g.ndim)
    kfull = kfull.reshape(tuple(full_shape) + pad3)
    offsets, coefs = _taps(kfull)
    radii = np.array([s // 2 for s in kfull.shape], dtype=np.int64)

    vals = field.values
    batch = vals.shape[0] if field.batched else 1
    f4 = np.ascontiguousarray(vals.reshape((batch, *g.shape, *pad3)))
    if mode == "interior":
        out = _accel.correlate_valid(f4, offsets, coefs, kernel.total, radii)
        margins = {k: (r, r) for k, r in zip(g.kinds, radii) if r}
        out_grid = g.crop(margins)
    else:
        out = _accel.correlate_periodic(f4, offsets, coefs, kernel.total, radii)
        out_grid = g
    out = out.reshape((batch, *out_grid.shape)) if field.batched else out.reshape(out_grid.shape)
    return FieldTensor._wrap(out_grid, out, field.batched)


def format_kernel(kernel: Kernel, precision: int = 6) -> str:
    """Matrix-layout rendering of the coefficient array (rows = second-to-last axis)."""
    c = kernel.coeffs
    head = f"{kernel.label or 'kernel'} on axes {kernel.axes or '()'}"

    def mat(a):
        strs = [[f"{v:.{precision}g}" for v in row] for row in a]
        w = max(len(s) for row in strs for s in row)
        return "\n".join("[ " + "  ".join(s.rjust(w) for s in row) + " ]" for row in strs)

    if c.ndim == 0:
        return f"{head}\n[ {float(c):.{precision}g} ]"
    if c.ndim == 1:
        return f"{head}\n{mat(c[None, :])}"
    if c.ndim == 2:
        return f"{head}\n{mat(c)}"
    blocks = [f"{kernel.axes[0]} offset {i - c.shape[0] // 2:+d}:\n{mat(c[i])}" for i in range(c.shape[0])]
    return head + "\n" + "\n".join(blocks)
