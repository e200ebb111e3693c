"""Regular space-time grids, immutable field tensors and initial-condition sampling.

Grids follow the linspace convention: an axis spanning ``[lo, hi]`` with
``count`` points has spacing ``(hi - lo) / (count - 1)`` and includes both
endpoints.  Periodic domains of length ``L`` therefore use ``hi = lo + L - L/count``
(see :func:`periodic_axis`).

The time axis, when present, is always the leading grid axis.  A batch
dimension, when present, precedes it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, GridMismatchError

# short name -> name used in dump files
AXIS_KINDS = {"t": "time", "x": "space-x", "y": "space-y"}
_LONG_TO_SHORT = {v: k for k, v in AXIS_KINDS.items()}
_ORDER = {"t": 0, "x": 1, "y": 2}

# relative tolerance for comparing axis extents that went through cropping
_EXTENT_RTOL = 1e-11


def _canonical_kind(kind: str) -> str:
    if kind in AXIS_KINDS:
        return kind
    if kind in _LONG_TO_SHORT:
        return _LONG_TO_SHORT[kind]
    raise ConfigurationError(f"unknown axis kind {kind!r}")


@dataclass(frozen=True)
class Axis:
    kind: str
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        object.__setattr__(self, "kind", _canonical_kind(self.kind))
        if int(self.count) != self.count or self.count < 1:
            raise ConfigurationError(f"axis {self.kind}: point count must be a positive integer")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ConfigurationError(f"axis {self.kind}: extents must be finite")
        if self.count > 1 and not self.hi > self.lo:
            raise ConfigurationError(f"axis {self.kind}: need hi > lo")

    @property
    def spacing(self) -> float:
        if self.count == 1:
            return math.nan
        return (self.hi - self.lo) / (self.count - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)

    def same_as(self, other: "Axis") -> bool:
        if self.kind != other.kind or self.count != other.count:
            return False
        scale = max(abs(self.hi - self.lo), abs(self.lo), abs(self.hi), 1e-300)
        return (abs(self.lo - other.lo) <= _EXTENT_RTOL * scale
                and abs(self.hi - other.hi) <= _EXTENT_RTOL * scale)


def periodic_axis(kind: str, lo: float, length: float, count: int) -> Axis:
    """Axis of ``count`` points covering the periodic interval ``[lo, lo + length)``."""
    return Axis(kind, lo, lo + length * (count - 1) / count, count)


class Grid:
    """Ordered tuple of axes; time (if any) first, then x, then y."""

    __slots__ = ("axes",)

    def __init__(self, axes: Iterable[Axis], *, min_points: int = 3):
        axes = tuple(axes)
        kinds = [a.kind for a in axes]
        if len(set(kinds)) != len(kinds):
            raise ConfigurationError(f"duplicate axis kinds in {kinds}")
        if kinds != sorted(kinds, key=_ORDER.__getitem__):
            raise ConfigurationError(f"axes must be ordered (t, x, y); got {kinds}")
        for a in axes:
            if a.count < min_points:
                raise ConfigurationError(
                    f"axis {a.kind} has {a.count} points; at least {min_points} required")
            if a.count > 1 and not (a.spacing > 0 and math.isfinite(a.spacing)):
                raise ConfigurationError(f"axis {a.kind}: spacing must be positive and finite")
        self.axes = axes

    @classmethod
    def from_spec(cls, spec: Sequence[tuple]) -> "Grid":
        """``Grid.from_spec([("t", 0, 1, 11), ("x", 0, 2, 201)])``"""
        return cls(Axis(*s) for s in spec)

    def __repr__(self):
        inner = ", ".join(f"{a.kind}[{a.lo:g}, {a.hi:g}]x{a.count}" for a in self.axes)
        return f"Grid({inner})"

    def __eq__(self, other):
        if not isinstance(other, Grid) or len(self.axes) != len(other.axes):
            return False
        return all(a.same_as(b) for a, b in zip(self.axes, other.axes))

    def __hash__(self):
        return hash(tuple((a.kind, a.count) for a in self.axes))

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(a.kind for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def has_time(self) -> bool:
        return "t" in self.kinds

    def index(self, kind: str) -> int:
        kind = _canonical_kind(kind)
        try:
            return self.kinds.index(kind)
        except ValueError:
            raise ConfigurationError(f"grid {self!r} has no axis {kind!r}") from None

    def axis(self, kind: str) -> Axis:
        return self.axes[self.index(kind)]

    def spacing(self, kind: str) -> float:
        return self.axis(kind).spacing

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, ``indexing='ij'``."""
        return np.meshgrid(*(a.points for a in self.axes), indexing="ij")

    def spatial(self) -> "Grid":
        return Grid([a for a in self.axes if a.kind != "t"], min_points=1)

    def with_time(self, t0: float, dt: float, count: int) -> "Grid":
        space = [a for a in self.axes if a.kind != "t"]
        return Grid([Axis("t", t0, t0 + dt * (count - 1), count), *space], min_points=1)

    def crop(self, margins: Mapping[str, tuple[int, int]]) -> "Grid":
        """Drop ``lo``/``hi`` points from the named axes."""
        new = []
        for a in self.axes:
            lo, hi = margins.get(a.kind, (0, 0))
            if lo == 0 and hi == 0:
                new.append(a)
                continue
            count = a.count - lo - hi
            if count < 1:
                raise GridMismatchError(f"cannot crop {lo}+{hi} points from axis {a.kind} of {a.count}")
            h = a.spacing
            new.append(Axis(a.kind, a.lo + lo * h, a.hi - hi * h, count))
        return Grid(new, min_points=1)

    def drop(self, kind: str) -> "Grid":
        return Grid([a for a in self.axes if a.kind != _canonical_kind(kind)], min_points=1)


class FieldTensor:
    """Read-only array of float64 values on a :class:`Grid`.

    ``values.shape == grid.shape`` or, with ``batched=True``,
    ``(n, *grid.shape)``.  Arithmetic requires identical grids and shapes.
    """

    __slots__ = ("grid", "values", "batched")

    def __init__(self, grid: Grid, values, batched: bool = False):
        arr = np.array(values, dtype=np.float64)
        expect = grid.shape
        got = arr.shape[1:] if batched else arr.shape
        if got != expect:
            raise GridMismatchError(f"values of shape {arr.shape} do not match grid shape {expect}"
                                    + (" (batched)" if batched else ""))
        arr.flags.writeable = False
        self.grid = grid
        self.values = arr
        self.batched = batched

    @classmethod
    def _wrap(cls, grid: Grid, arr: np.ndarray, batched: bool = False) -> "FieldTensor":
        # no-copy constructor for internal use; caller hands over ownership
        obj = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        obj.grid, obj.values, obj.batched = grid, arr, batched
        return obj

    @classmethod
    def stack(cls, fields: Sequence["FieldTensor"]) -> "FieldTensor":
        if not fields:
            raise ConfigurationError("cannot stack an empty sequence of fields")
        g = fields[0].grid
        for f in fields:
            if f.batched or f.grid != g:
                raise GridMismatchError("stack requires unbatched fields on one grid")
        return cls._wrap(g, np.stack([f.values for f in fields]), batched=True)

    def __repr__(self):
        b = f"batch={len(self)}, " if self.batched else ""
        return f"FieldTensor({b}{self.grid!r})"

    def __len__(self):
        if not self.batched:
            raise TypeError("unbatched FieldTensor has no length")
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape

    def sample(self, i: int) -> "FieldTensor":
        if not self.batched:
            raise TypeError("sample() needs a batched field")
        return FieldTensor._wrap(self.grid, self.values[i])

    def samples(self):
        return [self.sample(i) for i in range(len(self))]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def crop(self, margins: Mapping[str, tuple[int, int]]) -> "FieldTensor":
        sl = [slice(None)] * self.values.ndim
        off = 1 if self.batched else 0
        for i, a in enumerate(self.grid.axes):
            lo, hi = margins.get(a.kind, (0, 0))
            sl[i + off] = slice(lo, a.count - hi)
        return FieldTensor._wrap(self.grid.crop(margins), self.values[tuple(sl)], self.batched)

    def _check(self, other: "FieldTensor"):
        if self.grid != other.grid or self.values.shape != other.values.shape:
            raise GridMismatchError(f"{self!r} and {other!r} are not on the same grid")

    def _binary(self, other, op):
        if isinstance(other, FieldTensor):
            self._check(other)
            return FieldTensor._wrap(self.grid, op(self.values, other.values), self.batched)
        if np.ndim(other) != 0:
            raise GridMismatchError("FieldTensor arithmetic accepts scalars or FieldTensors only")
        return FieldTensor._wrap(self.grid, op(self.values, float(other)), self.batched)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    __radd__ = __add__
    __rmul__ = __mul__

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __neg__(self):
        return FieldTensor._wrap(self.grid, -self.values, self.batched)

    def __abs__(self):
        return FieldTensor._wrap(self.grid, np.abs(self.values), self.batched)


# ---------------------------------------------------------------------------
# initial conditions


@dataclass(frozen=True)
class ParamBox:
    ranges: tuple[tuple[str, float, float], ...]
    n: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ranges", tuple((str(a), float(b), float(c)) for a, b, c in self.ranges))
        for name, lo, hi in self.ranges:
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise ConfigurationError(f"parameter {name!r}: need finite lower < upper, got [{lo}, {hi}]")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError("sample count must be a positive integer")

    @property
    def names(self) -> list[str]:
        return [r[0] for r in self.ranges]


def stratum_edges(lo: float, hi: float, n: int) -> np.ndarray:
    """The ``n + 1`` stratum boundaries used by :func:`latin_hypercube_sample`."""
    w = (hi - lo) / n
    return lo + w * np.arange(n + 1)


def latin_hypercube_sample(box: ParamBox) -> list[dict[str, float]]:
    """Latin-hypercube design: exactly one sample per stratum on every axis."""
    rng = np.random.default_rng(box.seed)
    n = box.n
    cols = {}
    for name, lo, hi in box.ranges:
        edges = stratum_edges(lo, hi, n)
        perm = rng.permutation(n)
        u = rng.random(n)
        left, right = edges[perm], edges[perm + 1]
        v = left + u * (right - left)
        # rounding must not push a value onto the next stratum's edge
        v = np.where(v >= right, np.nextafter(right, -np.inf), v)
        v = np.maximum(v, left)
        cols[name] = v
    return [{name: float(cols[name][i]) for name in box.names} for i in range(n)]


def _spatial(grid: Grid) -> Grid:
    return grid.spatial() if grid.has_time else grid


def gaussian_bump_ic(grid: Grid, amplitude: float, center: Sequence[float],
                     width: float | None = None) -> FieldTensor:
    """Gaussian initial state on the spatial part of ``grid``.

    1D: ``amplitude * exp(-width * (x - X)**2)`` (``width`` defaults to 50).
    2D: ``exp(-amplitude * ((x - X)**2 + (y - Y)**2))``; here the amplitude
    sets the sharpness and ``width`` must be omitted.
    """
    g = _spatial(grid)
    center = tuple(float(c) for c in np.atleast_1d(center))
    params = (amplitude, *center) + (() if width is None else (width,))
    if not all(math.isfinite(float(p)) for p in params):
        raise ConfigurationError("initial-condition parameters must be finite")
    if len(center) != g.ndim:
        raise ConfigurationError(f"need {g.ndim} centre coordinates, got {len(center)}")
    for a, c in zip(g.axes, center):
        if not a.lo <= c <= a.hi:
            raise ConfigurationError(f"centre {c} outside axis {a.kind} extent [{a.lo}, {a.hi}]")
    coords = g.coords()
    r2 = sum((xi - c) ** 2 for xi, c in zip(coords, center))
    if g.ndim == 1:
        k = 50.0 if width is None else float(width)
        vals = amplitude * np.exp(-k * r2)
    elif g.ndim == 2:
        if width is not None:
            raise ConfigurationError("the 2D Gaussian uses the amplitude as sharpness; width is not accepted")
        vals = np.exp(-amplitude * r2)
    else:
        raise ConfigurationError("gaussian_bump_ic supports 1 or 2 spatial dimensions")
    return FieldTensor._wrap(g, vals)


def burgers_ic(grid: Grid, alpha: float, beta: float, gamma: float) -> FieldTensor:
    """sin(alpha*pi*x) + cos(-beta*pi*x) + 1/cosh(gamma*pi*x) on a 1D grid."""
    g = _spatial(grid)
    if g.kinds != ("x",):
        raise ConfigurationError("burgers_ic needs a 1D spatial grid")
    if not all(math.isfinite(float(p)) for p in (alpha, beta, gamma)):
        raise ConfigurationError("initial-condition parameters must be finite")
    x = g.axes[0].points
    vals = np.sin(alpha * np.pi * x) + np.cos(-beta * np.pi * x) + 1.0 / np.cosh(gamma * np.pi * x)
    return FieldTensor._wrap(g, vals)


# ---------------------------------------------------------------------------
# text dump format


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_dump(path, axes: Sequence[tuple[str, float, float, int]], values: np.ndarray, *,
               batch: int | None = None, meta: dict | None = None) -> None:
    """Low-level writer: header lines, then rows of the last axis."""
    lines = []
    if meta is not None:
        lines.append("# meta " + json.dumps(meta, sort_keys=True))
    if batch is not None:
        lines.append(f"# batch {batch}")
    for kind, lo, hi, count in axes:
        lines.append(f"# axis {kind} {_fmt(lo)} {_fmt(hi)} {count}")
    lines.append("# data row-major")
    flat = np.asarray(values, dtype=np.float64)
    rows = flat.reshape(-1, flat.shape[-1]) if flat.ndim > 0 else flat.reshape(1, 1)
    lines.extend(" ".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_dump(path) -> tuple[dict, np.ndarray]:
    """Low-level reader returning ``(header, flat_values)``."""
    header: dict = {"axes": [], "batch": None, "meta": None}
    text = Path(path).read_text()
    head, sep, body = text.partition("# data row-major")
    if not sep:
        raise ConfigurationError(f"{path}: missing '# data row-major' line")
    for line in head.splitlines():
        line = line.strip()
        if not line:
            continue
        if not line.startswith("#"):
            raise ConfigurationError(f"{path}: unexpected line before data: {line!r}")
        parts = line[1:].split(None, 1)
        key = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        if key == "axis":
            kind, lo, hi, count = rest.split()
            header["axes"].append((kind, float(lo), float(hi), int(count)))
        elif key == "batch":
            header["batch"] = int(rest)
        elif key == "meta":
            header["meta"] = json.loads(rest)
        else:
            raise ConfigurationError(f"{path}: unknown header key {key!r}")
    values = np.array(body.split(), dtype=np.float64)
    return header, values


def save_field(path, field: FieldTensor, meta: dict | None = None) -> None:
    axes = [(AXIS_KINDS[a.kind], a.lo, a.hi, a.count) for a in field.grid.axes]
    write_dump(path, axes, field.values, batch=len(field) if field.batched else None, meta=meta)


def load_field(path) -> FieldTensor:
    header, values = read_dump(path)
    grid = Grid([Axis(*ax) for ax in header["axes"]], min_points=1)
    shape = grid.shape if header["batch"] is None else (header["batch"], *grid.shape)
    if values.size != int(np.prod(shape)):
        raise ConfigurationError(f"{path}: expected {int(np.prod(shape))} values, found {values.size}")
    return FieldTensor._wrap(grid, values.reshape(shape), batched=header["batch"] is not None)
