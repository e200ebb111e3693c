"""Discretised PDE residuals as sums of products of stencil-differentiated fields.

A :class:`ResidualProgram` encodes ``D(u) - b`` as::

    sum_terms coefficient * prod_factors apply(kernel, fields[name])

Every factor is evaluated on the interior where its stencil fits and then
cropped to the interior shared by the whole program before the pointwise
product, so a program returns one field on the common interior grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, GridMismatchError
from .grid import FieldTensor, Grid
from .stencil import (Kernel, apply, build_kernel, identity_kernel, one_sided_weights)


@dataclass(frozen=True)
class Factor:
    field: str
    kernel: Kernel


@dataclass(frozen=True)
class Term:
    coefficient: float
    factors: tuple[Factor, ...]


def _term(coef, *factors) -> Term:
    return Term(float(coef), tuple(Factor(f, k) for f, k in factors))


class ResidualProgram:
    def __init__(self, terms: Sequence[Term], name: str = "residual",
                 margins: Mapping[str, int] | None = None):
        self.terms = tuple(terms)
        self.name = name
        seen = []
        for t in self.terms:
            for f in t.factors:
                if f.field not in seen:
                    seen.append(f.field)
        self.fields = tuple(seen)
        kernels = [f.kernel for t in self.terms for f in t.factors]
        for k in kernels[1:]:
            if not k.compatible(kernels[0]):
                raise ConfigurationError("all kernels of a program must share one grid signature")
        own: dict[str, int] = {}
        for k in kernels:
            for ax, r in k.radii.items():
                own[ax] = max(own.get(ax, 0), r)
        if margins is not None:
            for ax, r in own.items():
                if margins.get(ax, 0) < r:
                    raise ConfigurationError(f"margin on axis {ax} smaller than stencil radius {r}")
            own = {ax: int(r) for ax, r in margins.items() if r}
        self.margins = own

    def __repr__(self):
        return f"ResidualProgram({self.name!r}, terms={len(self.terms)}, fields={self.fields})"

    def output_grid(self, grid: Grid) -> Grid:
        return grid.crop({a: (r, r) for a, r in self.margins.items()})

    def _resolve(self, fields) -> dict[str, FieldTensor]:
        if isinstance(fields, FieldTensor):
            if len(self.fields) != 1:
                raise ConfigurationError(f"program {self.name!r} needs fields {self.fields}")
            fields = {self.fields[0]: fields}
        missing = [f for f in self.fields if f not in fields]
        if missing:
            raise ConfigurationError(f"program {self.name!r}: missing fields {missing}")
        ref = fields[self.fields[0]] if self.fields else next(iter(fields.values()))
        for name in self.fields:
            f = fields[name]
            if f.grid != ref.grid or f.values.shape != ref.values.shape:
                raise GridMismatchError(f"field {name!r} is not on the same grid as {self.fields[0]!r}")
        return {name: fields[name] for name in self.fields} or {"_": ref}

    def evaluate(self, fields: Mapping[str, FieldTensor] | FieldTensor) -> FieldTensor:
        fields = self._resolve(fields)
        ref = next(iter(fields.values()))
        out_grid = self.output_grid(ref.grid)
        cache: dict[tuple[str, int], np.ndarray] = {}

        def factor_values(f: Factor) -> np.ndarray:
            key = (f.field, id(f.kernel))
            if key not in cache:
                d = apply(f.kernel, fields[f.field], "interior")
                extra = {ax: (m - f.kernel.radii.get(ax, 0),) * 2 for ax, m in self.margins.items()}
                cache[key] = d.crop(extra).values
            return cache[key]

        shape = ((len(ref),) if ref.batched else ()) + out_grid.shape
        total = np.zeros(shape)
        for t in self.terms:
            if not t.factors:
                total += t.coefficient
                continue
            prod = factor_values(t.factors[0])
            for f in t.factors[1:]:
                prod = prod * factor_values(f)
            total += t.coefficient * prod
        return FieldTensor._wrap(out_grid, total, ref.batched)

    def single_terms(self) -> list["ResidualProgram"]:
        """One program per term on this program's interior (for ablation checks)."""
        return [ResidualProgram([t], f"{self.name}[{i}]", self.margins) for i, t in enumerate(self.terms)]

    def describe(self) -> str:
        lines = [f"{self.name}: residual over fields ({', '.join(self.fields)})"]
        for t in self.terms:
            if not t.factors:
                lines.append(f"  {t.coefficient:+g}")
                continue
            parts = []
            for f in t.factors:
                k = f.kernel
                if k.axes:
                    parts.append(f"{k.label or 'K'}[{f.field}] (stencil {'x'.join(map(str, k.shape))})")
                else:
                    parts.append(f.field)
            lines.append(f"  {t.coefficient:+g} * " + " * ".join(parts))
        return "\n".join(lines)


def linear_program(kernel: Kernel, field: str = "u", forcing: float = 0.0,
                   name: str = "linear") -> ResidualProgram:
    """``kernel * u - forcing`` from a single (possibly composite) kernel."""
    terms = [_term(1.0, (field, kernel))]
    if forcing:
        terms.append(Term(-float(forcing), ()))
    return ResidualProgram(terms, name)


def advection_program(grid: Grid, v: float, p: int = 2) -> ResidualProgram:
    """u_t + v u_x"""
    return ResidualProgram([
        _term(1.0, ("u", build_kernel(grid, [("t", 1)], p))),
        _term(v, ("u", build_kernel(grid, [("x", 1)], p))),
    ], "advection")


def burgers_program(grid: Grid, nu: float, p: int = 2) -> ResidualProgram:
    """u_t + u u_x - nu u_xx"""
    ident = identity_kernel(grid)
    return ResidualProgram([
        _term(1.0, ("u", build_kernel(grid, [("t", 1)], p))),
        _term(1.0, ("u", ident), ("u", build_kernel(grid, [("x", 1)], p))),
        _term(-nu, ("u", build_kernel(grid, [("x", 2)], p))),
    ], "burgers")


def wave_program(grid: Grid, c: float, p: int = 2) -> ResidualProgram:
    """u_tt - c^2 (u_xx + u_yy)"""
    return ResidualProgram([
        _term(1.0, ("u", build_kernel(grid, [("t", 2)], p))),
        _term(-c * c, ("u", build_kernel(grid, [("x", 2)], p))),
        _term(-c * c, ("u", build_kernel(grid, [("y", 2)], p))),
    ], "wave")


def navier_stokes_programs(grid: Grid, nu: float, p: int = 2):
    """Continuity and the two momentum residuals for fields ``u``, ``v``, ``P``."""
    ident = identity_kernel(grid)
    dt = build_kernel(grid, [("t", 1)], p)
    dx = build_kernel(grid, [("x", 1)], p)
    dy = build_kernel(grid, [("y", 1)], p)
    dxx = build_kernel(grid, [("x", 2)], p)
    dyy = build_kernel(grid, [("y", 2)], p)
    continuity = ResidualProgram([_term(1.0, ("u", dx)), _term(1.0, ("v", dy))], "ns-continuity")

    def momentum(c: str, dp: Kernel, name: str):
        return ResidualProgram([
            _term(1.0, (c, dt)),
            _term(1.0, ("u", ident), (c, dx)),
            _term(1.0, ("v", ident), (c, dy)),
            _term(-nu, (c, dxx)),
            _term(-nu, (c, dyy)),
            _term(1.0, ("P", dp)),
        ], name)

    return continuity, momentum("u", dx, "ns-momentum-x"), momentum("v", dy, "ns-momentum-y")


class BoundaryResidual:
    """Wall-normal first derivative ``du/dn`` on one wall, using inward one-sided weights."""

    def __init__(self, grid: Grid, axis: str, side: str, p: int = 2, field: str = "u"):
        if side not in ("lo", "hi"):
            raise ConfigurationError("side must be 'lo' or 'hi'")
        self.axis = grid.kinds[grid.index(axis)]
        self.side = side
        self.field = field
        self.fields = (field,)
        self.name = f"boundary-{self.axis}-{side}"
        w = one_sided_weights(1, p, +1 if side == "lo" else -1)
        self.offsets = np.array(w.offsets)
        self.weights = w.coefficients / grid.spacing(self.axis)
        r = int(np.abs(self.offsets).max())
        padded = np.zeros(2 * r + 1)
        padded[self.offsets + r] = self.weights
        sig = {a.kind: a.spacing for a in grid.axes}
        self.kernel = Kernel(padded, (self.axis,), sig, label=f"D_{self.axis} one-sided")

    def output_grid(self, grid: Grid) -> Grid:
        return grid.drop(self.axis)

    def evaluate(self, fields) -> FieldTensor:
        f = fields if isinstance(fields, FieldTensor) else fields[self.field]
        g = f.grid
        ax = g.index(self.axis) + (1 if f.batched else 0)
        n = g.shape[g.index(self.axis)]
        if int(np.abs(self.offsets).max()) >= n:
            raise ConfigurationError("field too short for the one-sided stencil")
        wall = 0 if self.side == "lo" else n - 1
        fw = np.take(f.values, wall, axis=ax)
        out = np.zeros_like(fw)
        for o, c in zip(self.offsets, self.weights):
            if o:
                out += c * (np.take(f.values, wall + o, axis=ax) - fw)
        return FieldTensor._wrap(self.output_grid(g), out, f.batched)

    def describe(self) -> str:
        taps = ", ".join(f"{o:+d}:{c:.6g}" for o, c in zip(self.offsets, self.weights))
        return f"{self.name}: d{self.field}/d{self.axis} on the {self.side} wall, taps {{{taps}}}"


def boundary_residual_program(grid: Grid, wall: tuple[str, str], p: int = 2,
                              field: str = "u") -> BoundaryResidual:
    """Residual of ``du/dX = 0`` evaluated on the wall slice ``wall = (axis, 'lo'|'hi')``."""
    axis, side = wall
    return BoundaryResidual(grid, axis, side, p, field)
