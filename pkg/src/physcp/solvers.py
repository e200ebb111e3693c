"""Reference solvers for the periodic testbeds.

* 1D advection: Crank-Nicolson in time, central differences in space.
* 1D viscous Burgers: Fourier pseudo-spectral, 2/3-rule dealiasing, RK4.
* 2D wave: Fourier spectral Laplacian, leapfrog.

All solvers assume a periodic spatial grid built with
:func:`physcp.grid.periodic_axis` and accept either a single initial state
or a batch; the output has a leading time axis (after the batch axis).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import ConfigurationError, SolverError
from .grid import FieldTensor, Grid

PDE_KINDS = ("advection", "burgers", "wave2d")
_PARAM = {"advection": "v", "burgers": "nu", "wave2d": "c"}


@dataclass(frozen=True)
class SolverConfig:
    pde: str
    params: dict
    grid: Grid          # spatial, periodic
    dt: float
    steps: int
    stride: int = 1
    stability: str = field(default="", compare=False)

    def __post_init__(self):
        if self.pde not in PDE_KINDS:
            raise ConfigurationError(f"unknown pde {self.pde!r}; expected one of {PDE_KINDS}")
        key = _PARAM[self.pde]
        if key not in self.params:
            raise ConfigurationError(f"{self.pde} needs parameter {key!r}")
        if self.grid.has_time:
            raise ConfigurationError("solver grid must be spatial only")
        want = ("x", "y") if self.pde == "wave2d" else ("x",)
        if self.grid.kinds != want:
            raise ConfigurationError(f"{self.pde} needs spatial axes {want}, got {self.grid.kinds}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError("dt must be positive")
        if self.steps < 1 or self.stride < 1 or self.steps % self.stride:
            raise ConfigurationError("steps must be a positive multiple of stride")
        object.__setattr__(self, "stability", self._check_stability())

    def _check_stability(self) -> str:
        if self.pde == "advection":
            return "Crank-Nicolson: unconditionally stable (skew-symmetric operator)"
        if self.pde == "burgers":
            return "RK4 substeps chosen per run from advective CFL and diffusive limits (safety 0.5)"
        c = float(self.params["c"])
        kmax = math.sqrt(sum((math.pi / a.spacing) ** 2 for a in self.grid.axes))
        if not c * self.dt * kmax < 2.0:
            raise ConfigurationError(
                f"leapfrog unstable: c*dt*k_max = {c * self.dt * kmax:.4g} must be < 2")
        return f"leapfrog: c*dt*k_max = {c * self.dt * kmax:.4g} < 2"

    @property
    def value(self) -> float:
        return float(self.params[_PARAM[self.pde]])

    @property
    def output_dt(self) -> float:
        return self.dt * self.stride

    def output_grid(self) -> Grid:
        return self.grid.with_time(0.0, self.output_dt, self.steps // self.stride + 1)


def _ic_array(cfg: SolverConfig, ic: FieldTensor) -> tuple[np.ndarray, bool]:
    if ic.grid != cfg.grid:
        raise ConfigurationError(f"initial condition on {ic.grid!r}, solver grid is {cfg.grid!r}")
    vals = np.array(ic.values, dtype=np.float64)
    return (vals if ic.batched else vals[None]), ic.batched


def _wrap_rollout(cfg, frames, batched) -> FieldTensor:
    out = np.stack(frames, axis=1)  # (batch, time, ...)
    if not np.isfinite(out).all():
        raise SolverError(f"{cfg.pde}: non-finite values in rollout")
    return FieldTensor._wrap(cfg.output_grid(), out if batched else out[0], batched)


def solve_advection_crank_nicolson(cfg: SolverConfig, ic: FieldTensor) -> FieldTensor:
    """Rollout of u_t + v u_x = 0 on a periodic grid."""
    if cfg.pde != "advection":
        raise ConfigurationError("config is not an advection config")
    u, batched = _ic_array(cfg, ic)
    h = cfg.grid.axes[0].spacing
    s = cfg.value * cfg.dt / (4.0 * h)
    frames = [u.copy()]
    for n in range(1, cfg.steps + 1):
        rhs = u - s * (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1))
        # (I + s D) u_new = rhs with D u = u[i+1] - u[i-1], periodic corners
        u = _accel.solve_cyclic_tridiagonal(-s, 1.0, s, s, -s, np.ascontiguousarray(rhs))
        if not np.isfinite(u).all():
            raise SolverError("Crank-Nicolson system produced non-finite values")
        if n % cfg.stride == 0:
            frames.append(u.copy())
    return _wrap_rollout(cfg, frames, batched)


def _wavenumbers(axis, real: bool = False) -> np.ndarray:
    n, h = axis.count, axis.spacing
    f = np.fft.rfftfreq(n, d=h) if real else np.fft.fftfreq(n, d=h)
    return 2.0 * np.pi * f


def burgers_substeps(cfg: SolverConfig, umax: float) -> int:
    ax = cfg.grid.axes[0]
    kmax = math.pi / ax.spacing
    limits = [cfg.dt]
    if umax > 0:
        limits.append(0.5 * ax.spacing / umax)
    if cfg.value > 0:
        limits.append(0.5 * 2.78 / (cfg.value * kmax * kmax))
    return max(1, math.ceil(cfg.dt / min(limits) - 1e-12))


def solve_burgers_spectral(cfg: SolverConfig, ic: FieldTensor) -> FieldTensor:
    """Rollout of u_t + u u_x = nu u_xx on a periodic grid."""
    if cfg.pde != "burgers":
        raise ConfigurationError("config is not a Burgers config")
    u0, batched = _ic_array(cfg, ic)
    ax = cfg.grid.axes[0]
    n, nu = ax.count, cfg.value
    k = _wavenumbers(ax, real=True)
    mask = (np.arange(k.size) <= n // 3).astype(float)
    ik = 1j * k
    nu_k2 = nu * k * k

    def rhs(uh):
        u = np.fft.irfft(uh * mask, n=n, axis=1)
        return -ik * mask * np.fft.rfft(0.5 * u * u, axis=1) - nu_k2 * uh

    nsub = burgers_substeps(cfg, float(np.abs(u0).max()))
    h = cfg.dt / nsub
    uh = np.fft.rfft(u0, axis=1)
    frames = [u0.copy()]
    for step in range(1, cfg.steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
            for _ in range(nsub):
                k1 = rhs(uh)
                k2 = rhs(uh + 0.5 * h * k1)
                k3 = rhs(uh + 0.5 * h * k2)
                k4 = rhs(uh + h * k3)
                uh = uh + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(uh).all():
            raise SolverError(f"Burgers solver blew up at step {step} (t = {step * cfg.dt:.4g}); "
                              f"substeps per step = {nsub}")
        if step % cfg.stride == 0:
            frames.append(np.fft.irfft(uh, n=n, axis=1))
    return _wrap_rollout(cfg, frames, batched)


def _k2_2d(grid: Grid) -> np.ndarray:
    kx = _wavenumbers(grid.axes[0])
    ky = _wavenumbers(grid.axes[1], real=True)
    return kx[:, None] ** 2 + ky[None, :] ** 2


def solve_wave_spectral(cfg: SolverConfig, ic: FieldTensor) -> FieldTensor:
    """Rollout of u_tt = c^2 (u_xx + u_yy) from rest on a periodic grid."""
    if cfg.pde != "wave2d":
        raise ConfigurationError("config is not a wave config")
    u0, batched = _ic_array(cfg, ic)
    nx, ny = cfg.grid.shape
    lam = (cfg.value * cfg.dt) ** 2 * _k2_2d(cfg.grid)
    prev = np.fft.rfft2(u0, axes=(1, 2))
    cur = prev - 0.5 * lam * prev  # zero initial velocity
    frames = [u0.copy()]
    if cfg.stride == 1:
        frames.append(np.fft.irfft2(cur, s=(nx, ny), axes=(1, 2)))
    for step in range(2, cfg.steps + 1):
        prev, cur = cur, 2.0 * cur - prev - lam * cur
        if step % cfg.stride == 0:
            frames.append(np.fft.irfft2(cur, s=(nx, ny), axes=(1, 2)))
    return _wrap_rollout(cfg, frames, batched)


def wave_energy(rollout: FieldTensor, c: float) -> np.ndarray:
    """Leapfrog-conserved energy between consecutive frames of an unstrided rollout.

    ``E[n] = 1/2 sum( ((u[n+1]-u[n])/dt)**2 + c**2 grad u[n+1] . grad u[n] ) dA``
    with spectral gradients; exact invariant of the leapfrog scheme.
    """
    g = rollout.grid
    dt = g.spacing("t")
    sg = g.spatial()
    u = rollout.values
    nx, ny = sg.shape
    uh = np.fft.fft2(u, axes=(-2, -1))
    kx = _wavenumbers(sg.axes[0])[:, None]
    ky = _wavenumbers(sg.axes[1])[None, :]
    k2 = kx ** 2 + ky ** 2
    a, b = uh[..., :-1, :, :], uh[..., 1:, :, :]
    dA = sg.axes[0].spacing * sg.axes[1].spacing
    kin = np.abs(b - a) ** 2 / dt ** 2
    pot = c * c * k2 * np.real(b * np.conj(a))
    # Parseval: sum |f|^2 = sum |F|^2 / (nx*ny)
    return 0.5 * dA * (kin + pot).sum(axis=(-2, -1)) / (nx * ny)


_SOLVERS = {
    "advection": solve_advection_crank_nicolson,
    "burgers": solve_burgers_spectral,
    "wave2d": solve_wave_spectral,
}


def solve(cfg: SolverConfig, ic: FieldTensor) -> FieldTensor:
    return _SOLVERS[cfg.pde](cfg, ic)
