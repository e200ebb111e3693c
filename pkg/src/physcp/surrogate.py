"""Predictor contract and two desk-scale surrogates.

Any object with ``grid`` (the space-time rollout grid), ``horizon`` and
``predict(ic) -> FieldTensor`` is a predictor.  Rollouts contain the
initial state as frame 0 followed by ``horizon`` predicted frames.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ConfigurationError, GridMismatchError
from .grid import Axis, FieldTensor, Grid, read_dump, write_dump
from .solvers import SolverConfig, solve


class RankDeficientFitWarning(UserWarning):
    pass


@runtime_checkable
class Predictor(Protocol):
    grid: Grid
    horizon: int

    def predict(self, ic: FieldTensor) -> FieldTensor: ...


def check_rollout(pred, out: FieldTensor, n: int | None = None) -> FieldTensor:
    """Contract check: declared grid and horizon, finite values."""
    if out.grid != pred.grid:
        raise GridMismatchError(f"predictor returned {out.grid!r}, declared {pred.grid!r}")
    if out.grid.shape[0] != pred.horizon + 1:
        raise GridMismatchError("rollout length does not match the declared horizon")
    if n is not None and (not out.batched or len(out) != n):
        raise GridMismatchError("batched prediction has the wrong batch size")
    if not out.is_finite():
        raise ValueError("predictor produced non-finite values")
    return out


def predict_batch(pred, ics: FieldTensor | Sequence[FieldTensor]) -> FieldTensor:
    """Batched rollouts; uses ``pred.predict_batch`` when the predictor has one."""
    if not isinstance(ics, FieldTensor):
        ics = FieldTensor.stack(list(ics))
    if hasattr(pred, "predict_batch"):
        out = pred.predict_batch(ics)
    else:
        out = FieldTensor.stack([pred.predict(ic) for ic in ics.samples()])
    if __debug__:
        check_rollout(pred, out, len(ics))
    return out


class CallablePredictor:
    """Wrap ``fn(ic_values) -> rollout_values`` (any external surrogate) as a predictor."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], grid: Grid):
        self.fn = fn
        self.grid = grid
        self.horizon = grid.shape[0] - 1

    def predict(self, ic: FieldTensor) -> FieldTensor:
        out = FieldTensor(self.grid, self.fn(ic.values))
        if __debug__:
            check_rollout(self, out)
        return out


def _input_seed(seed: int, values: np.ndarray) -> list[int]:
    digest = hashlib.sha256(np.ascontiguousarray(values, dtype=np.float64).tobytes()).digest()
    return [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def smooth_noise(rng: np.random.Generator, grid: Grid, nframes: int, ell: float) -> np.ndarray:
    """Unit-RMS Gaussian noise low-pass filtered over the spatial axes of ``grid``
    with a Gaussian of correlation length ``ell`` (``ell = 0`` keeps white noise)."""
    shape = (nframes, *grid.shape)
    w = rng.standard_normal(shape)
    if ell > 0:
        axes = tuple(range(1, len(shape)))
        wh = np.fft.fftn(w, axes=axes)
        k2 = 0.0
        for i, a in enumerate(grid.axes):
            k = 2 * np.pi * np.fft.fftfreq(a.count, d=a.spacing)
            k2 = np.add.outer(k2, k ** 2) if i else k ** 2
        wh *= np.exp(-0.5 * ell * ell * k2)
        w = np.real(np.fft.ifftn(wh, axes=axes))
    rms = np.sqrt(np.mean(w * w))
    return w / rms if rms > 0 else w


class PerturbedOracle:
    """Reference solver plus ``eps``-scaled smooth noise on every predicted frame.

    The noise is relative: its RMS equals ``eps * max|rollout|`` of the clean
    rollout, and it is seeded from ``(seed, hash(ic))`` so repeated calls agree.
    """

    def __init__(self, cfg: SolverConfig, eps: float, ell: float = 0.1, seed: int = 0):
        if eps < 0:
            raise ConfigurationError("noise amplitude must be non-negative")
        self.cfg = cfg
        self.eps = float(eps)
        self.ell = float(ell)
        self.seed = int(seed)
        self.grid = cfg.output_grid()
        self.horizon = self.grid.shape[0] - 1

    def _perturb(self, ic_vals: np.ndarray, clean: np.ndarray) -> np.ndarray:
        if self.eps == 0.0:
            return clean
        rng = np.random.default_rng(_input_seed(self.seed, ic_vals))
        noise = smooth_noise(rng, self.cfg.grid, self.horizon, self.ell)
        out = clean.copy()
        out[1:] += self.eps * np.abs(clean).max() * noise
        return out

    def predict(self, ic: FieldTensor) -> FieldTensor:
        clean = solve(self.cfg, ic).values
        return FieldTensor._wrap(self.grid, self._perturb(ic.values, clean))

    def predict_batch(self, ics: FieldTensor) -> FieldTensor:
        clean = solve(self.cfg, ics).values
        out = np.stack([self._perturb(ics.values[i], clean[i]) for i in range(len(ics))])
        return FieldTensor._wrap(self.grid, out, batched=True)


def perturbed_oracle(cfg: SolverConfig, eps: float, ell: float = 0.1, seed: int = 0) -> PerturbedOracle:
    return PerturbedOracle(cfg, eps, ell, seed)


def _retained_mask(spatial: Grid, k: int) -> np.ndarray:
    """Modes with |index| <= k on every spatial axis, in rfftn layout."""
    masks = []
    for i, a in enumerate(spatial.axes):
        last = i == spatial.ndim - 1
        idx = np.arange(a.count // 2 + 1) if last else np.abs(np.fft.fftfreq(a.count, d=1.0 / a.count))
        masks.append(idx <= k)
    m = masks[0]
    for extra in masks[1:]:
        m = np.logical_and.outer(m, extra)
    return m


@dataclass
class SpectralAR:
    """Linear autoregressive model, one complex multiplier per retained Fourier mode."""

    grid: Grid
    modes: int
    coeffs: np.ndarray      # complex, rfftn layout over the spatial axes
    horizon: int

    def __post_init__(self):
        self.mask = _retained_mask(self.grid.spatial(), self.modes)

    def _axes(self, batched: bool):
        off = 1 if batched else 0
        return tuple(range(off, off + self.grid.ndim - 1))

    def _roll(self, ic: np.ndarray, batched: bool) -> np.ndarray:
        axes = self._axes(batched)
        sshape = self.grid.spatial().shape
        uh = np.fft.rfftn(ic, axes=axes)
        frames = [ic]
        a = np.where(self.mask, self.coeffs, 0.0)
        for _ in range(self.horizon):
            uh = a * uh
            frames.append(np.fft.irfftn(uh, s=sshape, axes=axes))
        return np.stack(frames, axis=1 if batched else 0)

    def predict(self, ic: FieldTensor) -> FieldTensor:
        if ic.grid != self.grid.spatial():
            raise GridMismatchError(f"initial state on {ic.grid!r}, model expects {self.grid.spatial()!r}")
        return FieldTensor._wrap(self.grid, self._roll(ic.values, False))

    def predict_batch(self, ics: FieldTensor) -> FieldTensor:
        if ics.grid != self.grid.spatial():
            raise GridMismatchError("initial states on the wrong grid")
        return FieldTensor._wrap(self.grid, self._roll(ics.values, True), batched=True)

    def with_horizon(self, horizon: int) -> "SpectralAR":
        g = self.grid
        dt = g.spacing("t")
        return replace(self, grid=g.with_time(0.0, dt, horizon + 1), horizon=horizon)


def train_spectral_ar(rollouts: FieldTensor, modes: int, horizon: int | None = None,
                      ridge_floor: float = 1e-8) -> SpectralAR:
    """Least-squares fit of a per-mode complex multiplier mapping frame t to t+1.

    Modes whose training energy is below ``ridge_floor**2`` times the largest
    mode energy are ridge-regularised with that floor (and a warning).
    """
    if not rollouts.batched:
        rollouts = FieldTensor.stack([rollouts])
    g = rollouts.grid
    if not g.has_time or g.shape[0] < 2:
        raise ConfigurationError("training rollouts need a time axis with >= 2 frames")
    spatial = g.spatial()
    for a in spatial.axes:
        if modes > a.count // 2:
            raise ConfigurationError(f"retained modes {modes} exceed N/2 = {a.count // 2} on axis {a.kind}")
    if modes < 0:
        raise ConfigurationError("retained modes must be >= 0")
    axes = tuple(range(2, 2 + spatial.ndim))
    uh = np.fft.rfftn(rollouts.values, axes=axes)
    x, y = uh[:, :-1], uh[:, 1:]
    num = np.sum(np.conj(x) * y, axis=(0, 1))
    den = np.sum(np.abs(x) ** 2, axis=(0, 1))
    floor = ridge_floor ** 2 * den.max() if den.max() > 0 else ridge_floor ** 2
    weak = den < floor
    mask = _retained_mask(spatial, modes)
    if np.any(weak & mask):
        warnings.warn(f"{int(np.sum(weak & mask))} retained modes carry (almost) no training energy; "
                      f"ridge floor applied", RankDeficientFitWarning, stacklevel=2)
    coeffs = num / np.where(weak, den + floor, den)
    h = g.shape[0] - 1 if horizon is None else int(horizon)
    out_grid = spatial.with_time(0.0, g.spacing("t"), h + 1)
    return SpectralAR(out_grid, int(modes), coeffs, h)


def save_spectral_ar(path, model: SpectralAR) -> None:
    meta = {
        "kind": "spectral-ar",
        "modes": model.modes,
        "horizon": model.horizon,
        "grid": [[a.kind, a.lo, a.hi, a.count] for a in model.grid.axes],
    }
    axes = [(f"mode-{k}", 0, n - 1, n) for k, n in zip("xyz", model.coeffs.shape)]
    axes.append(("complex", 0, 1, 2))
    inter = np.stack([model.coeffs.real, model.coeffs.imag], axis=-1)
    write_dump(path, axes, inter, meta=meta)


def load_spectral_ar(path) -> SpectralAR:
    header, values = read_dump(path)
    meta = header["meta"] or {}
    if meta.get("kind") != "spectral-ar":
        raise ConfigurationError(f"{path}: not a spectral-ar model file")
    shape = tuple(ax[3] for ax in header["axes"])
    inter = values.reshape(shape)
    coeffs = inter[..., 0] + 1j * inter[..., 1]
    grid = Grid([Axis(*a) for a in meta["grid"]], min_points=1)
    return SpectralAR(grid, int(meta["modes"]), coeffs, int(meta["horizon"]))


@dataclass(frozen=True)
class ProbabilisticPrediction:
    mean: FieldTensor
    sigma: FieldTensor


SIGMA_FLOOR = 1e-12


def ensemble_spread(predictors: Sequence, ic: FieldTensor) -> ProbabilisticPrediction:
    """Pointwise mean and population standard deviation over member rollouts."""
    if not predictors:
        raise ConfigurationError("ensemble needs at least one member")
    outs = np.stack([p.predict(ic).values for p in predictors])
    grid = predictors[0].grid
    mean = outs.mean(axis=0)
    sigma = np.maximum(outs.std(axis=0), SIGMA_FLOOR)
    return ProbabilisticPrediction(FieldTensor._wrap(grid, mean), FieldTensor._wrap(grid, sigma))
