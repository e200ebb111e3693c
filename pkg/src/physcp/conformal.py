"""Split conformal prediction over nonconformity score fields.

Scores are batched fields (sample axis first).  Calibration reduces over the
sample axis: cell-wise for marginal mode, through the sigma-modulated
supremum for joint mode.  The quantile is the order statistic of rank
``ceil((n + 1) * (1 - alpha))`` with no interpolation; when that rank exceeds
``n`` the result is ``inf`` and flagged as insufficient calibration.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import CalibrationError, ConfigurationError, GridMismatchError
from .grid import FieldTensor, Grid
from .residual import ResidualProgram
from .surrogate import ProbabilisticPrediction

SCORE_KINDS = ("AER", "STD", "PRE")
SIGMA_FLOOR = 1e-12
DEFAULT_ALPHAS = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class ScoreBatch:
    scores: FieldTensor
    kind: str

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ConfigurationError(f"score kind must be one of {SCORE_KINDS}")
        if not self.scores.batched:
            raise ConfigurationError("scores must be a batch (sample axis first)")
        v = self.scores.values
        if not np.isfinite(v).all():
            raise CalibrationError("non-finite nonconformity scores")
        if (v < 0).any():
            raise CalibrationError("nonconformity scores must be non-negative")

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def grid(self) -> Grid:
        return self.scores.grid

    def subset(self, idx) -> "ScoreBatch":
        return ScoreBatch(FieldTensor._wrap(self.grid, self.scores.values[idx], batched=True), self.kind)


def _batched(f: FieldTensor) -> FieldTensor:
    return f if f.batched else FieldTensor._wrap(f.grid, f.values[None], batched=True)


def pre_scores(predictions: FieldTensor, program: ResidualProgram) -> ScoreBatch:
    """|D(prediction)| cell-wise on the program's interior.  No target data."""
    r = program.evaluate(_batched(predictions))
    return ScoreBatch(FieldTensor._wrap(r.grid, np.abs(r.values), batched=True), "PRE")


def aer_scores(predictions: FieldTensor, targets: FieldTensor) -> ScoreBatch:
    p, t = _batched(predictions), _batched(targets)
    if p.grid != t.grid or p.values.shape != t.values.shape:
        raise GridMismatchError("predictions and targets differ in grid or batch size")
    return ScoreBatch(FieldTensor._wrap(p.grid, np.abs(p.values - t.values), batched=True), "AER")


def std_scores(predictions: ProbabilisticPrediction, targets: FieldTensor) -> ScoreBatch:
    mu, sig, t = _batched(predictions.mean), _batched(predictions.sigma), _batched(targets)
    if mu.grid != t.grid or mu.values.shape != t.values.shape:
        raise GridMismatchError("predictions and targets differ in grid or batch size")
    if (sig.values <= 0).any():
        raise CalibrationError("spread field must be strictly positive")
    return ScoreBatch(FieldTensor._wrap(mu.grid, np.abs(mu.values - t.values) / sig.values, batched=True), "STD")


# ---------------------------------------------------------------------------
# quantiles


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def quantile_rank(n: int, alpha: float) -> int:
    """``ceil((n + 1) * (1 - alpha))`` evaluated exactly on the decimal value of ``alpha``."""
    a = Fraction(repr(_check_alpha(alpha)))
    return math.ceil((n + 1) * (1 - a))


def conformal_quantile(values, alpha: float) -> float:
    """Order statistic of rank ``ceil((n+1)(1-alpha))``, or ``inf`` if that rank exceeds ``n``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise CalibrationError("conformal quantile of an empty calibration set")
    k = quantile_rank(v.size, alpha)
    if k > v.size:
        return math.inf
    return float(np.partition(v, k - 1)[k - 1])


def _cellwise_quantile(s: np.ndarray, alpha: float) -> np.ndarray:
    n = s.shape[0]
    k = quantile_rank(n, alpha)
    if k > n:
        return np.full(s.shape[1:], np.inf)
    return np.partition(s, k - 1, axis=0)[k - 1]


@dataclass(frozen=True)
class CalibrationResult:
    mode: str                       # "marginal" | "joint"
    kind: str                       # score kind
    alpha: float
    n: int
    qhat: FieldTensor | float       # per-cell field (marginal) or scalar (joint)
    sigma: FieldTensor | None = None
    insufficient: bool = False

    @property
    def grid(self) -> Grid:
        return self.sigma.grid if self.mode == "joint" else self.qhat.grid

    def half_width(self) -> FieldTensor:
        """Band half-width field: q̂ (marginal) or q̂·σ (joint)."""
        if self.mode == "marginal":
            return self.qhat
        return FieldTensor._wrap(self.sigma.grid, self.qhat * self.sigma.values)

    def mean_width(self) -> float:
        return float(np.mean(self.half_width().values))


def calibrate_marginal(scores: ScoreBatch, alpha: float) -> CalibrationResult:
    """Cell-wise conformal quantile across the calibration samples."""
    alpha = _check_alpha(alpha)
    q = _cellwise_quantile(scores.scores.values, alpha)
    return CalibrationResult("marginal", scores.kind, alpha, scores.n,
                             FieldTensor._wrap(scores.grid, q), None,
                             quantile_rank(scores.n, alpha) > scores.n)


def joint_statistics(scores: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Per-sample supremum of sigma-modulated scores."""
    s = scores / sigma
    return s.reshape(s.shape[0], -1).max(axis=1)


def calibrate_joint(scores: ScoreBatch, alpha: float, sigma: FieldTensor | None = None) -> CalibrationResult:
    """Supremum score modulated by the per-cell standard deviation of calibration scores.

    By default sigma is estimated from ``scores`` themselves.  Each calibration
    sample then shrinks its own modulated score slightly, which costs coverage
    of order 1/n.  Passing ``sigma`` estimated on a disjoint split keeps the
    calibration and test statistics exchangeable, so the guarantee is exact.
    """
    alpha = _check_alpha(alpha)
    s = scores.scores.values
    if sigma is None:
        sigma = np.maximum(s.std(axis=0), SIGMA_FLOOR)
    else:
        if sigma.grid != scores.grid or sigma.batched:
            raise GridMismatchError("sigma field is not on the score grid")
        sigma = np.maximum(sigma.values, SIGMA_FLOOR)
    q = conformal_quantile(joint_statistics(s, sigma), alpha)
    return CalibrationResult("joint", scores.kind, alpha, scores.n, q,
                             FieldTensor._wrap(scores.grid, sigma), math.isinf(q))


def calibrate(scores: ScoreBatch, alpha: float, mode: str, sigma: FieldTensor | None = None) -> CalibrationResult:
    if mode == "marginal":
        return calibrate_marginal(scores, alpha)
    if mode == "joint":
        return calibrate_joint(scores, alpha, sigma)
    raise ConfigurationError(f"calibration mode must be 'marginal' or 'joint', got {mode!r}")


# ---------------------------------------------------------------------------
# prediction sets and validation


@dataclass(frozen=True)
class PredictionBand:
    lower: FieldTensor
    upper: FieldTensor


def prediction_band(result: CalibrationResult,
                    prediction: FieldTensor | ProbabilisticPrediction | None = None) -> PredictionBand:
    """PRE bands live in residual space and ignore ``prediction``; AER/STD bands centre on it."""
    hw = result.half_width()
    if result.kind == "PRE":
        return PredictionBand(-hw, hw)
    if prediction is None:
        raise ConfigurationError(f"{result.kind} bands need a prediction to centre on")
    if result.kind == "AER":
        centre, scale = prediction, None
    else:
        if not isinstance(prediction, ProbabilisticPrediction):
            raise ConfigurationError("STD bands need a probabilistic prediction")
        centre, scale = prediction.mean, prediction.sigma
    if centre.grid != hw.grid:
        raise GridMismatchError("prediction is not on the calibration grid")
    w = hw.values if scale is None else hw.values * scale.values
    return PredictionBand(FieldTensor._wrap(centre.grid, centre.values - w, centre.batched),
                          FieldTensor._wrap(centre.grid, centre.values + w, centre.batched))


@dataclass(frozen=True)
class Validation:
    accepted: bool | np.ndarray
    mask: np.ndarray                # bool, True where the cell lies inside the band
    grid: Grid                      # residual grid the mask lives on
    statistic: float | np.ndarray   # max r/q̂ (marginal) or max r/σ (joint)

    @property
    def violations(self) -> int | np.ndarray:
        v = ~self.mask
        return int(v.sum()) if v.ndim == self.grid.ndim else v.reshape(v.shape[0], -1).sum(axis=1)


def validate_prediction(program: ResidualProgram, result: CalibrationResult,
                        prediction: FieldTensor) -> Validation:
    """Accept iff every cell residual lies in the closed band (marginal) or the
    modulated supremum is at most q̂ (joint)."""
    if result.kind != "PRE":
        raise ConfigurationError("data-free validation needs a PRE calibration")
    r = program.evaluate(prediction)
    if r.grid != result.grid:
        raise GridMismatchError(f"residual grid {r.grid!r} differs from calibration grid {result.grid!r}")
    a = np.abs(r.values)
    batched = r.batched
    if result.mode == "marginal":
        q = result.qhat.values
        inside = a <= q
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(a == 0, 0.0, a / q)
    else:
        ratio = a / result.sigma.values
        inside = ratio <= result.qhat
    flat = ratio.reshape((ratio.shape[0], -1) if batched else (1, -1)).max(axis=1)
    acc = inside.reshape(flat.shape[0], -1).all(axis=1)
    if batched:
        return Validation(acc, inside, r.grid, flat)
    return Validation(bool(acc[0]), inside, r.grid, float(flat[0]))


# ---------------------------------------------------------------------------
# coverage


@dataclass(frozen=True)
class Coverage:
    value: float
    per_cell: FieldTensor | None = None


def empirical_coverage(result: CalibrationResult, validation: ScoreBatch) -> Coverage:
    """Marginal: fraction of (sample, cell) pairs inside, i.e. the cell average of
    the per-cell coverage map.  Joint: fraction of samples whose modulated
    supremum is at most q̂."""
    if validation.grid != result.grid:
        raise GridMismatchError("validation scores are not on the calibration grid")
    s = validation.scores.values
    if result.mode == "marginal":
        per_cell = (s <= result.qhat.values).mean(axis=0)
        return Coverage(float(per_cell.mean()), FieldTensor._wrap(validation.grid, per_cell))
    stat = joint_statistics(s, result.sigma.values)
    return Coverage(float(np.mean(stat <= result.qhat)))


@dataclass(frozen=True)
class CoverageRow:
    alpha: float
    marginal_coverage: float
    joint_coverage: float
    n_cal: int
    n_val: int


CSV_HEADER = ("alpha", "marginal_coverage", "joint_coverage", "n_cal", "n_val")


@dataclass
class CoverageReport:
    rows: list[CoverageRow] = field(default_factory=list)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([repr(r.alpha), repr(r.marginal_coverage), repr(r.joint_coverage), r.n_cal, r.n_val])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "CoverageReport":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = tuple(next(rd))
            if header != CSV_HEADER:
                raise ConfigurationError(f"{path}: unexpected CSV header {header}")
            rows = [CoverageRow(float(a), float(m), float(j), int(nc), int(nv)) for a, m, j, nc, nv in rd]
        return cls(rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def coverage_row(calibration: ScoreBatch, validation: ScoreBatch, alpha: float) -> CoverageRow:
    m = empirical_coverage(calibrate_marginal(calibration, alpha), validation).value
    j = empirical_coverage(calibrate_joint(calibration, alpha), validation).value
    return CoverageRow(float(alpha), m, j, calibration.n, validation.n)


def coverage_curve(calibration: ScoreBatch, validation: ScoreBatch,
                   alphas: Sequence[float] = DEFAULT_ALPHAS) -> CoverageReport:
    """Marginal and joint empirical coverage for each alpha on the grid."""
    if calibration.kind != validation.kind:
        raise ConfigurationError("calibration and validation use different score kinds")
    return CoverageReport([coverage_row(calibration, validation, a) for a in alphas])
