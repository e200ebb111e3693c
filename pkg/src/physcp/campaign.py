"""End-to-end calibration campaigns and the two width studies.

Config grammar (INI, ``#`` or ``;`` comments, keys case-sensitive)::

    [testbed]
    pde     = advection | burgers | wave2d
    v | nu | c = <float>            # physical parameter of the pde
    x       = <lo>, <length>, <count>   # periodic axis; wave2d also needs y
    dt      = <float>               # solver step
    steps   = <int>                 # solver steps per rollout
    stride  = <int>                 # keep every stride-th step (default 1)
    order   = <even int>            # stencil accuracy of the residual (default 2)
    width   = <float>               # advection only: Gaussian exponent (default 50)

    [ics]                           # one line per IC parameter
    A = <lo>, <hi>                  # advection: A, X; wave2d: A, X, Y;
                                    # burgers: alpha, beta, gamma

    [ood]                           # optional: validation box (out-of-distribution)

    [predictor]
    kind    = spectral-ar | perturbed-oracle | exact
    modes   = <int>                 # spectral-ar retained modes
    train   = <int>                 # spectral-ar training rollouts
    eps     = <float>               # perturbed-oracle relative noise
    ell     = <float>               # perturbed-oracle correlation length

    [calibration]
    n_cal   = <int>
    n_val   = <int>
    alpha   = <float>               # level whose fields are written out (default 0.1)
    alphas  = default | <a1>, <a2>, ...

    [run]
    seed    = <int>
    out     = <directory>
"""
from __future__ import annotations

import configparser
import contextlib
import json
import math
import os
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .conformal import (DEFAULT_ALPHAS, CalibrationResult, CoverageReport, ScoreBatch,
                        calibrate_joint, calibrate_marginal, coverage_curve, empirical_coverage,
                        pre_scores, validate_prediction)
from .errors import ConfigurationError, PhyscpError
from .grid import (Axis, FieldTensor, Grid, ParamBox, burgers_ic, gaussian_bump_ic,
                   latin_hypercube_sample, load_field, periodic_axis, save_field)
from .residual import (ResidualProgram, advection_program, burgers_program, wave_program)
from .solvers import SolverConfig, solve
from .surrogate import (perturbed_oracle, predict_batch, train_spectral_ar)

IC_PARAMS = {"advection": ("A", "X"), "burgers": ("alpha", "beta", "gamma"), "wave2d": ("A", "X", "Y")}
PHYS_PARAM = {"advection": "v", "burgers": "nu", "wave2d": "c"}
PREDICTOR_KINDS = ("spectral-ar", "perturbed-oracle", "exact")


class CampaignError(PhyscpError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


@contextlib.contextmanager
def _stage(name: str, timings: dict | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except CampaignError:
        raise
    except Exception as exc:
        raise CampaignError(name, exc) from exc
    if timings is not None:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Testbed:
    pde: str
    value: float
    axes: tuple[tuple[float, float, int], ...]      # (lo, length, count) per spatial axis
    dt: float
    steps: int
    stride: int = 1
    order: int = 2
    width: float = 50.0

    def __post_init__(self):
        if self.pde not in IC_PARAMS:
            raise ConfigurationError(f"unknown pde {self.pde!r}")
        need = 2 if self.pde == "wave2d" else 1
        if len(self.axes) != need:
            raise ConfigurationError(f"{self.pde} needs {need} spatial axes")

    @property
    def grid(self) -> Grid:
        return Grid([periodic_axis(k, lo, ln, int(n)) for k, (lo, ln, n) in zip("xy", self.axes)])

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.pde, {PHYS_PARAM[self.pde]: self.value}, self.grid,
                            self.dt, self.steps, self.stride)

    def with_count(self, count: int, refine_time: bool = False) -> "Testbed":
        """Same domain at ``count`` points per axis; with ``refine_time`` the step
        shrinks in proportion (fixed Courant number, fixed physical horizon)."""
        tb = replace(self, axes=tuple((lo, ln, int(count)) for lo, ln, _ in self.axes))
        if not refine_time:
            return tb
        ratio = Fraction(int(count), int(self.axes[0][2]))
        steps = self.steps * ratio
        if steps.denominator != 1:
            raise ConfigurationError(f"{count} points: {self.steps} steps do not refine to an integer count")
        return replace(tb, dt=self.dt / float(ratio), steps=int(steps))

    def make_ic(self, p: dict) -> FieldTensor:
        g = self.grid
        if self.pde == "advection":
            return gaussian_bump_ic(g, p["A"], [p["X"]], self.width)
        if self.pde == "wave2d":
            return gaussian_bump_ic(g, p["A"], [p["X"], p["Y"]])
        return burgers_ic(g, p["alpha"], p["beta"], p["gamma"])

    def program(self, rollout_grid: Grid) -> ResidualProgram:
        if self.pde == "advection":
            return advection_program(rollout_grid, self.value, self.order)
        if self.pde == "burgers":
            return burgers_program(rollout_grid, self.value, self.order)
        return wave_program(rollout_grid, self.value, self.order)


@dataclass(frozen=True)
class PredictorSpec:
    kind: str = "spectral-ar"
    modes: int = 8
    train: int = 100
    eps: float = 0.0
    ell: float = 0.1

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ConfigurationError(f"predictor kind must be one of {PREDICTOR_KINDS}")
        if self.eps < 0 or self.ell < 0:
            raise ConfigurationError("eps and ell must be non-negative")
        if self.kind == "spectral-ar" and self.train < 1:
            raise ConfigurationError("spectral-ar needs at least one training rollout")


@dataclass(frozen=True)
class CampaignConfig:
    testbed: Testbed
    ics: tuple[tuple[str, float, float], ...]
    predictor: PredictorSpec = PredictorSpec()
    n_cal: int = 200
    n_val: int = 200
    alpha: float = 0.1
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    seed: int = 0
    out: str | None = None
    ood: tuple[tuple[str, float, float], ...] | None = None

    def __post_init__(self):
        if self.n_cal < 1 or self.n_val < 1:
            raise ConfigurationError("n_cal and n_val must be >= 1")
        for a in (self.alpha, *self.alphas):
            if not 0.0 < a < 1.0:
                raise ConfigurationError(f"alpha values must lie in (0, 1), got {a}")
        want = set(IC_PARAMS[self.testbed.pde])
        for box in (self.ics, self.ood):
            if box is not None and {r[0] for r in box} != want:
                raise ConfigurationError(f"{self.testbed.pde} IC box needs parameters {sorted(want)}")

    def to_dict(self) -> dict:
        return asdict(self)


def _floats(text: str, n: int | None = None, key: str = "") -> list[float]:
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigurationError(f"{key}: expected numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigurationError(f"{key}: expected {n} numbers, got {len(vals)}")
    return vals


def _box(sec) -> tuple[tuple[str, float, float], ...]:
    out = []
    for k, v in sec.items():
        lo, hi = _floats(v, 2, k)
        out.append((k, lo, hi))
    return tuple(out)


def parse_config(text: str) -> CampaignConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    for s in ("testbed", "ics"):
        if not cp.has_section(s):
            raise ConfigurationError(f"config lacks a [{s}] section")
    tb = cp["testbed"]
    pde = tb.get("pde", "").strip()
    if pde not in IC_PARAMS:
        raise ConfigurationError(f"[testbed] pde must be one of {tuple(IC_PARAMS)}")
    key = PHYS_PARAM[pde]
    if key not in tb:
        raise ConfigurationError(f"[testbed] needs {key} for {pde}")
    axes = []
    for k in ("x", "y")[: 2 if pde == "wave2d" else 1]:
        if k not in tb:
            raise ConfigurationError(f"[testbed] needs axis {k} = lo, length, count")
        lo, ln, n = _floats(tb[k], 3, k)
        if n != int(n):
            raise ConfigurationError(f"{k}: point count must be an integer")
        axes.append((lo, ln, int(n)))
    try:
        testbed = Testbed(pde, tb.getfloat(key), tuple(axes), tb.getfloat("dt"), tb.getint("steps"),
                          tb.getint("stride", 1), tb.getint("order", 2), tb.getfloat("width", 50.0))
        pr = cp["predictor"] if cp.has_section("predictor") else {}
        pspec = PredictorSpec(pr.get("kind", "spectral-ar").strip(), int(pr.get("modes", 8)),
                              int(pr.get("train", 100)), float(pr.get("eps", 0.0)), float(pr.get("ell", 0.1)))
        cal = cp["calibration"] if cp.has_section("calibration") else {}
        alphas = cal.get("alphas", "default").strip()
        alphas = DEFAULT_ALPHAS if alphas == "default" else tuple(_floats(alphas, key="alphas"))
        run = cp["run"] if cp.has_section("run") else {}
        return CampaignConfig(testbed, _box(cp["ics"]), pspec, int(cal.get("n_cal", 200)),
                              int(cal.get("n_val", 200)), float(cal.get("alpha", 0.1)), alphas,
                              int(run.get("seed", 0)), run.get("out"),
                              _box(cp["ood"]) if cp.has_section("ood") else None)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad config value: {exc}") from exc


def load_config(path) -> CampaignConfig:
    with open(path) as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# pipeline


def _seeds(seed: int) -> dict[str, int]:
    kids = np.random.SeedSequence(seed).spawn(4)
    return {name: int(k.generate_state(1)[0]) for name, k in zip(("ics", "train", "split", "noise"), kids)}


def build_predictor(cfg: CampaignConfig):
    spec = cfg.predictor
    tb = cfg.testbed
    scfg = tb.solver_config()
    seeds = _seeds(cfg.seed)
    if spec.kind == "exact":
        return perturbed_oracle(scfg, 0.0, spec.ell, seeds["noise"])
    if spec.kind == "perturbed-oracle":
        return perturbed_oracle(scfg, spec.eps, spec.ell, seeds["noise"])
    box = ParamBox(cfg.ics, spec.train, seeds["train"])
    ics = FieldTensor.stack([tb.make_ic(p) for p in latin_hypercube_sample(box)])
    return train_spectral_ar(solve(scfg, ics), spec.modes)


def sample_ics(cfg: CampaignConfig) -> tuple[list[dict], list[dict]]:
    """Calibration and validation IC parameters.

    In-distribution runs draw one Latin hypercube of ``n_cal + n_val`` points and
    split it at random, so the two halves are exchangeable.
    """
    seeds = _seeds(cfg.seed)
    if cfg.ood is None:
        pts = latin_hypercube_sample(ParamBox(cfg.ics, cfg.n_cal + cfg.n_val, seeds["ics"]))
        order = np.random.default_rng(seeds["split"]).permutation(len(pts))
        return [pts[i] for i in order[: cfg.n_cal]], [pts[i] for i in order[cfg.n_cal:]]
    cal = latin_hypercube_sample(ParamBox(cfg.ics, cfg.n_cal, seeds["ics"]))
    val = latin_hypercube_sample(ParamBox(cfg.ood, cfg.n_val, seeds["split"]))
    return cal, val


@dataclass
class CampaignResult:
    config: CampaignConfig
    report: CoverageReport
    marginal: CalibrationResult
    joint: CalibrationResult
    cal_scores: ScoreBatch
    val_scores: ScoreBatch
    program: ResidualProgram
    predictor: object
    timings: dict = field(default_factory=dict)


def run_campaign(cfg: CampaignConfig, out: str | os.PathLike | None = None, *,
                 write: bool = True) -> CampaignResult:
    """Sample ICs, predict, score with PRE, calibrate and measure coverage.

    With ``write`` the artifacts go to ``out`` (or ``cfg.out``): ``coverage.csv``,
    ``qhat_marginal.dump``, ``sigma_joint.dump``, ``calibration.json``,
    ``scores.npz`` and ``manifest.json``.  Files are staged in a scratch
    directory and moved into place only when every stage succeeded.
    """
    timings: dict[str, float] = {}
    with _stage("sample", timings):
        cal_p, val_p = sample_ics(cfg)
        cal_ic = FieldTensor.stack([cfg.testbed.make_ic(p) for p in cal_p])
        val_ic = FieldTensor.stack([cfg.testbed.make_ic(p) for p in val_p])
    with _stage("predictor", timings):
        pred = build_predictor(cfg)
    with _stage("predict", timings):
        cal_roll = predict_batch(pred, cal_ic)
        val_roll = predict_batch(pred, val_ic)
    with _stage("score", timings):
        program = cfg.testbed.program(pred.grid)
        cal_s = pre_scores(cal_roll, program)
        val_s = pre_scores(val_roll, program)
    with _stage("calibrate", timings):
        alphas = tuple(cfg.alphas)
        report = coverage_curve(cal_s, val_s, alphas)
        marg = calibrate_marginal(cal_s, cfg.alpha)
        joint = calibrate_joint(cal_s, cfg.alpha)
    res = CampaignResult(cfg, report, marg, joint, cal_s, val_s, program, pred, timings)
    if write:
        target = out if out is not None else cfg.out
        if target is None:
            raise CampaignError("write", ConfigurationError("no output directory given"))
        with _stage("write"):
            write_artifacts(res, target)
    return res


def write_artifacts(res: CampaignResult, out) -> None:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out.name}.partial-", dir=out.parent))
    try:
        res.report.to_csv(scratch / "coverage.csv")
        save_field(scratch / "qhat_marginal.dump", res.marginal.qhat,
                   meta={"alpha": res.config.alpha, "mode": "marginal", "n": res.marginal.n})
        save_field(scratch / "sigma_joint.dump", res.joint.sigma,
                   meta={"alpha": res.config.alpha, "mode": "joint", "n": res.joint.n})
        calib = {
            "alpha": res.config.alpha,
            "score": "PRE",
            "program": res.program.name,
            "n_cal": res.marginal.n,
            "qhat_joint": res.joint.qhat if math.isfinite(res.joint.qhat) else "inf",
            "insufficient": bool(res.marginal.insufficient),
            "mean_width_marginal": res.marginal.mean_width(),
            "mean_width_joint": res.joint.mean_width(),
        }
        (scratch / "calibration.json").write_text(json.dumps(calib, indent=2, sort_keys=True) + "\n")
        np.savez(scratch / "scores.npz", calibration=res.cal_scores.scores.values,
                 validation=res.val_scores.scores.values, alphas=np.array(res.config.alphas))
        manifest = {
            "package": "physcp",
            "version": __version__,
            "backend": _accel.backend(),
            "seed": res.config.seed,
            "config": res.config.to_dict(),
            "wall_time_s": res.timings,
            "rollout_grid": [[a.kind, a.lo, a.hi, a.count] for a in res.predictor.grid.axes],
            "score_grid": [[a.kind, a.lo, a.hi, a.count] for a in res.cal_scores.grid.axes],
        }
        (scratch / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        out.mkdir(parents=True, exist_ok=True)
        for f in scratch.iterdir():
            os.replace(f, out / f.name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def recompute_report(scores_path, n_alpha_grid=None) -> CoverageReport:
    """Rebuild the coverage table from ``scores.npz`` (audit path)."""
    z = np.load(scores_path)
    cal, val = z["calibration"], z["validation"]
    g = Grid([Axis("x", 0.0, 1.0, int(np.prod(cal.shape[1:])))], min_points=1)
    mk = lambda a: ScoreBatch(FieldTensor._wrap(g, a.reshape(a.shape[0], -1), batched=True), "PRE")
    alphas = tuple(float(a) for a in z["alphas"]) if n_alpha_grid is None else n_alpha_grid
    return coverage_curve(mk(cal), mk(val), alphas)


# ---------------------------------------------------------------------------
# studies


@dataclass(frozen=True)
class StudyRow:
    label: float            # h (discretisation) or eps (model quality)
    mean_width: float       # mean marginal half-width at the config alpha
    marginal_coverage: float
    joint_coverage: float
    mean_width_joint: float


@dataclass
class StudyResult:
    name: str
    rows: list[StudyRow]
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_csv(self, path=None) -> str:
        lab = "h" if self.name == "discretisation" else "eps"
        lines = [f"{lab},mean_width,marginal_coverage,joint_coverage,mean_width_joint"]
        lines += [f"{r.label!r},{r.mean_width!r},{r.marginal_coverage!r},{r.joint_coverage!r},{r.mean_width_joint!r}"
                  for r in self.rows]
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _study_row(label: float, res: CampaignResult) -> StudyRow:
    m = empirical_coverage(res.marginal, res.val_scores).value
    j = empirical_coverage(res.joint, res.val_scores).value
    return StudyRow(float(label), res.marginal.mean_width(), m, j, res.joint.mean_width())


def run_discretisation_study(cfg: CampaignConfig, levels, tol: float = 0.03,
                             out=None, refine_time: bool = True) -> StudyResult:
    """Repeat the campaign at each spatial point count in ``levels``.

    By default the time step is refined with the grid so the output resolution
    changes in space and time together.
    """
    rows = []
    for n in levels:
        c = replace(cfg, testbed=cfg.testbed.with_count(int(n), refine_time), alphas=(cfg.alpha,))
        res = run_campaign(c, None if out is None else Path(out) / f"N{int(n)}", write=out is not None)
        rows.append(_study_row(c.testbed.grid.axes[0].spacing, res))
    rows.sort(key=lambda r: -r.label)  # coarse first
    target = 1.0 - cfg.alpha - tol
    checks = {f"coverage h={r.label:.4g}": r.marginal_coverage >= target for r in rows}
    for a, b in zip(rows, rows[1:]):
        checks[f"width h={a.label:.4g} >= h={b.label:.4g}"] = a.mean_width >= b.mean_width
    study = StudyResult("discretisation", rows, checks)
    if out is not None:
        study.to_csv(Path(out) / "discretisation.csv")
    return study


def run_model_quality_study(cfg: CampaignConfig, eps_pair, tol: float = 0.03,
                            out=None) -> StudyResult:
    """Perturbed-oracle campaigns at each noise level; widths should grow with eps."""
    rows = []
    for eps in eps_pair:
        c = replace(cfg, predictor=PredictorSpec("perturbed-oracle", eps=float(eps), ell=cfg.predictor.ell),
                    alphas=(cfg.alpha,))
        res = run_campaign(c, None if out is None else Path(out) / f"eps{eps:g}", write=out is not None)
        rows.append(_study_row(eps, res))
    target = 1.0 - cfg.alpha - tol
    checks = {f"coverage eps={r.label:g}": r.marginal_coverage >= target for r in rows}
    srt = sorted(rows, key=lambda r: r.label)
    for a, b in zip(srt, srt[1:]):
        if b.label > a.label:
            checks[f"width eps={b.label:g} > eps={a.label:g}"] = b.mean_width > a.mean_width
    study = StudyResult("model-quality", rows, checks)
    if out is not None:
        study.to_csv(Path(out) / "model_quality.csv")
    return study


# ---------------------------------------------------------------------------
# single-prediction validation


ACCEPT, REJECT, IO_ERROR = 0, 3, 2


@dataclass
class SingleValidation:
    status: int
    message: str
    validation: object = None


def load_calibration(cfg: CampaignConfig, artifacts, mode: str) -> CalibrationResult:
    art = Path(artifacts)
    calib = json.loads((art / "calibration.json").read_text())
    alpha = float(calib["alpha"])
    n = int(calib["n_cal"])
    if mode == "marginal":
        q = load_field(art / "qhat_marginal.dump")
        return CalibrationResult("marginal", "PRE", alpha, n, q, None, bool(calib["insufficient"]))
    sigma = load_field(art / "sigma_joint.dump")
    qj = calib["qhat_joint"]
    qj = math.inf if qj == "inf" else float(qj)
    return CalibrationResult("joint", "PRE", alpha, n, qj, sigma, math.isinf(qj))


def validate_single(cfg: CampaignConfig, prediction_file, artifacts, mode: str = "joint") -> SingleValidation:
    """Accept (0) or reject (3) one rollout against stored calibration artifacts; 2 on I/O failure."""
    try:
        pred = load_field(prediction_file)
        result = load_calibration(cfg, artifacts, mode)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        return SingleValidation(IO_ERROR, f"cannot load inputs: {exc}")
    program = cfg.testbed.program(pred.grid)
    v = validate_prediction(program, result, pred)
    bad = ~v.mask
    g = v.grid
    lines = [f"mode={mode} alpha={result.alpha:g} cells={bad.size} violations={int(bad.sum())} "
             f"statistic={v.statistic:.6g}"]
    if g.has_time and bad.any():
        t = g.axis("t").points
        per_frame = bad.reshape(bad.shape[0], -1).sum(axis=1)
        hit = [f"t={t[i]:.6g}:{int(c)}" for i, c in enumerate(per_frame) if c]
        lines.append("violating frames " + " ".join(hit))
    lines.append("ACCEPT" if v.accepted else "REJECT")
    return SingleValidation(ACCEPT if v.accepted else REJECT, "\n".join(lines), v)


def describe_residual(cfg: CampaignConfig) -> str:
    from .stencil import format_kernel
    tb = cfg.testbed
    grid = tb.solver_config().output_grid()
    prog = tb.program(grid)
    out = [prog.describe(), f"rollout grid {grid!r}", f"residual grid {prog.output_grid(grid)!r}",
           f"stability: {tb.solver_config().stability}"]
    for t in prog.terms:
        for f in t.factors:
            if f.kernel.axes:
                out.append(format_kernel(f.kernel))
    return "\n".join(out)


def solve_single(cfg: CampaignConfig, params: dict | None, out_file) -> FieldTensor:
    """Reference rollout for one IC (box centre when ``params`` is None)."""
    tb = cfg.testbed
    p = {n: 0.5 * (lo + hi) for n, lo, hi in cfg.ics}
    p.update(params or {})
    unknown = set(p) - set(IC_PARAMS[tb.pde])
    if unknown:
        raise ConfigurationError(f"unknown IC parameters {sorted(unknown)}")
    roll = solve(tb.solver_config(), tb.make_ic(p))
    save_field(out_file, roll, meta={"pde": tb.pde, "ic": p})
    return roll
