"""Compare the numba and numpy backends of the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings call both implementations directly in one process (numba JIT
time is reported separately from the warm runs).  ``--end-to-end`` also times
the advection campaign in two subprocesses, one with PHYSCP_DISABLE_NUMBA=1.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from physcp import _accel
from physcp.grid import Axis, Grid
from physcp.stencil import _taps, build_kernel

ROOT = Path(__file__).resolve().parent.parent


def _stencil_case(grid: Grid, spec, batch: int, rng):
    k = build_kernel(grid, spec)
    full = [k.coeffs.shape[k.axes.index(a)] if a in k.axes else 1 for a in grid.kinds]
    pad = (1,) * (3 - grid.ndim)
    kfull = k.embedded(grid.kinds, full).reshape(tuple(full) + pad)
    offsets, coefs = _taps(kfull)
    radii = np.array([s // 2 for s in kfull.shape], dtype=np.int64)
    f = rng.standard_normal((batch, *grid.shape, *pad))
    return (f, offsets, coefs, k.total, radii)


def cases(rng):
    adv = Grid([Axis("t", 0, 0.1, 11), Axis("x", 0, 2, 200)])
    wave = Grid([Axis("t", 0, 0.667, 21), Axis("x", -1, 1, 64), Axis("y", -1, 1, 64)])
    yield ("valid  advection 200x11x200", _accel.correlate_valid_numpy, _accel.correlate_valid_numba,
           _stencil_case(adv, [("t", 1), ("x", 1)], 200, rng))
    yield ("valid  wave 20x21x64x64", _accel.correlate_valid_numpy, _accel.correlate_valid_numba,
           _stencil_case(wave, [("t", 2), ("x", 2), ("y", 2)], 20, rng))
    yield ("periodic wave 20x21x64x64", _accel.correlate_periodic_numpy, _accel.correlate_periodic_numba,
           _stencil_case(wave, [("t", 2), ("x", 2), ("y", 2)], 20, rng))
    s = 0.01 / (4 * 0.01)
    rhs = rng.standard_normal((200, 200))
    yield ("cyclic tridiagonal 200x200", _accel.solve_cyclic_tridiagonal_numpy,
           _accel.solve_cyclic_tridiagonal_numba, (-s, 1.0, s, s, -s, rhs))


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def end_to_end(repeat: int):
    code = ("import time; from physcp.campaign import load_config, run_campaign; "
            f"cfg = load_config({str(ROOT / 'configs' / 'advection.ini')!r}); run_campaign(cfg, write=False); "
            f"ts = []\nfor _ in range({repeat}):\n t = time.perf_counter(); run_campaign(cfg, write=False); "
            "ts.append(time.perf_counter() - t)\nprint(min(ts))")
    rows = []
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, PHYSCP_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        rows.append((label, float(out.stdout.strip())))
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not importable; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'jit s':>7} {'max |diff|':>11}")
    for name, f_np, f_nb, call in cases(rng):
        t0 = time.perf_counter()
        f_nb(*call)
        jit = time.perf_counter() - t0
        t_np, out_np = best_of(f_np, call, args.repeat)
        t_nb, out_nb = best_of(f_nb, call, args.repeat)
        diff = float(np.max(np.abs(out_np - out_nb)))
        print(f"{name:<30} {1e3 * t_np:>10.2f} {1e3 * t_nb:>10.2f} {t_np / t_nb:>8.1f} {jit:>7.2f} {diff:>11.1e}")
    if args.end_to_end:
        print("\nadvection campaign (n_cal = n_val = 200, 19 alphas), best of", args.repeat)
        for label, t in end_to_end(args.repeat):
            print(f"  {label:<6} {t:.3f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
