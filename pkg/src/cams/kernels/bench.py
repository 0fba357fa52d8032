"""Benchmark the stage-solve backends on identical batches.

Usage:
    python -m cams.kernels.bench [--points N] [--jobs J] [--mlp] [--out csv]

Solves the same pre-drawn stage batch with the compiled core and the
pure-python fallback and reports wall time per solve.  The python
backend is the bottleneck here, so keep --points small.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from ..dsgda import DsgdaConfig, draw_starts
from ..game import make_hexner
from ..stages import dual_domains, primal_domains
from ..value import FitConfig, SliceDataset, TerminalDualSlice, TerminalPrimalSlice, fit_value_slice
from . import compiled_available, solve_stage_batch


def _inputs(spec, kind, cfg, n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, spec.state_dim))
    if kind == "primal":
        P = rng.dirichlet(np.ones(spec.num_types), size=n)
        dm, dx = primal_domains(spec)
    else:
        P = rng.uniform(-3, 3, (n, spec.num_types))
        dm, dx = dual_domains(spec)
    sm = np.empty((n, cfg.restarts, dm.dim))
    sx = np.empty((n, cfg.restarts, dx.dim))
    ry = np.empty((n, cfg.refine_starts - 1, dx.dim))
    for k in range(n):
        starts, refine = draw_starts(dm, dx, cfg, np.random.default_rng(seed + 1 + k))
        for s, (_, x0, y0) in enumerate(starts):
            sm[k, s] = x0
            sx[k, s] = y0
        for r, y0 in enumerate(refine):
            ry[k, r] = y0
    return X, P, sm, sx, ry


def _fitted(spec, kind, seed=0):
    rng = np.random.default_rng(seed)
    n = 256
    X = rng.uniform(spec.state_box[:, 0], spec.state_box[:, 1], (n, spec.state_dim))
    if kind == "primal":
        P = rng.dirichlet(np.ones(spec.num_types), size=n)
    else:
        P = rng.uniform(-3, 3, (n, spec.num_types))
    y = np.sin(X[:, 0]) + 0.5 * P[:, 0]
    data = SliceDataset(spec.horizon - spec.step, kind, X, P, y, seed=seed)
    return fit_value_slice(data, spec, FitConfig(max_epochs=120))


def run(points: int, jobs: int, use_mlp: bool, out_path: str | None) -> int:
    spec = make_hexner()
    cfg = DsgdaConfig()
    rows = []
    t_stage = spec.horizon - spec.step
    for kind in ("primal", "dual"):
        if use_mlp:
            nv = _fitted(spec, kind)
            nv_name = "fitted"
        else:
            nv = TerminalPrimalSlice(spec) if kind == "primal" else TerminalDualSlice(spec)
            nv_name = "terminal"
        X, P, sm, sx, ry = _inputs(spec, kind, cfg, points, seed=7)
        timings = {}
        for backend in ("compiled", "python"):
            if backend == "compiled" and not compiled_available():
                print("compiled kernel not built; skipping", file=sys.stderr)
                continue
            t0 = time.perf_counter()
            out = solve_stage_batch(
                kind, spec, nv, t_stage, X, P, sm, sx, ry, cfg,
                jobs=jobs, backend=backend,
            )
            dt = time.perf_counter() - t0
            timings[backend] = dt
            rows.append(
                {
                    "kind": kind,
                    "next_value": nv_name,
                    "backend": backend,
                    "points": points,
                    "jobs": jobs if backend == "compiled" else 1,
                    "total_s": round(dt, 4),
                    "ms_per_solve": round(1e3 * dt / points, 3),
                    "failed": int(out["failed"].sum()),
                }
            )
        if "compiled" in timings and "python" in timings:
            speedup = timings["python"] / timings["compiled"]
            print(f"{kind:7s} ({nv_name}): python {timings['python']:.2f}s, "
                  f"compiled {timings['compiled']:.2f}s -> x{speedup:.0f}")
    header = ["kind", "next_value", "backend", "points", "jobs",
              "total_s", "ms_per_solve", "failed"]
    if out_path:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {out_path}")
    else:
        print()
        print("  ".join(h.rjust(12) for h in header))
        for r in rows:
            print("  ".join(str(r[h]).rjust(12) for h in header))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=4, help="stage solves per batch")
    ap.add_argument("--jobs", type=int, default=4, help="threads for the compiled core")
    ap.add_argument("--mlp", action="store_true",
                    help="use a fitted next-value slice instead of the terminal one")
    ap.add_argument("--out", default=None, help="write results as CSV")
    args = ap.parse_args(argv)
    return run(args.points, args.jobs, args.mlp, args.out)


if __name__ == "__main__":
    raise SystemExit(main())
