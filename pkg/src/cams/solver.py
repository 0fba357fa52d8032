"""Backward induction driver: sample points, solve stages, fit slices.

The solve walks the decision grid from T - tau down to 0.  At each slice
it solves one stage minimax problem per collocation point against the
next slice's value model (exact terminal functions on the first pass),
fits that slice's regressor on the collected targets, and recurses.
Collocation points are drawn once up front by default; a flag switches
to fresh draws per slice.  Within a slice the stage solves are
independent: they run through the batch kernel in chunks, each point
warm-started from the nearest already-solved point of the same slice
(points are processed in shuffled order so the solved set fills the
space quickly and the nearest neighbor stays close).

Solved stage variables are repackaged as behavioral plans: SplitPlan
(informed player: action atoms plus splitting weights) and DualPlan
(uninformed player: action atoms plus dual-vector atoms).  The dual
plan's atoms satisfy the barycenter identity sum_k lam^k p_hat^k = p_hat
exactly; the heaviest atom absorbs the rounding left by the solver's
eliminated-atom reconstruction.

Everything here is deterministic given (seed, config): point draws,
processing order, per-point start draws, and fits all derive from named
SeedSequence streams, so one seed yields one bundle, bit for bit.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dsgda import DsgdaConfig, draw_starts
from .errors import CamsError, ConfigError, SolverFailureError
from .game import DualInfoState, GameSpec, InfoState, config_hash
from .kernels import solve_stage_batch, stage_dims
from .simplex import LAMBDA_MIN, sample_simplex, split_from_alpha
from .stages import PrimalStageVars, StageConfig, dual_domains, primal_domains
from .value import (
    FitConfig,
    SliceDataset,
    TerminalDualSlice,
    TerminalPrimalSlice,
    ValueBundle,
    ValueSlice,
    fit_value_slice,
    save_slices,
)

__all__ = [
    "SolveConfig",
    "SplitPlan",
    "DualPlan",
    "solve_stage_primal",
    "solve_stage_dual",
    "sample_primal_points",
    "sample_dual_points",
    "cams_solve",
    "next_value_slice",
    "check_bundle",
    "bundle_fingerprint",
]

_KIND_TAG = {"primal": 0, "dual": 1}


@dataclass
class SolveConfig:
    """Knobs of a full solve; nests the stage-solver and fit configs.

    samples         collocation points per slice
    min_samples     refuse solves below this many points
    resample        fresh collocation draw per slice (default: one draw,
                    reused across slices)
    chunk           stage solves per kernel batch; warm starts come from
                    points solved in earlier chunks
    warm_start      disable to give every point the neutral center start
    jobs            OpenMP threads inside the kernel batch
    backend         kernel backend override (None: CAMS_KERNEL / auto)
    max_fail_rate   abort the solve when a slice exceeds this failure share
    belief_anchors  share of primal points pinned to vertex/uniform beliefs
    dual_subgradients  share of dual points using p_hat = g(x)
    penalty_weight  dual stage barycenter box penalty
    """

    samples: int = 4000
    min_samples: int = 64
    seed: int = 0
    resample: bool = False
    chunk: int = 256
    warm_start: bool = True
    jobs: int = 1
    backend: str | None = None
    max_fail_rate: float = 0.01
    belief_anchors: float = 0.25
    dual_subgradients: float = 0.5
    penalty_weight: float = 100.0
    dsgda: DsgdaConfig = field(default_factory=DsgdaConfig)
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if isinstance(self.dsgda, dict):
            self.dsgda = DsgdaConfig.from_dict(self.dsgda)
        if isinstance(self.fit, dict):
            self.fit = FitConfig.from_dict(self.fit)
        if self.samples < 1 or self.min_samples < 1 or self.chunk < 1:
            raise ConfigError("samples, min_samples, chunk must be positive")
        if not (0.0 <= self.max_fail_rate <= 1.0):
            raise ConfigError("max_fail_rate must lie in [0, 1]")
        for name in ("belief_anchors", "dual_subgradients"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.penalty_weight < 0:
            raise ConfigError("penalty_weight must be nonnegative")
        if self.backend not in (None, "auto", "compiled", "python"):
            raise ConfigError(f"unknown backend {self.backend!r}")

    def stage_config(self) -> StageConfig:
        return StageConfig(penalty_weight=self.penalty_weight)

    @classmethod
    def from_dict(cls, doc: dict) -> "SolveConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown solve keys: {sorted(extra)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        out = {
            k: getattr(self, k)
            for k in self.__dataclass_fields__
            if k not in ("dsgda", "fit")
        }
        out["dsgda"] = self.dsgda.to_dict()
        out["fit"] = self.fit.to_dict()
        return out


# ---------------------------------------------------------------------------
# Behavioral plans
# ---------------------------------------------------------------------------


@dataclass
class SplitPlan:
    """Informed player's stage plan: I action atoms with splitting weights.

    lam[k] is the marginal probability of atom k; posteriors[k] the public
    belief after it is observed.  Type i plays atom k with probability
    alpha[k, i] (column-stochastic), written in weights/posterior form as
    lam^k p^k[i] / p[i].
    """

    u_atoms: np.ndarray  # (I, d_u)
    alpha: np.ndarray  # (I, I)
    lam: np.ndarray  # (I,)
    posteriors: np.ndarray  # (I, I)
    v_atoms: np.ndarray  # (I, d_v)
    stage_value: float

    @classmethod
    def from_flat(cls, zmin, zmax, value, p, spec: GameSpec) -> "SplitPlan":
        pv = PrimalStageVars.from_flat(zmin, zmax, spec)
        w = split_from_alpha(pv.alpha, np.asarray(p, dtype=float))
        return cls(
            u_atoms=pv.u_atoms,
            alpha=pv.alpha,
            lam=w.lam,
            posteriors=w.posteriors,
            v_atoms=pv.v_atoms,
            stage_value=float(value),
        )


@dataclass
class DualPlan:
    """Uninformed player's stage plan: I+1 action atoms with dual vectors.

    Atom k is played with probability lam[k] and carries the dual vector
    dual_atoms[k]; sum_k lam[k] dual_atoms[k] equals the current p_hat
    exactly.  u_atoms are the stage equilibrium responses, kept because
    the dual-vector advance p_hat^k - tau l(u, v^k) needs a u.
    """

    v_atoms: np.ndarray  # (I+1, d_v)
    lam: np.ndarray  # (I+1,)
    dual_atoms: np.ndarray  # (I+1, I)
    u_atoms: np.ndarray  # (I+1, d_u)
    stage_value: float

    @classmethod
    def from_flat(cls, zmin, zmax, value, p_hat, spec: GameSpec) -> "DualPlan":
        nt, du, dv = spec.num_types, spec.u_dim, spec.v_dim
        na = nt + 1
        zmin = np.asarray(zmin, dtype=float)
        zmax = np.asarray(zmax, dtype=float)
        v_atoms = zmin[: na * dv].reshape(na, dv)
        lam = zmin[na * dv : na * dv + na]
        free = zmin[na * dv + na :].reshape(nt, nt)
        atoms = _exact_barycenter(np.asarray(p_hat, dtype=float), lam, free)
        return cls(
            v_atoms=v_atoms,
            lam=lam,
            dual_atoms=atoms,
            u_atoms=zmax.reshape(na, du),
            stage_value=float(value),
        )


def _exact_barycenter(p_hat, lam, free):
    """All I+1 dual atoms with lam @ atoms == p_hat holding exactly.

    Starts from the solver's eliminated-atom reconstruction and Newton
    polishes the heaviest atom until the residual is zero to the last
    bit.  The clamped division leaves a rounding residue in the general
    case and a real one (order LAMBDA_MIN times the box width) when the
    last weight is dead; the heaviest weight is >= 1/(I+1), so pushing
    the correction through it is well conditioned.
    """
    nt = free.shape[1]
    last = (p_hat - lam[:nt] @ free) / max(lam[-1], LAMBDA_MIN)
    atoms = np.vstack([free, last])
    j = int(np.argmax(lam))
    best = atoms.copy()
    best_err = np.inf
    for _ in range(8):
        r = lam @ atoms - p_hat
        err = float(np.max(np.abs(r)))
        if err < best_err:
            best = atoms.copy()
            best_err = err
        if not r.any():
            break
        atoms = atoms.copy()
        atoms[j] -= r / lam[j]
    return best


# ---------------------------------------------------------------------------
# Stage solves (single point and batched)
# ---------------------------------------------------------------------------


def _primal_extra_starts(spec: GameSpec, min_dom, max_dom):
    """One fully revealing start: alpha = identity, atoms at box centers.

    The neutral center start has uniform alpha columns (nonrevealing), so
    between the two the solver probes both information regimes before the
    random fills.
    """
    nt, du = spec.num_types, spec.u_dim
    z = min_dom.center()
    z[nt * du :] = np.eye(nt).ravel()  # alpha.T.ravel() of the identity
    return [(z, max_dom.center())]


def _dual_extra_starts(spec: GameSpec, min_dom, max_dom, p_hat):
    """One non-splitting start: every free dual atom at p_hat itself.

    With uniform weights the eliminated atom reconstructs to p_hat too, so
    this start evaluates the plain one-step advance without any dual
    randomization; the neutral center start puts the free atoms at the box
    midpoint, which is far from the conjugate's touching region when p_hat
    is a value subgradient.
    """
    nt = spec.num_types
    box = spec.dual_box()
    z = min_dom.center()
    z[-nt * nt :] = np.tile(np.clip(p_hat, box[:, 0], box[:, 1]), nt)
    return [(z, max_dom.center())]


def _solve_points(kind, spec, next_value, t, X, P, cfg: SolveConfig,
                  rngs=None, warms=None):
    """Pre-draw starts for a batch of points and run the kernel once."""
    if kind == "primal":
        min_dom, max_dom = primal_domains(spec)
        extras = _primal_extra_starts(spec, min_dom, max_dom)
    else:
        min_dom, max_dom = dual_domains(spec)
        extras = None  # per point, they track p_hat
    n = X.shape[0]
    if rngs is None:
        rng = np.random.default_rng(cfg.dsgda.seed)
        rngs = [rng] * n
    if warms is None:
        warms = [None] * n
    dmin, dmax = stage_dims(spec, kind)
    n_starts = max(cfg.dsgda.restarts, 2)
    n_ref = max(cfg.dsgda.refine_starts - 1, 0)
    sm = np.empty((n, n_starts, dmin))
    sx = np.empty((n, n_starts, dmax))
    ry = np.empty((n, n_ref, dmax))
    for i in range(n):
        point_extras = extras if extras is not None else _dual_extra_starts(
            spec, min_dom, max_dom, P[i]
        )
        starts, refine = draw_starts(
            min_dom, max_dom, cfg.dsgda, rngs[i], warm=warms[i],
            extra_starts=point_extras,
        )
        for j, (_, z0, y0) in enumerate(starts):
            sm[i, j] = z0
            sx[i, j] = y0
        for j, y in enumerate(refine):
            ry[i, j] = y
    return solve_stage_batch(
        kind, spec, next_value, t, X, P, sm, sx, ry,
        cfg.dsgda, cfg.stage_config(), jobs=cfg.jobs, backend=cfg.backend,
    )


def solve_stage_primal(
    s: InfoState, next_value, spec: GameSpec, cfg: SolveConfig | None = None,
    rng=None, warm=None,
):
    """Solve one primal stage; returns (SplitPlan, target value)."""
    cfg = cfg or SolveConfig()
    rngs = None if rng is None else [rng]
    out = _solve_points(
        "primal", spec, next_value, s.t,
        np.atleast_2d(np.asarray(s.x, dtype=float)),
        np.atleast_2d(np.asarray(s.p, dtype=float)),
        cfg, rngs=rngs, warms=[warm],
    )
    if out["failed"][0]:
        raise SolverFailureError(f"primal stage solve failed at t={s.t:.6g}")
    plan = SplitPlan.from_flat(out["x"][0], out["y"][0], out["value"][0], s.p, spec)
    return plan, float(out["value"][0])


def solve_stage_dual(
    s: DualInfoState, next_dual_value, spec: GameSpec, cfg: SolveConfig | None = None,
    rng=None, warm=None,
):
    """Solve one dual stage; returns (DualPlan, target dual value)."""
    cfg = cfg or SolveConfig()
    rngs = None if rng is None else [rng]
    out = _solve_points(
        "dual", spec, next_dual_value, s.t,
        np.atleast_2d(np.asarray(s.x, dtype=float)),
        np.atleast_2d(np.asarray(s.p_hat, dtype=float)),
        cfg, rngs=rngs, warms=[warm],
    )
    if out["failed"][0]:
        raise SolverFailureError(f"dual stage solve failed at t={s.t:.6g}")
    plan = DualPlan.from_flat(out["x"][0], out["y"][0], out["value"][0], s.p_hat, spec)
    return plan, float(out["value"][0])


# ---------------------------------------------------------------------------
# Collocation sampling
# ---------------------------------------------------------------------------


def sample_primal_points(spec: GameSpec, n: int, rng, anchors: float = 0.25):
    """States uniform over the state box; beliefs flat Dirichlet plus a
    share of anchor rows cycling through the vertices and the uniform
    point (vertex rows keep the complete-information faces covered)."""
    X = rng.uniform(spec.state_box[:, 0], spec.state_box[:, 1],
                    (n, spec.state_dim))
    nt = spec.num_types
    P = sample_simplex(rng, nt, n)
    n_anchor = int(round(anchors * n))
    if n_anchor:
        eye = np.eye(nt)
        kinds = np.arange(n_anchor) % (nt + 1)
        A = np.full((n_anchor, nt), 1.0 / nt)
        for i in range(nt):
            A[kinds == i] = eye[i]
        P[:n_anchor] = A
    return X, P


def sample_dual_points(spec: GameSpec, n: int, rng, subgradients: float = 0.5):
    """States uniform; dual vectors uniform over the containment box, with
    a share replaced by g(x) at the row's own state (the terminal
    subgradients, which are the dual vectors actually reached in play)."""
    X = rng.uniform(spec.state_box[:, 0], spec.state_box[:, 1],
                    (n, spec.state_dim))
    box = spec.dual_box()
    PH = rng.uniform(box[:, 0], box[:, 1], (n, spec.num_types))
    n_g = int(round(subgradients * n))
    if n_g:
        if spec.lq is not None:
            PH[:n_g] = spec.lq.terminal_all(X[:n_g])
        else:
            PH[:n_g] = np.stack([spec.terminal_cost(x) for x in X[:n_g]])
    return X, PH


# ---------------------------------------------------------------------------
# Full solve
# ---------------------------------------------------------------------------


def _point_stream(seed, ktag, *path):
    return np.random.default_rng(np.random.SeedSequence((seed, ktag) + path))


def _solve_slice(kind, spec, next_value, t, X, P, cfg: SolveConfig,
                 seed: int, ktag: int, k: int):
    """All stage solves of one slice, chunked with nearest-solved warm starts."""
    n = X.shape[0]
    dmin, dmax = stage_dims(spec, kind)
    if cfg.warm_start:
        order = _point_stream(seed, ktag, 1, k).permutation(n)
    else:
        order = np.arange(n)

    # normalized coordinates for the nearest-neighbor lookup
    xb = spec.state_box
    xs_mid = 0.5 * (xb[:, 0] + xb[:, 1])
    xs_half = np.maximum(0.5 * (xb[:, 1] - xb[:, 0]), 1e-9)
    if kind == "primal":
        p_mid = np.zeros(spec.num_types)
        p_half = np.ones(spec.num_types)
    else:
        db = spec.dual_box()
        p_mid = 0.5 * (db[:, 0] + db[:, 1])
        p_half = np.maximum(0.5 * (db[:, 1] - db[:, 0]), 1e-9)
    Z = np.concatenate([(X - xs_mid) / xs_half, (P - p_mid) / p_half], axis=1)
    z_sq = np.einsum("nd,nd->n", Z, Z)

    targets = np.full(n, np.nan)
    zs = np.empty((n, dmin))
    ys = np.empty((n, dmax))
    ok = np.zeros(n, dtype=bool)
    iters = 0
    aborted = 0
    backend = ""
    solved: list[int] = []
    for lo in range(0, n, cfg.chunk):
        idx = order[lo : lo + cfg.chunk]
        warms = [None] * idx.size
        if solved and cfg.warm_start:
            pool = np.asarray(solved)
            # squared distances via the dot trick; pool stays modest (<= n)
            D = z_sq[idx][:, None] + z_sq[pool][None, :] - 2.0 * (Z[idx] @ Z[pool].T)
            near = pool[np.argmin(D, axis=1)]
            warms = [(zs[j], ys[j]) for j in near]
        rngs = [_point_stream(seed, ktag, 2, k, int(i)) for i in idx]
        out = _solve_points(kind, spec, next_value, t, X[idx], P[idx], cfg,
                            rngs=rngs, warms=warms)
        targets[idx] = out["value"]
        zs[idx] = out["x"]
        ys[idx] = out["y"]
        good = ~out["failed"].astype(bool)
        ok[idx] = good
        iters += int(out["iters"].sum())
        aborted += int(out["aborted"].sum())
        backend = out["backend"]
        solved.extend(int(i) for i in idx[good])
    return {
        "targets": targets,
        "ok": ok,
        "zs": zs,
        "ys": ys,
        "iters": iters,
        "aborted": aborted,
        "backend": backend,
    }


def cams_solve(
    spec: GameSpec,
    kind: str = "primal",
    n_samples: int | None = None,
    cfg: SolveConfig | None = None,
    seed: int | None = None,
    jobs: int | None = None,
    out=None,
    log=None,
) -> ValueBundle:
    """Solve the primal or dual game by convexified backward induction.

    Returns the fitted value bundle (and saves it to `out` after every
    slice when a path is given, marked incomplete until the last slice
    lands).  Aborts with SolverFailureError when a slice's stage failure
    share exceeds cfg.max_fail_rate or a fit diverges; the partial bundle
    stays on disk, still marked incomplete, and refuses normal loading.
    `log`, when given, is called with one diagnostics dict per slice.
    """
    if kind not in _KIND_TAG:
        raise ConfigError(f"solve kind must be primal or dual, got {kind!r}")
    cfg = cfg or SolveConfig()
    if jobs is not None:
        cfg = replace(cfg, jobs=int(jobs))
    n = int(cfg.samples if n_samples is None else n_samples)
    seed = int(cfg.seed if seed is None else seed)
    if n < max(cfg.min_samples, cfg.fit.min_samples):
        raise ConfigError(
            f"need at least {max(cfg.min_samples, cfg.fit.min_samples)} samples, got {n}"
        )
    ktag = _KIND_TAG[kind]
    tau = spec.step
    n_slices = spec.num_stages
    if kind == "primal":
        terminal = TerminalPrimalSlice(spec)

        def draw(stream):
            rng = _point_stream(seed, ktag, 0, stream)
            return sample_primal_points(spec, n, rng, cfg.belief_anchors)

    else:
        terminal = TerminalDualSlice(spec)

        def draw(stream):
            rng = _point_stream(seed, ktag, 0, stream)
            return sample_dual_points(spec, n, rng, cfg.dual_subgradients)

    t_start = time.perf_counter()
    X, P = draw(0)
    slices: dict[int, ValueSlice] = {}
    diags: list[dict] = []
    bundle = ValueBundle(
        kind=kind,
        config=spec.config or {},
        slices=slices,
        horizon=spec.horizon,
        step=tau,
        incomplete=True,
        diagnostics=diags,
        meta={"n_samples": n, "seed": seed, "solve_config": cfg.to_dict()},
    )

    def checkpoint():
        if out is not None:
            save_slices(bundle, out)

    for k in range(n_slices - 1, -1, -1):
        t0 = time.perf_counter()
        if cfg.resample and k < n_slices - 1:
            X, P = draw(k + 1)
        next_value = slices.get(k + 1, terminal)
        res = _solve_slice(kind, spec, next_value, k * tau, X, P, cfg, seed, ktag, k)
        n_failed = int(n - res["ok"].sum())
        good = res["targets"][res["ok"]]
        diag = {
            "slice": k,
            "t": k * tau,
            "samples": n,
            "failed": n_failed,
            "fail_rate": n_failed / n,
            "aborted_restarts": res["aborted"],
            "mean_iters": res["iters"] / n,
            "backend": res["backend"],
            "target_mean": float(good.mean()) if good.size else float("nan"),
            "target_std": float(good.std()) if good.size else float("nan"),
        }
        if n_failed > cfg.max_fail_rate * n:
            diag["error"] = "stage failure rate above budget"
            diags.append(diag)
            checkpoint()
            raise SolverFailureError(
                f"slice {k}: {n_failed}/{n} stage solves failed "
                f"(budget {cfg.max_fail_rate:.1%})"
            )
        fit_seed = int(
            np.random.SeedSequence((seed, ktag, 3, k)).generate_state(1)[0]
        )
        data = SliceDataset(
            t=k * tau, kind=kind, X=X[res["ok"]], P=P[res["ok"]],
            targets=good, seed=fit_seed,
        )
        try:
            sl = fit_value_slice(data, spec, cfg.fit, warm_start=slices.get(k + 1))
        except CamsError:
            diag["error"] = "slice fit failed"
            diags.append(diag)
            checkpoint()
            raise
        if not np.isfinite(sl.fit_report.get("final_mse", np.nan)):
            diag["error"] = "slice fit diverged"
            diags.append(diag)
            checkpoint()
            raise SolverFailureError(f"slice {k}: fit diverged")
        slices[k] = sl
        diag["fit_mse"] = sl.fit_report["final_mse"]
        diag["fit_epochs"] = sl.fit_report["epochs"]
        diag["wall_s"] = time.perf_counter() - t0
        diags.append(diag)
        if log is not None:
            log(diag)
        checkpoint()

    bundle.incomplete = False
    bundle.meta["wall_s"] = time.perf_counter() - t_start
    checkpoint()
    return bundle


# ---------------------------------------------------------------------------
# Bundle helpers
# ---------------------------------------------------------------------------


def next_value_slice(spec: GameSpec, bundle: ValueBundle, t: float):
    """Value model a stage at time t backs up against: the fitted slice at
    t + tau, or the exact terminal functions when t + tau is the horizon."""
    k = int(round((t + spec.step) / spec.step))
    if k == spec.num_stages:
        if bundle.kind == "primal":
            return TerminalPrimalSlice(spec)
        return TerminalDualSlice(spec)
    return bundle.slice_at(k * spec.step)


def check_bundle(bundle: ValueBundle, spec: GameSpec, kind: str | None = None):
    """Refuse bundles that cannot drive strategies for this game."""
    from .errors import IncompatibleBundleError

    if kind is not None and bundle.kind != kind:
        raise IncompatibleBundleError(f"need a {kind} bundle, got {bundle.kind}")
    if bundle.incomplete:
        raise IncompatibleBundleError("bundle is incomplete; re-run the solve")
    if abs(bundle.step - spec.step) > 1e-12 or abs(bundle.horizon - spec.horizon) > 1e-12:
        raise IncompatibleBundleError(
            f"bundle grid (T={bundle.horizon}, tau={bundle.step}) does not match "
            f"the game (T={spec.horizon}, tau={spec.step})"
        )
    if spec.config is not None and bundle.config:
        if config_hash(spec.config) != bundle.config_hash:
            raise IncompatibleBundleError(
                "bundle was solved for a different game config"
            )


def bundle_fingerprint(bundle: ValueBundle) -> str:
    """Order-independent hash of the fitted weights; equal fingerprints
    mean bit-identical value models (reproducibility checks, manifests)."""
    h = hashlib.sha256()
    h.update(bundle.kind.encode())
    h.update(config_hash(bundle.config).encode())
    for k in sorted(bundle.slices):
        sl = bundle.slices[k]
        h.update(np.int64(k).tobytes())
        arrays = [sl.in_shift, sl.in_scale,
                  np.array([sl.out_shift, sl.out_scale])]
        arrays += list(sl.mlp.weights) + list(sl.mlp.biases)
        for arr in arrays:
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()[:16]
