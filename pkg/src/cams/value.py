"""Per-time-slice value approximation: fitting, evaluation, serialization.

Each decision time gets its own small fully-connected regressor mapping the
normalized (x, p) pair (primal) or (x, p_hat) pair (dual) to a scalar.  States
are scaled to [-1, 1] by the sampling box, beliefs enter raw (already in
[0, 1]), dual vectors are scaled by their containment box, and targets are
standardized per slice.  Smooth activations keep the model differentiable
inside the minimax stage solves.

Slices at the terminal time are exact, not fitted: the primal terminal value
is linear in p and the dual one is a max over affine functions of p_hat; both
are provided as slice-shaped objects so callers never special-case t = T.

A solved game is persisted as a bundle directory: a JSON manifest (game
config + hash, grid, layer sizes, per-slice fit reports) and one raw weight
blob per slice (little-endian float64 arrays with shape headers).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IncompatibleBundleError
from .game import GameSpec, config_hash

__all__ = [
    "Mlp",
    "FitConfig",
    "SliceDataset",
    "ValueSlice",
    "TerminalPrimalSlice",
    "TerminalDualSlice",
    "ValueBundle",
    "fit_value_slice",
    "eval_value",
    "value_subgradient_p",
    "save_slices",
    "load_slices",
    "slice_normalization",
]

_MAGIC = b"CAMSVS01"


class Mlp:
    """Plain numpy multilayer perceptron, tanh hidden units, linear output."""

    def __init__(self, sizes, rng: np.random.Generator | None = None, params=None):
        self.sizes = tuple(int(s) for s in sizes)
        if params is not None:
            self.weights = [np.array(w, dtype=float) for w in params[0]]
            self.biases = [np.array(b, dtype=float) for b in params[1]]
        else:
            if rng is None:
                raise ValueError("need an rng or explicit params")
            self.weights = []
            self.biases = []
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, params=(self.weights, self.biases))

    def forward(self, Xn):
        """Returns (outputs (n,), hidden activations for backprop)."""
        h = np.asarray(Xn, dtype=float)
        acts = [h]
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
            acts.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out[:, 0], acts

    def input_grad(self, Xn):
        """d out / d input, shape (n, din)."""
        _, acts = self.forward(np.atleast_2d(Xn))
        g = self.weights[-1][:, 0][None, :]  # (1, h_last) broadcast
        for W, h in zip(self.weights[-2::-1], acts[:0:-1]):
            g = (g * (1.0 - h**2)) @ W.T
        return g


@dataclass
class FitConfig:
    hidden: tuple = (64, 64)
    batch: int = 128
    max_epochs: int = 3000
    lr: float = 1e-3
    decay: float = 0.5
    patience: int = 100
    lr_min: float = 1e-6
    fit_tol: float = 1e-4
    min_samples: int = 32
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.batch < 1 or self.max_epochs < 1 or self.lr <= 0:
            raise ConfigError("fit config: batch, epochs, lr must be positive")
        if not (0 < self.decay <= 1):
            raise ConfigError("fit config: decay must be in (0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown value_fit keys: {sorted(extra)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["hidden"] = list(self.hidden)
        return out


@dataclass
class SliceDataset:
    """Collocation targets for one slice: value targets at (x, p or p_hat)."""

    t: float
    kind: str  # "primal" | "dual"
    X: np.ndarray  # (n, d_x)
    P: np.ndarray  # (n, I): beliefs (primal) or dual vectors (dual)
    targets: np.ndarray  # (n,)
    seed: int = 0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.kind not in ("primal", "dual"):
            raise ConfigError(f"bad slice kind {self.kind!r}")
        n = self.targets.size
        if self.X.shape[0] != n or self.P.shape[0] != n:
            raise ConfigError("dataset rows disagree between X, P, targets")

    def __len__(self):
        return self.targets.size


def slice_normalization(spec: GameSpec, kind: str):
    """Affine input scaling: states to [-1,1] by state_box, beliefs raw,
    dual vectors to [-1,1] by the containment box."""
    xs = spec.state_box
    x_shift = 0.5 * (xs[:, 0] + xs[:, 1])
    x_scale = np.maximum(0.5 * (xs[:, 1] - xs[:, 0]), 1e-9)
    if kind == "primal":
        p_shift = np.zeros(spec.num_types)
        p_scale = np.ones(spec.num_types)
    else:
        db = spec.dual_box()
        p_shift = 0.5 * (db[:, 0] + db[:, 1])
        p_scale = np.maximum(0.5 * (db[:, 1] - db[:, 0]), 1e-9)
    return np.concatenate([x_shift, p_shift]), np.concatenate([x_scale, p_scale])


@dataclass
class ValueSlice:
    """Fitted regressor for one decision time, self-contained for eval."""

    t: float
    kind: str
    mlp: Mlp
    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: float
    out_scale: float
    fit_report: dict = field(default_factory=dict)

    def _normalize(self, X, P):
        Z = np.concatenate([np.atleast_2d(X), np.atleast_2d(P)], axis=1)
        return (Z - self.in_shift) / self.in_scale

    def value(self, x, p) -> float:
        out, _ = self.mlp.forward(self._normalize(x, p))
        return float(out[0] * self.out_scale + self.out_shift)

    def value_batch(self, X, P) -> np.ndarray:
        out, _ = self.mlp.forward(self._normalize(X, P))
        return out * self.out_scale + self.out_shift

    def grad(self, x, p):
        """(dV/dx, dV/dp) at a single point."""
        g = self.mlp.input_grad(self._normalize(x, p))[0]
        g = g * self.out_scale / self.in_scale
        d_x = self.in_shift.size - np.atleast_1d(p).size
        return g[:d_x], g[d_x:]

    def grad_batch(self, X, P):
        G = self.mlp.input_grad(self._normalize(X, P))
        G = G * self.out_scale / self.in_scale
        d_x = np.atleast_2d(X).shape[1]
        return G[:, :d_x], G[:, d_x:]


class TerminalPrimalSlice:
    """Exact terminal slice: V(T, x, p) = sum_i p_i g_i(x)."""

    kind = "primal"

    def __init__(self, spec: GameSpec):
        self.spec = spec
        self.t = spec.horizon

    def value(self, x, p) -> float:
        g = np.asarray(self.spec.terminal_cost(np.asarray(x, dtype=float)), dtype=float)
        return float(np.dot(p, g))

    def value_batch(self, X, P):
        X = np.atleast_2d(X)
        P = np.atleast_2d(P)
        if self.spec.lq is not None:
            G = self.spec.lq.terminal_all(X)
        else:
            G = np.array([self.spec.terminal_cost(x) for x in X])
        return np.einsum("ni,ni->n", P, G)

    def terminal_costs(self, x):
        return np.asarray(self.spec.terminal_cost(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        gp = self.terminal_costs(x)
        if self.spec.lq is not None:
            gx = p @ self.spec.lq.terminal_grad(x)
        else:
            gx = _fd_terminal_grad(self.spec, x) @ p
        return gx, gp


class TerminalDualSlice:
    """Exact dual terminal slice: V*(T, x, ph) = max_i (ph_i - g_i(x)).

    The gradient is a subgradient (the argmax vertex, lowest index on ties).
    """

    kind = "dual"

    def __init__(self, spec: GameSpec):
        self.spec = spec
        self.t = spec.horizon

    def value(self, x, p_hat) -> float:
        g = np.asarray(self.spec.terminal_cost(np.asarray(x, dtype=float)), dtype=float)
        return float(np.max(np.asarray(p_hat, dtype=float) - g))

    def value_batch(self, X, PH):
        X = np.atleast_2d(X)
        PH = np.atleast_2d(PH)
        if self.spec.lq is not None:
            G = self.spec.lq.terminal_all(X)
        else:
            G = np.array([self.spec.terminal_cost(x) for x in X])
        return np.max(PH - G, axis=1)

    def grad(self, x, p_hat):
        x = np.asarray(x, dtype=float)
        g = np.asarray(self.spec.terminal_cost(x), dtype=float)
        k = int(np.argmax(np.asarray(p_hat, dtype=float) - g))
        gp = np.zeros(g.size)
        gp[k] = 1.0
        if self.spec.lq is not None:
            gx = -self.spec.lq.terminal_grad(x)[k]
        else:
            gx = -_fd_terminal_grad(self.spec, x)[:, k]
        return gx, gp


def _fd_terminal_grad(spec, x, h=1e-6):
    """d g_i / dx by central differences, shape (d_x, I)."""
    out = np.empty((x.size, spec.num_types))
    for d in range(x.size):
        e = np.zeros_like(x)
        e[d] = h
        out[d] = (
            np.asarray(spec.terminal_cost(x + e), dtype=float)
            - np.asarray(spec.terminal_cost(x - e), dtype=float)
        ) / (2 * h)
    return out


def eval_value(slice_, x, p_or_phat) -> float:
    return slice_.value(x, p_or_phat)


def value_subgradient_p(slice_, x, p) -> np.ndarray:
    """Gradient of the slice in its belief/dual argument; exact at t = T."""
    _, gp = slice_.grad(x, p)
    return np.asarray(gp, dtype=float)


def fit_value_slice(
    data: SliceDataset,
    spec: GameSpec,
    cfg: FitConfig,
    warm_start: ValueSlice | None = None,
) -> ValueSlice:
    """Mini-batch Adam fit of a fresh (or warm-started) slice regressor.

    Deterministic given data.seed; stops when full-data MSE on standardized
    targets reaches cfg.fit_tol or cfg.max_epochs elapse (reported either
    way in fit_report, never fatal).
    """
    n = len(data)
    if n == 0:
        raise ConfigError("cannot fit a value slice on an empty dataset")
    if n < cfg.min_samples:
        raise ConfigError(f"need at least {cfg.min_samples} samples, got {n}")

    in_shift, in_scale = slice_normalization(spec, data.kind)
    Z = (np.concatenate([data.X, data.P], axis=1) - in_shift) / in_scale
    out_shift = float(data.targets.mean())
    out_scale = float(max(data.targets.std(), 1e-8))
    yn = (data.targets - out_shift) / out_scale

    rng = np.random.default_rng(data.seed)
    din = Z.shape[1]
    sizes = (din, *cfg.hidden, 1)
    if warm_start is not None and warm_start.mlp.sizes == sizes:
        mlp = warm_start.mlp.copy()
    else:
        mlp = Mlp(sizes, rng=rng)

    report = _adam_fit(mlp, Z, yn, cfg, rng)
    report["samples"] = n
    return ValueSlice(
        t=data.t,
        kind=data.kind,
        mlp=mlp,
        in_shift=in_shift,
        in_scale=in_scale,
        out_shift=out_shift,
        out_scale=out_scale,
        fit_report=report,
    )


def _adam_fit(mlp: Mlp, Z, yn, cfg: FitConfig, rng):
    n = Z.shape[0]
    lr = cfg.lr
    b1, b2, eps = 0.9, 0.999, 1e-8
    m_w = [np.zeros_like(W) for W in mlp.weights]
    v_w = [np.zeros_like(W) for W in mlp.weights]
    m_b = [np.zeros_like(b) for b in mlp.biases]
    v_b = [np.zeros_like(b) for b in mlp.biases]
    step = 0
    best = np.inf
    stall = 0
    mse = np.inf
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch):
            idx = order[lo : lo + cfg.batch]
            Xb, yb = Z[idx], yn[idx]
            out, acts = mlp.forward(Xb)
            delta = (2.0 / idx.size) * (out - yb)[:, None]
            gw, gb = _backprop(mlp, acts, delta)
            step += 1
            corr = np.sqrt(1 - b2**step) / (1 - b1**step)
            for j in range(len(mlp.weights)):
                m_w[j] = b1 * m_w[j] + (1 - b1) * gw[j]
                v_w[j] = b2 * v_w[j] + (1 - b2) * gw[j] ** 2
                mlp.weights[j] -= lr * corr * m_w[j] / (np.sqrt(v_w[j]) + eps)
                m_b[j] = b1 * m_b[j] + (1 - b1) * gb[j]
                v_b[j] = b2 * v_b[j] + (1 - b2) * gb[j] ** 2
                mlp.biases[j] -= lr * corr * m_b[j] / (np.sqrt(v_b[j]) + eps)
        pred, _ = mlp.forward(Z)
        mse = float(np.mean((pred - yn) ** 2))
        if mse <= cfg.fit_tol:
            break
        if mse < best * (1 - 1e-3):
            best = mse
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience and lr > cfg.lr_min:
                lr = max(lr * cfg.decay, cfg.lr_min)
                stall = 0
    return {
        "final_mse": mse,
        "epochs": epoch,
        "lr_final": lr,
        "converged": bool(mse <= cfg.fit_tol),
    }


def _backprop(mlp: Mlp, acts, delta):
    """Weight/bias gradients given d loss / d output (n, 1)."""
    gw = [None] * len(mlp.weights)
    gb = [None] * len(mlp.biases)
    for j in range(len(mlp.weights) - 1, -1, -1):
        gw[j] = acts[j].T @ delta
        gb[j] = delta.sum(axis=0)
        if j > 0:
            delta = (delta @ mlp.weights[j].T) * (1.0 - acts[j] ** 2)
    return gw, gb


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------


@dataclass
class ValueBundle:
    """All fitted slices of one solve, keyed by grid index t/tau."""

    kind: str
    config: dict
    slices: dict  # {int: ValueSlice}
    horizon: float
    step: float
    incomplete: bool = False
    diagnostics: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def slice_at(self, t: float) -> ValueSlice:
        k = int(round(t / self.step))
        if abs(k * self.step - t) > 1e-9 or k not in self.slices:
            raise IncompatibleBundleError(f"no fitted slice at t={t}")
        return self.slices[k]


def _write_arrays(fh, arrays):
    fh.write(_MAGIC)
    fh.write(struct.pack("<q", len(arrays)))
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        fh.write(struct.pack("<q", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
        fh.write(arr.tobytes())


def _read_arrays(fh):
    if fh.read(8) != _MAGIC:
        raise IncompatibleBundleError("bad slice blob magic")
    (count,) = struct.unpack("<q", fh.read(8))
    out = []
    for _ in range(count):
        (ndim,) = struct.unpack("<q", fh.read(8))
        shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(8 * int(np.prod(shape))), dtype="<f8")
        out.append(data.reshape(shape).astype(float))
    return out


def save_slices(bundle: ValueBundle, path) -> None:
    root = Path(path)
    (root / "slices").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": 1,
        "kind": bundle.kind,
        "game": bundle.config,
        "config_hash": bundle.config_hash,
        "horizon": bundle.horizon,
        "step": bundle.step,
        "incomplete": bool(bundle.incomplete),
        "diagnostics": bundle.diagnostics,
        "meta": bundle.meta,
        "slices": {},
    }
    for k, sl in sorted(bundle.slices.items()):
        fname = f"slices/slice_{k:03d}.bin"
        with open(root / fname, "wb") as fh:
            _write_arrays(
                fh,
                [sl.in_shift, sl.in_scale, np.array([sl.out_shift, sl.out_scale])]
                + sl.mlp.weights
                + sl.mlp.biases,
            )
        manifest["slices"][str(k)] = {
            "file": fname,
            "t": sl.t,
            "layer_sizes": list(sl.mlp.sizes),
            "fit_report": sl.fit_report,
        }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_slices(path, expect_kind=None, expect_hash=None, allow_incomplete=False) -> ValueBundle:
    root = Path(path)
    try:
        with open(root / "manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IncompatibleBundleError(f"cannot read bundle manifest: {exc}") from exc
    for key in ("kind", "game", "config_hash", "horizon", "step", "slices"):
        if key not in manifest:
            raise IncompatibleBundleError(f"bundle manifest missing {key!r}")
    if manifest["config_hash"] != config_hash(manifest["game"]):
        raise IncompatibleBundleError("bundle manifest hash does not match its config")
    if expect_hash is not None and manifest["config_hash"] != expect_hash:
        raise IncompatibleBundleError(
            "bundle was solved for a different game config "
            f"({manifest['config_hash']} != {expect_hash})"
        )
    if expect_kind is not None and manifest["kind"] != expect_kind:
        raise IncompatibleBundleError(
            f"need a {expect_kind} bundle, got {manifest['kind']}"
        )
    if manifest.get("incomplete") and not allow_incomplete:
        raise IncompatibleBundleError("bundle is marked incomplete; refusing to load")
    slices = {}
    for key, entry in manifest["slices"].items():
        with open(root / entry["file"], "rb") as fh:
            arrays = _read_arrays(fh)
        in_shift, in_scale, out = arrays[0], arrays[1], arrays[2]
        rest = arrays[3:]
        nlayers = len(rest) // 2
        sizes = tuple(entry["layer_sizes"])
        mlp = Mlp(sizes, params=(rest[:nlayers], rest[nlayers:]))
        slices[int(key)] = ValueSlice(
            t=float(entry["t"]),
            kind=manifest["kind"],
            mlp=mlp,
            in_shift=in_shift,
            in_scale=in_scale,
            out_shift=float(out[0]),
            out_scale=float(out[1]),
            fit_report=entry.get("fit_report", {}),
        )
    return ValueBundle(
        kind=manifest["kind"],
        config=manifest["game"],
        slices=slices,
        horizon=float(manifest["horizon"]),
        step=float(manifest["step"]),
        incomplete=bool(manifest.get("incomplete", False)),
        diagnostics=manifest.get("diagnostics", []),
        meta=manifest.get("meta", {}),
    )
