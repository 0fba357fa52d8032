"""Simplex algebra: projections, sampling, belief splitting, 1-D envelopes.

The splitting mechanism is the informed player's randomization device: given
type-conditioned action probabilities alpha[k][i] = Pr(u = u^k | i) and the
current public belief p, atom k is played with total weight
lambda^k = sum_i alpha[k][i] p[i] and moves the belief to the Bayes posterior
p^k[i] = alpha[k][i] p[i] / lambda^k.  The weights and posteriors always
satisfy the martingale identity sum_k lambda^k p^k = p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LAMBDA_MIN",
    "SplitWeights",
    "split_from_alpha",
    "project_simplex",
    "project_box",
    "sample_simplex",
    "convex_envelope_1d",
]

# Atoms with weight below this are treated as weight-zero: their posterior is
# defined as p (a zero-weight atom carries no information) and they are
# excluded from strategy sampling.
LAMBDA_MIN = 1e-6


@dataclass
class SplitWeights:
    """Solved splitting data for one infostate.

    alpha[k, i] = Pr(u = u^k | type i); columns of alpha live on the simplex.
    """

    alpha: np.ndarray  # (I, I)
    lam: np.ndarray  # (I,)
    posteriors: np.ndarray  # (I, I), row k is p^k

    @property
    def num_atoms(self) -> int:
        return self.lam.shape[0]


def split_from_alpha(alpha, p) -> SplitWeights:
    """Weights and Bayes posteriors induced by a column-stochastic alpha.

    Uses the cross-multiplied form lambda^k p^k[i] = alpha[k,i] p[i]; division
    happens only for atoms with lambda^k >= LAMBDA_MIN, the rest keep
    posterior p by convention.
    """
    alpha = np.asarray(alpha, dtype=float)
    p = np.asarray(p, dtype=float)
    mass = alpha * p[None, :]  # mass[k, i] = alpha_ki p_i
    lam = mass.sum(axis=1)
    posteriors = np.tile(p, (alpha.shape[0], 1))
    live = lam >= LAMBDA_MIN
    posteriors[live] = mass[live] / lam[live, None]
    return SplitWeights(alpha=alpha, lam=lam, posteriors=posteriors)


def project_simplex(y) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, y.size + 1)
    cond = u - css / ks > 0
    rho = ks[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(y - theta, 0.0)


def project_box(y, box) -> np.ndarray:
    """Per-coordinate clamp of y into box rows [lo, hi]."""
    box = np.asarray(box, dtype=float)
    return np.clip(np.asarray(y, dtype=float), box[:, 0], box[:, 1])


def sample_simplex(rng: np.random.Generator, n: int, size=None) -> np.ndarray:
    """Uniform (flat Dirichlet) samples from the n-simplex."""
    if size is None:
        return rng.dirichlet(np.ones(n))
    return rng.dirichlet(np.ones(n), size=size)


def convex_envelope_1d(points):
    """Lower convex envelope of scattered (p, value) points on an interval.

    Returns (eval, knots_p, knots_v) where `eval` maps query points to the
    piecewise-linear envelope.  Used as a validation oracle for the two-type
    case, where the belief is one-dimensional.
    """
    pts = sorted((float(p), float(v)) for p, v in points)
    if len(pts) < 2:
        raise ValueError("convex_envelope_1d needs at least 2 points")
    ps = [p for p, _ in pts]
    if len(set(ps)) != len(ps):
        raise ValueError("p-coordinates must be distinct")
    # Andrew monotone chain, lower hull only
    hull: list[tuple[float, float]] = []
    for q in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (q[1] - y1) - (q[0] - x1) * (y2 - y1) <= 0:
                hull.pop()
            else:
                break
        hull.append(q)
    kp = np.array([h[0] for h in hull])
    kv = np.array([h[1] for h in hull])

    def evaluate(q):
        q = np.asarray(q, dtype=float)
        return np.interp(q, kp, kv)

    return evaluate, kp, kv
