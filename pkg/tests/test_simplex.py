import itertools

import numpy as np
import pytest

from cams.simplex import (
    LAMBDA_MIN,
    convex_envelope_1d,
    project_box,
    project_simplex,
    sample_simplex,
    split_from_alpha,
)


def brute_force_simplex_projection(y):
    """Exact projection by enumerating active sets (zero patterns).

    For each candidate support S the unconstrained KKT solution is
    x_i = y_i - theta on S with theta = (sum_S y_i - 1)/|S|; it is valid when
    x >= 0 on S and the multiplier condition y_i - theta <= 0 holds off S.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    best = None
    for r in range(1, n + 1):
        for supp in itertools.combinations(range(n), r):
            s = list(supp)
            theta = (y[s].sum() - 1.0) / r
            x = np.zeros(n)
            x[s] = y[s] - theta
            if (x[s] >= -1e-12).all() and (y[[i for i in range(n) if i not in s]] - theta <= 1e-12).all():
                d = np.sum((x - y) ** 2)
                if best is None or d < best[0]:
                    best = (d, x)
    assert best is not None
    return best[1]


class TestProjectSimplex:
    def test_interior_point_fixed(self):
        p = np.array([0.2, 0.3, 0.5])
        assert np.allclose(project_simplex(p), p)

    def test_matches_active_set_enumeration(self):
        rng = np.random.default_rng(7)
        for n in (2, 3, 4):
            for _ in range(200):
                y = rng.normal(scale=3.0, size=n)
                x = project_simplex(y)
                xb = brute_force_simplex_projection(y)
                assert np.allclose(x, xb, atol=1e-9)
                assert abs(x.sum() - 1.0) < 1e-12
                assert (x >= 0).all()

    def test_large_negative_goes_to_vertex(self):
        x = project_simplex(np.array([5.0, -10.0, -10.0]))
        assert np.allclose(x, [1.0, 0.0, 0.0])


class TestProjectBox:
    def test_clamps(self):
        box = np.array([[-1.0, 1.0], [0.0, 2.0]])
        assert np.allclose(project_box([3.0, -5.0], box), [1.0, 0.0])
        assert np.allclose(project_box([0.5, 1.5], box), [0.5, 1.5])


class TestSplit:
    def test_martingale_identity_random(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(10_000):
            n = int(rng.integers(2, 6))
            p = sample_simplex(rng, n)
            alpha = rng.dirichlet(np.ones(n), size=n).T  # columns on simplex
            sw = split_from_alpha(alpha, p)
            recon = sw.lam @ sw.posteriors
            worst = max(worst, np.abs(recon - p).max())
            assert abs(sw.lam.sum() - 1.0) < 1e-10
        assert worst < 1e-10

    def test_identity_alpha_is_fully_revealing(self):
        p = np.array([0.3, 0.7])
        sw = split_from_alpha(np.eye(2), p)
        assert np.allclose(sw.lam, p)
        assert np.allclose(sw.posteriors, np.eye(2))

    def test_uniform_alpha_is_nonrevealing(self):
        p = np.array([0.25, 0.35, 0.4])
        alpha = np.full((3, 3), 1.0 / 3.0)
        sw = split_from_alpha(alpha, p)
        assert np.allclose(sw.lam, [1 / 3] * 3)
        assert np.allclose(sw.posteriors, np.tile(p, (3, 1)))

    def test_zero_weight_atom_keeps_prior(self):
        # atom 1 gets no mass from any type
        alpha = np.array([[1.0, 1.0], [0.0, 0.0]])
        p = np.array([0.6, 0.4])
        sw = split_from_alpha(alpha, p)
        assert sw.lam[1] == 0.0
        assert np.allclose(sw.posteriors[1], p)
        assert sw.lam[1] < LAMBDA_MIN

    def test_vertex_belief_all_posteriors_at_vertex(self):
        rng = np.random.default_rng(3)
        p = np.array([0.0, 1.0, 0.0])
        for _ in range(50):
            alpha = rng.dirichlet(np.ones(3), size=3).T
            sw = split_from_alpha(alpha, p)
            live = sw.lam >= LAMBDA_MIN
            assert np.allclose(sw.posteriors[live], p, atol=1e-12)


class TestSampleSimplex:
    def test_shape_and_validity(self):
        rng = np.random.default_rng(1)
        s = sample_simplex(rng, 4, size=1000)
        assert s.shape == (1000, 4)
        assert np.allclose(s.sum(axis=1), 1.0)
        assert (s >= 0).all()

    def test_mean_near_center(self):
        rng = np.random.default_rng(2)
        s = sample_simplex(rng, 3, size=20_000)
        assert np.abs(s.mean(axis=0) - 1 / 3).max() < 0.01


def envelope_oracle(points, q):
    """vex[f](q) for scattered 1-D points via pairwise chords.

    The envelope at q is the minimum over all pairs (i, j) straddling q of the
    chord through points i and j, and over single points at q itself.
    """
    best = np.inf
    for (pi, vi), (pj, vj) in itertools.combinations(points, 2):
        if pi > pj:
            pi, vi, pj, vj = pj, vj, pi, vi
        if pi - 1e-12 <= q <= pj + 1e-12 and pj - pi > 1e-12:
            t = (q - pi) / (pj - pi)
            best = min(best, (1 - t) * vi + t * vj)
    for pi, vi in points:
        if abs(pi - q) < 1e-12:
            best = min(best, vi)
    return best


class TestEnvelope:
    def test_matches_chord_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            m = int(rng.integers(3, 12))
            ps = np.sort(rng.uniform(0, 1, size=m))
            # force distinct
            ps = ps + np.arange(m) * 1e-6
            vs = rng.normal(size=m)
            pts = list(zip(ps, vs))
            ev, _, _ = convex_envelope_1d(pts)
            for q in np.linspace(ps[0], ps[-1], 37):
                assert ev(q) <= np.interp(q, ps, vs) + 1e-9
                assert abs(ev(q) - envelope_oracle(pts, q)) < 1e-9

    def test_convex_data_unchanged(self):
        ps = np.linspace(0, 1, 9)
        vs = (ps - 0.4) ** 2
        ev, kp, kv = convex_envelope_1d(list(zip(ps, vs)))
        assert np.allclose(ev(ps), vs, atol=1e-12)

    def test_envelope_is_convex(self):
        rng = np.random.default_rng(5)
        ps = np.linspace(0, 1, 15)
        vs = rng.normal(size=15)
        ev, kp, kv = convex_envelope_1d(list(zip(ps, vs)))
        qs = np.linspace(0, 1, 101)
        vals = ev(qs)
        # midpoint convexity on the grid
        assert (vals[1:-1] <= 0.5 * (vals[:-2] + vals[2:]) + 1e-9).all()
