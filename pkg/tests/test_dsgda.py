import numpy as np
import pytest

from cams.dsgda import (
    Domain,
    DsgdaConfig,
    MinimaxProblem,
    check_gradients,
    dsgda_solve,
)
from cams.errors import ConfigError, SolverFailureError

BOX1 = np.array([[-1.0, 1.0]])

# Frozen dense-grid minimax value for F = x^2 y - x y^2 + 0.1x on [-1,1]^2,
# computed by exhaustive 2001x2001 search (recomputed below in the test).
CUBIC_GRID_VALUE = 0.0


def bilinear():
    return MinimaxProblem(
        objective=lambda x, y: float(x[0] * y[0]),
        min_domain=Domain.box(BOX1),
        max_domain=Domain.box(BOX1),
        grad_min=lambda x, y: np.array([y[0]]),
        grad_max=lambda x, y: np.array([x[0]]),
        name="bilinear",
    )


def quad_saddle():
    return MinimaxProblem(
        objective=lambda x, y: float((x[0] - 0.3) ** 2 - (y[0] + 0.2) ** 2),
        min_domain=Domain.box(BOX1),
        max_domain=Domain.box(BOX1),
        grad_min=lambda x, y: np.array([2 * (x[0] - 0.3)]),
        grad_max=lambda x, y: np.array([-2 * (y[0] + 0.2)]),
        name="quad",
    )


def cubic():
    return MinimaxProblem(
        objective=lambda x, y: float(x[0] ** 2 * y[0] - x[0] * y[0] ** 2 + 0.1 * x[0]),
        min_domain=Domain.box(BOX1),
        max_domain=Domain.box(BOX1),
        grad_min=lambda x, y: np.array([2 * x[0] * y[0] - y[0] ** 2 + 0.1]),
        grad_max=lambda x, y: np.array([x[0] ** 2 - 2 * x[0] * y[0]]),
        name="cubic",
    )


class TestDomain:
    def test_blockwise_projection(self):
        d = Domain()
        sb = d.add_box(np.array([[-1.0, 1.0], [0.0, 2.0]]))
        ss = d.add_simplex(3)
        v = d.project(np.array([5.0, -3.0, 0.8, 0.8, 0.8]))
        assert np.allclose(v[sb], [1.0, 0.0])
        assert abs(v[ss].sum() - 1.0) < 1e-12 and (v[ss] >= 0).all()
        assert d.contains(v)

    def test_sample_in_domain(self):
        d = Domain()
        d.add_simplex(4)
        d.add_box(np.array([[2.0, 3.0]]))
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert d.contains(d.sample(rng))

    def test_center(self):
        d = Domain()
        d.add_box(np.array([[0.0, 4.0]]))
        d.add_simplex(2)
        assert np.allclose(d.center(), [2.0, 0.5, 0.5])

    def test_bad_blocks(self):
        d = Domain()
        with pytest.raises(ConfigError):
            d.add_box(np.array([[1.0, -1.0]]))
        with pytest.raises(ConfigError):
            d.add_simplex(0)


class TestBattery:
    def test_bilinear_saddle(self):
        r = dsgda_solve(bilinear(), DsgdaConfig(seed=0))
        assert abs(r.value) <= 1e-4
        assert abs(r.x[0]) <= 1e-4
        assert abs(r.y[0]) <= 1e-3

    def test_separable_quadratic_saddle(self):
        r = dsgda_solve(quad_saddle(), DsgdaConfig(seed=0))
        assert abs(r.value) <= 1e-4
        assert abs(r.x[0] - 0.3) <= 1e-3
        assert abs(r.y[0] + 0.2) <= 1e-3

    def test_cubic_matches_grid_oracle(self):
        g = np.linspace(-1, 1, 2001)
        X, Y = np.meshgrid(g, g, indexing="ij")
        F = X**2 * Y - X * Y**2 + 0.1 * X
        oracle = F.max(axis=1).min()
        assert abs(oracle - CUBIC_GRID_VALUE) <= 1e-12
        r = dsgda_solve(cubic(), DsgdaConfig(seed=0))
        assert abs(r.value - oracle) <= 2e-3


class TestSolverContract:
    def test_iterates_stay_feasible(self):
        seen = []
        d_min = Domain()
        d_min.add_simplex(3)
        d_max = Domain.box(np.array([[-2.0, 2.0]]))
        a = np.array([1.0, -1.0, 0.5])

        def f(x, y):
            seen.append((x.copy(), y.copy()))
            return float(y[0] * (x @ a) - 0.5 * y[0] ** 2)

        prob = MinimaxProblem(
            objective=f,
            min_domain=d_min,
            max_domain=d_max,
            grad_min=lambda x, y: y[0] * a,
            grad_max=lambda x, y: np.array([x @ a - y[0]]),
        )
        r = dsgda_solve(prob, DsgdaConfig(seed=1, max_iters=300, refine_iters=50))
        # achievable: p.a = 0 on the simplex, so the saddle value is 0
        assert abs(r.value) <= 1e-4
        for x, y in seen:
            assert d_min.contains(x, tol=1e-9)
            assert d_max.contains(y, tol=1e-9)
        assert d_min.contains(r.x, tol=1e-9)
        assert d_max.contains(r.y, tol=1e-9)

    def test_deterministic_given_seed(self):
        r1 = dsgda_solve(cubic(), DsgdaConfig(seed=7))
        r2 = dsgda_solve(cubic(), DsgdaConfig(seed=7))
        assert np.array_equal(r1.x, r2.x)
        assert np.array_equal(r1.y, r2.y)
        assert r1.value == r2.value
        r3 = dsgda_solve(cubic(), DsgdaConfig(seed=8))
        # different stream; candidates may still coincide in value
        assert r3.diagnostics["restarts"][1]["iters"] >= 1

    def test_reported_value_is_at_reported_point(self):
        for prob in (bilinear(), quad_saddle(), cubic()):
            r = dsgda_solve(prob, DsgdaConfig(seed=3))
            assert r.value == pytest.approx(prob.value(r.x, r.y), abs=1e-12)

    def test_warm_start_converges_fast(self):
        r = dsgda_solve(
            quad_saddle(),
            DsgdaConfig(seed=0, restarts=1),
            warm=(np.array([0.3]), np.array([-0.2])),
        )
        assert r.diagnostics["restarts"][0]["start"] == "warm"
        assert r.diagnostics["restarts"][0]["iters"] <= 5
        assert abs(r.value) <= 1e-6

    def test_extra_starts_recorded(self):
        r = dsgda_solve(
            quad_saddle(),
            DsgdaConfig(seed=0, restarts=4),
            extra_starts=[(np.array([1.0]), np.array([1.0]))],
        )
        kinds = [d["start"] for d in r.diagnostics["restarts"]]
        assert kinds[0] == "center" and kinds[1] == "given"
        assert len(kinds) == 4

    def test_all_restarts_aborted_raises(self):
        prob = MinimaxProblem(
            objective=lambda x, y: float("inf"),
            min_domain=Domain.box(BOX1),
            max_domain=Domain.box(BOX1),
        )
        with pytest.raises(SolverFailureError):
            dsgda_solve(prob, DsgdaConfig(seed=0, max_iters=5))

    def test_partial_abort_recorded(self):
        # blows up away from the origin; the center start stays healthy
        def f(x, y):
            if abs(x[0]) > 0.5:
                return float("nan")
            return float(x[0] ** 2 - y[0] ** 2)

        prob = MinimaxProblem(
            objective=f,
            min_domain=Domain.box(BOX1),
            max_domain=Domain.box(BOX1),
        )
        r = dsgda_solve(prob, DsgdaConfig(seed=2, max_iters=50,
                                          refine_iters=20))
        aborted = [d["aborted"] for d in r.diagnostics["restarts"]]
        assert any(aborted) and not all(aborted)
        assert np.isfinite(r.value)

    def test_gradient_contract_on_battery(self):
        rng = np.random.default_rng(5)
        for prob in (bilinear(), quad_saddle(), cubic()):
            assert check_gradients(prob, rng, n=20) <= 1e-4

    def test_fd_fallback_matches_analytic(self):
        p_fd = MinimaxProblem(
            objective=lambda x, y: float(x[0] ** 2 * y[0] - x[0] * y[0] ** 2 + 0.1 * x[0]),
            min_domain=Domain.box(BOX1),
            max_domain=Domain.box(BOX1),
        )
        p_an = cubic()
        rng = np.random.default_rng(6)
        for _ in range(10):
            x = p_fd.min_domain.sample(rng)
            y = p_fd.max_domain.sample(rng)
            assert np.allclose(p_fd.gx(x, y), p_an.gx(x, y), atol=1e-7)
            assert np.allclose(p_fd.gy(x, y), p_an.gy(x, y), atol=1e-7)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            DsgdaConfig(c=-1.0)
        with pytest.raises(ConfigError):
            DsgdaConfig(beta=0.0)
        with pytest.raises(ConfigError):
            DsgdaConfig(mu=1.5)
        with pytest.raises(ConfigError):
            DsgdaConfig(restarts=0)

    def test_dict_roundtrip(self):
        cfg = DsgdaConfig(seed=42, beta=0.5)
        doc = cfg.to_dict()
        assert DsgdaConfig.from_dict(doc) == cfg
        import json

        json.dumps(doc)  # must be serializable

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown dsgda keys"):
            DsgdaConfig.from_dict({"c": 0.1, "momentum": 0.9})
