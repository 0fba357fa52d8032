import numpy as np
import pytest

from cams.errors import ConfigError, NumericalDomainError
from cams.game import (
    GameSpec,
    euler_step,
    hexner_config,
    make_hexner,
    spec_from_config,
    terminal_dual_value,
    terminal_value,
)


@pytest.fixture(scope="module")
def hexner():
    return make_hexner()


def joint_state(pos1, vel1, pos2, vel2):
    return np.concatenate([pos1, vel1, pos2, vel2]).astype(float)


class TestEulerStep:
    def test_double_integrator_quarter_step(self, hexner):
        x = joint_state([0, 0], [1, 0], [0, 0], [0, 0])
        u = np.array([0.0, 1.0])
        v = np.zeros(2)
        y = euler_step(x, u, v, 0.25, hexner)
        assert np.allclose(y[0:2], [0.25, 0.0])  # pos1 += tau * vel1
        assert np.allclose(y[2:4], [1.0, 0.25])  # vel1 += tau * u

    def test_zero_dynamics_identity(self):
        spec = GameSpec(
            num_types=2,
            horizon=1.0,
            step=0.5,
            state_dim=3,
            u_dim=1,
            v_dim=1,
            u_box=[[-1, 1]],
            v_box=[[-1, 1]],
            state_box=[[-1, 1]] * 3,
            dynamics=lambda x, u, v: np.zeros(3),
            running_cost=lambda u, v: np.zeros(2),
            terminal_cost=lambda x: np.array([x[0], -x[0]]),
            prior=[0.5, 0.5],
        )
        x = np.array([0.3, -0.7, 2.0])
        assert np.array_equal(euler_step(x, [0.5], [0.5], 0.5, spec), x)

    def test_hexner_drift_only(self, hexner):
        x = joint_state([0.5, -0.5], [1.0, 2.0], [0.1, 0.2], [-1.0, 0.5])
        y = euler_step(x, np.zeros(2), np.zeros(2), 0.25, hexner)
        assert np.allclose(y[0:2], x[0:2] + 0.25 * x[2:4])
        assert np.allclose(y[4:6], x[4:6] + 0.25 * x[6:8])
        assert np.allclose(y[2:4], x[2:4])
        assert np.allclose(y[6:8], x[6:8])

    def test_affine_in_tau(self, hexner):
        rng = np.random.default_rng(0)
        x = rng.normal(size=8)
        u = rng.normal(size=2)
        v = rng.normal(size=2)
        y1 = euler_step(x, u, v, 0.1, hexner)
        y2 = euler_step(x, u, v, 0.2, hexner)
        y3 = euler_step(x, u, v, 0.3, hexner)
        assert np.allclose(y3 - y2, y2 - y1, atol=1e-12)

    def test_nonfinite_rejected(self):
        spec = GameSpec(
            num_types=1,
            horizon=1.0,
            step=1.0,
            state_dim=2,
            u_dim=1,
            v_dim=1,
            u_box=[[-1, 1]],
            v_box=[[-1, 1]],
            state_box=[[-1, 1]] * 2,
            dynamics=lambda x, u, v: np.array([0.0, np.inf]),
            running_cost=lambda u, v: np.zeros(1),
            terminal_cost=lambda x: np.zeros(1),
            prior=[1.0],
        )
        with pytest.raises(NumericalDomainError, match="coordinate 1"):
            euler_step(np.zeros(2), [0.0], [0.0], 1.0, spec)


class TestTerminalValue:
    def test_symmetric_midpoint_is_zero(self, hexner):
        x = joint_state([0, 0], [0, 0], [0, 0], [0, 0])
        assert terminal_value(x, [0.5, 0.5], hexner) == pytest.approx(0.0, abs=1e-12)

    def test_vertex_beliefs(self, hexner):
        x = joint_state([1, 0], [0, 0], [0, 0], [0, 0])
        assert terminal_value(x, [1.0, 0.0], hexner) == pytest.approx(-1.0)
        assert terminal_value(x, [0.0, 1.0], hexner) == pytest.approx(3.0)

    def test_linear_in_p(self, hexner):
        rng = np.random.default_rng(1)
        for _ in range(200):
            x = rng.uniform(-2, 2, size=8)
            p = rng.dirichlet([1, 1])
            q = rng.dirichlet([1, 1])
            a = rng.uniform()
            lhs = terminal_value(x, a * p + (1 - a) * q, hexner)
            rhs = a * terminal_value(x, p, hexner) + (1 - a) * terminal_value(x, q, hexner)
            assert abs(lhs - rhs) < 1e-12


class TestTerminalDualValue:
    def test_zero_dual_vector(self, hexner):
        rng = np.random.default_rng(2)
        for _ in range(50):
            x = rng.uniform(-2, 2, size=8)
            g = hexner.terminal_cost(x)
            val, k = terminal_dual_value(x, np.zeros(2), hexner)
            assert val == pytest.approx(-g.min())
            assert k == int(np.argmin(g))

    def test_direct_evaluation(self):
        spec = GameSpec(
            num_types=2,
            horizon=1.0,
            step=1.0,
            state_dim=1,
            u_dim=1,
            v_dim=1,
            u_box=[[-1, 1]],
            v_box=[[-1, 1]],
            state_box=[[-1, 1]],
            dynamics=lambda x, u, v: np.zeros(1),
            running_cost=lambda u, v: np.zeros(2),
            terminal_cost=lambda x: np.array([-1.0, 3.0]),
            prior=[0.5, 0.5],
        )
        val, k = terminal_dual_value(np.zeros(1), [2.0, -1.0], spec)
        assert val == pytest.approx(3.0)
        assert k == 0  # first type achieves the max

    def test_exact_tie_breaks_low(self, hexner):
        x = joint_state([0.3, 0.1], [0, 0], [-0.2, 0], [0, 0])
        g = hexner.terminal_cost(x)
        val, k = terminal_dual_value(x, g, hexner)
        assert val == pytest.approx(0.0, abs=1e-12)
        assert k == 0

    def test_fenchel_young_at_terminal(self, hexner):
        rng = np.random.default_rng(3)
        for _ in range(200):
            x = rng.uniform(-2, 2, size=8)
            p_hat = rng.uniform(-10, 10, size=2)
            dual, k = terminal_dual_value(x, p_hat, hexner)
            for _ in range(5):
                p = rng.dirichlet([1, 1])
                assert dual >= p @ p_hat - terminal_value(x, p, hexner) - 1e-10
            e_k = np.eye(2)[k]
            gap = dual - (e_k @ p_hat - terminal_value(x, e_k, hexner))
            assert abs(gap) < 1e-10


class TestMakeHexner:
    def test_default_instance_shapes(self, hexner):
        assert hexner.num_types == 2
        assert hexner.state_dim == 8
        assert hexner.u_dim == hexner.v_dim == 2
        assert hexner.horizon == 1.0 and hexner.step == 0.25
        assert hexner.num_stages == 4
        assert np.allclose(hexner.prior, [0.5, 0.5])
        assert np.allclose(hexner.time_grid, [0, 0.25, 0.5, 0.75, 1.0])

    def test_zero_penalty_kills_terminal_cost(self):
        spec = make_hexner(K1=np.zeros((2, 2)), K2=np.zeros((2, 2)))
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.uniform(-2, 2, size=8)
            assert np.allclose(spec.terminal_cost(x), 0.0)

    def test_equal_actions_cancel_running_cost(self, hexner):
        rng = np.random.default_rng(5)
        for _ in range(20):
            u = rng.uniform(-3, 3, size=2)
            assert np.allclose(hexner.running_cost(u, u), 0.0)

    def test_running_cost_sign_split(self, hexner):
        rng = np.random.default_rng(6)
        for _ in range(50):
            u = rng.uniform(-3, 3, size=2)
            v = rng.uniform(-3, 3, size=2)
            assert hexner.running_cost(u, np.zeros(2))[0] >= 0
            assert hexner.running_cost(np.zeros(2), v)[0] <= 0
            # type-independent
            assert np.ptp(hexner.running_cost(u, v)) == 0.0

    def test_lq_terminal_matches_callable(self, hexner):
        rng = np.random.default_rng(7)
        xs = rng.uniform(-2, 2, size=(40, 8))
        batched = hexner.lq.terminal_all(xs)
        for j, x in enumerate(xs):
            th1, th2 = np.array([1.0, 0.0]), np.array([-1.0, 0.0])
            g1 = (x[0:2] - th1) @ (x[0:2] - th1) - (x[4:6] - th1) @ (x[4:6] - th1)
            g2 = (x[0:2] - th2) @ (x[0:2] - th2) - (x[4:6] - th2) @ (x[4:6] - th2)
            assert np.allclose(hexner.terminal_cost(x), [g1, g2], atol=1e-12)
            assert np.allclose(batched[j], [g1, g2], atol=1e-12)

    def test_terminal_grad_finite_diff(self, hexner):
        rng = np.random.default_rng(8)
        x = rng.uniform(-1, 1, size=8)
        grad = hexner.lq.terminal_grad(x)
        eps = 1e-6
        for d in range(8):
            dx = np.zeros(8)
            dx[d] = eps
            fd = (hexner.lq.terminal_all(x + dx) - hexner.lq.terminal_all(x - dx)) / (2 * eps)
            assert np.allclose(grad[:, d], fd, atol=1e-6)

    def test_non_psd_rejected(self):
        with pytest.raises(ConfigError):
            make_hexner(R1=np.array([[1.0, 0.0], [0.0, -1.0]]))
        with pytest.raises(ConfigError):
            make_hexner(K1=np.array([[-1.0, 0.0], [0.0, 1.0]]))
        with pytest.raises(ConfigError):
            make_hexner(R1=np.zeros((2, 2)))  # PD required, not just PSD

    def test_one_dim_variant(self):
        spec = make_hexner(targets=((1.0,), (-1.0,)), pos_dim=1)
        assert spec.state_dim == 4
        assert spec.u_dim == spec.v_dim == 1
        x = np.array([1.0, 0.0, 0.0, 0.0])
        assert np.allclose(spec.terminal_cost(x), [0.0 - 1.0, 4.0 - 1.0])


class TestSpecValidation:
    def test_bad_horizon_step(self):
        with pytest.raises(ConfigError):
            make_hexner(horizon=1.0, step=0.3)

    def test_bad_prior(self):
        with pytest.raises(ConfigError):
            make_hexner(prior=[0.7, 0.7])

    def test_bad_box(self):
        with pytest.raises(ConfigError):
            make_hexner(u_box=[[3.0, -3.0], [-3.0, 3.0]])


class TestConfig:
    def test_roundtrip_default(self):
        cfg = hexner_config()
        spec = spec_from_config(cfg)
        ref = make_hexner()
        assert spec.num_types == ref.num_types
        assert spec.horizon == ref.horizon
        rng = np.random.default_rng(9)
        x = rng.uniform(-2, 2, size=8)
        assert np.allclose(spec.terminal_cost(x), ref.terminal_cost(x))
        assert spec.config == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            spec_from_config(hexner_config(tarrgets=[[1, 0]]))

    def test_unknown_game_rejected(self):
        with pytest.raises(ConfigError):
            spec_from_config({"game": "chess"})

    def test_dual_box_contains_terminal_payoffs(self):
        spec = make_hexner()
        box = spec.dual_box()
        rng = np.random.default_rng(10)
        xs = rng.uniform(spec.state_box[:, 0], spec.state_box[:, 1], size=(500, 8))
        for x in xs:
            g = spec.terminal_cost(x)
            assert (g >= box[:, 0]).all() and (g <= box[:, 1]).all()
