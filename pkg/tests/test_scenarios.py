import math

import numpy as np
import pytest

from modeplan import (
    ConfigurationError,
    JointTrajectory,
    ScenarioConfig,
    UnicycleState,
    build_scenario,
    constraint_stack,
    eval_potential,
    assemble_potential,
    load_scenario,
    preset,
    rollout,
    save_scenario,
    unicycle_step,
)
from oracles import unicycle_reference_step


class TestUnicycleStep:
    def test_straight_motion(self):
        s = UnicycleState(0.0, 0.0, 0.0, 1.0, 0.0)
        nxt = unicycle_step(s, (0.0, 0.0), 0.1)
        assert (nxt.p, nxt.q, nxt.theta, nxt.nu, nxt.omega) == pytest.approx(
            (0.1, 0.0, 0.0, 1.0, 0.0)
        )

    def test_sideways_motion(self):
        s = UnicycleState(0.0, 0.0, math.pi / 2.0, 2.0, 0.0)
        nxt = unicycle_step(s, (0.0, 0.0), 0.5)
        assert nxt.q == pytest.approx(1.0, abs=1e-12)
        assert nxt.p == pytest.approx(0.0, abs=1e-12)

    def test_matches_longhand_equations(self, rng):
        for _ in range(25):
            vals = rng.normal(size=5)
            u = rng.normal(size=2)
            dt = float(rng.uniform(0.01, 0.5))
            s = UnicycleState(*vals)
            nxt = unicycle_step(s, u, dt)
            expected = unicycle_reference_step(*vals, *u, dt)
            assert (nxt.p, nxt.q, nxt.theta, nxt.nu, nxt.omega) == pytest.approx(expected)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ConfigurationError):
            unicycle_step(UnicycleState(0, 0, 0, 0, 0), (0, 0), 0.0)

    def test_composed_steps_equal_rollout_bitwise(self, head_on_game, rng):
        controls = 0.05 * rng.normal(size=(head_on_game.horizon + 1, 4))
        traj = rollout(head_on_game, head_on_game.x0, controls)
        states = [UnicycleState.from_array(head_on_game.x0[:5]),
                  UnicycleState.from_array(head_on_game.x0[5:])]
        for t in range(head_on_game.horizon):
            states = [
                unicycle_step(states[0], controls[t, 0:2], head_on_game.dt),
                unicycle_step(states[1], controls[t, 2:4], head_on_game.dt),
            ]
            recomposed = np.concatenate([states[0].as_array(), states[1].as_array()])
            assert np.array_equal(recomposed, traj.states[t + 1])


class TestBuildScenario:
    def test_head_on_constraint_count(self, head_on_game):
        model = head_on_game.constraints()
        assert model.dim == 7  # collision + two speed floors + four input bounds

    def test_obstacle_preset_matches_published_values(self):
        cfg = preset("obstacle_swap")
        assert cfg.r_col == 3.0
        assert cfg.r_obs == 4.0
        assert cfg.u_bounds == ((0.15, 0.75), (0.15, 0.75))
        game = build_scenario(cfg)
        assert game.constraints().dim == 9
        np.testing.assert_allclose(game.agents[0].Q, 0.6 * np.diag([50, 10, 5, 5, 2]))
        np.testing.assert_allclose(game.agents[0].Q_tau, 100 * np.diag([50, 10, 5, 5, 2]))
        np.testing.assert_allclose(game.agents[0].R, np.diag([8.0, 4.0]))

    def test_references_are_straight_constant_speed(self, head_on_game):
        cfg = preset("head_on")
        ref = head_on_game.agents[0].reference
        dist = math.dist(cfg.starts[0], cfg.goals[0])
        np.testing.assert_allclose(ref[:, 3], dist / (cfg.horizon * cfg.dt))
        np.testing.assert_allclose(ref[:, 4], 0.0)
        np.testing.assert_allclose(np.diff(ref[:, 0]), np.diff(ref[:, 0])[0])

    def test_symmetric_swap_references_mirror(self, head_on_game):
        ref1 = head_on_game.agents[0].reference
        ref2 = head_on_game.agents[1].reference
        np.testing.assert_allclose(ref1[:, :2], -ref2[:, :2], atol=1e-12)

    def test_degenerate_start_goal_rejected(self):
        cfg = ScenarioConfig(kind="head_on", starts=((0.0, 0.0), (8.0, 0.0)),
                             goals=((0.0, 0.0), (-8.0, 0.0)))
        with pytest.raises(ConfigurationError):
            build_scenario(cfg)

    def test_obstacle_radius_must_exceed_collision(self):
        cfg = ScenarioConfig(kind="obstacle_swap", r_col=3.0, r_obs=2.0)
        with pytest.raises(ConfigurationError):
            build_scenario(cfg)


class TestConstraintStack:
    def test_separated_agents(self):
        model = constraint_stack(preset("head_on"))
        x = np.zeros(10)
        x[0], x[5] = 0.0, 10.0
        g = model.fn(x, np.zeros(4))
        assert g[0] == pytest.approx(-7.0)

    def test_obstacle_boundary(self):
        model = constraint_stack(preset("obstacle_swap"))
        x = np.zeros(10)
        x[0], x[1] = 4.0, 0.0     # agent 1 exactly on the obstacle ring
        x[5] = 20.0
        g = model.fn(x, np.zeros(4))
        assert g[1] == pytest.approx(0.0, abs=1e-12)

    def test_componentwise_input_bounds(self):
        model = constraint_stack(preset("head_on"))
        x = np.zeros(10)
        x[5] = 10.0
        u = np.array([0.2, 0.5, 0.0, 0.0])
        g = model.fn(x, u)
        assert g[3] == pytest.approx(0.05)    # |0.2| - 0.15 violated
        assert g[4] == pytest.approx(-0.25)   # |0.5| - 0.75 satisfied

    def test_constraint_order_and_count_state_independent(self, rng):
        model = constraint_stack(preset("obstacle_swap"))
        for _ in range(5):
            g = model.fn(rng.normal(size=10), rng.normal(size=4))
            assert g.shape == (9,)

    def test_jacobian_matches_finite_differences(self, rng):
        from modeplan.registry import finite_difference_jacobian

        model = constraint_stack(preset("obstacle_swap"))
        for _ in range(10):
            x = rng.normal(size=10) * 3.0
            u = rng.normal(size=4)
            gx, gu = model.jacobian(x, u)
            fx, fu = finite_difference_jacobian(model.fn, x, u)
            np.testing.assert_allclose(gx, fx, atol=1e-6)
            np.testing.assert_allclose(gu, fu, atol=1e-6)


class TestReflectionSymmetry:
    def test_mirrored_trajectory_has_equal_potential(self, head_on_game, rng):
        """Flipping the head-on world across its axis preserves the objective."""
        pp = assemble_potential(head_on_game)
        controls = 0.05 * rng.normal(size=(head_on_game.horizon + 1, 4))
        traj = rollout(head_on_game, head_on_game.x0, controls)

        ref_theta = [head_on_game.agents[i].reference[0, 2] for i in range(2)]
        states = traj.states.copy()
        controls_m = traj.controls.copy()
        for a, off in enumerate((0, 5)):
            states[:, off + 1] *= -1.0                      # q
            states[:, off + 2] = 2.0 * ref_theta[a] - states[:, off + 2]  # theta
            states[:, off + 4] *= -1.0                      # omega
            controls_m[:, 2 * a + 1] *= -1.0                # turn-rate delta
        mirrored = JointTrajectory(states, controls_m)
        assert eval_potential(pp, mirrored) == pytest.approx(
            eval_potential(pp, traj), rel=1e-9
        )


class TestScenarioFiles:
    def test_round_trip_lossless(self, tmp_path):
        cfg = ScenarioConfig(
            kind="obstacle_swap",
            starts=((-8.123456789012345, 0.1), (8.0, -0.2)),
            goals=((8.0, 0.3), (-8.0, 0.4)),
            r_col=2.9999999999999996,
            r_obs=4.000000000000007,
            horizon=55,
            dt=0.1,
        )
        path = tmp_path / "scenario.yaml"
        save_scenario(cfg, path)
        loaded = load_scenario(path)
        assert loaded == cfg
        save_scenario(loaded, tmp_path / "scenario2.yaml")
        assert (tmp_path / "scenario2.yaml").read_text() == path.read_text()

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("kind: head_on\nnot_a_field: 3\n")
        with pytest.raises(ConfigurationError):
            load_scenario(path)

    def test_preset_lookup(self):
        assert preset("head_on").kind == "head_on"
        with pytest.raises(ConfigurationError):
            preset("does_not_exist")
