import numpy as np
import pytest

from modeplan import (
    AgentSpec,
    ConfigurationError,
    GameSpec,
    JointTrajectory,
    NumericError,
    assemble_potential,
    eval_agent_cost,
    eval_constraints,
    eval_potential,
    preset,
    rollout,
    build_scenario,
)
from conftest import scalar_agent
from oracles import termwise_agent_cost


def random_joint_trajectory(game, rng, scale=1.0):
    return JointTrajectory(
        states=scale * rng.normal(size=(game.horizon + 1, game.n)),
        controls=scale * rng.normal(size=(game.horizon + 1, game.m)),
    )


class TestAssemblePotential:
    def test_two_unicycle_blocks(self, head_on_game):
        pp = assemble_potential(head_on_game)
        expected_q = np.diag([30.0, 6.0, 3.0, 3.0, 1.2] * 2)
        expected_r = np.diag([8.0, 4.0, 8.0, 4.0])
        np.testing.assert_allclose(pp.Q, expected_q)
        np.testing.assert_allclose(pp.R, expected_r)
        np.testing.assert_allclose(pp.Q_tau, np.diag([5000.0, 1000.0, 500.0, 500.0, 200.0] * 2))

    def test_single_agent_blocks_identical(self, scalar_game):
        pp = assemble_potential(scalar_game)
        agent = scalar_game.agents[0]
        np.testing.assert_array_equal(pp.Q, agent.Q)
        np.testing.assert_array_equal(pp.Q_tau, agent.Q_tau)
        np.testing.assert_array_equal(pp.R, agent.R)

    def test_three_agent_block_diagonal(self, three_agent_game):
        pp = assemble_potential(three_agent_game)
        np.testing.assert_array_equal(np.diag(pp.Q), [2.0, 3.0, 5.0])
        assert np.count_nonzero(pp.Q - np.diag(np.diag(pp.Q))) == 0

    def test_dimension_mismatch_rejected(self):
        agent = scalar_agent(4)
        game = GameSpec(agents=(agent,), horizon=4, dt=0.1, x0=np.zeros(2))
        with pytest.raises(ConfigurationError):
            assemble_potential(game)


class TestAgentCost:
    def test_on_reference_zero_controls(self, scalar_game):
        traj = JointTrajectory(
            states=scalar_game.agents[0].reference.copy(),
            controls=np.zeros((scalar_game.horizon + 1, 1)),
        )
        assert eval_agent_cost(scalar_game, traj, 0) == pytest.approx(0.0, abs=1e-15)

    def test_small_hand_computed_instance(self):
        agent = scalar_agent(1)
        game = GameSpec(agents=(agent,), horizon=1, dt=0.1, x0=np.zeros(1))
        traj = JointTrajectory(states=[[0.0], [2.0]], controls=[[1.0], [0.0]])
        assert eval_agent_cost(game, traj, 0) == pytest.approx(5.0)

    def test_matches_termwise_oracle(self, three_agent_game, rng):
        traj = random_joint_trajectory(three_agent_game, rng)
        for i, agent in enumerate(three_agent_game.agents):
            sl = three_agent_game.agent_state_slice(i)
            su = three_agent_game.agent_input_slice(i)
            expected = termwise_agent_cost(
                agent.Q, agent.Q_tau, agent.R, agent.reference,
                traj.states[:, sl], traj.controls[:, su],
            )
            assert eval_agent_cost(three_agent_game, traj, i) == pytest.approx(expected, rel=1e-12)

    def test_index_out_of_range(self, scalar_game, rng):
        traj = random_joint_trajectory(scalar_game, rng)
        with pytest.raises(IndexError):
            eval_agent_cost(scalar_game, traj, 3)


class TestPotential:
    def test_equals_agent_sum_two_agents(self, head_on_game, rng):
        pp = assemble_potential(head_on_game)
        traj = random_joint_trajectory(head_on_game, rng, scale=2.0)
        total = sum(eval_agent_cost(head_on_game, traj, i) for i in range(2))
        assert eval_potential(pp, traj) == pytest.approx(total, rel=1e-12)

    def test_zero_on_reference(self, scalar_game):
        pp = assemble_potential(scalar_game)
        traj = JointTrajectory(
            states=scalar_game.agents[0].reference.copy(),
            controls=np.zeros((scalar_game.horizon + 1, 1)),
        )
        assert eval_potential(pp, traj) == pytest.approx(0.0, abs=1e-15)

    def test_three_agent_sum(self, three_agent_game, rng):
        pp = assemble_potential(three_agent_game)
        for _ in range(5):
            traj = random_joint_trajectory(three_agent_game, rng)
            total = sum(eval_agent_cost(three_agent_game, traj, i) for i in range(3))
            assert eval_potential(pp, traj) == pytest.approx(total, rel=1e-12)

    def test_unilateral_change_matches_agent_cost_delta(self, three_agent_game, rng):
        """Changing one agent's slice moves the sum by exactly that agent's cost."""
        pp = assemble_potential(three_agent_game)
        base = random_joint_trajectory(three_agent_game, rng)
        for i in range(3):
            other = base.with_agent(
                three_agent_game,
                i,
                rng.normal(size=(three_agent_game.horizon + 1, 1)),
                rng.normal(size=(three_agent_game.horizon + 1, 1)),
            )
            dpot = eval_potential(pp, other) - eval_potential(pp, base)
            dcost = eval_agent_cost(three_agent_game, other, i) - eval_agent_cost(
                three_agent_game, base, i
            )
            assert dpot == pytest.approx(dcost, rel=1e-9, abs=1e-9)


class TestRollout:
    def test_unicycle_at_rest_is_fixed_point(self, head_on_game):
        x0 = head_on_game.x0.copy()
        x0[3] = x0[8] = 0.0  # zero both speeds
        controls = np.zeros((head_on_game.horizon + 1, 4))
        traj = rollout(head_on_game, x0, controls)
        np.testing.assert_array_equal(traj.states, np.tile(x0, (head_on_game.horizon + 1, 1)))

    def test_straight_line_advance(self, head_on_game):
        x0 = np.zeros(10)
        x0[3] = 1.0   # agent 1 moving along +x at 1 m/s
        controls = np.zeros((head_on_game.horizon + 1, 4))
        traj = rollout(head_on_game, x0, controls)
        np.testing.assert_allclose(
            traj.states[:, 0], 0.1 * np.arange(head_on_game.horizon + 1), atol=1e-12
        )
        np.testing.assert_allclose(traj.states[:, 1], 0.0, atol=1e-12)

    def test_matches_step_by_step_recomputation(self, head_on_game, rng):
        from oracles import unicycle_reference_step

        controls = 0.1 * rng.normal(size=(head_on_game.horizon + 1, 4))
        traj = rollout(head_on_game, head_on_game.x0, controls)
        state = head_on_game.x0.copy()
        for t in range(head_on_game.horizon):
            nxt = np.empty(10)
            for a in range(2):
                nxt[5 * a:5 * a + 5] = unicycle_reference_step(
                    *state[5 * a:5 * a + 5], *controls[t, 2 * a:2 * a + 2], head_on_game.dt
                )
            state = nxt
            np.testing.assert_allclose(traj.states[t + 1], state, rtol=1e-12, atol=1e-12)

    def test_pure_function_bitwise(self, head_on_game, rng):
        controls = rng.normal(size=(head_on_game.horizon + 1, 4))
        a = rollout(head_on_game, head_on_game.x0, controls)
        b = rollout(head_on_game, head_on_game.x0, controls)
        assert np.array_equal(a.states, b.states)

    def test_nonfinite_state_raises_with_step(self, scalar_game):
        controls = np.full((scalar_game.horizon + 1, 1), np.inf)
        with pytest.raises(NumericError) as excinfo:
            rollout(scalar_game, scalar_game.x0, controls)
        assert excinfo.value.step is not None


class TestConstraints:
    def _game_with_gap(self, gap):
        cfg = preset("head_on")
        game = build_scenario(cfg)
        x0 = game.x0.copy()
        x0[0], x0[5] = -gap / 2.0, gap / 2.0
        x0[1] = x0[6] = 0.0
        return game, x0

    def test_agents_five_apart(self):
        game, x0 = self._game_with_gap(5.0)
        traj = JointTrajectory(states=[x0], controls=[np.zeros(4)])
        g = eval_constraints(game, traj)
        assert g[0, 0] == pytest.approx(-2.0)

    def test_agents_at_boundary(self):
        game, x0 = self._game_with_gap(3.0)
        traj = JointTrajectory(states=[x0], controls=[np.zeros(4)])
        g = eval_constraints(game, traj)
        assert g[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_violation_localized_in_time(self):
        game, x0 = self._game_with_gap(10.0)
        states = np.tile(x0, (4, 1))
        states[2, 0], states[2, 5] = -1.0, 1.0  # close approach at t=2 only
        traj = JointTrajectory(states=states, controls=np.zeros((4, 4)))
        g = eval_constraints(game, traj)
        assert g[2, 0] > 0
        assert (g[[0, 1, 3], 0] < 0).all()

    def test_pointwise_in_time(self, head_on_game, rng):
        traj = random_joint_trajectory(head_on_game, rng, scale=3.0)
        g = eval_constraints(head_on_game, traj)
        perm = rng.permutation(head_on_game.horizon + 1)
        permuted = JointTrajectory(traj.states[perm], traj.controls[perm])
        np.testing.assert_array_equal(eval_constraints(head_on_game, permuted), g[perm])

    def test_unconstrained_game_empty(self, scalar_game, rng):
        traj = random_joint_trajectory(scalar_game, rng)
        assert eval_constraints(scalar_game, traj).shape == (scalar_game.horizon + 1, 0)
