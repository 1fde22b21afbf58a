import numpy as np
import pytest

from modeplan import (
    ConfigurationError,
    FilterConfig,
    GameSpec,
    ModeBelief,
    MpcConfig,
    RefinerConfig,
    baseline_random_init,
    enumerate_modes,
    mode_belief_update,
    mode_follower_policy,
    mpc_step,
    simulate_interaction,
)
from modeplan.clustering import discrete_frechet
from modeplan.scenarios import nominal_speed, preset
from conftest import double_integrator_agent

LIGHT_REFINER = RefinerConfig(outer_iterations=6, inner_iterations=40)


@pytest.fixture
def unimodal_game():
    tau = 15
    ref = np.zeros((tau + 1, 2))
    ref[:, 0] = np.linspace(0.0, 2.0, tau + 1)
    agent = double_integrator_agent(tau, ref=ref)
    return GameSpec(agents=(agent,), horizon=tau, dt=0.1, x0=ref[0])


class TestEnumerateModes:
    def test_head_on_two_mirror_modes(self, head_on_modes):
        assert len(head_on_modes) == 2
        assert head_on_modes.cluster_count == 2
        assert head_on_modes.refiner_invocations == 2
        p1, p2 = (m.potential for m in head_on_modes.modes)
        assert p1 == pytest.approx(p2, rel=1e-6)

    def test_unimodal_problem_single_mode(self, unimodal_game):
        es = enumerate_modes(unimodal_game, filter_cfg=FilterConfig(particles=20, seed=0))
        assert len(es) == 1
        assert es.refiner_invocations == es.cluster_count

    def test_timings_recorded(self, head_on_modes):
        for key in ("filter_s", "cluster_s", "refine_s", "total_s"):
            assert head_on_modes.timings[key] >= 0.0

    def test_deterministic_under_seed(self, head_on_game):
        a = enumerate_modes(head_on_game, filter_cfg=FilterConfig(particles=12, seed=3))
        b = enumerate_modes(head_on_game, filter_cfg=FilterConfig(particles=12, seed=3))
        assert len(a) == len(b)
        for ma, mb in zip(a.modes, b.modes):
            assert np.array_equal(ma.trajectory.states, mb.trajectory.states)
            assert ma.potential == mb.potential

    def test_mode_distinctness_postcondition(self, head_on_game, head_on_modes):
        from modeplan.clustering import position_layout, trajectory_distance, ClusterConfig

        cfg = ClusterConfig(layout=position_layout(head_on_game))
        for i in range(len(head_on_modes)):
            for j in range(i + 1, len(head_on_modes)):
                d = trajectory_distance(
                    head_on_modes.modes[i].trajectory,
                    head_on_modes.modes[j].trajectory,
                    cfg,
                )
                assert d > 1.0


class TestBaseline:
    def test_unimodal_single_invocation(self, unimodal_game, rng):
        res = baseline_random_init(unimodal_game, RefinerConfig(), target_modes=1,
                                   budget=5, rng=rng)
        assert res.invocations == 1
        assert len(res.modes) == 1
        assert not res.exhausted

    def test_zero_noise_never_finds_second_mode(self, head_on_game):
        rng = np.random.default_rng(0)
        res = baseline_random_init(head_on_game, LIGHT_REFINER, target_modes=2,
                                   budget=4, rng=rng, sigma_b=0.0)
        assert res.exhausted
        assert len(res.modes) <= 1
        assert res.invocations == 4

    def test_budget_validation(self, unimodal_game, rng):
        with pytest.raises(ConfigurationError):
            baseline_random_init(unimodal_game, RefinerConfig(), target_modes=3,
                                 budget=2, rng=rng)


class TestModeBelief:
    def test_exact_prefix_locks_on_match(self, head_on_game, head_on_modes):
        t = 20
        partner_path = head_on_modes.modes[1].trajectory.states[: t + 1, 0:2]
        belief = ModeBelief(distances=np.zeros(2), dstar=0.5)
        belief = mode_belief_update(belief, partner_path, head_on_modes, t,
                                    head_on_game, partner=0)
        assert belief.distances[1] == pytest.approx(0.0, abs=1e-12)
        assert belief.locked == 1
        assert belief.lock_step == t
        assert belief.lock_gap > 0.5

    def test_symmetric_prefix_stays_unlocked(self, head_on_game, head_on_modes):
        t = 15
        ref = head_on_game.agents[0].reference[: t + 1, 0:2]
        belief = ModeBelief(distances=np.zeros(2), dstar=1.0)
        belief = mode_belief_update(belief, ref, head_on_modes, t, head_on_game, 0)
        assert abs(belief.distances[0] - belief.distances[1]) < 0.5
        assert belief.locked is None

    def test_lock_engages_as_gap_grows(self, head_on_game, head_on_modes):
        """A partner drifting onto one mode locks once the gap passes d*."""
        mode_path = head_on_modes.modes[0].trajectory.states[:, 0:2]
        ref = head_on_game.agents[0].reference[:, 0:2]
        belief = ModeBelief(distances=np.zeros(2), dstar=1.0)
        locked_at = None
        observed = []
        for t in range(31):
            blend = min(1.0, t / 10.0)
            observed.append((1 - blend) * ref[t] + blend * mode_path[t])
            belief = mode_belief_update(belief, np.array(observed), head_on_modes,
                                        t, head_on_game, 0)
            if belief.locked is not None:
                locked_at = t
                break
        assert locked_at is not None
        assert belief.locked == 0
        assert belief.lock_gap > 1.0

    def test_lock_is_sticky(self, head_on_game, head_on_modes):
        t = 20
        prefix = head_on_modes.modes[0].trajectory.states[: t + 1, 0:2]
        belief = ModeBelief(distances=np.zeros(2), dstar=0.5)
        belief = mode_belief_update(belief, prefix, head_on_modes, t, head_on_game, 0)
        assert belief.locked == 0
        # switch the observation to the other mode; the lock must not move
        prefix2 = head_on_modes.modes[1].trajectory.states[: t + 2, 0:2]
        belief = mode_belief_update(belief, prefix2, head_on_modes, t + 1,
                                    head_on_game, 0)
        assert belief.locked == 0

    def test_distances_match_direct_metric_calls(self, head_on_game, head_on_modes, rng):
        t = 12
        observed = rng.normal(size=(t + 1, 2)) + head_on_game.x0[:2]
        belief = mode_belief_update(ModeBelief(distances=np.zeros(2), dstar=1.0),
                                    observed, head_on_modes, t, head_on_game, 0)
        for k, mode in enumerate(head_on_modes.modes):
            expected = discrete_frechet(observed, mode.trajectory.states[: t + 1, 0:2])
            assert belief.distances[k] == expected

    def test_prefix_length_checked(self, head_on_game, head_on_modes):
        with pytest.raises(ConfigurationError):
            mode_belief_update(ModeBelief(distances=np.zeros(2)),
                               np.zeros((3, 2)), head_on_modes, 5, head_on_game, 0)


class TestMpcStep:
    def test_plans_against_selected_mode(self, head_on_game, head_on_modes):
        cfg = MpcConfig(plan_horizon=3.0, dt=0.1, total_time=6.0,
                        nominal_speed=nominal_speed(preset("head_on"), 1))
        belief = ModeBelief(distances=np.array([0.1, 3.0]), dstar=1.0,
                            locked=0, lock_step=5, lock_gap=2.9)
        step = mpc_step(head_on_game, head_on_modes, belief, head_on_game.x0,
                        cfg, LIGHT_REFINER, t_now=0)
        assert step.mode_index == 0
        assert not step.tentative
        assert step.plan.states.shape == (31, 10)
        assert np.isfinite(step.control).all()

    def test_prelock_speed_cap(self, head_on_game, head_on_modes):
        nom = nominal_speed(preset("head_on"), 1)
        cfg = MpcConfig(plan_horizon=3.0, dt=0.1, total_time=6.0, nominal_speed=nom)
        belief = ModeBelief(distances=np.array([1.0, 1.2]), dstar=1.0)
        step = mpc_step(head_on_game, head_on_modes, belief, head_on_game.x0,
                        cfg, LIGHT_REFINER, t_now=0)
        assert step.tentative
        nu_now = head_on_game.x0[8]
        assert nu_now + step.control[0] <= 0.8 * nom + 1e-9

    def test_empty_mode_set_rejected(self, head_on_game):
        from modeplan.refine import EquilibriumSet

        with pytest.raises(ConfigurationError):
            mpc_step(head_on_game, EquilibriumSet(modes=()),
                     ModeBelief(distances=np.zeros(1)), head_on_game.x0,
                     MpcConfig(), RefinerConfig())


class TestClosedLoop:
    @pytest.fixture(scope="class")
    def closed_loop_log(self, head_on_game, head_on_modes):
        cfg = MpcConfig(plan_horizon=5.0, dt=0.1, replan_period=2, total_time=6.0,
                        nominal_speed=nominal_speed(preset("head_on"), 1))
        policy = mode_follower_policy(head_on_game, head_on_modes, 1)
        return simulate_interaction(head_on_game, head_on_modes, policy, cfg,
                                    LIGHT_REFINER, dstar=1.0)

    def test_locks_the_followed_mode_early(self, closed_loop_log):
        assert closed_loop_log.locked_mode == 1
        assert closed_loop_log.lock_step is not None
        assert closed_loop_log.lock_step < 30

    def test_collision_free(self, closed_loop_log):
        assert closed_loop_log.min_distance >= 3.0 - 1e-4
        assert not closed_loop_log.collided

    def test_ego_progresses_to_goal(self, head_on_game, closed_loop_log):
        goal = head_on_game.agents[1].reference[-1][:2]
        end = closed_loop_log.states[-1][5:7]
        start = head_on_game.x0[5:7]
        assert np.linalg.norm(end - goal) < 0.25 * np.linalg.norm(start - goal)
