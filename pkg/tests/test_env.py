import json

import numpy as np
import pytest

from goatlab.env import (
    DatasetKind,
    EnvConfig,
    dumps_dataset,
    generate_dataset,
    optimal_action,
    parse_dataset,
    read_dataset,
    reward,
    sample_eval_goals,
    step,
    write_dataset,
)
from goatlab.errors import ConfigError, DataError, NumericError


class TestStep:
    @pytest.mark.parametrize(
        "s, a, expected",
        [((0, 0), (1, 0), (1, 0)), ((2, 3), (-0.5, 0.4), (1.5, 3.4)), ((0, 0), (2, -3), (1, -1))],
    )
    def test_examples(self, s, a, expected):
        np.testing.assert_allclose(step(np.array(s, float), np.array(a, float)), expected, atol=1e-15)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            step(np.zeros(2), np.array([np.inf, 0.0]))

    def test_custom_action_bound(self):
        out = step(np.zeros(2), np.array([5.0, -5.0]), EnvConfig(action_bound=2.0))
        assert out.tolist() == [2.0, -2.0]


class TestReward:
    def test_near_goal(self):
        assert reward(np.array([9.9, 0.0]), np.array([10.0, 0.0])) == 1

    def test_far_from_goal(self):
        assert reward(np.zeros(2), np.array([10.0, 0.0])) == 0

    def test_boundary_is_inclusive(self):
        assert reward(np.array([0.5, 0.0]), np.zeros(2)) == 1
        assert reward(np.array([0.5 + 1e-12, 0.0]), np.zeros(2)) == 0

    def test_batched(self):
        r = reward(np.array([[0.0, 0.0], [3.0, 0.0]]), np.zeros((2, 2)))
        assert r.tolist() == [1, 0]


class TestOptimalAction:
    @pytest.mark.parametrize(
        "g, expected", [((3, 0), (1, 0)), ((0.3, -0.2), (0.3, -0.2)), ((0, 0), (0, 0)), ((-5, -0.5), (-1, -0.5))]
    )
    def test_examples(self, g, expected):
        np.testing.assert_allclose(optimal_action(np.zeros(2), np.array(g, float)), expected)

    def test_expert_closure_on_both_circles(self):
        env = EnvConfig()
        for radius in (10.0, 20.0):
            goals = sample_eval_goals(radius, 100, seed=5)
            s = np.zeros_like(goals)
            hit = np.zeros(len(goals), bool)
            for _ in range(env.horizon):
                s = s + optimal_action(s, goals)
                hit |= reward(s, goals).astype(bool)
            assert hit.all()


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [dict(horizon=0), dict(success_radius=0.0), dict(action_bound=-1.0), dict(discount=1.0)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            EnvConfig(**kw)

    @pytest.mark.parametrize("args", [("bogus", 3), ("expert", 0)])
    def test_invalid_kind(self, args):
        with pytest.raises(ConfigError):
            DatasetKind(*args)

    def test_invalid_noise(self):
        with pytest.raises(ConfigError):
            DatasetKind.nonexpert(5, p_random=1.5)


class TestGenerate:
    def test_expert_stays_in_upper_half_plane(self):
        trajs = generate_dataset(DatasetKind.expert(10), seed=0)
        assert len(trajs) == 10
        for tr in trajs:
            assert tr.goal[1] >= 0
            assert (tr.states[:, 1] >= 0).all()
            assert np.linalg.norm(tr.goal) == pytest.approx(10.0)

    def test_trajectory_shape_and_chain_consistency(self):
        for tr in generate_dataset(DatasetKind.nonexpert(5), seed=1):
            assert tr.states.shape == (51, 2) and tr.actions.shape == (50, 2) and tr.rewards.shape == (50,)
            assert np.array_equal(tr.states[0], np.zeros(2))
            np.testing.assert_array_equal(tr.states[1:], tr.states[:-1] + tr.actions)
            assert np.abs(tr.actions).max() <= 1.0
            assert np.array_equal(tr.rewards, reward(tr.states[1:], tr.goal))

    def test_transitions_are_consistent(self):
        tr = generate_dataset(DatasetKind.expert(1), seed=2)[0]
        steps = list(tr)
        assert len(steps) == tr.horizon
        for a, b in zip(steps, steps[1:]):
            assert np.array_equal(a.s_next, b.s)

    def test_same_seed_same_bytes(self):
        a = dumps_dataset(generate_dataset(DatasetKind.nonexpert(7), seed=3))
        b = dumps_dataset(generate_dataset(DatasetKind.nonexpert(7), seed=3))
        assert a == b

    def test_different_seed_differs(self):
        a = generate_dataset(DatasetKind.nonexpert(3), seed=3)
        b = generate_dataset(DatasetKind.nonexpert(3), seed=4)
        assert not np.array_equal(a[0].states, b[0].states)

    def test_nonexpert_misses_somewhere(self):
        final = [tr.rewards[-1] for sd in range(5) for tr in generate_dataset(DatasetKind.nonexpert(50), sd)]
        assert min(final) == 0

    def test_expert_always_succeeds(self):
        for tr in generate_dataset(DatasetKind.expert(20), seed=0):
            assert tr.rewards[-1] == 1

    @pytest.mark.parametrize("kind", [DatasetKind.expert(10), DatasetKind.nonexpert(10), DatasetKind.nonexpert(50)])
    def test_data_rarely_visits_lower_half(self, kind):
        for sd in range(5):
            states = np.concatenate([tr.states for tr in generate_dataset(kind, sd)])
            assert np.mean(states[:, 1] < -0.5) < 0.05


class TestEvalGoals:
    def test_on_circle(self):
        g = sample_eval_goals(20.0, 50, seed=1)
        np.testing.assert_allclose(np.linalg.norm(g, axis=1), 20.0, atol=1e-9)

    def test_lower_half_well_represented(self):
        for sd in range(10):
            assert np.mean(sample_eval_goals(10.0, 200, sd)[:, 1] < 0) >= 0.4

    def test_deterministic(self):
        assert np.array_equal(sample_eval_goals(10, 5, 3), sample_eval_goals(10, 5, 3))

    @pytest.mark.parametrize("radius, n", [(0.0, 5), (10.0, 0)])
    def test_invalid(self, radius, n):
        with pytest.raises(ConfigError):
            sample_eval_goals(radius, n, 0)


class TestNdjson:
    def test_round_trip(self, tmp_path):
        trajs = generate_dataset(DatasetKind.nonexpert(4), seed=0)
        write_dataset(tmp_path / "d.ndjson", trajs, {"kind": "nonexpert"})
        header, back = read_dataset(tmp_path / "d.ndjson")
        assert header["n_traj"] == 4 and header["horizon"] == 50 and header["kind"] == "nonexpert"
        for a, b in zip(trajs, back):
            assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
            assert np.array_equal(a.goal, b.goal) and np.array_equal(a.rewards, b.rewards)

    def test_line_layout(self):
        text = dumps_dataset(generate_dataset(DatasetKind.expert(2), seed=0))
        lines = text.splitlines()
        assert len(lines) == 3
        assert list(json.loads(lines[1])) == ["goal", "states", "actions", "rewards"]

    def test_rejects_foreign_header(self):
        with pytest.raises(DataError):
            parse_dataset(['{"format": "other"}'])

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            parse_dataset([])

    def test_rejects_inconsistent_lengths(self):
        header = '{"format":"pointreach-ndjson","version":1,"horizon":1,"n_traj":1}'
        bad = '{"goal":[0,0],"states":[[0,0]],"actions":[[0,0]],"rewards":[0]}'
        with pytest.raises(DataError):
            parse_dataset([header, bad])
