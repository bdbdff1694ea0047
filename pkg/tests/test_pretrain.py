import numpy as np
import pytest

from decisionlab import core, envs, pretrain
from decisionlab.pretrain import CurriculumSchedule
from decisionlab.rng import stream


def test_noise_probability_values():
    assert pretrain.noise_probability(1) == 1.0
    assert pretrain.noise_probability(16) == 0.5
    assert pretrain.noise_probability(10000) == pytest.approx(0.02)


def test_noise_probability_empirical():
    env = envs.MABEnv(np.arange(5.0))
    rng = stream(0, "f")
    policy = pretrain.NoisyOptimalPolicy(env, rng)
    # t = 10000 fixed: noise applied with probability 0.02
    steps = tuple(
        core.StepRecord(envs.EMPTY_CONTEXT, 4, np.array([4.0]), 4) for _ in range(9999)
    )
    history = core.History(steps, envs.EMPTY_CONTEXT)
    n = 10**5
    noisy = sum(policy.act(history) != 4 for _ in range(n))
    sigma = np.sqrt(n * 0.02 * 0.98)
    assert abs(noisy - 0.02 * n) <= 3 * sigma


def test_generate_sequence_horizon_one():
    seq = pretrain.generate_sequence(envs.make_prior("mab"), 1, stream(1, "g"))
    assert seq.horizon == 1
    assert seq.trajectory.steps[0].optimal_action == int(np.argmax(seq.env.means))


def test_noiseless_f_plays_labels():
    env = envs.MABEnv(np.array([0.0, 1.0]), noise_variance=0.0)
    prior = envs.PriorSpec("mab", num_arms=2, pool=(env,))

    class PureOptimal(pretrain.NoisyOptimalPolicy):
        def act(self, history):
            return envs.optimal_action(self.env, history.pending_context)

    seq = pretrain.generate_sequence(
        prior, 10, stream(2, "g"), behavior_policy=lambda e, r: PureOptimal(e, r)
    )
    for step in seq.trajectory.steps:
        assert step.action == step.optimal_action == 1


def test_labels_are_optimal_actions():
    rng = stream(3, "labels")
    for family in envs.FAMILIES:
        prior = envs.make_prior(family)
        for _ in range(25):
            seq = pretrain.generate_sequence(prior, 5, rng)
            for step in seq.trajectory.steps:
                expect = envs.optimal_action(seq.env, step.context)
                assert np.allclose(step.optimal_action, expect)


def test_curriculum_endpoints():
    sched = CurriculumSchedule(start_horizon=20, target_horizon=100, total_iterations=130)
    assert pretrain.curriculum_horizon(1, sched) == 20
    ramp_end = int(np.ceil(0.77 * 130))
    for m in range(ramp_end, 131):
        assert pretrain.curriculum_horizon(m, sched) == 100
    mid = (1 + ramp_end) // 2
    assert abs(pretrain.curriculum_horizon(mid, sched) - 60) <= 5


def test_curriculum_monotone_multiple_of_five():
    sched = CurriculumSchedule(start_horizon=20, target_horizon=100, total_iterations=130)
    values = [pretrain.curriculum_horizon(m, sched) for m in range(1, 131)]
    assert all(v % 5 == 0 for v in values)
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert min(values) == 20 and max(values) == 100


def test_dataset_roundtrip(tmp_path):
    rng = stream(4, "ds")
    seqs = []
    for family in envs.FAMILIES:
        seqs += [pretrain.generate_sequence(envs.make_prior(family), 6, rng)
                 for _ in range(25)]
    path = tmp_path / "ds.jsonl"
    assert pretrain.write_dataset(seqs, path) == 100
    back = pretrain.read_dataset(path)
    assert len(back) == 100
    for a, b in zip(seqs, back):
        assert a.env.to_json() == b.env.to_json()
        assert a.generator == b.generator
        for sa, sb in zip(a.trajectory.steps, b.trajectory.steps):
            assert np.allclose(sa.observation, sb.observation)
            assert np.allclose(sa.action, sb.action)


def test_empty_dataset_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert pretrain.read_dataset(path) == []


def test_malformed_dataset_line_named(tmp_path):
    rng = stream(5, "ds")
    seqs = [pretrain.generate_sequence(envs.make_prior("mab"), 3, rng) for _ in range(2)]
    path = tmp_path / "bad.jsonl"
    pretrain.write_dataset(seqs, path)
    lines = path.read_text().splitlines()
    lines[1] = lines[1][: len(lines[1]) // 2]  # truncate the second record
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="line 2"):
        pretrain.read_dataset(path)


def test_truncate_preserves_labels():
    seq = pretrain.generate_sequence(envs.make_prior("pricing"), 8, stream(6, "g"))
    short = seq.truncate(3)
    assert short.horizon == 3
    assert short.trajectory.steps == seq.trajectory.steps[:3]
