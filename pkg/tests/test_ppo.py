import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convsearch_rl.policy import CRITIC_FEATURES, POLICY_FEATURES, LinearCritic, LinearSoftmaxPolicy
from convsearch_rl.ppo import (NonFiniteGradientError, PPOConfig, RolloutBatch, TrajectoryRecord,
                               actor_objective, batch_advantages, clipped_surrogate, compute_gae,
                               critic_objective, fill_values, kl_penalty, update_step)

from oracles import oracle_gae

D, M = len(POLICY_FEATURES), len(CRITIC_FEATURES)


def random_trajectory(rng, length=None, env_rate=0.3, policy=None):
    length = length or int(rng.integers(1, 7))
    policy = policy or LinearSoftmaxPolicy()
    feats, actions, mask, logps = [], [], [], []
    for i in range(length):
        if i > 0 and rng.random() < env_rate:
            feats.append(None)
            actions.append(-1)
            mask.append(0)
            logps.append(0.0)
            continue
        phi = rng.normal(size=(int(rng.integers(1, 6)), D))
        a = int(rng.integers(len(phi)))
        feats.append(phi)
        actions.append(a)
        mask.append(1)
        logps.append(policy.log_probs_from_features(phi)[a])
    return TrajectoryRecord(feats, actions, mask, logps, rng.normal(size=(length, M)),
                            reward=float(rng.uniform(0, 1.2)))


def random_batch(seed, n=4, **kw):
    rng = np.random.default_rng(seed)
    return RolloutBatch([random_trajectory(rng, **kw) for _ in range(n)])


# ---------------------------------------------------------------- GAE


def test_gae_matches_oracle_200_cases():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 12))
        values = rng.normal(size=n)
        r = float(rng.normal())
        gamma, lam = float(rng.uniform(0.5, 1.0)), float(rng.uniform(0.0, 1.0))
        assert np.allclose(compute_gae(values, r, gamma, lam), oracle_gae(values, r, gamma, lam),
                           rtol=0, atol=1e-10)


@settings(max_examples=100)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(-2, 2))
def test_gae_unit_discount_is_reward_minus_value(values, reward):
    adv = compute_gae(values, reward, 1.0, 1.0)
    assert np.allclose(adv, reward - np.asarray(values), atol=1e-12)
    # general recursion at gamma=lam=1 agrees
    assert np.allclose(oracle_gae(values, reward, 1.0, 1.0), adv, atol=1e-12)


def test_gae_empty_raises():
    with pytest.raises(ValueError):
        compute_gae([], 1.0)


def test_batch_advantages_skip_masked_positions():
    batch = random_batch(1, n=6)
    fill_values(batch, LinearCritic(np.random.default_rng(2).normal(size=M)))
    for adv, traj in zip(batch_advantages(batch), batch.trajectories):
        assert np.all(np.isnan(adv[traj.mask == 0]))
        idx = traj.mask == 1
        assert np.allclose(adv[idx], traj.reward - traj.values[idx])


def test_batch_advantages_need_values():
    with pytest.raises(ValueError):
        batch_advantages(random_batch(0))


def test_normalized_advantages():
    batch = random_batch(4, n=8)
    fill_values(batch, LinearCritic(np.random.default_rng(2).normal(size=M)))
    adv = batch_advantages(batch, normalize=True)
    flat = np.concatenate([a[t.mask == 1] for a, t in zip(adv, batch.trajectories)])
    assert abs(flat.mean()) < 1e-9 and abs(flat.std() - 1.0) < 1e-6


# ---------------------------------------------------------------- gradients


def _fd(f, w, h=1e-6):
    out = np.zeros_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        out[j] = (f(w + e) - f(w - e)) / (2 * h)
    return out


@pytest.mark.parametrize("seed", range(5))
def test_actor_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    old = LinearSoftmaxPolicy(rng.normal(size=D) * 0.3)
    batch = RolloutBatch([random_trajectory(rng, policy=old) for _ in range(4)])
    critic = LinearCritic(rng.normal(size=M))
    fill_values(batch, critic)
    adv = batch_advantages(batch)
    ref = LinearSoftmaxPolicy(rng.normal(size=D) * 0.3)
    # small perturbation so ratios differ from 1 but stay inside the trust region
    w = old.weights + rng.normal(size=D) * 0.01

    def loss(weights):
        return actor_objective(LinearSoftmaxPolicy(weights), ref, batch, adv, 0.2, 0.05)[0]

    _, grad, _ = actor_objective(LinearSoftmaxPolicy(w), ref, batch, adv, 0.2, 0.05)
    assert np.allclose(_fd(loss, w), grad, rtol=1e-5, atol=1e-8)


def test_clipped_region_has_zero_gradient():
    rng = np.random.default_rng(3)
    phi = rng.normal(size=(3, D))
    old = LinearSoftmaxPolicy()
    traj = TrajectoryRecord([phi], [0], [1], [old.log_probs_from_features(phi)[0]],
                            np.zeros((1, M)), 1.0, values=np.zeros(1))
    batch = RolloutBatch([traj])
    # push the ratio far above 1 + epsilon with a positive advantage
    w = (phi[0] - phi.mean(axis=0)) * 10
    loss, grad, stats = clipped_surrogate(batch, LinearSoftmaxPolicy(w), [np.array([1.0])], 0.2)
    assert stats["clip_fraction"] == 1.0
    assert np.all(grad == 0) and loss == pytest.approx(-1.2)


def test_kl_zero_at_reference_and_gradient():
    batch = random_batch(7)
    ref = LinearSoftmaxPolicy()
    loss, grad, kl = kl_penalty(ref, ref, batch, 0.5)
    assert loss == 0.0 and kl == 0.0 and np.allclose(grad, 0)
    w = np.random.default_rng(1).normal(size=D) * 0.5
    loss, grad, kl = kl_penalty(LinearSoftmaxPolicy(w), ref, batch, 0.5)
    assert kl > 0
    assert np.allclose(_fd(lambda v: kl_penalty(LinearSoftmaxPolicy(v), ref, batch, 0.5)[0], w),
                       grad, rtol=1e-5, atol=1e-9)


def test_critic_gradient_finite_differences():
    batch = random_batch(11, n=5)
    v = np.random.default_rng(5).normal(size=M)
    _, grad = critic_objective(LinearCritic(v), batch)
    assert np.allclose(_fd(lambda x: critic_objective(LinearCritic(x), batch)[0], v), grad,
                       rtol=1e-6, atol=1e-9)


# ---------------------------------------------------------------- masking


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_env_positions_do_not_affect_actor_loss(seed):
    """Altering masked positions leaves loss and gradient bit-for-bit unchanged."""
    rng = np.random.default_rng(seed)
    batch = RolloutBatch([random_trajectory(rng, length=6, env_rate=0.5) for _ in range(3)])
    fill_values(batch, LinearCritic(rng.normal(size=M)))
    adv = batch_advantages(batch)
    policy = LinearSoftmaxPolicy(rng.normal(size=D) * 0.1)
    ref = LinearSoftmaxPolicy()
    loss1, grad1, _ = actor_objective(policy, ref, batch, adv, 0.2, 1e-3)
    for traj, a in zip(batch.trajectories, adv):
        for i in np.flatnonzero(traj.mask == 0):
            traj.features[i] = rng.normal(size=(4, D))  # garbage content
            traj.old_log_probs[i] = rng.normal()
            a[i] = rng.normal() * 100
    loss2, grad2, _ = actor_objective(policy, ref, batch, adv, 0.2, 1e-3)
    assert loss1 == loss2 and np.array_equal(grad1, grad2)


def test_all_masked_batch_is_noop():
    traj = TrajectoryRecord([None], [-1], [0], [0.0], np.zeros((1, M)), 1.0)
    batch = RolloutBatch([traj])
    policy, critic = LinearSoftmaxPolicy(), LinearCritic()
    new_p, new_c, diag = update_step(policy, critic, batch, PPOConfig())
    assert np.array_equal(new_p.weights, policy.weights)
    assert np.array_equal(new_c.weights, critic.weights)


# ---------------------------------------------------------------- validation and update


def test_record_validation():
    with pytest.raises(ValueError):
        TrajectoryRecord([None, None], [0], [0, 0], [0, 0], np.zeros((2, M)), 0.0)
    with pytest.raises(ValueError):
        TrajectoryRecord([None], [0], [1], [0.0], np.zeros((1, M)), 0.0)
    with pytest.raises(ValueError):
        TrajectoryRecord([np.zeros((2, D))], [5], [1], [0.0], np.zeros((1, M)), 0.0)


@pytest.mark.parametrize("kw", [dict(epsilon=0.0), dict(epsilon=1.0), dict(gamma=1.5), dict(lam=-0.1),
                                dict(kl_coef=-1.0), dict(actor_step_size=0.0), dict(rollouts_per_step=0),
                                dict(update_epochs=0)])
def test_ppo_config_validation(kw):
    with pytest.raises(ValueError):
        PPOConfig(**kw)


def test_advantage_shape_mismatch():
    batch = random_batch(0, n=2)
    with pytest.raises(ValueError):
        clipped_surrogate(batch, LinearSoftmaxPolicy(), [np.zeros(1)], 0.2)


def test_first_epoch_ratio_is_one_and_inputs_untouched():
    batch = random_batch(9, n=6)
    policy, critic = LinearSoftmaxPolicy(), LinearCritic()
    w0, v0 = policy.weights.copy(), critic.weights.copy()
    new_p, new_c, diag = update_step(policy, critic, batch, PPOConfig(update_epochs=1))
    assert diag["mean_ratio"] == pytest.approx(1.0, abs=1e-12)
    assert diag["kl"] == 0.0
    assert np.array_equal(policy.weights, w0) and np.array_equal(critic.weights, v0)
    assert not np.array_equal(new_c.weights, v0)


def test_update_increases_probability_of_advantaged_action():
    rng = np.random.default_rng(2)
    phi = rng.normal(size=(4, D))
    lp = LinearSoftmaxPolicy().log_probs_from_features(phi)
    good = TrajectoryRecord([phi], [1], [1], [lp[1]], np.eye(M)[:1], 1.0)
    bad = TrajectoryRecord([phi], [2], [1], [lp[2]], np.eye(M)[:1], 0.0)
    new_p, _, _ = update_step(LinearSoftmaxPolicy(), LinearCritic(), RolloutBatch([good, bad]),
                              PPOConfig(actor_step_size=0.1))
    p = new_p.probs_from_features(phi)
    assert p[1] > 0.25 > p[2]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_raises():
    rng = np.random.default_rng(0)
    batch = random_batch(1)
    batch.trajectories[0].critic_features[0] = np.inf
    policy, critic = LinearSoftmaxPolicy(), LinearCritic(rng.normal(size=M))
    w0 = critic.weights.copy()
    with pytest.raises(NonFiniteGradientError) as info:
        update_step(policy, critic, batch, PPOConfig())
    assert isinstance(info.value.diagnostics, dict)
    assert np.array_equal(critic.weights, w0)
