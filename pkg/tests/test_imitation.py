"""Imitation tests: brute-force kNN oracle, normalization properties, BC
against synthetic regression targets and a finite-difference gradient oracle."""

import math

import numpy as np
import pytest

from dexhand import mlp
from dexhand.demos import DemoSet, Demonstration, Transition
from dexhand.envs import ObjectPose
from dexhand.errors import InvalidInputError
from dexhand.imitation import (
    BcConfig,
    bc_action,
    bc_train,
    build_index,
    load_index,
    load_policy,
    nn_action,
    save_index,
    save_policy,
)


def synthetic_demoset(obs, acts, task="rotating"):
    rows = tuple(
        Transition(
            timestamp=0.2 * (i + 1),
            observation=np.asarray(o, dtype=float),
            action=np.asarray(a, dtype=float),
            object_pose=ObjectPose(position=np.zeros(3), orientation=np.array([1.0, 0, 0, 0])),
        )
        for i, (o, a) in enumerate(zip(obs, acts))
    )
    demo = Demonstration(task=task, transitions=rows)
    return DemoSet(task=task, demonstrations=(demo,), filter_applied=True)


def random_demoset(rng, n):
    obs = rng.normal(0.0, 1.0, (n, 15))
    acts = rng.normal(0.0, 0.05, (n, 12))
    return synthetic_demoset(obs, acts), obs, acts


def brute_force_knn(points, actions, mean, std, k, bandwidth, query):
    """Independent oracle: per-row loop distances, sorted (distance, id)."""
    zq = [(query[j] - mean[j]) / std[j] for j in range(len(query))]
    dists = []
    for i in range(len(points)):
        s = 0.0
        for j in range(len(query)):
            zj = (points[i][j] - mean[j]) / std[j]
            s += (zj - zq[j]) ** 2
        dists.append((math.sqrt(s), i))
    dists.sort()
    chosen = [i for _, i in dists[:k]]
    d = np.array([dists[r][0] for r in range(k)])
    w = np.exp(-(d - d[0]) / bandwidth)
    return chosen, (w @ actions[chosen]) / w.sum()


def test_build_index_counts_and_normalization():
    rng = np.random.default_rng(0)
    ds, obs, acts = random_demoset(rng, 100)
    big = DemoSet(task=ds.task, demonstrations=ds.demonstrations * 30, filter_applied=True)
    idx = build_index(big, k=5)
    assert idx.points.shape[0] == 3000
    z = idx.normalized
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-9)


def test_build_index_k_too_large():
    rng = np.random.default_rng(1)
    ds, _, _ = random_demoset(rng, 4)
    with pytest.raises(InvalidInputError):
        build_index(ds, k=5)


def test_nn_exact_match_k1():
    rng = np.random.default_rng(2)
    ds, obs, acts = random_demoset(rng, 50)
    idx = build_index(ds, k=1)
    np.testing.assert_array_equal(nn_action(idx, obs[17]), acts[17])


def test_nn_uniform_limit_is_mean():
    rng = np.random.default_rng(3)
    ds, obs, acts = random_demoset(rng, 40)
    idx = build_index(ds, k=40, bandwidth=1e12)
    out = nn_action(idx, rng.normal(0, 1, 15))
    np.testing.assert_allclose(out, acts.mean(axis=0), atol=1e-9)


def test_nn_matches_brute_force_oracle():
    # neighbor selection must agree exactly with the scan oracle; the weighted
    # combination is compared at 1e-12 because numpy's SIMD reductions order
    # float additions differently than the oracle's scalar loop
    rng = np.random.default_rng(4)
    ds, obs, acts = random_demoset(rng, 300)
    idx = build_index(ds, k=5, bandwidth=0.1)
    for _ in range(50):
        q = rng.normal(0.0, 1.0, 15)
        chosen, expected = brute_force_knn(
            idx.points, idx.actions, idx.mean, idx.std, idx.k, idx.bandwidth, q
        )
        z = (q - idx.mean) / idx.std
        d = np.sqrt(np.sum((idx.normalized - z) ** 2, axis=1))
        impl_ids = list(np.argsort(d, kind="stable")[: idx.k])
        assert impl_ids == chosen
        got = nn_action(idx, q)
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_nn_scale_invariance_of_neighbors():
    rng = np.random.default_rng(5)
    obs = rng.normal(0.0, 1.0, (100, 15))
    acts = rng.normal(0.0, 1.0, (100, 12))
    q = rng.normal(0.0, 1.0, 15)
    idx = build_index(synthetic_demoset(obs, acts), k=7)
    base = nn_action(idx, q)
    scaled_obs = obs.copy()
    scaled_obs[:, 3] *= 50.0
    q2 = q.copy()
    q2[3] *= 50.0
    idx2 = build_index(synthetic_demoset(scaled_obs, acts), k=7)
    np.testing.assert_allclose(nn_action(idx2, q2), base, atol=1e-9)


def test_nn_output_in_convex_hull():
    rng = np.random.default_rng(6)
    ds, obs, acts = random_demoset(rng, 60)
    idx = build_index(ds, k=6)
    for _ in range(30):
        out = nn_action(idx, rng.normal(0, 1, 15))
        assert np.all(out >= acts.min(axis=0) - 1e-12)
        assert np.all(out <= acts.max(axis=0) + 1e-12)


def test_index_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    ds, _, _ = random_demoset(rng, 30)
    idx = build_index(ds, k=3, bandwidth=0.2)
    path = tmp_path / "index.json"
    save_index(idx, path)
    loaded = load_index(path)
    np.testing.assert_array_equal(loaded.points, idx.points)
    np.testing.assert_array_equal(loaded.actions, idx.actions)
    assert loaded.k == idx.k and loaded.bandwidth == idx.bandwidth
    q = rng.normal(0, 1, 15)
    np.testing.assert_array_equal(nn_action(loaded, q), nn_action(idx, q))


# ---------------------------------------------------------------------------
# Behavior cloning


def test_bc_memorizes_single_pair():
    rng = np.random.default_rng(8)
    o = rng.normal(0, 1, 15)
    a = rng.normal(0, 0.05, 12)
    ds = synthetic_demoset(np.tile(o, (8, 1)), np.tile(a, (8, 1)))
    res = bc_train(ds, BcConfig(epochs=200, lr=0.01), seed=0)
    assert res.final_loss < 1e-6
    np.testing.assert_allclose(bc_action(res.policy, o), a, atol=1e-3)


def test_bc_fits_linear_map():
    # linear targets at fingertip scale (actions are meters, std ~5 cm)
    rng = np.random.default_rng(9)
    amat = rng.normal(0.0, 0.05, (15, 12))
    obs = rng.normal(0.0, 1.0, (400, 15))
    acts = obs @ amat
    ds = synthetic_demoset(obs, acts)
    res = bc_train(ds, BcConfig(epochs=1000), seed=1)
    assert res.final_loss < 1e-4


def test_bc_deterministic():
    rng = np.random.default_rng(10)
    ds, _, _ = random_demoset(rng, 60)
    r1 = bc_train(ds, BcConfig(epochs=20), seed=5)
    r2 = bc_train(ds, BcConfig(epochs=20), seed=5)
    assert r1.final_loss == r2.final_loss
    for (w1, b1), (w2, b2) in zip(r1.policy.params, r2.policy.params):
        np.testing.assert_array_equal(w1, w2)
        np.testing.assert_array_equal(b1, b2)


def test_bc_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    sizes = (3, 2, 2)
    params = mlp.init_params(sizes, rng)
    x = rng.normal(0, 1, (5, 3))
    y = rng.normal(0, 1, (5, 2))
    _, grads = mlp.mse_loss_and_grads(params, x, y)
    flat = mlp.flatten(params)
    analytic = mlp.flatten(grads)
    h = 1e-6
    fd = np.empty_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        dn = flat.copy()
        up[i] += h
        dn[i] -= h
        lu, _ = mlp.mse_loss_and_grads(mlp.unflatten_like(params, up), x, y)
        ld, _ = mlp.mse_loss_and_grads(mlp.unflatten_like(params, dn), x, y)
        fd[i] = (lu - ld) / (2 * h)
    rel = np.linalg.norm(analytic - fd) / (np.linalg.norm(analytic) + np.linalg.norm(fd))
    assert rel < 1e-5


def test_bc_output_clamped_to_workspace():
    from dexhand.hand_model import load_hand_model
    from dexhand.imitation import MlpPolicy

    model = load_hand_model()
    sizes = (15, 4, 12)
    rng = np.random.default_rng(12)
    params = mlp.init_params(sizes, rng)
    # zero weights, bias far outside every box
    params = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    params[-1] = (params[-1][0], np.full(12, 10.0))
    pol = MlpPolicy(sizes=sizes, params=params, input_center=np.zeros(15), input_scale=np.ones(15), log_std=np.zeros(12))
    out = bc_action(pol, np.zeros(15), model=model)
    np.testing.assert_array_equal(out.reshape(4, 3), model.packed().box_hi)


def test_bc_zero_weights_returns_bias():
    from dexhand.imitation import MlpPolicy

    sizes = (15, 4, 12)
    params = [(np.zeros((15, 4)), np.zeros(4)), (np.zeros((4, 12)), np.arange(12.0))]
    pol = MlpPolicy(sizes=sizes, params=params, input_center=np.zeros(15), input_scale=np.ones(15), log_std=np.zeros(12))
    np.testing.assert_array_equal(bc_action(pol, np.ones(15)), np.arange(12.0))


def test_policy_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    ds, _, _ = random_demoset(rng, 40)
    res = bc_train(ds, BcConfig(epochs=5), seed=2)
    path = tmp_path / "policy.json"
    save_policy(res.policy, path)
    loaded = load_policy(path)
    q = rng.normal(0, 1, 15)
    np.testing.assert_array_equal(loaded.action_mean(q), res.policy.action_mean(q))
    np.testing.assert_array_equal(loaded.log_std, res.policy.log_std)
