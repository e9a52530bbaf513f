"""State-based imitation: kernel-weighted nearest neighbors and behavior
cloning over demonstration sets.

Both learners share per-dimension observation normalization computed from the
training data and stored with the artifact, so inference always matches
training. Neighbor search is an exact linear scan: a few thousand rows makes
anything fancier pointless, and exactness keeps it deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mlp
from .artifacts import decode_array, encode_array, load_artifact, save_artifact
from .demos import DemoSet
from .errors import InvalidInputError, TrainingFailureError

DEFAULT_K = 5
DEFAULT_BANDWIDTH = 0.1


def demoset_arrays(demoset: DemoSet):
    """Flatten every transition into (observations, actions) training rows."""
    obs = []
    act = []
    for demo in demoset.demonstrations:
        for tr in demo.transitions:
            obs.append(tr.observation)
            act.append(tr.action)
    if not obs:
        raise InvalidInputError("demonstration set has no transitions")
    return np.array(obs, dtype=float), np.array(act, dtype=float)


def _normalization(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # dims that are constant up to float noise pass through unscaled
    std = np.where(std > 1e-8, std, 1.0)
    return mean, std


@dataclass(frozen=True)
class NeighborIndex:
    """Exact kNN / locally-weighted-regression lookup table."""

    points: np.ndarray  # (N, 15) raw observations
    actions: np.ndarray  # (N, 12)
    mean: np.ndarray  # (15,)
    std: np.ndarray  # (15,)
    k: int
    bandwidth: float

    @property
    def normalized(self) -> np.ndarray:
        return (self.points - self.mean) / self.std


def build_index(demoset: DemoSet, k: int = DEFAULT_K, bandwidth: float = DEFAULT_BANDWIDTH) -> NeighborIndex:
    if not demoset.demonstrations:
        raise InvalidInputError("cannot build an index from an empty demonstration set")
    obs, act = demoset_arrays(demoset)
    n = obs.shape[0]
    if not 1 <= k <= n:
        raise InvalidInputError(f"k={k} must satisfy 1 <= k <= N={n}")
    if bandwidth <= 0.0:
        raise InvalidInputError("bandwidth must be positive")
    mean, std = _normalization(obs)
    return NeighborIndex(points=obs, actions=act, mean=mean, std=std, k=int(k), bandwidth=float(bandwidth))


def nn_action(index: NeighborIndex, obs) -> np.ndarray:
    """Kernel-weighted average of the k nearest stored actions.

    Distances are Euclidean in normalized observation space; weights are
    exp(-d / bandwidth). Ties break toward the lowest row id. Shifting all
    distances by the minimum before exponentiation leaves the weighted mean
    unchanged and avoids underflow.
    """
    obs = np.asarray(obs, dtype=float).reshape(-1)
    if obs.shape != (index.points.shape[1],):
        raise InvalidInputError(f"expected {index.points.shape[1]}-dim observation")
    z = (obs - index.mean) / index.std
    d = np.sqrt(np.sum((index.normalized - z) ** 2, axis=1))
    order = np.argsort(d, kind="stable")[: index.k]
    dk = d[order]
    w = np.exp(-(dk - dk[0]) / index.bandwidth)
    return (w @ index.actions[order]) / w.sum()


# ---------------------------------------------------------------------------
# Behavior cloning


@dataclass(frozen=True)
class MlpPolicy:
    """Gaussian MLP policy head: raw observation -> raw 12-dim action mean.

    Input normalization is folded into the stored (center, scale); log_std is
    the state-independent Gaussian width used by the RL side and ignored for
    deterministic BC inference.
    """

    sizes: tuple
    params: list
    input_center: np.ndarray  # (15,)
    input_scale: np.ndarray  # (15,)
    log_std: np.ndarray  # (12,)

    def action_mean(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        z = (obs - self.input_center) / self.input_scale
        return mlp.predict(self.params, z)


@dataclass(frozen=True)
class BcConfig:
    hidden: tuple = (64, 64)
    epochs: int = 300
    lr: float = 0.02
    lr_end: float = 4e-4  # cosine-decayed floor
    momentum: float = 0.95
    batch_size: int = 128
    log_std_init: float = -4.0


@dataclass(frozen=True)
class BcResult:
    policy: MlpPolicy
    final_loss: float  # raw-unit MSE on the training set
    losses: np.ndarray  # per-epoch


def bc_train(demoset: DemoSet, cfg: BcConfig = BcConfig(), seed: int = 0) -> BcResult:
    """Supervised regression of demonstrated actions on observations.

    Actions are normalized internally for conditioning; the denormalization
    is folded back into the output layer, so the returned policy maps raw
    observations to raw actions. Deterministic per seed.
    """
    x_raw, y_raw = demoset_arrays(demoset)
    cx, sx = _normalization(x_raw)
    cy, sy = _normalization(y_raw)
    x = (x_raw - cx) / sx
    y = (y_raw - cy) / sy

    rng = np.random.default_rng(seed)
    sizes = (x.shape[1], *cfg.hidden, y.shape[1])
    params = mlp.init_params(sizes, rng)
    opt = mlp.SgdMomentum(params, lr=cfg.lr, momentum=cfg.momentum)

    n = x.shape[0]
    batch = min(cfg.batch_size, n)
    losses = []
    for epoch in range(cfg.epochs):
        # cosine decay squeezes out the last factor-of-ten of training error
        opt.lr = cfg.lr_end + 0.5 * (cfg.lr - cfg.lr_end) * (
            1.0 + np.cos(np.pi * epoch / cfg.epochs)
        )
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            _, grads = mlp.mse_loss_and_grads(params, x[idx], y[idx])
            params = opt.step(params, grads)
        pred = mlp.predict(params, x)
        loss = float(np.mean(((pred * sy + cy) - y_raw) ** 2))
        if not np.isfinite(loss):
            raise TrainingFailureError("behavior cloning diverged (non-finite loss)")
        losses.append(loss)

    # fold action denormalization into the output layer
    w, b = params[-1]
    params[-1] = (w * sy, b * sy + cy)
    policy = MlpPolicy(
        sizes=sizes,
        params=params,
        input_center=cx,
        input_scale=sx,
        log_std=np.full(y.shape[1], cfg.log_std_init),
    )
    return BcResult(policy=policy, final_loss=losses[-1], losses=np.array(losses))


def bc_action(policy: MlpPolicy, obs, model=None) -> np.ndarray:
    """Deterministic forward pass; clamped to the workspace when a model is given."""
    obs = np.asarray(obs, dtype=float).reshape(-1)
    if obs.shape[0] != policy.sizes[0]:
        raise InvalidInputError(f"expected {policy.sizes[0]}-dim observation")
    action = policy.action_mean(obs)
    if model is not None:
        action = model.clamp_targets(action.reshape(4, 3)).reshape(12)
    return action


# ---------------------------------------------------------------------------
# Artifacts

POLICY_KIND = "dexhand-policy"
POLICY_VERSION = 1
INDEX_KIND = "dexhand-nn-index"
INDEX_VERSION = 1


def save_policy(policy: MlpPolicy, path) -> None:
    payload = {
        "sizes": list(policy.sizes),
        "layers": [
            {"w": encode_array(w), "b": encode_array(b)} for w, b in policy.params
        ],
        "input_center": encode_array(policy.input_center),
        "input_scale": encode_array(policy.input_scale),
        "log_std": encode_array(policy.log_std),
    }
    save_artifact(path, POLICY_KIND, POLICY_VERSION, payload)


def load_policy(path) -> MlpPolicy:
    doc = load_artifact(path, POLICY_KIND, POLICY_VERSION)
    params = [(decode_array(l["w"]), decode_array(l["b"])) for l in doc["layers"]]
    return MlpPolicy(
        sizes=tuple(doc["sizes"]),
        params=params,
        input_center=decode_array(doc["input_center"]),
        input_scale=decode_array(doc["input_scale"]),
        log_std=decode_array(doc["log_std"]),
    )


def save_index(index: NeighborIndex, path) -> None:
    payload = {
        "points": encode_array(index.points),
        "actions": encode_array(index.actions),
        "mean": encode_array(index.mean),
        "std": encode_array(index.std),
        "k": index.k,
        "bandwidth": index.bandwidth,
    }
    save_artifact(path, INDEX_KIND, INDEX_VERSION, payload)


def load_index(path) -> NeighborIndex:
    doc = load_artifact(path, INDEX_KIND, INDEX_VERSION)
    return NeighborIndex(
        points=decode_array(doc["points"]),
        actions=decode_array(doc["actions"]),
        mean=decode_array(doc["mean"]),
        std=decode_array(doc["std"]),
        k=int(doc["k"]),
        bandwidth=float(doc["bandwidth"]),
    )
