"""On-policy training in the task environments: PPO, BC-initialized PPO
(bcrl), and PPO augmented with a decaying demonstration log-likelihood term
(dapg).

The augmented gradient is the sum of the clipped-surrogate policy gradient
over on-policy data and a behavior-cloning term over demonstration pairs
whose weight decays as lam0 * lam1**k * max(batch advantages); at lam0 = 0
the demonstration term vanishes and the update path is bit-identical to
plain PPO. All gradients are analytic (manual backprop) and are checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import mlp
from .demos import DemoSet
from .envs import TaskEnv, make_env
from .errors import ConfigError, TrainingFailureError
from .hand_model import forward_kinematics
from .imitation import BcConfig, MlpPolicy, bc_train, demoset_arrays

ALGORITHMS = ("ppo", "bcrl", "dapg")

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Gaussian policy over the mean MLP


def policy_theta(policy: MlpPolicy) -> np.ndarray:
    """Flat trainable parameter vector: MLP weights then log_std."""
    return np.concatenate([mlp.flatten(policy.params), policy.log_std])


def policy_with_theta(policy: MlpPolicy, theta: np.ndarray) -> MlpPolicy:
    n_mlp = mlp.flatten(policy.params).size
    params = mlp.unflatten_like(policy.params, theta[:n_mlp])
    return replace(policy, params=params, log_std=theta[n_mlp:].copy())


def _normalize_obs(policy: MlpPolicy, obs: np.ndarray) -> np.ndarray:
    return (obs - policy.input_center) / policy.input_scale


def log_probs(policy: MlpPolicy, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Log density of actions under the diagonal Gaussian policy."""
    mean = mlp.predict(policy.params, _normalize_obs(policy, obs))
    std = np.exp(policy.log_std)
    z = (actions - mean) / std
    return -0.5 * np.sum(z**2, axis=1) - np.sum(policy.log_std) - 0.5 * actions.shape[1] * LOG_2PI


def weighted_logp_grad(policy: MlpPolicy, obs: np.ndarray, actions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient of sum_i weights_i * log pi(a_i | s_i) wrt theta."""
    x = _normalize_obs(policy, obs)
    acts = mlp.forward(policy.params, x)
    mean = acts[-1]
    std = np.exp(policy.log_std)
    z = (actions - mean) / std
    w = weights[:, None]
    d_mean = w * z / std
    grads = mlp.backprop(policy.params, acts, d_mean)
    d_log_std = np.sum(w * (z**2 - 1.0), axis=0)
    return np.concatenate([mlp.flatten(grads), d_log_std])


def sample_actions(policy: MlpPolicy, obs: np.ndarray, rng: np.random.Generator) -> tuple:
    mean = mlp.predict(policy.params, _normalize_obs(policy, obs))
    std = np.exp(policy.log_std)
    noise = rng.standard_normal(mean.shape)
    actions = mean + std * noise
    return actions, mean


# ---------------------------------------------------------------------------
# Value function


@dataclass
class ValueFunction:
    params: list
    input_center: np.ndarray
    input_scale: np.ndarray

    def predict(self, obs: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(obs) - self.input_center) / self.input_scale
        return mlp.predict(self.params, z).reshape(-1)


def make_value_function(input_center, input_scale, hidden, rng) -> ValueFunction:
    sizes = (input_center.size, *hidden, 1)
    return ValueFunction(
        params=mlp.init_params(sizes, rng),
        input_center=np.asarray(input_center, dtype=float),
        input_scale=np.asarray(input_scale, dtype=float),
    )


# ---------------------------------------------------------------------------
# Rollouts and advantage estimation


@dataclass
class RolloutBatch:
    obs: np.ndarray  # (T, 15)
    actions: np.ndarray  # (T, 12) as sampled, before workspace clamping
    rewards: np.ndarray  # (T,)
    dones: np.ndarray  # (T,) episode terminated at this step
    logprobs: np.ndarray  # (T,) recorded before clamping
    values: np.ndarray  # (T,)
    advantages: np.ndarray  # (T,) normalized in-place by normalize_advantages
    returns: np.ndarray  # (T,)
    episode_returns: list = field(default_factory=list)
    episode_successes: list = field(default_factory=list)


def compute_gae(rewards, values, dones, last_value, gamma, lam):
    t_total = len(rewards)
    adv = np.zeros(t_total)
    last_gae = 0.0
    for t in range(t_total - 1, -1, -1):
        next_value = last_value if t == t_total - 1 else values[t + 1]
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last_gae = delta + gamma * lam * nonterminal * last_gae
        adv[t] = last_gae
    return adv


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    if std < 1e-12:
        return adv - adv.mean()
    return (adv - adv.mean()) / std


def collect_rollouts(env: TaskEnv, policy: MlpPolicy, value_fn: ValueFunction, n_steps: int, seed: int, gamma: float, lam: float) -> RolloutBatch:
    """Sample n_steps of on-policy experience; deterministic per seed.

    Actions are sampled from the Gaussian and clamped to the workspace before
    execution; log-probabilities are recorded for the pre-clamp sample.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    reset_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
    obs_list, act_list, rew_list, done_list, logp_list = [], [], [], [], []
    ep_returns, ep_successes = [], []
    obs = env.reset(int(reset_rng.integers(0, 2**63 - 1)))
    ep_ret = 0.0
    log_std_sum = float(np.sum(policy.log_std))
    n_act = policy.log_std.size
    for _ in range(n_steps):
        mean = mlp.predict(policy.params, _normalize_obs(policy, obs))
        noise = rng.standard_normal(n_act)
        a = mean + np.exp(policy.log_std) * noise
        # density of the pre-clamp sample, directly from the noise
        logp = float(-0.5 * np.sum(noise**2) - log_std_sum - 0.5 * n_act * LOG_2PI)
        executed = env.model.clamp_targets(a.reshape(4, 3)).reshape(12)
        next_obs, reward, success, done, _ = env.step(executed)
        obs_list.append(obs)
        act_list.append(a)
        rew_list.append(reward)
        done_list.append(done)
        logp_list.append(logp)
        ep_ret += reward
        if done:
            ep_returns.append(ep_ret)
            ep_successes.append(bool(success))
            ep_ret = 0.0
            obs = env.reset(int(reset_rng.integers(0, 2**63 - 1)))
        else:
            obs = next_obs
    obs_arr = np.array(obs_list)
    values = value_fn.predict(obs_arr)
    last_value = 0.0 if done_list[-1] else float(value_fn.predict(obs[None, :])[0])
    rewards = np.array(rew_list)
    dones = np.array(done_list, dtype=bool)
    adv = compute_gae(rewards, values, dones, last_value, gamma, lam)
    returns = adv + values
    return RolloutBatch(
        obs=obs_arr,
        actions=np.array(act_list),
        rewards=rewards,
        dones=dones,
        logprobs=np.array(logp_list),
        values=values,
        advantages=adv,
        returns=returns,
        episode_returns=ep_returns,
        episode_successes=ep_successes,
    )


# ---------------------------------------------------------------------------
# PPO update and the demonstration-augmented gradient


@dataclass(frozen=True)
class DecaySchedule:
    """Demonstration-term weight lam0 * lam1**k * max(batch advantage)."""

    lam0: float = 0.1
    lam1: float = 0.95

    def __post_init__(self):
        if self.lam0 < 0:
            raise ConfigError("lam0 must be nonnegative")
        if not 0.0 < self.lam1 <= 1.0:
            raise ConfigError("lam1 must lie in (0, 1]")

    def weight(self, iteration: int, max_advantage: float) -> float:
        return self.lam0 * self.lam1**iteration * max_advantage


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    epochs: int = 6
    minibatches: int = 4
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    value_epochs: int = 6
    kl_stop: float = 0.03
    min_log_std: float = -5.0


def surrogate_and_grad(policy: MlpPolicy, obs, actions, advantages, old_logp, clip):
    """Clipped-surrogate objective value and its analytic gradient wrt theta."""
    x = _normalize_obs(policy, obs)
    acts = mlp.forward(policy.params, x)
    mean = acts[-1]
    std = np.exp(policy.log_std)
    z = (actions - mean) / std
    logp = -0.5 * np.sum(z**2, axis=1) - np.sum(policy.log_std) - 0.5 * actions.shape[1] * LOG_2PI
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    objective = float(np.mean(np.minimum(ratio * advantages, clipped * advantages)))
    # gradient flows only where the unclipped branch is active
    active = ratio * advantages <= clipped * advantages
    w = np.where(active, ratio * advantages, 0.0) / len(advantages)
    d_mean = (w[:, None] * z) / std
    grads = mlp.backprop(policy.params, acts, d_mean)
    d_log_std = np.sum(w[:, None] * (z**2 - 1.0), axis=0)
    grad = np.concatenate([mlp.flatten(grads), d_log_std])
    approx_kl = float(np.mean(old_logp - logp))
    return objective, grad, approx_kl


def demo_gradient(policy: MlpPolicy, demo_obs, demo_actions, weight: float) -> np.ndarray:
    """Gradient of the weighted demonstration log-likelihood term."""
    n = len(demo_obs)
    w = np.full(n, weight / n)
    return weighted_logp_grad(policy, demo_obs, demo_actions, w)


def dapg_gradient(policy: MlpPolicy, batch: RolloutBatch, demo_obs, demo_actions, schedule: DecaySchedule, iteration: int, clip: float = 0.2):
    """Augmented gradient: clipped-surrogate term plus the decaying
    demonstration term. Returns (gradient, demo_weight)."""
    _, g_policy, _ = surrogate_and_grad(
        policy, batch.obs, batch.actions, batch.advantages, batch.logprobs, clip
    )
    if schedule.lam0 == 0.0:
        return g_policy, 0.0
    if demo_obs is None or len(demo_obs) == 0:
        raise ConfigError("demonstration term requested but no demonstrations given")
    w = schedule.weight(iteration, float(np.max(batch.advantages)))
    return g_policy + demo_gradient(policy, demo_obs, demo_actions, w), w


# ---------------------------------------------------------------------------
# Training loop


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 40
    steps_per_iter: int = 1500
    gamma: float = 0.995
    gae_lam: float = 0.97
    hidden: tuple = (64, 64)
    value_hidden: tuple = (64, 64)
    log_std_init: float = math.log(0.02)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    schedule: DecaySchedule = field(default_factory=DecaySchedule)
    demo_batch: int = 128
    bc: BcConfig = field(default_factory=BcConfig)
    eval_episodes: int = 10
    time_limit: float | None = None  # override for cheaper training episodes
    # iterations of value-only fitting before policy updates start; protects
    # a good initialization from the advantages of an untrained critic
    value_warmup_iters: int = 3


@dataclass
class CurveRow:
    iteration: int
    env_steps: int
    mean_return: float
    success_rate: float

    def as_dict(self):
        return {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "mean_return": self.mean_return,
            "success_rate": self.success_rate,
        }


@dataclass
class TrainResult:
    policy: MlpPolicy  # best checkpoint by evaluation success (ties: earliest)
    value_fn: ValueFunction
    curve: list  # of CurveRow
    best_iteration: int = 0
    final_policy: MlpPolicy | None = None


def _task_input_stats(env: TaskEnv):
    """Fixed observation scaling from workspace geometry (no running stats,
    so PPO-from-scratch stays deterministic and comparable across runs)."""
    boxes = env.model.workspace_boxes()
    lo = boxes[:, 0].reshape(12)
    hi = boxes[:, 1].reshape(12)
    center = np.empty(15)
    scale = np.empty(15)
    center[:12] = 0.5 * (lo + hi)
    scale[:12] = 0.5 * (hi - lo)
    obj = env.reset(0)[12:]
    center[12:] = obj
    scale[12:] = 0.1
    return center, scale


def _initial_action_bias(env: TaskEnv) -> np.ndarray:
    """Mean-action head starts at the reset fingertip pose ("stay put")."""
    env.reset(0)
    return forward_kinematics(env.model, env.state.servo.q.angles).reshape(12)


def evaluate_policy(env: TaskEnv, action_fn, n_episodes: int, seed_base: int = 10_000):
    """Deterministic evaluation episodes; returns (success_rate, outcomes)."""
    outcomes = []
    for ep in range(n_episodes):
        obs = env.reset(seed_base + ep)
        done = False
        success = False
        total = 0.0
        while not done:
            act = np.asarray(action_fn(obs), dtype=float).reshape(12)
            act = env.model.clamp_targets(act.reshape(4, 3)).reshape(12)
            obs, reward, success, done, _ = env.step(act)
            total += reward
        outcomes.append({"seed": seed_base + ep, "success": bool(success), "return": total})
    rate = sum(o["success"] for o in outcomes) / max(1, len(outcomes))
    return rate, outcomes


def ppo_update(policy: MlpPolicy, value_fn: ValueFunction, batch: RolloutBatch, cfg: PpoConfig, opt_policy: mlp.Adam, opt_value: mlp.Adam, rng: np.random.Generator, demo_term=None, policy_frozen: bool = False):
    """Epochs of minibatch updates on the clipped surrogate (plus an optional
    additive demonstration gradient) and value regression. Returns stats."""
    n = len(batch.obs)
    theta = policy_theta(policy)
    stats = {"kl": 0.0, "surrogate": 0.0, "value_loss": 0.0, "skipped": False}
    stop = policy_frozen
    for _ in range(0 if policy_frozen else cfg.epochs):
        perm = rng.permutation(n)
        for mb in np.array_split(perm, cfg.minibatches):
            obj, grad, kl = surrogate_and_grad(
                policy,
                batch.obs[mb],
                batch.actions[mb],
                batch.advantages[mb],
                batch.logprobs[mb],
                cfg.clip,
            )
            if demo_term is not None:
                grad = grad + demo_term(policy)
            if not np.all(np.isfinite(grad)):
                stats["skipped"] = True
                return policy, stats
            theta = opt_policy.step(theta, -grad)  # ascend the surrogate
            policy = policy_with_theta(policy, theta)
            if np.any(policy.log_std < cfg.min_log_std):
                clipped_std = np.maximum(policy.log_std, cfg.min_log_std)
                policy = replace(policy, log_std=clipped_std)
                theta = policy_theta(policy)
            stats["kl"] = kl
            stats["surrogate"] = obj
            if kl > cfg.kl_stop:
                stop = True
                break
        if stop:
            break
    # value regression toward empirical returns
    vtheta = mlp.flatten(value_fn.params)
    x = (batch.obs - value_fn.input_center) / value_fn.input_scale
    for _ in range(cfg.value_epochs):
        perm = rng.permutation(n)
        for mb in np.array_split(perm, cfg.minibatches):
            loss, grads = mlp.mse_loss_and_grads(value_fn.params, x[mb], batch.returns[mb, None])
            vtheta = opt_value.step(vtheta, mlp.flatten(grads))
            value_fn.params = mlp.unflatten_like(value_fn.params, vtheta)
            stats["value_loss"] = loss
    return policy, stats


def train(algorithm: str, task: str, demoset: DemoSet | None, cfg: TrainConfig, seed: int, model=None, eval_env: TaskEnv | None = None, progress=None):
    """Train one policy; returns TrainResult with the per-iteration curve.

    ppo must not consume demonstrations; bcrl and dapg require them (bcrl
    only for initialization, dapg also for the augmented gradient).
    """
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; valid: {', '.join(ALGORITHMS)}")
    if algorithm == "ppo" and demoset is not None:
        raise ConfigError("ppo is demonstration-free; do not pass a demoset")
    if algorithm in ("bcrl", "dapg") and (demoset is None or not demoset.demonstrations):
        raise ConfigError(f"{algorithm} requires a non-empty demonstration set")

    overrides = {}
    if cfg.time_limit is not None:
        overrides["time_limit"] = cfg.time_limit
    env = make_env(task, model=model, **overrides)
    if eval_env is None:
        # checkpoint-selection proxy: same success metric at a 30 s limit;
        # the returned policy is re-scored at the task's full limit by the
        # evaluation command
        eval_env = make_env(task, model=model, time_limit=30.0)

    ss = np.random.SeedSequence(entropy=seed)
    init_rng = np.random.default_rng(ss.spawn(1)[0])
    update_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(10,)))
    demo_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))

    center, scale = _task_input_stats(env)
    if algorithm in ("bcrl", "dapg"):
        # the cloned initialization is a deterministic function of the
        # demonstration set; run seeds only vary the RL phase
        bc_result = bc_train(demoset, cfg.bc, seed=0)
        policy = replace(bc_result.policy, log_std=np.full(12, cfg.log_std_init))
    else:
        sizes = (15, *cfg.hidden, 12)
        params = mlp.init_params(sizes, init_rng, out_bias=_initial_action_bias(env))
        policy = MlpPolicy(
            sizes=sizes,
            params=params,
            input_center=center,
            input_scale=scale,
            log_std=np.full(12, cfg.log_std_init),
        )
    value_fn = make_value_function(center, scale, cfg.value_hidden, init_rng)

    demo_obs = demo_actions = None
    if algorithm == "dapg" and cfg.schedule.lam0 > 0.0:
        demo_obs, demo_actions = demoset_arrays(demoset)

    opt_policy = mlp.Adam(policy_theta(policy).size, lr=cfg.ppo.lr_policy)
    opt_value = mlp.Adam(mlp.flatten(value_fn.params).size, lr=cfg.ppo.lr_value)

    curve = []
    env_steps = 0
    best_rate = -1.0
    best_policy = policy
    best_it = 0
    for it in range(cfg.iterations):
        batch = collect_rollouts(
            env, policy, value_fn, cfg.steps_per_iter, seed=seed * 100_003 + it, gamma=cfg.gamma, lam=cfg.gae_lam
        )
        env_steps += cfg.steps_per_iter
        batch.advantages = normalize_advantages(batch.advantages)

        demo_term = None
        if algorithm == "dapg" and cfg.schedule.lam0 > 0.0:
            w = cfg.schedule.weight(it, float(np.max(batch.advantages)))
            take = min(cfg.demo_batch, len(demo_obs))
            idx = demo_rng.choice(len(demo_obs), size=take, replace=False)
            d_obs, d_act = demo_obs[idx], demo_actions[idx]
            demo_term = lambda pol: demo_gradient(pol, d_obs, d_act, w)  # noqa: E731

        policy, stats = ppo_update(
            policy,
            value_fn,
            batch,
            cfg.ppo,
            opt_policy,
            opt_value,
            update_rng,
            demo_term,
            policy_frozen=it < cfg.value_warmup_iters,
        )

        rate, _ = evaluate_policy(
            eval_env, lambda o: policy.action_mean(o), cfg.eval_episodes
        )
        mean_ret = float(np.mean(batch.episode_returns)) if batch.episode_returns else float(np.sum(batch.rewards))
        row = CurveRow(iteration=it, env_steps=env_steps, mean_return=mean_ret, success_rate=rate)
        curve.append(row)
        if rate > best_rate:
            best_rate = rate
            best_policy = policy  # updates produce fresh objects; safe to alias
            best_it = it
        if progress is not None:
            progress(row, stats)
        if not np.all(np.isfinite(policy_theta(policy))):
            raise TrainingFailureError("policy parameters became non-finite")
    return TrainResult(
        policy=best_policy,
        value_fn=value_fn,
        curve=curve,
        best_iteration=best_it,
        final_policy=policy,
    )
