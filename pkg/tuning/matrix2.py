"""Matrix 2: hardened rotating, 10 seeds x 3 algos + spinning ppo."""
import json, math, time
import numpy as np
from dexhand.demos import scripted_demoset, filter_demoset
from dexhand.envs import make_env
from dexhand.rl import TrainConfig, DecaySchedule, PpoConfig, train, evaluate_policy

t0 = time.time()
out = {}
fds = filter_demoset(scripted_demoset("rotating", 30, seed=1000))
env_rot = make_env("rotating")
ft = PpoConfig(lr_policy=1e-4, kl_stop=0.015)
cfgs = {
 "ppo": TrainConfig(iterations=40, steps_per_iter=1500),
 "bcrl": TrainConfig(iterations=40, steps_per_iter=1500, log_std_init=math.log(0.015), ppo=ft),
 "dapg": TrainConfig(iterations=40, steps_per_iter=1500, log_std_init=math.log(0.015), ppo=ft,
                     schedule=DecaySchedule(lam0=1.0, lam1=0.99)),
}
for algo in ("ppo", "bcrl", "dapg"):
    rates = []
    for seed in range(10):
        res = train(algo, "rotating", None if algo == "ppo" else fds, cfgs[algo], seed=seed)
        rate, _ = evaluate_policy(env_rot, lambda o: res.policy.action_mean(o), 10)
        rates.append(rate)
        print(f"rotating {algo} seed {seed}: {rate:.2f} (best it {res.best_iteration}) [{time.time()-t0:.0f}s]", flush=True)
    out[f"rotating/{algo}"] = rates
    print(f"== rotating/{algo} mean {np.mean(rates):.3f}", flush=True)

env_spin = make_env("spinning")
rates = []
for seed in range(10):
    res = train("ppo", "spinning", None, TrainConfig(iterations=30, steps_per_iter=1500), seed=seed)
    rate, _ = evaluate_policy(env_spin, lambda o: res.policy.action_mean(o), 10)
    rates.append(rate)
    print(f"spinning ppo seed {seed}: {rate:.2f} [{time.time()-t0:.0f}s]", flush=True)
out["spinning/ppo"] = rates
print(f"== spinning/ppo mean {np.mean(rates):.3f}", flush=True)
print(json.dumps(out))
