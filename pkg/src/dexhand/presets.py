"""Tuned training presets loaded from the packaged YAML.

One place maps (algorithm, task) onto the recorded desk-scale budgets so the
command line, the comparison harness and the acceptance suite all train with
identical settings.
"""

from __future__ import annotations

import math
from importlib import resources

import yaml

from .imitation import BcConfig
from .rl import DecaySchedule, PpoConfig, TrainConfig


def load_presets() -> dict:
    text = resources.files("dexhand.assets").joinpath("training_presets.yaml").read_text()
    return yaml.safe_load(text)


def bc_config(presets: dict | None = None) -> BcConfig:
    p = (presets or load_presets())["imitation"]["bc"]
    return BcConfig(
        hidden=tuple(p["hidden"]),
        epochs=int(p["epochs"]),
        lr=float(p["lr"]),
        lr_end=float(p["lr_end"]),
        momentum=float(p["momentum"]),
        batch_size=int(p["batch_size"]),
    )


def inn_params(presets: dict | None = None) -> dict:
    p = (presets or load_presets())["imitation"]["inn"]
    return {"k": int(p["k"]), "bandwidth": float(p["bandwidth"])}


def train_config(algorithm: str, task: str, presets: dict | None = None, **overrides) -> TrainConfig:
    doc = presets or load_presets()
    common = doc["rl"]["common"]
    algo = doc["rl"][algorithm]
    iterations = int(algo["iterations"])
    if algorithm == "ppo" and task == "spinning":
        iterations = int(doc.get("spinning_ppo", {}).get("iterations", iterations))
    ppo = PpoConfig(
        clip=float(algo["clip"]),
        epochs=int(algo["epochs"]),
        minibatches=int(algo["minibatches"]),
        lr_policy=float(algo["lr_policy"]),
        lr_value=float(algo["lr_value"]),
        kl_stop=float(algo["kl_stop"]),
    )
    schedule = DecaySchedule(
        lam0=float(algo.get("lam0", 0.0)) if algorithm == "dapg" else 0.0,
        lam1=float(algo.get("lam1", 0.95)),
    )
    cfg = TrainConfig(
        iterations=iterations,
        steps_per_iter=int(common["steps_per_iter"]),
        gamma=float(common["gamma"]),
        gae_lam=float(common["gae_lam"]),
        hidden=tuple(common["hidden"]),
        value_hidden=tuple(common["hidden"]),
        log_std_init=math.log(float(algo["log_std_init_sigma"])),
        ppo=ppo,
        schedule=schedule,
        demo_batch=int(algo.get("demo_batch", 128)),
        bc=bc_config(doc),
        eval_episodes=int(common["eval_episodes"]),
        value_warmup_iters=int(common["value_warmup_iters"]),
    )
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg
