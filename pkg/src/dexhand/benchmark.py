"""Benchmark the compiled kernel backend against its pure-Python twin."""

from __future__ import annotations

import time

import numpy as np

from .hand_model import load_hand_model


def _backends():
    from .kernels import pybackend

    impls = [("python", pybackend)]
    try:
        from .kernels import _cykernels

        impls.append(("cython", _cykernels))
    except ImportError:
        pass
    return impls


def _time(fn, repeat: int) -> float:
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def run_benchmarks(steps: int = 2000) -> list:
    """Time the hot kernels on both backends; returns printed table rows."""
    model = load_hand_model()
    packed = model.packed()
    rng = np.random.default_rng(0)
    q = rng.uniform(packed.lo, packed.hi)
    qd = np.zeros(16)
    qdes = rng.uniform(packed.lo, packed.hi)
    targets = np.ascontiguousarray(rng.uniform(0.02, 0.12, (4, 3)))
    kp = np.full(16, 3.0)
    kd = np.full(16, 0.1)
    inertia = np.full(16, 1e-3)
    tips = np.empty((4, 3))
    tb = np.empty((4, 3))
    ta = np.empty((4, 3))
    qo = np.empty(16)
    resid = np.empty(4)
    iters = np.zeros(4, dtype=np.int64)

    cases = {}

    def add(name, impl, fn, repeat):
        cases.setdefault(name, {})[impl] = _time(fn, repeat)

    scale = max(1, steps // 2000)
    for impl_name, impl in _backends():
        fast = impl_name == "cython"
        r_fk = 2000 * scale if fast else 200
        r_ik = 200 * scale if fast else 20
        r_servo = 200 * scale if fast else 10
        r_sub = 200 * scale if fast else 10
        add("forward kinematics", impl_name,
            lambda impl=impl: impl.fk_tips(packed.base_pos, packed.base_rot, packed.axes, packed.lengths, q, tips),
            r_fk)
        add("gravity torque", impl_name,
            lambda impl=impl: impl.gravity_torque(packed.base_pos, packed.base_rot, packed.axes, packed.lengths, packed.masses, packed.gravity, q, qo),
            r_fk)
        add("ik solve (cold seed)", impl_name,
            lambda impl=impl: impl.ik_solve(packed.base_pos, packed.base_rot, packed.axes, packed.lengths, packed.lo, packed.hi, targets, 0.5 * (packed.lo + packed.hi), 1e-3, 1e-2, 50, 0.2, qo, resid, iters),
            r_ik)
        add("servo run (10 ticks)", impl_name,
            lambda impl=impl: impl.servo_run(packed.base_pos, packed.base_rot, packed.axes, packed.lengths, packed.masses, packed.gravity, packed.lo, packed.hi, q.copy(), qd.copy(), qdes, kp, kd, inertia, 0.5, 1 / 300.0, 10, True, True),
            r_servo)
        add("env substep (fused)", impl_name,
            lambda impl=impl: impl.env_substep(packed.base_pos, packed.base_rot, packed.axes, packed.lengths, packed.masses, packed.gravity, packed.lo, packed.hi, q.copy(), qd.copy(), qdes.copy(), targets, kp, kd, inertia, 0.5, 1 / 300.0, 10, True, True, 1e-3, 1e-2, 30, 0.2, True, tb, ta),
            r_sub)

    rows = []
    have_cython = any("cython" in v for v in cases.values())
    print(f"{'kernel':<24} {'python':>12} {'cython':>12} {'speedup':>9}")
    for name, timings in cases.items():
        py = timings["python"]
        cy = timings.get("cython")
        speed = f"{py / cy:8.1f}x" if cy else "      n/a"
        cy_s = f"{cy * 1e6:10.1f}us" if cy else "       n/a"
        print(f"{name:<24} {py * 1e6:10.1f}us {cy_s} {speed}")
        rows.append((name, py, cy))
    if not have_cython:
        print("(compiled backend unavailable; showing pure Python only)")
    return rows
