"""Pure-Python twin of the compiled kinematics/servo kernels.

Every function here mirrors the arithmetic of ``_cykernels.pyx`` operation for
operation (same order, same libm calls), so the two backends produce
bit-identical results. This module is the fallback selected at import time
when the extension is unavailable; it is slow but correct.

Packed model layout shared by all kernels:

* ``base_pos``  (4, 3)   finger base origins, wrist frame
* ``base_rot``  (4, 3, 3) finger base rotations, wrist frame
* ``axes``      (4, 4, 3) joint axes, unit vectors in the parent link frame
* ``lengths``   (4, 4)   link lengths, meters
* ``lo``, ``hi`` (16,)   joint limits, radians, finger-major order
* ``masses``    (4, 4)   link masses, kg
* ``gravity``   (3,)     gravity vector, m/s^2

Angles ``q`` are 16-vectors in finger-major order (finger 0 joints 0..3, ...).
"""

from __future__ import annotations

import math

BACKEND_NAME = "python"


def _chain(f, base_pos, base_rot, axes, lengths, q):
    """Sweep one finger chain.

    Returns (origins, axes_w, coms, tip): joint origins, world joint axes and
    link midpoints as 4x[3] lists, plus the fingertip position.
    """
    px = base_pos[f, 0]
    py = base_pos[f, 1]
    pz = base_pos[f, 2]
    r00 = base_rot[f, 0, 0]
    r01 = base_rot[f, 0, 1]
    r02 = base_rot[f, 0, 2]
    r10 = base_rot[f, 1, 0]
    r11 = base_rot[f, 1, 1]
    r12 = base_rot[f, 1, 2]
    r20 = base_rot[f, 2, 0]
    r21 = base_rot[f, 2, 1]
    r22 = base_rot[f, 2, 2]

    origins = [[0.0, 0.0, 0.0] for _ in range(4)]
    axes_w = [[0.0, 0.0, 0.0] for _ in range(4)]
    coms = [[0.0, 0.0, 0.0] for _ in range(4)]

    for i in range(4):
        ax = axes[f, i, 0]
        ay = axes[f, i, 1]
        az = axes[f, i, 2]
        # world-frame joint axis (axis is fixed in the parent link frame)
        awx = r00 * ax + r01 * ay + r02 * az
        awy = r10 * ax + r11 * ay + r12 * az
        awz = r20 * ax + r21 * ay + r22 * az
        axes_w[i][0] = awx
        axes_w[i][1] = awy
        axes_w[i][2] = awz
        origins[i][0] = px
        origins[i][1] = py
        origins[i][2] = pz

        angle = q[f * 4 + i]
        c = math.cos(angle)
        s = math.sin(angle)
        onemc = 1.0 - c
        m00 = c + ax * ax * onemc
        m01 = ax * ay * onemc - az * s
        m02 = ax * az * onemc + ay * s
        m10 = ay * ax * onemc + az * s
        m11 = c + ay * ay * onemc
        m12 = ay * az * onemc - ax * s
        m20 = az * ax * onemc - ay * s
        m21 = az * ay * onemc + ax * s
        m22 = c + az * az * onemc

        n00 = r00 * m00 + r01 * m10 + r02 * m20
        n01 = r00 * m01 + r01 * m11 + r02 * m21
        n02 = r00 * m02 + r01 * m12 + r02 * m22
        n10 = r10 * m00 + r11 * m10 + r12 * m20
        n11 = r10 * m01 + r11 * m11 + r12 * m21
        n12 = r10 * m02 + r11 * m12 + r12 * m22
        n20 = r20 * m00 + r21 * m10 + r22 * m20
        n21 = r20 * m01 + r21 * m11 + r22 * m21
        n22 = r20 * m02 + r21 * m12 + r22 * m22
        r00, r01, r02 = n00, n01, n02
        r10, r11, r12 = n10, n11, n12
        r20, r21, r22 = n20, n21, n22

        # link extends along the rotated frame's +x axis
        length = lengths[f, i]
        half = 0.5 * length
        coms[i][0] = px + half * r00
        coms[i][1] = py + half * r10
        coms[i][2] = pz + half * r20
        px = px + length * r00
        py = py + length * r10
        pz = pz + length * r20

    return origins, axes_w, coms, (px, py, pz)


def fk_tips(base_pos, base_rot, axes, lengths, q, out):
    """Fingertip positions for all four fingers; writes into out (4, 3)."""
    for f in range(4):
        _, _, _, tip = _chain(f, base_pos, base_rot, axes, lengths, q)
        out[f, 0] = tip[0]
        out[f, 1] = tip[1]
        out[f, 2] = tip[2]


def jacobian(base_pos, base_rot, axes, lengths, q, finger, out):
    """Fingertip position Jacobian of one finger; writes into out (3, 4)."""
    origins, axes_w, _, tip = _chain(finger, base_pos, base_rot, axes, lengths, q)
    for i in range(4):
        rx = tip[0] - origins[i][0]
        ry = tip[1] - origins[i][1]
        rz = tip[2] - origins[i][2]
        ax = axes_w[i][0]
        ay = axes_w[i][1]
        az = axes_w[i][2]
        out[0, i] = ay * rz - az * ry
        out[1, i] = az * rx - ax * rz
        out[2, i] = ax * ry - ay * rx


def gravity_torque(base_pos, base_rot, axes, lengths, masses, gravity, q, out):
    """Holding torque against gravity for all 16 joints; writes into out (16,)."""
    gx = gravity[0]
    gy = gravity[1]
    gz = gravity[2]
    for f in range(4):
        origins, axes_w, coms, _ = _chain(f, base_pos, base_rot, axes, lengths, q)
        for j in range(4):
            ax = axes_w[j][0]
            ay = axes_w[j][1]
            az = axes_w[j][2]
            ox = origins[j][0]
            oy = origins[j][1]
            oz = origins[j][2]
            acc = 0.0
            for l in range(j, 4):
                rx = coms[l][0] - ox
                ry = coms[l][1] - oy
                rz = coms[l][2] - oz
                cx = ay * rz - az * ry
                cy = az * rx - ax * rz
                cz = ax * ry - ay * rx
                acc += masses[f, l] * (cx * gx + cy * gy + cz * gz)
            out[f * 4 + j] = -acc


def _solve4(a, b):
    """Solve the SPD 4x4 system a x = b via Cholesky, in place on copies."""
    l = [[0.0] * 4 for _ in range(4)]
    for i in range(4):
        for j in range(i + 1):
            s = a[i][j]
            for k in range(j):
                s -= l[i][k] * l[j][k]
            if i == j:
                l[i][i] = math.sqrt(s)
            else:
                l[i][j] = s / l[j][j]
    y = [0.0] * 4
    for i in range(4):
        s = b[i]
        for k in range(i):
            s -= l[i][k] * y[k]
        y[i] = s / l[i][i]
    x = [0.0] * 4
    for i in range(3, -1, -1):
        s = y[i]
        for k in range(i + 1, 4):
            s -= l[k][i] * x[k]
        x[i] = s / l[i][i]
    return x


def ik_solve(
    base_pos,
    base_rot,
    axes,
    lengths,
    lo,
    hi,
    targets,
    q_seed,
    tol,
    lam,
    max_iters,
    step_clamp,
    q_out,
    resid_out,
    iters_out,
):
    """Damped-least-squares IK, solved independently per finger.

    Writes the joint solution into q_out (16,), the per-finger infinity-norm
    position residuals into resid_out (4,), and the iteration counts into
    iters_out (4,). Joints are clamped to limits every iterate; when a target
    is unreachable the best iterate found is returned.
    """
    lam2 = lam * lam
    for f in range(4):
        qf = [0.0] * 4
        for i in range(4):
            v = q_seed[f * 4 + i]
            if v < lo[f * 4 + i]:
                v = lo[f * 4 + i]
            elif v > hi[f * 4 + i]:
                v = hi[f * 4 + i]
            qf[i] = v
        tx = targets[f, 0]
        ty = targets[f, 1]
        tz = targets[f, 2]

        best = [qf[0], qf[1], qf[2], qf[3]]
        best_r = math.inf
        final_r = math.inf
        it_used = max_iters
        converged = False
        stall = 0
        q16 = [0.0] * 16
        for it in range(max_iters + 1):
            for i in range(4):
                q16[f * 4 + i] = qf[i]
            origins, axes_w, _, tip = _chain(f, base_pos, base_rot, axes, lengths, q16)
            ex = tx - tip[0]
            ey = ty - tip[1]
            ez = tz - tip[2]
            r = abs(ex)
            if abs(ey) > r:
                r = abs(ey)
            if abs(ez) > r:
                r = abs(ez)
            if r < best_r:
                if best_r - r > 1e-12:
                    stall = 0
                else:
                    stall += 1
                best_r = r
                best[0], best[1], best[2], best[3] = qf[0], qf[1], qf[2], qf[3]
            else:
                stall += 1
            if r <= tol:
                it_used = it
                converged = True
                final_r = r
                break
            if it == max_iters:
                break
            # unreachable target: stop once iterates no longer improve
            if stall >= 10:
                it_used = it
                break

            jac_cols = [[0.0] * 3 for _ in range(4)]
            for i in range(4):
                rx = tip[0] - origins[i][0]
                ry = tip[1] - origins[i][1]
                rz = tip[2] - origins[i][2]
                ax = axes_w[i][0]
                ay = axes_w[i][1]
                az = axes_w[i][2]
                jac_cols[i][0] = ay * rz - az * ry
                jac_cols[i][1] = az * rx - ax * rz
                jac_cols[i][2] = ax * ry - ay * rx

            a = [[0.0] * 4 for _ in range(4)]
            b = [0.0] * 4
            for i in range(4):
                for j in range(4):
                    a[i][j] = (
                        jac_cols[i][0] * jac_cols[j][0]
                        + jac_cols[i][1] * jac_cols[j][1]
                        + jac_cols[i][2] * jac_cols[j][2]
                    )
                a[i][i] += lam2
                b[i] = jac_cols[i][0] * ex + jac_cols[i][1] * ey + jac_cols[i][2] * ez

            dq = _solve4(a, b)
            m = abs(dq[0])
            for i in range(1, 4):
                if abs(dq[i]) > m:
                    m = abs(dq[i])
            if m > step_clamp:
                scale = step_clamp / m
                for i in range(4):
                    dq[i] *= scale
            for i in range(4):
                v = qf[i] + dq[i]
                if v < lo[f * 4 + i]:
                    v = lo[f * 4 + i]
                elif v > hi[f * 4 + i]:
                    v = hi[f * 4 + i]
                qf[i] = v

        if not converged:
            qf = best
            final_r = best_r
        for i in range(4):
            q_out[f * 4 + i] = qf[i]
        resid_out[f] = final_r
        iters_out[f] = it_used


def env_substep(
    base_pos,
    base_rot,
    axes,
    lengths,
    masses,
    gravity,
    lo,
    hi,
    q,
    qd,
    q_des,
    targets,
    kp,
    kd,
    inertia,
    torque_limit,
    dt,
    n_steps,
    use_gravity,
    gravity_comp,
    ik_tol,
    ik_damping,
    ik_max_iters,
    ik_step_clamp,
    ik_restart,
    tips_before,
    tips_after,
):
    """One target-rate substep fused into a single call.

    Records fingertips, re-solves IK toward targets seeded at the current
    pose (optionally restarting stuck fingers from the mid-limits pose),
    runs n_steps control ticks, and records fingertips again. Equivalent to
    fk_tips + ik_solve + servo_run + fk_tips; fused to keep the rollout hot
    path to one call per substep.
    """
    fk_tips(base_pos, base_rot, axes, lengths, q, tips_before)
    resid = [0.0] * 4
    iters = [0] * 4
    ik_solve(
        base_pos, base_rot, axes, lengths, lo, hi, targets, q,
        ik_tol, ik_damping, ik_max_iters, ik_step_clamp, q_des, resid, iters,
    )
    if ik_restart:
        worst = max(resid)
        threshold = ik_tol if ik_tol > 0.02 else 0.02
        if worst > threshold:
            mid = [0.5 * (lo[j] + hi[j]) for j in range(16)]
            q2 = [0.0] * 16
            r2 = [0.0] * 4
            i2 = [0] * 4
            ik_solve(
                base_pos, base_rot, axes, lengths, lo, hi, targets, mid,
                ik_tol, ik_damping, ik_max_iters, ik_step_clamp, q2, r2, i2,
            )
            for f in range(4):
                if r2[f] < resid[f]:
                    for i in range(4):
                        q_des[f * 4 + i] = q2[f * 4 + i]
                    resid[f] = r2[f]
    status = servo_run(
        base_pos, base_rot, axes, lengths, masses, gravity, lo, hi,
        q, qd, q_des, kp, kd, inertia, torque_limit, dt, n_steps,
        use_gravity, gravity_comp,
    )
    fk_tips(base_pos, base_rot, axes, lengths, q, tips_after)
    return status


def servo_run(
    base_pos,
    base_rot,
    axes,
    lengths,
    masses,
    gravity,
    lo,
    hi,
    q,
    qd,
    q_des,
    kp,
    kd,
    inertia,
    torque_limit,
    dt,
    n_steps,
    use_gravity,
    gravity_comp,
):
    """Run n_steps of the PD + gravity-compensation servo loop in place.

    Semi-implicit Euler on the decoupled per-joint plant
    ``inertia * qdd = tau_applied - tau_gravity_load``; joint limits enforced
    by clamping position and zeroing velocity at the limit. Returns 0 on
    success, 1 if a non-finite value appeared (loop halted).
    """
    tg = [0.0] * 16
    for _ in range(n_steps):
        if use_gravity:
            gravity_torque(base_pos, base_rot, axes, lengths, masses, gravity, q, tg)
        for j in range(16):
            tau = kp[j] * (q_des[j] - q[j]) - kd[j] * qd[j]
            if gravity_comp:
                tau += tg[j]
            if tau > torque_limit:
                tau = torque_limit
            elif tau < -torque_limit:
                tau = -torque_limit
            load = tg[j] if use_gravity else 0.0
            acc = (tau - load) / inertia[j]
            qd[j] = qd[j] + dt * acc
            q[j] = q[j] + dt * qd[j]
            if q[j] < lo[j]:
                q[j] = lo[j]
                qd[j] = 0.0
            elif q[j] > hi[j]:
                q[j] = hi[j]
                qd[j] = 0.0
    ok = True
    for j in range(16):
        if not (math.isfinite(q[j]) and math.isfinite(qd[j])):
            ok = False
            break
    return 0 if ok else 1
