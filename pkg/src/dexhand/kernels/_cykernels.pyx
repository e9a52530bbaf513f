# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kinematics/servo kernels.

Twin of ``pybackend.py``: identical arithmetic in identical order, so results
are bit-identical across backends. See pybackend for the packed model layout.
"""

from libc.math cimport cos, sin, sqrt, fabs, isfinite, INFINITY

import numpy as np

BACKEND_NAME = "cython"


cdef void _chain(int f,
                 const double[:, ::1] base_pos,
                 const double[:, :, ::1] base_rot,
                 const double[:, :, ::1] axes,
                 const double[:, ::1] lengths,
                 const double[::1] q,
                 double origins[4][3],
                 double axes_w[4][3],
                 double coms[4][3],
                 double tip[3]) noexcept nogil:
    cdef double px = base_pos[f, 0]
    cdef double py = base_pos[f, 1]
    cdef double pz = base_pos[f, 2]
    cdef double r00 = base_rot[f, 0, 0]
    cdef double r01 = base_rot[f, 0, 1]
    cdef double r02 = base_rot[f, 0, 2]
    cdef double r10 = base_rot[f, 1, 0]
    cdef double r11 = base_rot[f, 1, 1]
    cdef double r12 = base_rot[f, 1, 2]
    cdef double r20 = base_rot[f, 2, 0]
    cdef double r21 = base_rot[f, 2, 1]
    cdef double r22 = base_rot[f, 2, 2]
    cdef int i
    cdef double ax, ay, az, angle, c, s, onemc, length, half
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22
    cdef double n00, n01, n02, n10, n11, n12, n20, n21, n22

    for i in range(4):
        ax = axes[f, i, 0]
        ay = axes[f, i, 1]
        az = axes[f, i, 2]
        axes_w[i][0] = r00 * ax + r01 * ay + r02 * az
        axes_w[i][1] = r10 * ax + r11 * ay + r12 * az
        axes_w[i][2] = r20 * ax + r21 * ay + r22 * az
        origins[i][0] = px
        origins[i][1] = py
        origins[i][2] = pz

        angle = q[f * 4 + i]
        c = cos(angle)
        s = sin(angle)
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
        r00 = n00; r01 = n01; r02 = n02
        r10 = n10; r11 = n11; r12 = n12
        r20 = n20; r21 = n21; r22 = n22

        length = lengths[f, i]
        half = 0.5 * length
        coms[i][0] = px + half * r00
        coms[i][1] = py + half * r10
        coms[i][2] = pz + half * r20
        px = px + length * r00
        py = py + length * r10
        pz = pz + length * r20

    tip[0] = px
    tip[1] = py
    tip[2] = pz


def fk_tips(const double[:, ::1] base_pos,
            const double[:, :, ::1] base_rot,
            const double[:, :, ::1] axes,
            const double[:, ::1] lengths,
            const double[::1] q,
            double[:, ::1] out):
    """Fingertip positions for all four fingers; writes into out (4, 3)."""
    cdef double origins[4][3]
    cdef double axes_w[4][3]
    cdef double coms[4][3]
    cdef double tip[3]
    cdef int f
    for f in range(4):
        _chain(f, base_pos, base_rot, axes, lengths, q, origins, axes_w, coms, tip)
        out[f, 0] = tip[0]
        out[f, 1] = tip[1]
        out[f, 2] = tip[2]


def jacobian(const double[:, ::1] base_pos,
             const double[:, :, ::1] base_rot,
             const double[:, :, ::1] axes,
             const double[:, ::1] lengths,
             const double[::1] q,
             int finger,
             double[:, ::1] out):
    """Fingertip position Jacobian of one finger; writes into out (3, 4)."""
    cdef double origins[4][3]
    cdef double axes_w[4][3]
    cdef double coms[4][3]
    cdef double tip[3]
    cdef int i
    cdef double rx, ry, rz, ax, ay, az
    _chain(finger, base_pos, base_rot, axes, lengths, q, origins, axes_w, coms, tip)
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


cdef void _gravity_torque(const double[:, ::1] base_pos,
                          const double[:, :, ::1] base_rot,
                          const double[:, :, ::1] axes,
                          const double[:, ::1] lengths,
                          const double[:, ::1] masses,
                          const double[::1] gravity,
                          const double[::1] q,
                          double tg[16]) noexcept nogil:
    cdef double origins[4][3]
    cdef double axes_w[4][3]
    cdef double coms[4][3]
    cdef double tip[3]
    cdef double gx = gravity[0]
    cdef double gy = gravity[1]
    cdef double gz = gravity[2]
    cdef int f, j, l
    cdef double ax, ay, az, ox, oy, oz, rx, ry, rz, cx, cy, cz, acc
    for f in range(4):
        _chain(f, base_pos, base_rot, axes, lengths, q, origins, axes_w, coms, tip)
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
            tg[f * 4 + j] = -acc


def gravity_torque(const double[:, ::1] base_pos,
                   const double[:, :, ::1] base_rot,
                   const double[:, :, ::1] axes,
                   const double[:, ::1] lengths,
                   const double[:, ::1] masses,
                   const double[::1] gravity,
                   const double[::1] q,
                   double[::1] out):
    """Holding torque against gravity for all 16 joints; writes into out (16,)."""
    cdef double tg[16]
    cdef int j
    _gravity_torque(base_pos, base_rot, axes, lengths, masses, gravity, q, tg)
    for j in range(16):
        out[j] = tg[j]


cdef void _solve4(double a[4][4], double b[4], double x[4]) noexcept nogil:
    cdef double l[4][4]
    cdef double y[4]
    cdef int i, j, k
    cdef double s
    for i in range(4):
        for j in range(4):
            l[i][j] = 0.0
    for i in range(4):
        for j in range(i + 1):
            s = a[i][j]
            for k in range(j):
                s -= l[i][k] * l[j][k]
            if i == j:
                l[i][i] = sqrt(s)
            else:
                l[i][j] = s / l[j][j]
    for i in range(4):
        s = b[i]
        for k in range(i):
            s -= l[i][k] * y[k]
        y[i] = s / l[i][i]
    for i in range(3, -1, -1):
        s = y[i]
        for k in range(i + 1, 4):
            s -= l[k][i] * x[k]
        x[i] = s / l[i][i]


def ik_solve(const double[:, ::1] base_pos,
             const double[:, :, ::1] base_rot,
             const double[:, :, ::1] axes,
             const double[:, ::1] lengths,
             const double[::1] lo,
             const double[::1] hi,
             const double[:, ::1] targets,
             const double[::1] q_seed,
             double tol,
             double lam,
             int max_iters,
             double step_clamp,
             double[::1] q_out,
             double[::1] resid_out,
             long[::1] iters_out):
    """Damped-least-squares IK per finger; see pybackend.ik_solve."""
    cdef double origins[4][3]
    cdef double axes_w[4][3]
    cdef double coms[4][3]
    cdef double tip[3]
    cdef double qf[4]
    cdef double best[4]
    cdef double q16[16]
    cdef double jac_cols[4][3]
    cdef double a[4][4]
    cdef double b[4]
    cdef double dq[4]
    cdef double lam2 = lam * lam
    cdef int f, i, j, it, it_used, stall
    cdef double v, tx, ty, tz, ex, ey, ez, r, best_r, final_r, m, scale
    cdef double rx, ry, rz, ax, ay, az
    cdef bint converged

    for j in range(16):
        q16[j] = 0.0

    for f in range(4):
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

        for i in range(4):
            best[i] = qf[i]
        best_r = INFINITY
        final_r = INFINITY
        it_used = max_iters
        converged = False
        stall = 0

        for it in range(max_iters + 1):
            for i in range(4):
                q16[f * 4 + i] = qf[i]
            _chain(f, base_pos, base_rot, axes, lengths, q16, origins, axes_w, coms, tip)
            ex = tx - tip[0]
            ey = ty - tip[1]
            ez = tz - tip[2]
            r = fabs(ex)
            if fabs(ey) > r:
                r = fabs(ey)
            if fabs(ez) > r:
                r = fabs(ez)
            if r < best_r:
                if best_r - r > 1e-12:
                    stall = 0
                else:
                    stall += 1
                best_r = r
                for i in range(4):
                    best[i] = qf[i]
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

            for i in range(4):
                for j in range(4):
                    a[i][j] = (jac_cols[i][0] * jac_cols[j][0]
                               + jac_cols[i][1] * jac_cols[j][1]
                               + jac_cols[i][2] * jac_cols[j][2])
                a[i][i] += lam2
                b[i] = jac_cols[i][0] * ex + jac_cols[i][1] * ey + jac_cols[i][2] * ez

            _solve4(a, b, dq)
            m = fabs(dq[0])
            for i in range(1, 4):
                if fabs(dq[i]) > m:
                    m = fabs(dq[i])
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
            for i in range(4):
                qf[i] = best[i]
            final_r = best_r
        for i in range(4):
            q_out[f * 4 + i] = qf[i]
        resid_out[f] = final_r
        iters_out[f] = it_used


def env_substep(const double[:, ::1] base_pos,
                const double[:, :, ::1] base_rot,
                const double[:, :, ::1] axes,
                const double[:, ::1] lengths,
                const double[:, ::1] masses,
                const double[::1] gravity,
                const double[::1] lo,
                const double[::1] hi,
                double[::1] q,
                double[::1] qd,
                double[::1] q_des,
                const double[:, ::1] targets,
                const double[::1] kp,
                const double[::1] kd,
                const double[::1] inertia,
                double torque_limit,
                double dt,
                int n_steps,
                bint use_gravity,
                bint gravity_comp,
                double ik_tol,
                double ik_damping,
                int ik_max_iters,
                double ik_step_clamp,
                bint ik_restart,
                double[:, ::1] tips_before,
                double[:, ::1] tips_after):
    """One target-rate substep fused into a single call; see pybackend."""
    cdef double worst, threshold
    cdef int f, i
    resid_arr = np.empty(4)
    iters_arr = np.zeros(4, dtype=np.int64)
    mid_arr = np.empty(16)
    q2_arr = np.empty(16)
    r2_arr = np.empty(4)
    i2_arr = np.zeros(4, dtype=np.int64)
    cdef double[::1] resid = resid_arr
    cdef long[::1] iters = iters_arr
    cdef double[::1] mid = mid_arr
    cdef double[::1] q2 = q2_arr
    cdef double[::1] r2 = r2_arr
    cdef long[::1] i2 = i2_arr

    fk_tips(base_pos, base_rot, axes, lengths, q, tips_before)
    ik_solve(base_pos, base_rot, axes, lengths, lo, hi, targets, q,
             ik_tol, ik_damping, ik_max_iters, ik_step_clamp, q_des, resid, iters)
    if ik_restart:
        worst = resid[0]
        for f in range(1, 4):
            if resid[f] > worst:
                worst = resid[f]
        threshold = ik_tol if ik_tol > 0.02 else 0.02
        if worst > threshold:
            for i in range(16):
                mid[i] = 0.5 * (lo[i] + hi[i])
            ik_solve(base_pos, base_rot, axes, lengths, lo, hi, targets, mid,
                     ik_tol, ik_damping, ik_max_iters, ik_step_clamp, q2, r2, i2)
            for f in range(4):
                if r2[f] < resid[f]:
                    for i in range(4):
                        q_des[f * 4 + i] = q2[f * 4 + i]
                    resid[f] = r2[f]
    status = servo_run(base_pos, base_rot, axes, lengths, masses, gravity, lo, hi,
                       q, qd, q_des, kp, kd, inertia, torque_limit, dt, n_steps,
                       use_gravity, gravity_comp)
    fk_tips(base_pos, base_rot, axes, lengths, q, tips_after)
    return status


def servo_run(const double[:, ::1] base_pos,
              const double[:, :, ::1] base_rot,
              const double[:, :, ::1] axes,
              const double[:, ::1] lengths,
              const double[:, ::1] masses,
              const double[::1] gravity,
              const double[::1] lo,
              const double[::1] hi,
              double[::1] q,
              double[::1] qd,
              const double[::1] q_des,
              const double[::1] kp,
              const double[::1] kd,
              const double[::1] inertia,
              double torque_limit,
              double dt,
              int n_steps,
              bint use_gravity,
              bint gravity_comp):
    """Run n_steps of the PD + gravity-compensation servo loop in place."""
    cdef double tg[16]
    cdef int step, j
    cdef double tau, load, acc
    cdef bint ok = True
    for j in range(16):
        tg[j] = 0.0
    for step in range(n_steps):
        if use_gravity:
            _gravity_torque(base_pos, base_rot, axes, lengths, masses, gravity, q, tg)
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
    for j in range(16):
        if not (isfinite(q[j]) and isfinite(qd[j])):
            ok = False
            break
    return 0 if ok else 1
