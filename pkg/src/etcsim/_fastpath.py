"""Compiled integration kernel for linear plants.

Mirrors the reference integrator in simulate.py step for step: the same
Runge-Kutta pair, dense output, event bracketing (endpoint + midpoint),
eager jumps, Zeno guard, clock clamping, and fast-floor snapping. Only
the plant evaluation differs: the closed-loop flow is a single matrix
acting on the stacked (x, y, e) state.

Per-path determinism holds: repeated runs of the kernel are bitwise
identical. Kernel and reference results agree to integration accuracy,
not bitwise (operation order differs).
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

try:
    from numba import njit

    AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    AVAILABLE = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]

from .certificates import AnalysisParameters, LyapunovCertificate
from .errors import DivergenceError
from .hybrid import HybridArc, HybridState, MonitorValues, Termination
from .plant import LinearPlantSpec
from .simulate import (
    DIVERGENCE_NORM,
    RK_A,
    RK_B,
    RK_E,
    RK_P,
    SolverConfig,
)
from .triggers import PolicyKind, TriggerPolicy

_POLICY_CODE = {
    PolicyKind.NAIVE: 0,
    PolicyKind.DEADZONE: 1,
    PolicyKind.TIME_REGULARIZED: 2,
    PolicyKind.PERIODIC: 3,
}
_TERMINATION = {
    0: Termination.HORIZON,
    1: Termination.ZENO_GUARD,
    2: Termination.DIVERGENCE,
    3: Termination.FLOW_SET_EXIT,
}
_REASONS = {0.0: "threshold", 1.0: "dwell-clock", 2.0: "periodic"}

_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_SAFETY = 0.9
_EPS_MACH = 2.220446049250313e-16


@njit(cache=True)
def _matvec(mat, v, out):
    n = v.shape[0]
    for i in range(n):
        acc = 0.0
        for k in range(n):
            acc += mat[i, k] * v[k]
        out[i] = acc


@njit(cache=True)
def _quad_sub(p, v, offset, dim):
    acc = 0.0
    for i in range(dim):
        row = 0.0
        for k in range(dim):
            row += p[i, k] * v[offset + k]
        acc += row * v[offset + i]
    return acc


@njit(cache=True)
def _e_sq(s, n_x, n_y):
    acc = 0.0
    for i in range(n_x + n_y, 2 * n_x + n_y):
        acc += s[i] * s[i]
    return acc


@njit(cache=True)
def _margin(pol, sigma, rho, t_star, period, g1c, g1p, alpha1, p1,
            s, tau, n_x, n_y):
    if pol == 3:
        return tau - period
    e_sq = _e_sq(s, n_x, n_y)
    if g1p == 2.0:
        gamma1 = g1c * e_sq
    else:
        gamma1 = g1c * math.sqrt(e_sq) ** g1p
    v_x = _quad_sub(p1, s, 0, n_x)
    thresh = sigma * alpha1 * v_x
    if pol == 1 and rho > thresh:
        thresh = rho
    m = gamma1 - thresh
    if pol != 2:
        return m
    branch_threshold = m if tau >= t_star else -np.inf
    branch_clock = (tau - t_star) if m >= 0.0 else -np.inf
    return max(branch_threshold, branch_clock)


@njit(cache=True)
def _dense_state(s, h, q_dense, theta, out):
    n = s.shape[0]
    for i in range(n):
        out[i] = s[i]
    pw = theta
    for col in range(4):
        hp = h * pw
        for i in range(n):
            out[i] += hp * q_dense[i, col]
        pw *= theta
    return out


@njit(cache=True)
def _kernel(fmat, n_x, n_y, jump_gain,
            pol, sigma, rho, t_star, period,
            has_cert, g1c, g1p, alpha1, p1, p2,
            has_params, d_weight, zeta_tau, zeta_val, sqrt_eps,
            rtol, atol, max_step, event_tol, horizon,
            zeno_max_jumps, zeno_window, store_stride, fast_floor,
            h0, s0, tau0, eps):
    n = 2 * n_x + n_y
    ncol = 2 + n + 1 + 3 + 1
    samples = np.empty((4096, ncol))
    events = np.empty((256, 6))
    n_samp = 0
    n_ev = 0
    jump_ring = np.empty(zeno_max_jumps + 1)
    ring_len = 0

    s = s0.copy()
    s1 = np.empty(n)
    si = np.empty(n)
    k1 = np.empty(n)
    ki = np.empty(n)
    s_probe = np.empty(n)
    stages = np.empty((7, n))
    q_dense = np.empty((n, 4))
    tau = tau0
    t = 0.0
    j = 0

    def store(samples, n_samp, t, j, s, tau, is_jump):
        if n_samp >= samples.shape[0]:
            bigger = np.empty((samples.shape[0] * 2, samples.shape[1]))
            bigger[: samples.shape[0]] = samples
            samples = bigger
        row = samples[n_samp]
        row[0] = t
        row[1] = j
        for i in range(n):
            row[2 + i] = s[i]
        row[2 + n] = tau if pol == 2 else np.nan
        if has_cert:
            v = (_quad_sub(p1, s, 0, n_x)
                 + sqrt_eps * _quad_sub(p2, s, n_x, n_y))
        else:
            v = np.nan
        row[3 + n] = v
        if has_cert and has_params and pol == 2:
            if tau <= zeta_tau[0]:
                w = zeta_val[0]
            elif tau >= zeta_tau[-1]:
                w = zeta_val[-1]
            else:
                w = np.interp(tau, zeta_tau, zeta_val)
            term = g1c * w * _e_sq(s, n_x, n_y)
            r = (_quad_sub(p1, s, 0, n_x)
                 + d_weight * _quad_sub(p2, s, n_x, n_y)
                 + (term if term > 0.0 else 0.0))
        else:
            r = np.nan
        row[4 + n] = r
        row[5 + n] = _margin(pol, sigma, rho, t_star, period, g1c, g1p,
                             alpha1, p1, s, tau, n_x, n_y)
        row[6 + n] = 1.0 if is_jump else 0.0
        return samples, n_samp + 1

    samples, n_samp = store(samples, n_samp, t, j, s, tau, False)

    termination = -1
    h = h0
    _matvec(fmat, s, k1)
    steps_since_store = 0

    while termination < 0:
        # Eager jumps.
        jumped = False
        while _margin(pol, sigma, rho, t_star, period, g1c, g1p, alpha1, p1,
                      s, tau, n_x, n_y) >= 0.0:
            zeno = False
            if ring_len >= zeno_max_jumps:
                if t - jump_ring[0] <= zeno_window:
                    zeno = True
                else:
                    for i in range(ring_len - 1):
                        jump_ring[i] = jump_ring[i + 1]
                    ring_len -= 1
            jump_ring[ring_len] = t
            ring_len += 1
            if pol == 3:
                reason = 2.0
            elif pol == 2:
                m_thresh = _margin(0, sigma, 0.0, 0.0, 0.0, g1c, g1p, alpha1,
                                   p1, s, tau, n_x, n_y)
                reason = 1.0 if (m_thresh > 0.0 and tau <= t_star) else 0.0
            else:
                reason = 0.0
            e_norm = math.sqrt(_e_sq(s, n_x, n_y))
            pre_idx = n_samp - 1
            for i in range(n_y):
                acc = 0.0
                for m_i in range(n_x):
                    acc += jump_gain[i, m_i] * s[n_x + n_y + m_i]
                s[n_x + i] = s[n_x + i] + acc
            for i in range(n_x + n_y, n):
                s[i] = 0.0
            tau = 0.0
            j += 1
            samples, n_samp = store(samples, n_samp, t, j, s, tau, True)
            if n_ev >= events.shape[0]:
                bigger = np.empty((events.shape[0] * 2, events.shape[1]))
                bigger[: events.shape[0]] = events
                events = bigger
            events[n_ev, 0] = t
            events[n_ev, 1] = j
            events[n_ev, 2] = reason
            events[n_ev, 3] = e_norm
            events[n_ev, 4] = pre_idx
            events[n_ev, 5] = n_samp - 1
            n_ev += 1
            jumped = True
            if zeno:
                termination = 1
                break
        if termination >= 0:
            break
        if jumped:
            if h > eps:
                h = eps
            _matvec(fmat, s, k1)
            steps_since_store = 0
        if t >= horizon:
            termination = 0
            break
        sq = 0.0
        for i in range(n):
            sq += s[i] * s[i]
        if not math.isfinite(sq) or sq > DIVERGENCE_NORM**2:
            termination = 2
            break
        if _margin(pol, sigma, rho, t_star, period, g1c, g1p, alpha1, p1,
                   s, tau, n_x, n_y) > 0.0:
            termination = 3
            break

        # One accepted step, clamped to horizon and clock boundary.
        ceiling = t_star if pol == 2 else (period if pol == 3 else -1.0)
        factor = 1.0
        clamped_clock = False
        while True:
            if h > max_step:
                h = max_step
            if h > horizon - t:
                h = horizon - t
            clamped_clock = False
            if ceiling > 0.0 and tau < ceiling and tau + h >= ceiling:
                h = ceiling - tau
                clamped_clock = True
            if h <= 16.0 * _EPS_MACH * max(1.0, abs(t)):
                termination = 4
                break
            for i in range(n):
                stages[0, i] = k1[i]
            failed = False
            for stage in range(1, 6):
                for i in range(n):
                    si[i] = s[i]
                for prev in range(stage):
                    a = RK_A[stage, prev]
                    if a != 0.0:
                        ha = h * a
                        for i in range(n):
                            si[i] += ha * stages[prev, i]
                ok = True
                for i in range(n):
                    if not math.isfinite(si[i]):
                        ok = False
                        break
                if not ok:
                    failed = True
                    break
                _matvec(fmat, si, ki)
                for i in range(n):
                    stages[stage, i] = ki[i]
            if not failed:
                for i in range(n):
                    s1[i] = s[i]
                for stage in range(6):
                    b = RK_B[stage]
                    if b != 0.0:
                        hb = h * b
                        for i in range(n):
                            s1[i] += hb * stages[stage, i]
                for i in range(n):
                    if not math.isfinite(s1[i]):
                        failed = True
                        break
            if failed:
                h *= _MIN_FACTOR
                continue
            _matvec(fmat, s1, ki)
            for i in range(n):
                stages[6, i] = ki[i]
            err_norm_sq = 0.0
            for i in range(n):
                err = 0.0
                for stage in range(7):
                    err += RK_E[stage] * stages[stage, i]
                err *= h
                a0 = abs(s[i])
                a1 = abs(s1[i])
                scale = atol + rtol * (a0 if a0 > a1 else a1)
                err_norm_sq += (err / scale) ** 2
            norm = math.sqrt(err_norm_sq / n)
            if norm <= 1.0:
                if norm == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = _SAFETY * norm ** -0.2
                    if factor > _MAX_FACTOR:
                        factor = _MAX_FACTOR
                    elif factor < _MIN_FACTOR:
                        factor = _MIN_FACTOR
                break
            shrink = _SAFETY * norm ** -0.2
            if shrink < _MIN_FACTOR:
                shrink = _MIN_FACTOR
            h *= shrink
        if termination == 4:
            break

        t1 = t + h
        tau1 = ceiling if clamped_clock else tau + h
        if horizon - t1 <= 0.0 and t1 > horizon:
            t1 = horizon
        for i in range(n):
            for col in range(4):
                acc = 0.0
                for stage in range(7):
                    acc += stages[stage, i] * RK_P[stage, col]
                q_dense[i, col] = acc

        # Event bracketing: endpoints plus midpoint.
        m0 = _margin(pol, sigma, rho, t_star, period, g1c, g1p, alpha1, p1,
                     s, tau, n_x, n_y)
        t_event = -1.0
        if m0 < 0.0:
            for half in range(2):
                t_probe = t + 0.5 * h if half == 0 else t1
                _dense_state(s, h, q_dense, (t_probe - t) / h, s_probe)
                m_probe = _margin(pol, sigma, rho, t_star, period, g1c, g1p,
                                  alpha1, p1, s_probe, tau + (t_probe - t),
                                  n_x, n_y)
                if m_probe >= 0.0:
                    lo = t
                    hi = t_probe
                    while hi - lo > event_tol:
                        mid = 0.5 * (lo + hi)
                        if mid <= lo or mid >= hi:
                            break
                        _dense_state(s, h, q_dense, (mid - t) / h, s_probe)
                        m_mid = _margin(pol, sigma, rho, t_star, period, g1c,
                                        g1p, alpha1, p1, s_probe,
                                        tau + (mid - t), n_x, n_y)
                        if m_mid >= 0.0:
                            hi = mid
                        else:
                            lo = mid
                    t_event = hi
                    break

        if t_event >= 0.0:
            _dense_state(s, h, q_dense, (t_event - t) / h, s_probe)
            for i in range(n):
                s[i] = s_probe[i]
            # an event localized at the end of a clock-clamped step is the
            # boundary itself; assign the clock exactly
            if clamped_clock and t_event == t1:
                tau = ceiling
            else:
                tau = tau + (t_event - t)
            t = t_event
            if fast_floor > 0.0:
                for i in range(n_x, n_x + n_y):
                    if abs(s[i]) < fast_floor:
                        s[i] = 0.0
            samples, n_samp = store(samples, n_samp, t, j, s, tau, False)
            _matvec(fmat, s, k1)
            steps_since_store = 0
            continue

        for i in range(n):
            s[i] = s1[i]
            k1[i] = stages[6, i]
        t = t1
        tau = tau1
        h = h * factor
        if fast_floor > 0.0:
            snapped = False
            for i in range(n_x, n_x + n_y):
                if s[i] != 0.0 and abs(s[i]) < fast_floor:
                    s[i] = 0.0
                    snapped = True
            if snapped:
                _matvec(fmat, s, k1)
        sq = 0.0
        for i in range(n):
            sq += s[i] * s[i]
        diverged = not math.isfinite(sq) or sq > DIVERGENCE_NORM**2
        steps_since_store += 1
        at_boundary = (diverged or t >= horizon or clamped_clock
                       or _margin(pol, sigma, rho, t_star, period, g1c, g1p,
                                  alpha1, p1, s, tau, n_x, n_y) >= 0.0)
        if steps_since_store >= store_stride or at_boundary:
            finite = True
            for i in range(n):
                if not math.isfinite(s[i]):
                    finite = False
                    break
            if finite:
                samples, n_samp = store(samples, n_samp, t, j, s, tau, False)
            steps_since_store = 0
        if diverged:
            termination = 2
            break

    if termination != 4 and t > samples[n_samp - 1, 0]:
        finite = True
        for i in range(n):
            if not math.isfinite(s[i]):
                finite = False
                break
        if finite:
            samples, n_samp = store(samples, n_samp, t, j, s, tau, False)
    return samples[:n_samp].copy(), events[:n_ev].copy(), termination


def integrate_linear(plant: LinearPlantSpec, policy: TriggerPolicy,
                     q0: HybridState, cfg: SolverConfig,
                     cert: Optional[LyapunovCertificate],
                     params: Optional[AnalysisParameters]) -> HybridArc:
    """Run the compiled kernel and assemble the arc."""
    from .simulate import _PolicyEval

    n_x, n_y = plant.n_x, plant.n_z
    _PolicyEval(policy, cert, n_x, n_y)  # validates the policy/cert pairing
    eps = plant.epsilon
    fmat = np.ascontiguousarray(plant.flow_matrix())
    jump_gain = np.ascontiguousarray(plant.jump_gain())
    pol = _POLICY_CODE[policy.kind]

    has_cert = cert is not None
    p1 = np.ascontiguousarray(cert.data.p1) if has_cert else np.eye(n_x)
    p2 = np.ascontiguousarray(cert.data.p2) if has_cert else np.eye(n_y)
    g1c = cert.gamma1.coeff if has_cert else 0.0
    g1p = cert.gamma1.power if has_cert else 2.0
    alpha1 = cert.alpha1 if has_cert else 0.0

    has_params = (params is not None and params.dwell_ode is not None
                  and params.d_weight is not None)
    if has_params:
        zeta_tau = np.ascontiguousarray(params.dwell_ode.tau_grid)
        zeta_val = np.ascontiguousarray(params.dwell_ode.values)
        d_weight = params.d_weight
    else:
        zeta_tau = np.zeros(2)
        zeta_val = np.zeros(2)
        d_weight = 0.0

    max_step = cfg.max_step_factor * eps
    h0 = cfg.initial_step or min(max_step, eps, cfg.horizon)
    h0 = min(h0, max_step, cfg.horizon)
    s0 = np.ascontiguousarray(q0.as_vector())
    tau0 = q0.tau if q0.tau is not None else 0.0

    samples, events, code = _kernel(
        fmat, n_x, n_y, jump_gain,
        pol, policy.sigma or 0.0, policy.rho or 0.0, policy.t_star or 0.0,
        policy.period or 0.0,
        has_cert, g1c, g1p, alpha1, p1, p2,
        has_params, d_weight, zeta_tau, zeta_val, math.sqrt(eps),
        cfg.rel_tol, cfg.abs_tol, max_step, cfg.event_tol, cfg.horizon,
        cfg.zeno_max_jumps, cfg.zeno_window, cfg.store_stride,
        cfg.fast_floor, h0, s0, tau0, eps,
    )
    if code == 4:
        raise DivergenceError("step size underflow in the compiled kernel")
    return _assemble_arc(samples, events, code, n_x, n_y,
                         policy.requires_clock)


def _assemble_arc(samples: np.ndarray, events: np.ndarray, code: int,
                  n_x: int, n_y: int, has_clock: bool) -> HybridArc:
    n = 2 * n_x + n_y
    arc = HybridArc(n_x, n_y, has_clock)
    ev_by_post = {int(round(ev[5])): ev for ev in events}
    for idx in range(samples.shape[0]):
        row = samples[idx]
        t = float(row[0])
        tau = float(row[2 + n])
        state = HybridState.from_vector(
            row[2: 2 + n], n_x, n_y,
            tau=tau if (has_clock and math.isfinite(tau)) else None,
        )
        mon = MonitorValues(v=float(row[3 + n]), r=float(row[4 + n]),
                            trigger_margin=float(row[5 + n]))
        if row[6 + n] != 0.0:
            ev = ev_by_post[idx]
            pre = arc.state_at(len(arc) - 1)
            arc.append_jump(pre, state, _REASONS[float(ev[2])], mon)
        else:
            arc.append_flow_sample(t, state, mon)
    arc.set_termination(_TERMINATION[code])
    return arc
