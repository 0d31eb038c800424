"""Tape-recorded twins of the channel / rate / penalty computations.

The numpy implementations in :mod:`channel`, :mod:`rate` and :mod:`gml` are
the reference; the builders here record the same arithmetic on an autodiff
tape so gradients (and gradients of gradients) can flow.  Positions are
handled in span-normalized coordinates x_tilde = x / span throughout.

Beamforming variables are nested lists W[b][n][k] = (re Var, im Var);
positions P[b][n][p] = Var (normalized); channels a[k][b][n] = (re, im) as
Vars or plain floats (tuple of floats means a constant channel).
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tape, Var, backward, grad_vars, sin, cos, sqrt, log, relu, absval
from .geometry import SystemGeometry

LOG2_INV = 1.0 / math.log(2.0)
GRAD_NORM_EPS = 1e-12


def record_beamforming(tape: Tape, w: np.ndarray):
    """Record a (2, N, K) complex beamforming array as leaf pairs."""
    _, n, k = w.shape
    return [[[(tape.record(w[b, wg, u].real), tape.record(w[b, wg, u].imag))
              for u in range(k)] for wg in range(n)] for b in range(2)]


def record_positions(tape: Tape, x_norm: np.ndarray):
    """Record (2, N, P) normalized positions as leaves."""
    _, n, p = x_norm.shape
    return [[[tape.record(x_norm[b, wg, j]) for j in range(p)]
             for wg in range(n)] for b in range(2)]


def beamforming_values(W) -> np.ndarray:
    n, k = len(W[0]), len(W[0][0])
    out = np.zeros((2, n, k), dtype=complex)
    for b in range(2):
        for wg in range(n):
            for u in range(k):
                re, im = W[b][wg][u]
                out[b, wg, u] = complex(re.value, im.value)
    return out


def position_values(P) -> np.ndarray:
    n, p = len(P[0]), len(P[0][0])
    out = np.zeros((2, n, p))
    for b in range(2):
        for wg in range(n):
            for j in range(p):
                out[b, wg, j] = P[b][wg][j].value
    return out


def channel_graph(tape: Tape, geom: SystemGeometry, P):
    """Effective channel rows from position Vars: a[k][b][n] = (re, im) Vars."""
    lam = geom.wavelength
    lam_g = geom.guided_wavelength
    span = geom.span
    amp0 = math.sqrt(geom.delta_eq) * geom.eta
    k_free = 2.0 * math.pi / lam
    k_guide = 2.0 * math.pi * span / lam_g   # phase per unit normalized position
    out = []
    for k in range(geom.n_users):
        ux, uy = geom.users[k, 0], geom.users[k, 1]
        per_bs = []
        for b in range(2):
            h2 = geom.heights[b] ** 2
            row = []
            for wg in range(geom.n_waveguides):
                const2 = (geom.y_offsets[wg] - uy) ** 2 + h2
                re_acc = None
                im_acc = None
                for j in range(geom.n_pas):
                    xt = P[b][wg][j]
                    dx = xt * span - ux
                    d = sqrt(dx * dx + const2)
                    amp = amp0 / d
                    phase = d * k_free + xt * k_guide
                    re_t = amp * cos(phase)
                    im_t = amp * sin(phase)   # accumulated with minus sign below
                    re_acc = re_t if re_acc is None else re_acc + re_t
                    im_acc = im_t if im_acc is None else im_acc + im_t
                row.append((re_acc, -im_acc))
            per_bs.append(row)
        out.append(per_bs)
    return out


def _cmul_const_var(ar: float, ai: float, wr: Var, wi: Var):
    """(ar + j ai) * (wr + j wi) with a constant first factor."""
    return (wr * ar - wi * ai, wi * ar + wr * ai)


def _cmul_var_var(ar: Var, ai: Var, wr: Var, wi: Var):
    return (ar * wr - ai * wi, ar * wi + ai * wr)


def _beam_dot(a_row, w_col):
    """Sum over waveguides of a[n] * w[n]; a entries may be floats or Vars."""
    re_acc = None
    im_acc = None
    for (a_entry, (wr, wi)) in zip(a_row, w_col):
        ar, ai = a_entry
        if isinstance(ar, Var):
            re_t, im_t = _cmul_var_var(ar, ai, wr, wi)
        else:
            re_t, im_t = _cmul_const_var(ar, ai, wr, wi)
        re_acc = re_t if re_acc is None else re_acc + re_t
        im_acc = im_t if im_acc is None else im_acc + im_t
    return re_acc, im_acc


def rate_graph(tape: Tape, a, W, noise_power: float):
    """Per-user rates and the sum rate; a is Var-valued or constant channels.

    ``a[k][b]`` is a list over waveguides of (re, im) pairs, each pair either
    two floats (constant channel, e.g. positions frozen) or two Vars.
    """
    n_users = len(a)
    rates = []
    total = None
    for k in range(n_users):
        sig_re = None
        sig_im = None
        for b in range(2):
            re_b, im_b = _beam_dot(a[k][b], [W[b][n][k] for n in range(len(W[b]))])
            sig_re = re_b if sig_re is None else sig_re + re_b
            sig_im = im_b if sig_im is None else sig_im + im_b
        signal = sig_re * sig_re + sig_im * sig_im
        denom = None
        for b in range(2):
            for kp in range(n_users):
                if kp == k:
                    continue
                re_i, im_i = _beam_dot(a[k][b], [W[b][n][kp] for n in range(len(W[b]))])
                term = re_i * re_i + im_i * im_i
                denom = term if denom is None else denom + term
        if denom is None:
            sinr = signal * (1.0 / noise_power)
        else:
            sinr = signal / (denom + noise_power)
        rk = log(sinr + 1.0) * LOG2_INV
        rates.append(rk)
        total = rk if total is None else total + rk
    return rates, total


def _sinr_pieces(tape: Tape, a, W, noise_power: float):
    """Shared signal/interference handles for rate and gradient assembly.

    Returns, per user: the coherent signal dot (re, im), its power, per
    (user, bs, interferer) interference dots, the denominator, plus the
    sensitivity weights kappa = dR/dS and mu = -dR/dD (both positive).
    """
    n_users = len(a)
    n_bs = 2
    sig = []
    s_pow = []
    iota = {}
    denom = []
    for k in range(n_users):
        sig_re = None
        sig_im = None
        for b in range(n_bs):
            re_b, im_b = _beam_dot(a[k][b], [W[b][n][k] for n in range(len(W[b]))])
            sig_re = re_b if sig_re is None else sig_re + re_b
            sig_im = im_b if sig_im is None else sig_im + im_b
        sig.append((sig_re, sig_im))
        s_pow.append(sig_re * sig_re + sig_im * sig_im)
        dn = None
        for b in range(n_bs):
            for kp in range(n_users):
                if kp == k:
                    continue
                re_i, im_i = _beam_dot(a[k][b], [W[b][n][kp] for n in range(len(W[b]))])
                iota[(k, b, kp)] = (re_i, im_i)
                term = re_i * re_i + im_i * im_i
                dn = term if dn is None else dn + term
        denom.append(dn + noise_power if dn is not None else None)

    kappa = []
    mu = []
    for k in range(n_users):
        s = s_pow[k]
        if denom[k] is None:
            kappa.append(LOG2_INV / (s + noise_power))
            mu.append(None)
        else:
            kap = LOG2_INV / (s + denom[k])
            kappa.append(kap)
            mu.append(kap * s / denom[k])
    return sig, s_pow, iota, denom, kappa, mu


def rate_from_pieces(s_pow, denom, noise_power: float):
    rates = []
    total = None
    for k in range(len(s_pow)):
        dn = denom[k] if denom[k] is not None else noise_power
        rk = log(s_pow[k] / dn + 1.0) * LOG2_INV
        rates.append(rk)
        total = rk if total is None else total + rk
    return rates, total


def wgrad_graph(tape: Tape, a_const, W, noise_power: float):
    """Closed-form on-tape gradient of the sum rate w.r.t. every W coordinate.

    Channels must be constant (positions frozen).  Returns grads[b][n][k] =
    (d/d re, d/d im) Vars.  Node-count-lean replacement for the generic
    emitting backward; pinned against it by tests.
    """
    n_users = len(a_const)
    n_wg = len(W[0])
    sig, _, iota, _, kappa, mu = _sinr_pieces(tape, a_const, W, noise_power)

    grads = [[[None] * n_users for _ in range(n_wg)] for _ in range(2)]
    for b in range(2):
        for n in range(n_wg):
            for k in range(n_users):
                ar, ai = a_const[k][b][n]
                sre, sim = sig[k]
                g_re = sre * (2.0 * ar) + sim * (2.0 * ai)
                g_im = sim * (2.0 * ar) - sre * (2.0 * ai)
                g_re = g_re * kappa[k]
                g_im = g_im * kappa[k]
                for kp in range(n_users):
                    if kp == k:
                        continue
                    # beam k leaks into user kp via iota[(kp, b, k)]
                    pr, pi = a_const[kp][b][n]
                    ire, iim = iota[(kp, b, k)]
                    d_re = (ire * (2.0 * pr) + iim * (2.0 * pi)) * mu[kp]
                    d_im = (iim * (2.0 * pr) - ire * (2.0 * pi)) * mu[kp]
                    g_re = g_re - d_re
                    g_im = g_im - d_im
                grads[b][n][k] = (g_re, g_im)
    return grads


def channel_graph_with_derivs(tape: Tape, geom: SystemGeometry, P):
    """Channel rows plus per-PA derivative handles for the position gradient.

    Returns (a, da) where da[k][b][n][p] = (d a_re / d x_norm, d a_im / d x_norm)
    for the PA p on waveguide (b, n), per user k.
    """
    lam = geom.wavelength
    lam_g = geom.guided_wavelength
    span = geom.span
    amp0 = math.sqrt(geom.delta_eq) * geom.eta
    k_free = 2.0 * math.pi / lam
    k_guide = 2.0 * math.pi * span / lam_g
    inv_amp0 = 1.0 / amp0
    a_out = []
    da_out = []
    for k in range(geom.n_users):
        ux, uy = geom.users[k, 0], geom.users[k, 1]
        a_bs = []
        da_bs = []
        for b in range(2):
            h2 = geom.heights[b] ** 2
            a_row = []
            da_row = []
            for wg in range(geom.n_waveguides):
                const2 = (geom.y_offsets[wg] - uy) ** 2 + h2
                re_acc = None
                im_acc = None
                d_list = []
                for j in range(geom.n_pas):
                    xt = P[b][wg][j]
                    dx = xt * span - ux
                    d = sqrt(dx * dx + const2)
                    amp = amp0 / d
                    phase = d * k_free + xt * k_guide
                    c = cos(phase)
                    s = sin(phase)
                    re_t = amp * c
                    im_t = amp * s
                    re_acc = re_t if re_acc is None else re_acc + re_t
                    im_acc = im_t if im_acc is None else im_acc + im_t
                    # derivative pieces w.r.t. normalized position
                    inv_d = amp * inv_amp0
                    dprime = (dx * inv_d) * span
                    aprime = -((amp * inv_d) * dprime)
                    pprime = dprime * k_free + k_guide
                    d_re = aprime * c - im_t * pprime
                    d_im_pos = aprime * s + re_t * pprime   # d(-a_im)/dx
                    d_list.append((d_re, -d_im_pos))
                a_row.append((re_acc, -im_acc))
                da_row.append(d_list)
            a_bs.append(a_row)
            da_bs.append(da_row)
        a_out.append(a_bs)
        da_out.append(da_bs)
    return a_out, da_out


def pgrad_graph(tape: Tape, geom: SystemGeometry, P, W, noise_power: float):
    """Closed-form on-tape gradient of the sum rate w.r.t. normalized positions.

    Returns (grads[b][n][p] Vars, channel a, rate pieces) with gradients that
    remain differentiable w.r.t. both P and W.
    """
    a, da = channel_graph_with_derivs(tape, geom, P)
    n_users = geom.n_users
    sig, _, iota, _, kappa, mu = _sinr_pieces(tape, a, W, noise_power)
    kappa2 = [kp * 2.0 for kp in kappa]
    mu2 = [m * 2.0 if m is not None else None for m in mu]

    grads = [[[None] * geom.n_pas for _ in range(geom.n_waveguides)] for _ in range(2)]
    for b in range(2):
        for n in range(geom.n_waveguides):
            for p in range(geom.n_pas):
                total = None
                for k in range(n_users):
                    d_re, d_im = da[k][b][n][p]
                    wr, wi = W[b][n][k]
                    ds_re = d_re * wr - d_im * wi
                    ds_im = d_re * wi + d_im * wr
                    sre, sim = sig[k]
                    t = (sre * ds_re + sim * ds_im) * kappa2[k]
                    total = t if total is None else total + t
                    for kp in range(n_users):
                        if kp == k:
                            continue
                        # channel of user k also carries beam kp's interference
                        wr2, wi2 = W[b][n][kp]
                        di_re = d_re * wr2 - d_im * wi2
                        di_im = d_re * wi2 + d_im * wr2
                        ire, iim = iota[(k, b, kp)]
                        t2 = (ire * di_re + iim * di_im) * mu2[k]
                        total = total - t2
                grads[b][n][p] = total
    return grads, a, sig


def channel_constants(geom: SystemGeometry, x: np.ndarray):
    """Constant channel rows (floats) for frozen positions, shaped like channel_graph output."""
    from .channel import effective_channel_matrix
    from .geometry import PinchingState
    a = effective_channel_matrix(geom, PinchingState(x))
    return [[[(a[k, b, n].real, a[k, b, n].imag) for n in range(geom.n_waveguides)]
             for b in range(2)] for k in range(geom.n_users)]


def power_graph(tape: Tape, W, bs: int):
    """trace(W_b W_b^H) as a tape node."""
    acc = None
    for row in W[bs]:
        for (wr, wi) in row:
            term = wr * wr + wi * wi
            acc = term if acc is None else acc + term
    return acc


def normalize_power_graph(tape: Tape, W, budgets):
    """Budget-normalization of the beamforming Vars (differentiable).

    BSs within budget pass through untouched; over-budget BSs are scaled by
    sqrt(budget / used), which puts them exactly on the budget.
    """
    out = []
    for b in range(2):
        used = power_graph(tape, W, b)
        if used.value <= budgets[b]:
            out.append(W[b])
            continue
        scale = sqrt(budgets[b] / used)
        out.append([[(wr * scale, wi * scale) for (wr, wi) in row] for row in W[b]])
    return out


def hinge_penalties_graph(tape: Tape, geom: SystemGeometry, rates, P,
                          zeta1: float, zeta2: float):
    """Hinge versions of the QoS / spacing / range penalty terms."""
    r_th = geom.rate_threshold
    thr = None
    for rk in rates:
        t = relu(r_th - rk)
        thr = t if thr is None else thr + t
    thr = thr * zeta1

    span = geom.span
    ds = geom.min_spacing
    spacing = None
    rng_pen = None
    for b in range(2):
        for wg in range(geom.n_waveguides):
            xs = P[b][wg]
            n_pas = len(xs)
            for p in range(n_pas):
                xm = xs[p] * span
                under = relu(-xm)
                over = relu(xm - span)
                term = under + over
                rng_pen = term if rng_pen is None else rng_pen + term
                for q in range(p + 1, n_pas):
                    gap = absval(xm - xs[q] * span)
                    t = relu(ds - gap)
                    spacing = t if spacing is None else spacing + t
    spacing = spacing * zeta2 if spacing is not None else tape.record(0.0)
    rng_pen = rng_pen * zeta2
    return thr, spacing, rng_pen


def sum_rate_value(geom: SystemGeometry, w: np.ndarray, x: np.ndarray) -> float:
    """Plain numpy sum rate for line searches and reporting."""
    from .channel import effective_channel_matrix
    from .geometry import PinchingState
    from .rate import BeamformingState, sum_rate
    a = effective_channel_matrix(geom, PinchingState(x))
    return sum_rate(a, BeamformingState(w), geom.noise_power).sum_rate


_SCRATCH_TAPE = Tape()


def joint_rate_gradient(geom: SystemGeometry, w: np.ndarray, x: np.ndarray):
    """Gradient of the sum rate w.r.t. W (complex, via re/im pairs) and x (meters).

    Used by the projected-gradient reference optimizer; reuses a scratch tape
    across calls.
    """
    tape = _SCRATCH_TAPE
    tape.reset()
    W = record_beamforming(tape, w)
    P = record_positions(tape, x / geom.span)
    a = channel_graph(tape, geom, P)
    _, total = rate_graph(tape, a, W, geom.noise_power)
    g = backward(total)

    gw = np.zeros_like(w)
    for b in range(2):
        for n in range(w.shape[1]):
            for k in range(w.shape[2]):
                re, im = W[b][n][k]
                gw[b, n, k] = complex(g[re], g[im])
    gx = np.zeros_like(x)
    for b in range(2):
        for n in range(x.shape[1]):
            for p in range(x.shape[2]):
                gx[b, n, p] = g[P[b][n][p]] / geom.span
    return gw, gx
