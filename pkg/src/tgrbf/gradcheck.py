"""Finite-difference audit of the analytic Jacobians.

Central differences with step 1e-6 over random networks and inputs, skipping
configurations whose clamp pre-activations sit within 1e-3 of a kink (where
the subgradient convention makes the comparison ill-posed).
"""

from __future__ import annotations

import math

import numpy as np

from .network import TgrbfNet, random_net
from .network import _SEGMENTS

__all__ = ["fd_jacobian_params", "fd_jacobian_input", "gradient_audit",
           "kink_clear"]

FD_STEP = 1e-6
KINK_MARGIN = 1e-3


def kink_clear(trace, margin: float = KINK_MARGIN) -> bool:
    """True when every clamp pre-activation is at least `margin` away from
    both kinks (0 and 1)."""
    pre = np.concatenate([trace.pre_z, trace.pre_r])
    return bool(np.all(np.minimum(np.abs(pre), np.abs(pre - 1.0)) >= margin))


def _value_only(net: TgrbfNet, x: np.ndarray, h_prev: np.ndarray) -> float:
    """Forward evaluation without trace construction (hot FD path)."""
    d2 = np.sum((net.centers - x) ** 2, axis=1)
    y_rbf = float(net.rbf_w @ np.exp(-d2 / (2.0 * net.widths ** 2)))
    zeta = np.concatenate([x, h_prev])
    z = np.clip(net.W_z @ zeta + net.b_z, 0.0, 1.0)
    r = np.clip(net.W_r @ zeta + net.b_r, 0.0, 1.0)
    n = net.W_h @ np.concatenate([x, r * h_prev]) + net.b_h
    h_next = (1.0 - z) * h_prev + z * n
    # gate_b/out_b may be boxed into 1-element arrays by the FD driver
    out_b = float(np.asarray(net.out_b).ravel()[0])
    gate_b = float(np.asarray(net.gate_b).ravel()[0])
    y_gru = float(net.out_w @ h_next) + out_b
    if net.gate_frozen:
        g = 1.0
    else:
        g = 1.0 / (1.0 + math.exp(-(float(net.gate_w @ zeta) + gate_b)))
    return g * y_rbf + (1.0 - g) * y_gru


def fd_jacobian_params(net: TgrbfNet, x, h_prev, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of y with respect to the flat parameter
    vector, holding h_prev fixed (same truncation as the analytic path)."""
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    work = net.copy()
    # scalar fields are boxed into 1-element arrays so every segment can be
    # perturbed in place through a flat view
    work.gate_b = np.atleast_1d(float(work.gate_b))
    work.out_b = np.atleast_1d(float(work.out_b))
    out = []
    for name, _ in _SEGMENTS:
        flat = getattr(work, name).reshape(-1)
        seg = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            yp = _value_only(work, x, h_prev)
            flat[i] = orig - step
            ym = _value_only(work, x, h_prev)
            flat[i] = orig
            seg[i] = (yp - ym) / (2.0 * step)
        out.append(seg)
    return np.concatenate(out)


def fd_jacobian_input(net: TgrbfNet, x, h_prev, step: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        yp = _value_only(net, xp, h_prev)
        ym = _value_only(net, xm, h_prev)
        out[i] = (yp - ym) / (2.0 * step)
    return out


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def gradient_audit(n_pairs: int = 200, seed: int = 0,
                   m_range=(1, 8), p_range=(1, 8)) -> float:
    """Max relative error between analytic and finite-difference Jacobians
    (parameters and input) over n_pairs random (network, input) pairs."""
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    done = 0
    while done < n_pairs:
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        p = int(rng.integers(p_range[0], p_range[1] + 1))
        net = random_net(3, m, p, rng)
        x = rng.uniform(-1.5, 1.5, size=3)
        h_prev = rng.uniform(-0.5, 0.5, size=p)
        _, trace = net.forward(x, h_prev=h_prev)
        if not kink_clear(trace):
            continue
        jp = net.jacobian_params(trace)
        jx = net.jacobian_input(trace)
        worst = max(worst,
                    _rel_err(jp, fd_jacobian_params(net, x, h_prev)),
                    _rel_err(jx, fd_jacobian_input(net, x, h_prev)))
        done += 1
    return worst
