"""Compiled hot-path kernels with numpy fallbacks.

Two loops dominate runtime and get numba twins:

* ``slot_step``: the full single-slot physics update (move, clamp, transmit,
  apportion losses, drain, count dead) operating on raw arrays/scalars.
* ``discounted_scan``: the backward recursion a_t = x_t + c_t * a_{t+1} used
  for generalized advantage estimation.

The numpy fallbacks follow identical arithmetic, including sequential
reduction order, so both backends agree to the last few ulps and each backend
is bit-deterministic on its own. ``mocharge.env`` and ``mocharge.ppo``
dispatch on :data:`mocharge.backend.NUMBA_ENABLED` (overridable per call).
"""

from __future__ import annotations

import math

import numpy as np

from .backend import NUMBA_ENABLED


def _slot_step_py(
    pos_x,
    pos_y,
    energy,
    rate,
    alive,
    cap,
    cx,
    cy,
    ce,
    theta,
    dist,
    x_max,
    y_max,
    move_cost,
    radius,
    alpha,
    beta,
    w0,
    tau,
    alive_threshold,
    e_charge,
    e_loss,
):
    """Single-slot update on raw buffers.

    Mutates energy, alive, e_charge, e_loss in place and returns
    (cx, cy, ce, e_move, e_tx, violation, depleted, n_dead).
    """
    n = energy.shape[0]

    # movement: clamp requested endpoint into the box, truncate to the
    # distance the remaining charge can cover
    ex = cx + dist * math.cos(theta)
    ey = cy + dist * math.sin(theta)
    gx = min(max(ex, 0.0), x_max)
    gy = min(max(ey, 0.0), y_max)
    violation = (gx != ex) or (gy != ey)
    ddx = gx - cx
    ddy = gy - cy
    traveled = math.sqrt(ddx * ddx + ddy * ddy)
    e_move = move_cost * traveled
    depleted = False
    if e_move > ce:
        depleted = True
        if e_move > 0.0:
            frac = ce / e_move
            gx = cx + ddx * frac
            gy = cy + ddy * frac
        e_move = ce
        ce = 0.0
    else:
        ce = ce - e_move
    cx = gx
    cy = gy

    # wireless charging of alive sensors within the cutoff radius
    for i in range(n):
        e_charge[i] = 0.0
        e_loss[i] = 0.0
    e_tx = 0.0
    n_in = 0
    for i in range(n):
        if alive[i]:
            dx = pos_x[i] - cx
            dy = pos_y[i] - cy
            if math.sqrt(dx * dx + dy * dy) <= radius:
                n_in += 1
    if n_in > 0:
        e_tx_full = w0 * tau
        e_tx = e_tx_full
        if e_tx > ce:
            depleted = True
            e_tx = ce
        scale = 0.0
        if e_tx_full > 0.0:
            scale = e_tx / e_tx_full
        total = 0.0
        for i in range(n):
            if alive[i]:
                dx = pos_x[i] - cx
                dy = pos_y[i] - cy
                d = math.sqrt(dx * dx + dy * dy)
                if d <= radius:
                    s = d + beta
                    raw = alpha / (s * s) * tau * scale
                    head = cap[i] - energy[i]
                    if head < 0.0:
                        head = 0.0
                    give = raw if raw < head else head
                    e_charge[i] = give
                    total = total + give
        if total > e_tx and total > 0.0:
            shrink = e_tx / total
            total = 0.0
            for i in range(n):
                e_charge[i] = e_charge[i] * shrink
                total = total + e_charge[i]
        shortfall = e_tx - total
        if shortfall < 0.0:
            shortfall = 0.0
        if total > 0.0:
            ratio = shortfall / total
            for i in range(n):
                if e_charge[i] > 0.0:
                    e_loss[i] = e_charge[i] * ratio
        else:
            share = shortfall / n_in
            for i in range(n):
                if alive[i]:
                    dx = pos_x[i] - cx
                    dy = pos_y[i] - cy
                    if math.sqrt(dx * dx + dy * dy) <= radius:
                        e_loss[i] = share
        for i in range(n):
            if e_charge[i] > 0.0:
                energy[i] = energy[i] + e_charge[i]
        ce = ce - e_tx

    # consumption drain; death is permanent
    n_dead = 0
    for i in range(n):
        if alive[i]:
            e = energy[i] - rate[i]
            if e < 0.0:
                e = 0.0
            energy[i] = e
            if e <= alive_threshold:
                alive[i] = False
        if not alive[i]:
            n_dead += 1

    return cx, cy, ce, e_move, e_tx, violation, depleted, n_dead


def _discounted_scan_py(x, coef, out):
    """Backward scan out_t = x_t + coef_t * out_{t+1} over axis 0 (2-D)."""
    t_len = x.shape[0]
    width = x.shape[1]
    for j in range(width):
        acc = 0.0
        for t in range(t_len - 1, -1, -1):
            acc = x[t, j] + coef[t, j] * acc
            out[t, j] = acc
    return out


def discounted_scan_numpy(x: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Pure-numpy fallback of the backward scan (vectorized over columns)."""
    out = np.empty_like(x)
    acc = np.zeros(x.shape[1])
    for t in range(x.shape[0] - 1, -1, -1):
        acc = x[t] + coef[t] * acc
        out[t] = acc
    return out


if NUMBA_ENABLED:
    from numba import njit

    slot_step_jit = njit(cache=True)(_slot_step_py)
    _discounted_scan_jit = njit(cache=True)(_discounted_scan_py)

    def discounted_scan_numba(x: np.ndarray, coef: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        _discounted_scan_jit(x, coef, out)
        return out

else:  # pragma: no cover - exercised via MOCHARGE_NUMBA=0 runs
    slot_step_jit = None
    discounted_scan_numba = None


def discounted_scan(x: np.ndarray, coef: np.ndarray, use_kernel: bool | None = None) -> np.ndarray:
    """Backward discounted scan, dispatching on the active backend.

    x, coef: (T, N) float64. Returns (T, N).
    """
    if x.shape != coef.shape or x.ndim != 2:
        raise ValueError(f"shape mismatch: x {x.shape} vs coef {coef.shape}")
    use = NUMBA_ENABLED if use_kernel is None else use_kernel
    if use and discounted_scan_numba is not None:
        return discounted_scan_numba(np.ascontiguousarray(x), np.ascontiguousarray(coef))
    return discounted_scan_numpy(x, coef)
