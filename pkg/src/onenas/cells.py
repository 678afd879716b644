"""Scalar memory cells used as hidden-node semantics.

Every node in an evolved network carries a scalar activation. Incoming edge
values are summed into ``input_sum`` first; the cell then maps
``(input_sum, previous own state)`` to a new activation. Cells recur on their
own previous output; recurrence between different nodes is expressed by
recurrent edges in the genome.

The kernels here are written for numba so that the network executor can call
them from inside compiled loops. ``cell_forward`` and ``cell_backward`` are the
plain-Python entry points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

CELL_TYPES = ("simple", "delta_rnn", "gru", "lstm", "mgu", "ugrnn")
HIDDEN_CELL_TYPES = CELL_TYPES

# Integer codes used by the compiled kernels. INPUT is a pass-through node.
INPUT = -1
SIMPLE, DELTA, GRU, LSTM, MGU, UGRNN = range(6)
CELL_CODES = {name: code for code, name in enumerate(CELL_TYPES)}

PARAM_COUNTS = {
    "simple": 1,  # b
    "delta_rnn": 6,  # alpha, beta1, beta2, v, r_bias, z_bias
    "gru": 9,  # wz uz bz, wr ur br, wh uh bh
    "lstm": 12,  # wi ui bi, wf uf bf, wo uo bo, wg ug bg
    "mgu": 6,  # wf uf bf, wh uh bh
    "ugrnn": 6,  # wc uc bc, wg ug bg
}

ACTIVATION_LIMIT = 1e6


def param_count(cell_type: str) -> int:
    try:
        return PARAM_COUNTS[cell_type]
    except KeyError:
        raise ValueError(f"unknown cell type {cell_type!r}") from None


@dataclass
class CellState:
    """Per-node recurrent state: exposed activation plus cell memory."""

    hidden: float = 0.0
    internal: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @property
    def memory(self) -> float:
        return float(self.internal[0])


@njit(cache=True, nogil=True, inline="always")
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True, nogil=True)
def clamp_input(x):
    """Clamp an input sum; returns (value, passes_gradient)."""
    if x > ACTIVATION_LIMIT:
        return ACTIVATION_LIMIT, False
    if x < -ACTIVATION_LIMIT:
        return -ACTIVATION_LIMIT, False
    return x, True


@njit(cache=True, nogil=True)
def cell_step(code, theta, off, x, hp, cp):
    """One forward step. Returns (h, c); c is only meaningful for LSTM."""
    if code == SIMPLE:
        return math.tanh(x + theta[off]), 0.0
    if code == DELTA:
        alpha = theta[off]
        beta1 = theta[off + 1]
        beta2 = theta[off + 2]
        v = theta[off + 3]
        vh = v * hp
        # z = tanh(alpha*V h*x + beta1*V h + beta2*x + bz); r = sig(x + br)
        z = math.tanh(alpha * vh * x + beta1 * vh + beta2 * x + theta[off + 5])
        r = _sigmoid(x + theta[off + 4])
        return math.tanh((1.0 - r) * z + r * hp), 0.0
    if code == GRU:
        z = _sigmoid(theta[off] * x + theta[off + 1] * hp + theta[off + 2])
        r = _sigmoid(theta[off + 3] * x + theta[off + 4] * hp + theta[off + 5])
        hh = math.tanh(theta[off + 6] * x + theta[off + 7] * (r * hp) + theta[off + 8])
        return (1.0 - z) * hp + z * hh, 0.0
    if code == LSTM:
        i = _sigmoid(theta[off] * x + theta[off + 1] * hp + theta[off + 2])
        f = _sigmoid(theta[off + 3] * x + theta[off + 4] * hp + theta[off + 5])
        o = _sigmoid(theta[off + 6] * x + theta[off + 7] * hp + theta[off + 8])
        g = math.tanh(theta[off + 9] * x + theta[off + 10] * hp + theta[off + 11])
        c = f * cp + i * g
        return o * math.tanh(c), c
    if code == MGU:
        f = _sigmoid(theta[off] * x + theta[off + 1] * hp + theta[off + 2])
        hh = math.tanh(theta[off + 3] * x + theta[off + 4] * (f * hp) + theta[off + 5])
        return (1.0 - f) * hp + f * hh, 0.0
    if code == UGRNN:
        c = math.tanh(theta[off] * x + theta[off + 1] * hp + theta[off + 2])
        g = _sigmoid(theta[off + 3] * x + theta[off + 4] * hp + theta[off + 5])
        return g * hp + (1.0 - g) * c, 0.0
    return math.nan, math.nan


@njit(cache=True, nogil=True)
def cell_step_grad(code, theta, off, x, hp, cp, dh, dc, grad):
    """Backward through one step.

    ``dh``/``dc`` are the loss gradients w.r.t. this step's h and c. Parameter
    gradients are accumulated into ``grad[off:off + count]``. Returns
    (d input_sum, d h_prev, d c_prev).
    """
    if code == SIMPLE:
        h = math.tanh(x + theta[off])
        ds = dh * (1.0 - h * h)
        grad[off] += ds
        return ds, 0.0, 0.0
    if code == DELTA:
        alpha = theta[off]
        beta1 = theta[off + 1]
        beta2 = theta[off + 2]
        v = theta[off + 3]
        vh = v * hp
        z = math.tanh(alpha * vh * x + beta1 * vh + beta2 * x + theta[off + 5])
        r = _sigmoid(x + theta[off + 4])
        h = math.tanh((1.0 - r) * z + r * hp)
        du = dh * (1.0 - h * h)
        dz = du * (1.0 - r)
        dr = du * (hp - z)
        dhp = du * r
        drp = dr * r * (1.0 - r)
        grad[off + 4] += drp
        dzp = dz * (1.0 - z * z)
        grad[off + 5] += dzp
        grad[off] += dzp * vh * x
        grad[off + 1] += dzp * vh
        grad[off + 2] += dzp * x
        dvh = dzp * (alpha * x + beta1)
        grad[off + 3] += dvh * hp
        dhp += dvh * v
        dx = drp + dzp * (alpha * vh + beta2)
        return dx, dhp, 0.0
    if code == GRU:
        wz = theta[off]
        uz = theta[off + 1]
        wr = theta[off + 3]
        ur = theta[off + 4]
        wh = theta[off + 6]
        uh = theta[off + 7]
        z = _sigmoid(wz * x + uz * hp + theta[off + 2])
        r = _sigmoid(wr * x + ur * hp + theta[off + 5])
        hh = math.tanh(wh * x + uh * (r * hp) + theta[off + 8])
        dz = dh * (hh - hp)
        dhhp = dh * z * (1.0 - hh * hh)
        dhp = dh * (1.0 - z)
        grad[off + 6] += dhhp * x
        grad[off + 7] += dhhp * r * hp
        grad[off + 8] += dhhp
        drh = dhhp * uh
        dhp += drh * r
        drp = drh * hp * r * (1.0 - r)
        dzp = dz * z * (1.0 - z)
        grad[off] += dzp * x
        grad[off + 1] += dzp * hp
        grad[off + 2] += dzp
        grad[off + 3] += drp * x
        grad[off + 4] += drp * hp
        grad[off + 5] += drp
        dhp += dzp * uz + drp * ur
        dx = dhhp * wh + dzp * wz + drp * wr
        return dx, dhp, 0.0
    if code == LSTM:
        wi = theta[off]
        ui = theta[off + 1]
        wf = theta[off + 3]
        uf = theta[off + 4]
        wo = theta[off + 6]
        uo = theta[off + 7]
        wg = theta[off + 9]
        ug = theta[off + 10]
        i = _sigmoid(wi * x + ui * hp + theta[off + 2])
        f = _sigmoid(wf * x + uf * hp + theta[off + 5])
        o = _sigmoid(wo * x + uo * hp + theta[off + 8])
        g = math.tanh(wg * x + ug * hp + theta[off + 11])
        c = f * cp + i * g
        tc = math.tanh(c)
        dcc = dc + dh * o * (1.0 - tc * tc)
        dop = dh * tc * o * (1.0 - o)
        dip = dcc * g * i * (1.0 - i)
        dfp = dcc * cp * f * (1.0 - f)
        dgp = dcc * i * (1.0 - g * g)
        grad[off] += dip * x
        grad[off + 1] += dip * hp
        grad[off + 2] += dip
        grad[off + 3] += dfp * x
        grad[off + 4] += dfp * hp
        grad[off + 5] += dfp
        grad[off + 6] += dop * x
        grad[off + 7] += dop * hp
        grad[off + 8] += dop
        grad[off + 9] += dgp * x
        grad[off + 10] += dgp * hp
        grad[off + 11] += dgp
        dx = dip * wi + dfp * wf + dop * wo + dgp * wg
        dhp = dip * ui + dfp * uf + dop * uo + dgp * ug
        return dx, dhp, dcc * f
    if code == MGU:
        wf = theta[off]
        uf = theta[off + 1]
        wh = theta[off + 3]
        uh = theta[off + 4]
        f = _sigmoid(wf * x + uf * hp + theta[off + 2])
        hh = math.tanh(wh * x + uh * (f * hp) + theta[off + 5])
        dhhp = dh * f * (1.0 - hh * hh)
        df = dh * (hh - hp)
        dhp = dh * (1.0 - f)
        grad[off + 3] += dhhp * x
        grad[off + 4] += dhhp * f * hp
        grad[off + 5] += dhhp
        dfh = dhhp * uh
        dhp += dfh * f
        df += dfh * hp
        dfp = df * f * (1.0 - f)
        grad[off] += dfp * x
        grad[off + 1] += dfp * hp
        grad[off + 2] += dfp
        dhp += dfp * uf
        dx = dhhp * wh + dfp * wf
        return dx, dhp, 0.0
    if code == UGRNN:
        wc = theta[off]
        uc = theta[off + 1]
        wg = theta[off + 3]
        ug = theta[off + 4]
        c = math.tanh(wc * x + uc * hp + theta[off + 2])
        g = _sigmoid(wg * x + ug * hp + theta[off + 5])
        dcp_ = dh * (1.0 - g) * (1.0 - c * c)
        dgp = dh * (hp - c) * g * (1.0 - g)
        grad[off] += dcp_ * x
        grad[off + 1] += dcp_ * hp
        grad[off + 2] += dcp_
        grad[off + 3] += dgp * x
        grad[off + 4] += dgp * hp
        grad[off + 5] += dgp
        dhp = dh * g + dcp_ * uc + dgp * ug
        dx = dcp_ * wc + dgp * wg
        return dx, dhp, 0.0
    return math.nan, math.nan, math.nan


def cell_forward(cell_type: str, cell_parameters, input_sum: float,
                 prev_state: CellState | None = None) -> tuple[float, CellState]:
    """Apply one cell step. Non-finite results are returned as-is so callers
    can mark the evaluation invalid."""
    params = np.asarray(cell_parameters, dtype=np.float64)
    if len(params) != param_count(cell_type):
        raise ValueError(
            f"{cell_type} expects {param_count(cell_type)} parameters, got {len(params)}")
    prev_state = prev_state or CellState()
    x, _ = clamp_input(float(input_sum))
    h, c = cell_step(CELL_CODES[cell_type], params, 0, x, prev_state.hidden, prev_state.memory)
    return h, CellState(h, np.array([c]))


def cell_backward(cell_type: str, cell_parameters, cached_forward: tuple[float, CellState],
                  output_gradient: float, state_gradient: CellState | None = None):
    """Gradients of one cell step.

    ``cached_forward`` is the ``(input_sum, prev_state)`` pair the forward step
    consumed. ``state_gradient`` carries any gradient arriving on this step's
    cell memory from the future (LSTM only).

    Returns ``(input_gradient, parameter_gradients, prev_state_gradient)``.
    """
    params = np.asarray(cell_parameters, dtype=np.float64)
    input_sum, prev_state = cached_forward
    x, passes = clamp_input(float(input_sum))
    dc = state_gradient.memory if state_gradient is not None else 0.0
    grad = np.zeros(len(params))
    dx, dhp, dcp = cell_step_grad(CELL_CODES[cell_type], params, 0, x, prev_state.hidden,
                                  prev_state.memory, float(output_gradient), dc, grad)
    if not passes:
        dx = 0.0
    return dx, grad, CellState(dhp, np.array([dcp]))
