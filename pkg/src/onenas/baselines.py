"""Comparison forecasters.

All predictors follow a predict-then-observe protocol: ``predict_next()`` only
sees values passed to ``observe()`` earlier. Classical methods and online
ARIMA are univariate; the fixed LSTM/GRU networks take full rows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .genome import EdgeGene, Genome, NodeGene, init_cell_parameters, init_weight, Counter
from .network import TrainingPlan, compile_genome, forward_program, train_program

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# stateless forms


def naive_predict(history: Sequence[float]) -> float | None:
    return float(history[-1]) if len(history) else None


def moving_average_predict(history: Sequence[float], n: int = 3) -> float | None:
    if not len(history):
        return None
    if n < 1:
        raise ValueError("window must be >= 1")
    return float(np.mean(np.asarray(history, dtype=float)[-n:]))


def exp_smoothing_predict(history: Sequence[float], alpha: float = 0.2) -> float | None:
    _check_alpha(alpha)
    if not len(history):
        return None
    pred = float(history[0])
    for x in history[1:]:
        pred = alpha * float(x) + (1 - alpha) * pred
    return pred


def online_linear_regression_predict(history: Sequence[float], n: int = 3) -> float | None:
    """Least-squares line through the last ``n`` points, extrapolated one step."""
    if not len(history):
        return None
    y = np.asarray(history, dtype=float)[-n:]
    if len(y) < 2:
        return float(y[-1])
    x = np.arange(len(y), dtype=float)
    xm, ym = x.mean(), y.mean()
    slope = np.dot(x - xm, y - ym) / np.dot(x - xm, x - xm)
    return float(ym + slope * (len(y) - xm))


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"smoothing factor must be in (0, 1), got {alpha}")


# ---------------------------------------------------------------------------
# stateful predictors


class OnlinePredictor:
    name = "predictor"

    def observe(self, value) -> None:
        raise NotImplementedError

    def predict_next(self) -> float | None:
        raise NotImplementedError


class Naive(OnlinePredictor):
    name = "naive"

    def __init__(self):
        self.last = None

    def observe(self, value):
        self.last = float(value)

    def predict_next(self):
        return self.last


class MovingAverage(OnlinePredictor):
    def __init__(self, n: int = 3):
        if n < 1:
            raise ValueError("window must be >= 1")
        self.n = n
        self.buf: list[float] = []
        self.name = f"ma{n}"

    def observe(self, value):
        self.buf.append(float(value))
        del self.buf[:-self.n]

    def predict_next(self):
        return moving_average_predict(self.buf, self.n)


class ExpSmoothing(OnlinePredictor):
    def __init__(self, alpha: float = 0.2):
        _check_alpha(alpha)
        self.alpha = alpha
        self.pred = None
        self.name = f"exp{alpha:g}"

    def observe(self, value):
        x = float(value)
        self.pred = x if self.pred is None else self.alpha * x + (1 - self.alpha) * self.pred

    def predict_next(self):
        return self.pred


class OnlineLinearRegression(OnlinePredictor):
    def __init__(self, n: int = 3):
        self.n = n
        self.buf: list[float] = []
        self.name = f"linreg{n}"

    def observe(self, value):
        self.buf.append(float(value))
        del self.buf[:-self.n]

    def predict_next(self):
        return online_linear_regression_predict(self.buf, self.n)


# ---------------------------------------------------------------------------
# online ARIMA: an AR(mk) model on d-times differenced data


@dataclass
class ArimaState:
    mk: int = 10
    d: int = 1
    learning_rate: float = 0.1
    epsilon: float = 1e-4
    newton: bool = False
    bound: float | None = 0.5  # coefficients are projected onto [-bound, bound]
    coefficients: np.ndarray = None
    second_order_matrix: np.ndarray | None = None  # inverse of A for ONS
    history: list = field(default_factory=list)
    t: int = 0
    resets: int = 0

    def __post_init__(self):
        if self.coefficients is None:
            self.coefficients = np.zeros(self.mk)
        if self.newton and self.second_order_matrix is None:
            self.second_order_matrix = np.eye(self.mk) / self.epsilon

    def lags(self) -> np.ndarray:
        """The last ``mk`` d-th differences, newest first, zero-padded."""
        out = np.zeros(self.mk)
        h = np.asarray(self.history[-(self.mk + self.d):], dtype=float)
        diffs = np.diff(h, self.d) if len(h) > self.d else np.zeros(0)
        k = min(self.mk, len(diffs))
        if k:
            out[:k] = diffs[::-1][:k]
        return out

    def baseline(self) -> float:
        """Sum of the lower-order differences at the last step (naive when d=1)."""
        h = np.asarray(self.history[-(self.d + 1):], dtype=float)
        total = 0.0
        for i in range(self.d):
            if len(h) > i:
                total += float(np.diff(h, i)[-1])
        return total

    def forecast(self) -> float:
        return float(self.coefficients @ self.lags()) + self.baseline()


def _arima_step(state: ArimaState, x: float) -> tuple[float, ArimaState]:
    lags = state.lags()
    pred = float(state.coefficients @ lags) + state.baseline()
    if state.history:
        state.t += 1
        g = 2.0 * (pred - x) * lags
        if state.newton:
            A = state.second_order_matrix
            Ag = A @ g
            A = A - np.outer(Ag, Ag) / (1.0 + g @ Ag)
            if not (np.all(np.isfinite(A)) and np.all(np.diag(A) > 0)):
                log.warning("ONS matrix lost positive definiteness; re-initializing")
                A = np.eye(state.mk) / state.epsilon
                state.resets += 1
            state.second_order_matrix = A
            step = state.learning_rate * (A @ g)
        else:
            step = state.learning_rate / math.sqrt(state.t) * g
        coef = state.coefficients - step
        if state.bound is not None:
            coef = np.clip(coef, -state.bound, state.bound)
        if not np.all(np.isfinite(coef)):
            log.warning("online ARIMA diverged; resetting coefficients")
            coef = np.zeros(state.mk)
            state.resets += 1
        state.coefficients = coef
    state.history.append(float(x))
    del state.history[:-(state.mk + state.d + 1)]
    return pred, state


def arima_ogd_step(state: ArimaState, new_observation: float) -> tuple[float, ArimaState]:
    """Forecast of ``new_observation`` made before seeing it, then one online
    gradient step with size ``learning_rate / sqrt(t)``."""
    return _arima_step(state, new_observation)


def arima_ons_step(state: ArimaState, new_observation: float) -> tuple[float, ArimaState]:
    """As ``arima_ogd_step`` but preconditioned by the running inverse of
    ``epsilon * I + sum g g^T`` (Sherman-Morrison rank-one updates)."""
    if not state.newton:
        raise ValueError("state was not initialized for the Newton step")
    return _arima_step(state, new_observation)


class OnlineArima(OnlinePredictor):
    # Synthetic-stream defaults from a grid search on normalized AR data.
    OGD_DEFAULTS = {"learning_rate": 0.1, "epsilon": 1.0}
    ONS_DEFAULTS = {"learning_rate": 5.0, "epsilon": 10.0}

    def __init__(self, method: str = "ons", mk: int = 10, d: int = 1,
                 learning_rate: float | None = None, epsilon: float | None = None):
        if method not in ("ogd", "ons"):
            raise ValueError("method must be 'ogd' or 'ons'")
        defaults = self.ONS_DEFAULTS if method == "ons" else self.OGD_DEFAULTS
        self.state = ArimaState(mk=mk, d=d, newton=method == "ons",
                                learning_rate=defaults["learning_rate"] if learning_rate is None
                                else learning_rate,
                                epsilon=defaults["epsilon"] if epsilon is None else epsilon)
        self.step = arima_ons_step if method == "ons" else arima_ogd_step
        self.name = f"arima_{method}"

    def observe(self, value):
        self.step(self.state, float(value))

    def predict_next(self):
        return self.state.forecast() if self.state.history else None


# ---------------------------------------------------------------------------
# fixed-architecture recurrent networks trained online


def layered_genome(cell: str, layers: int, input_columns: Sequence[int],
                   output_columns: Sequence[int], rng: np.random.Generator,
                   hidden_size: int | None = None) -> Genome:
    """Fully connected layered network of scalar cells; simple input/output nodes."""
    if cell not in ("lstm", "gru"):
        raise ValueError("cell must be 'lstm' or 'gru'")
    if layers not in (1, 2):
        raise ValueError("layers must be 1 or 2")
    ids = Counter()
    width = hidden_size or len(input_columns)
    inputs = [NodeGene(ids.next(), "input", "simple", 0.0, (), c) for c in input_columns]
    prev = inputs
    nodes, edges = list(inputs), []
    for layer in range(layers):
        depth = (layer + 1) / (layers + 1)
        cur = [NodeGene(ids.next(), "hidden", cell, depth, init_cell_parameters(cell, rng))
               for _ in range(width)]
        edges += [EdgeGene(ids.next(), a.id, b.id, init_weight(rng)) for b in cur for a in prev]
        nodes += cur
        prev = cur
    outputs = [NodeGene(ids.next(), "output", "simple", 1.0, init_cell_parameters("simple", rng),
                        c) for c in output_columns]
    edges += [EdgeGene(ids.next(), a.id, b.id, init_weight(rng)) for b in outputs for a in prev]
    return Genome(tuple(nodes + outputs), tuple(edges))


class FixedRNN(OnlinePredictor):
    """Layered LSTM/GRU trained by truncated BPTT over a trailing window.

    After each observation the network takes one Nesterov step on the loss of
    the last ``window`` one-step forecasts, unrolled from a zero state at the
    start of the window.
    """

    def __init__(self, cell: str = "lstm", layers: int = 1, window: int = 30,
                 learning_rate: float = 1e-3, input_columns: Sequence[int] = (0,),
                 output_column: int = 0, momentum: float = 0.9, seed: int = 0):
        if window < 2:
            raise ValueError("window must be >= 2")
        self.cell, self.layers, self.window = cell, layers, window
        self.input_columns = list(input_columns)
        self.output_column = output_column
        self.rng = np.random.default_rng(seed)
        self.plan = TrainingPlan(epochs=1, clean_epochs=1, noise_fraction=0.0,
                                 learning_rate=learning_rate, momentum=momentum)
        self.rows: list[np.ndarray] = []
        self.resets = 0
        self.name = f"{cell}{layers}"
        self._init_network()

    def _init_network(self):
        self.genome = layered_genome(self.cell, self.layers, self.input_columns,
                                     [self.output_column], self.rng)
        self.prog = compile_genome(self.genome)
        self.theta = self.prog.theta.copy()
        self.velocity = np.zeros_like(self.theta)

    def observe(self, value):
        row = np.atleast_1d(np.asarray(value, dtype=float))
        self.rows.append(row)
        del self.rows[:-(self.window + 1)]
        if len(self.rows) < 2:
            return
        data = np.stack(self.rows)[None]
        theta, vel, ok, _ = train_program(self.prog, data, self.plan, self.rng, theta=self.theta,
                                          velocity=self.velocity,
                                          order=np.zeros((1, 1), dtype=np.int64))
        if not ok:
            log.warning("%s diverged; re-initializing weights", self.name)
            self.resets += 1
            self._init_network()
            return
        self.theta, self.velocity = theta, vel

    def predict_next(self):
        if not self.rows:
            return None
        window = np.stack(self.rows[-self.window:])
        out, ok = forward_program(self.prog, window, self.theta)
        y = float(out[-1, 0])
        if not ok or not math.isfinite(y):
            return float(window[-1, self.output_column])
        return y


def fixed_rnn_online(cell: str, layers: int, window: int, learning_rate: float, stream,
                     seed: int = 0, input_columns: Sequence[int] | None = None,
                     output_column: int = 0) -> np.ndarray:
    """Prequential forecasts of ``stream`` ([N] or [N, cols]); entry 0 is NaN."""
    data = np.asarray(stream, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    cols = list(range(data.shape[1])) if input_columns is None else list(input_columns)
    model = FixedRNN(cell, layers, window, learning_rate, cols, output_column, seed=seed)
    return run_prequential(model, data)


RNN_SETTINGS = {
    ("lstm", 1): {"window": 30, "learning_rate": 1e-3},
    ("gru", 1): {"window": 30, "learning_rate": 1e-3},
    ("lstm", 2): {"window": 20, "learning_rate": 1e-3},
    ("gru", 2): {"window": 20, "learning_rate": 2e-3},
}


def run_prequential(model: OnlinePredictor, stream) -> np.ndarray:
    """Forecast every element before observing it. Missing forecasts are NaN."""
    preds = np.full(len(stream), np.nan)
    for t, x in enumerate(stream):
        p = model.predict_next()
        if p is not None:
            preds[t] = p
        model.observe(x)
    return preds


def make_predictor(name: str, **kw) -> OnlinePredictor:
    """Build a baseline from a short name like ``ma3``, ``exp0.2``, ``arima_ons``, ``gru2``."""
    if name == "naive":
        return Naive()
    if name.startswith("ma"):
        return MovingAverage(int(name[2:] or 3))
    if name.startswith("exp"):
        return ExpSmoothing(float(name[3:] or 0.2))
    if name.startswith("linreg"):
        return OnlineLinearRegression(int(name[6:] or 3))
    if name in ("arima_ogd", "arima_ons"):
        return OnlineArima(name.split("_")[1], **kw)
    if name[:-1] in ("lstm", "gru") and name[-1] in "12":
        settings = dict(RNN_SETTINGS[(name[:-1], int(name[-1]))])
        settings.update(kw)
        return FixedRNN(name[:-1], int(name[-1]), **settings)
    raise ValueError(f"unknown predictor {name!r}")
