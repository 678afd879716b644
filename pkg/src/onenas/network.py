"""Execution, training and evaluation of genomes.

A genome is compiled into flat index arrays (active nodes in depth order,
incoming edges grouped per target) plus one parameter vector holding all edge
weights followed by all cell parameters. The compiled kernels release the GIL
so several genomes can train concurrently on a thread pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .cells import CELL_CODES, INPUT, cell_step, cell_step_grad, clamp_input
from .genome import Genome, active_nodes, validate, InvalidGenomeError
from .timeseries import Subsequence, stack

GRAD_CLIP = 10.0


@dataclass
class TrainingPlan:
    epochs: int = 10
    clean_epochs: int = 5
    noise_fraction: float = 0.10
    learning_rate: float = 1e-3
    momentum: float = 0.9
    noise_targets: bool = False
    grad_clip: float = GRAD_CLIP

    def __post_init__(self):
        if self.epochs < 0 or not 0 <= self.clean_epochs <= self.epochs:
            raise ValueError("need 0 <= clean_epochs <= epochs")
        if self.noise_fraction < 0:
            raise ValueError("noise_fraction must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


@dataclass
class EvaluationResult:
    mse: float
    per_step_predictions: np.ndarray  # [n_subsequences, p - 1, n_outputs]
    valid: bool
    per_subsequence_mse: np.ndarray | None = None


@dataclass
class Program:
    """Flattened, executable view of a genome."""

    node_ids: np.ndarray
    code: np.ndarray
    poff: np.ndarray
    incol: np.ndarray
    in_ptr: np.ndarray
    in_src: np.ndarray
    in_rd: np.ndarray
    in_woff: np.ndarray
    out_pos: np.ndarray
    out_col: np.ndarray
    input_columns: np.ndarray
    theta: np.ndarray

    @property
    def arrays(self):
        return (self.code, self.poff, self.incol, self.in_ptr, self.in_src, self.in_rd,
                self.in_woff)


def compile_genome(g: Genome, check: bool = True) -> Program:
    if check:
        violations = validate(g)
        if violations:
            raise InvalidGenomeError(violations)
    active = active_nodes(g)
    offsets = {}
    off = len(g.edges)
    for n in g.nodes:
        offsets[n.id] = off
        off += len(n.cell_parameters)
    order = sorted((n for n in g.nodes if n.id in active), key=lambda n: (n.depth, n.id))
    pos = {n.id: i for i, n in enumerate(order)}
    incoming: list[list[tuple[int, int, int]]] = [[] for _ in order]
    for k, e in enumerate(g.edges):
        if e.enabled and e.source in pos and e.target in pos:
            incoming[pos[e.target]].append((pos[e.source], e.recurrent_depth, k))
    in_ptr = np.zeros(len(order) + 1, dtype=np.int64)
    src, rd, woff = [], [], []
    for i, lst in enumerate(incoming):
        for s, r, k in lst:
            src.append(s)
            rd.append(r)
            woff.append(k)
        in_ptr[i + 1] = len(src)
    outs = [n for n in order if n.kind == "output"]
    outs.sort(key=lambda n: n.column)
    return Program(
        node_ids=np.array([n.id for n in order], dtype=np.int64),
        code=np.array([INPUT if n.kind == "input" else CELL_CODES[n.cell_type] for n in order],
                      dtype=np.int64),
        poff=np.array([offsets[n.id] for n in order], dtype=np.int64),
        incol=np.array([n.column if n.kind == "input" else -1 for n in order], dtype=np.int64),
        in_ptr=in_ptr,
        in_src=np.array(src, dtype=np.int64),
        in_rd=np.array(rd, dtype=np.int64),
        in_woff=np.array(woff, dtype=np.int64),
        out_pos=np.array([pos[n.id] for n in outs], dtype=np.int64),
        out_col=np.array([n.column for n in outs], dtype=np.int64),
        input_columns=np.array(sorted(n.column for n in g.nodes if n.kind == "input"),
                               dtype=np.int64),
        theta=g.parameter_vector(),
    )


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True, nogil=True)
def _run(code, poff, incol, in_ptr, in_src, in_rd, in_woff, theta, X, H, C, S, P):
    T = X.shape[0]
    n = code.shape[0]
    ok = True
    for t in range(T):
        for k in range(n):
            c = code[k]
            if c == INPUT:
                H[t, k] = X[t, incol[k]]
                C[t, k] = 0.0
                continue
            s = 0.0
            for j in range(in_ptr[k], in_ptr[k + 1]):
                tt = t - in_rd[j]
                if tt >= 0:
                    s += theta[in_woff[j]] * H[tt, in_src[j]]
            x, passes = clamp_input(s)
            hp = 0.0
            cp = 0.0
            if t > 0:
                hp = H[t - 1, k]
                cp = C[t - 1, k]
            h, cc = cell_step(c, theta, poff[k], x, hp, cp)
            if not (math.isfinite(h) and math.isfinite(cc) and math.isfinite(x)):
                ok = False
            S[t, k] = x
            P[t, k] = passes
            H[t, k] = h
            C[t, k] = cc
    return ok


@njit(cache=True, nogil=True)
def _backprop(code, poff, incol, in_ptr, in_src, in_rd, in_woff, theta, Y, out_pos, out_col,
              H, C, S, P, dH, dC, grad):
    """0.5 * sum of squared one-step-ahead errors; gradient into ``grad``."""
    T = H.shape[0]
    n = code.shape[0]
    dH[:, :] = 0.0
    dC[:, :] = 0.0
    loss = 0.0
    for t in range(T - 1):
        for o in range(out_pos.shape[0]):
            err = H[t, out_pos[o]] - Y[t + 1, out_col[o]]
            loss += 0.5 * err * err
            dH[t, out_pos[o]] += err
    for t in range(T - 1, -1, -1):
        for k in range(n - 1, -1, -1):
            c = code[k]
            if c == INPUT:
                continue
            hp = 0.0
            cp = 0.0
            if t > 0:
                hp = H[t - 1, k]
                cp = C[t - 1, k]
            ds, dhp, dcp = cell_step_grad(c, theta, poff[k], S[t, k], hp, cp, dH[t, k],
                                          dC[t, k], grad)
            if t > 0:
                dH[t - 1, k] += dhp
                dC[t - 1, k] += dcp
            if not P[t, k]:
                ds = 0.0
            if ds == 0.0:
                continue
            for j in range(in_ptr[k], in_ptr[k + 1]):
                tt = t - in_rd[j]
                if tt >= 0:
                    src = in_src[j]
                    grad[in_woff[j]] += ds * H[tt, src]
                    dH[tt, src] += ds * theta[in_woff[j]]
    return loss


@njit(cache=True, nogil=True)
def _forward_batch(code, poff, incol, in_ptr, in_src, in_rd, in_woff, theta, data, out_pos,
                   out_col, preds, sse):
    """Run every subsequence from a zero state. Returns validity."""
    n_sub, T, _ = data.shape
    n = code.shape[0]
    H = np.empty((T, n))
    C = np.empty((T, n))
    S = np.empty((T, n))
    P = np.empty((T, n), dtype=np.bool_)
    ok = True
    for q in range(n_sub):
        X = data[q]
        if not _run(code, poff, incol, in_ptr, in_src, in_rd, in_woff, theta, X, H, C, S, P):
            ok = False
        acc = 0.0
        for t in range(T):
            for o in range(out_pos.shape[0]):
                y = H[t, out_pos[o]]
                preds[q, t, o] = y
                if t < T - 1:
                    err = y - X[t + 1, out_col[o]]
                    acc += err * err
        sse[q] = acc
    return ok


@njit(cache=True, nogil=True)
def _train(code, poff, incol, in_ptr, in_src, in_rd, in_woff, theta, velocity, data, order,
           clean_epochs, noise, noise_targets, out_pos, out_col, lr, mu, clip, epoch_loss):
    """Per-subsequence Nesterov updates over ``order`` (epochs x draws).

    ``noise[e - clean_epochs, q]`` is added to the inputs of draw ``q`` in
    noisy epoch ``e``. Uses the look-ahead form of Nesterov momentum, so
    ``theta`` always holds the look-ahead point.
    """
    epochs, draws = order.shape
    _, T, ncol = data.shape
    n = code.shape[0]
    H = np.empty((T, n))
    C = np.empty((T, n))
    S = np.empty((T, n))
    P = np.empty((T, n), dtype=np.bool_)
    dH = np.empty((T, n))
    dC = np.empty((T, n))
    grad = np.empty(theta.shape[0])
    Xn = np.empty((T, ncol))
    for e in range(epochs):
        epoch_loss[e] = 0.0
        for q in range(draws):
            X = data[order[e, q]]
            Y = X
            if e >= clean_epochs:
                Xn[:, :] = X + noise[e - clean_epochs, q]
                X = Xn
                if noise_targets:
                    Y = Xn
            if not _run(code, poff, incol, in_ptr, in_src, in_rd, in_woff, theta, X, H, C, S,
                        P):
                return False
            grad[:] = 0.0
            epoch_loss[e] += _backprop(code, poff, incol, in_ptr, in_src, in_rd, in_woff, theta,
                                       Y, out_pos, out_col, H, C, S, P, dH, dC, grad)
            norm = 0.0
            for i in range(grad.shape[0]):
                norm += grad[i] * grad[i]
            norm = math.sqrt(norm)
            if not math.isfinite(norm):
                return False
            scale = 1.0
            if norm > clip:
                scale = clip / norm
            for i in range(theta.shape[0]):
                v_prev = velocity[i]
                velocity[i] = mu * v_prev - lr * scale * grad[i]
                theta[i] += -mu * v_prev + (1.0 + mu) * velocity[i]
                if not math.isfinite(theta[i]):
                    return False
    return True


# ---------------------------------------------------------------------------
# python entry points


def _as_array(seqs) -> np.ndarray:
    if isinstance(seqs, np.ndarray):
        return np.ascontiguousarray(seqs, dtype=np.float64)
    if isinstance(seqs, Subsequence):
        return np.ascontiguousarray(seqs.values[None], dtype=np.float64)
    return np.ascontiguousarray(stack(seqs), dtype=np.float64)


def forward_program(prog: Program, values: np.ndarray, theta: np.ndarray | None = None
                    ) -> tuple[np.ndarray, bool]:
    """Outputs for every row of ``values`` ([T, n_out]); row ``i`` forecasts ``i + 1``."""
    data = np.ascontiguousarray(values, dtype=np.float64)[None]
    preds = np.empty((1, data.shape[1], len(prog.out_pos)))
    sse = np.empty(1)
    th = prog.theta if theta is None else np.asarray(theta, dtype=np.float64)
    ok = _forward_batch(*prog.arrays, th, data, prog.out_pos, prog.out_col, preds, sse)
    return preds[0], bool(ok)


def forward(g: Genome, s: Subsequence | np.ndarray) -> np.ndarray:
    """Predicted output series over ``s``; row ``i`` is the forecast of row ``i + 1``.

    Non-finite activations come back as NaN/inf in the result.
    """
    values = s.values if isinstance(s, Subsequence) else np.asarray(s)
    preds, _ = forward_program(compile_genome(g), values)
    return preds


def loss_and_gradient(g: Genome, values: np.ndarray, theta: np.ndarray | None = None,
                      targets: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Half sum of squared one-step errors over ``values`` and its gradient
    w.r.t. ``g.parameter_vector()`` ordering."""
    prog = compile_genome(g)
    th = prog.theta if theta is None else np.asarray(theta, dtype=np.float64)
    X = np.ascontiguousarray(values, dtype=np.float64)
    Y = X if targets is None else np.ascontiguousarray(targets, dtype=np.float64)
    T, n = X.shape[0], len(prog.code)
    H, C, S = np.empty((T, n)), np.empty((T, n)), np.empty((T, n))
    P = np.empty((T, n), dtype=np.bool_)
    _run(*prog.arrays, th, X, H, C, S, P)
    grad = np.zeros(len(th))
    loss = _backprop(*prog.arrays, th, Y, prog.out_pos, prog.out_col, H, C, S, P,
                     np.empty((T, n)), np.empty((T, n)), grad)
    return float(loss), grad


def make_noise(data: np.ndarray, order: np.ndarray, plan: TrainingPlan,
               input_columns: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Gaussian augmentation for the noisy epochs.

    Per draw, noise on each input column has mean ``fraction * column mean``
    and standard deviation ``fraction * column std`` of that subsequence.
    """
    noisy = plan.epochs - plan.clean_epochs
    shape = (noisy, order.shape[1], data.shape[1], data.shape[2])
    noise = np.zeros(shape)
    if noisy == 0 or plan.noise_fraction == 0 or len(input_columns) == 0:
        return noise
    mean = data.mean(axis=1)[:, input_columns]
    std = data.std(axis=1)[:, input_columns]
    picks = order[plan.clean_epochs:]
    z = rng.standard_normal((noisy, order.shape[1], data.shape[1], len(input_columns)))
    noise[..., input_columns] = plan.noise_fraction * (
        mean[picks][:, :, None, :] + std[picks][:, :, None, :] * z)
    return noise


def train_program(prog: Program, data: np.ndarray, plan: TrainingPlan, rng: np.random.Generator,
                  theta: np.ndarray | None = None, velocity: np.ndarray | None = None,
                  order: np.ndarray | None = None):
    """Train ``prog`` on ``data`` ([n, T, cols]). Returns (theta, velocity, ok, epoch_losses)."""
    th = (prog.theta if theta is None else theta).astype(np.float64, copy=True)
    vel = np.zeros_like(th) if velocity is None else velocity.astype(np.float64, copy=True)
    n = data.shape[0]
    if order is None:
        order = np.stack([rng.permutation(n) for _ in range(plan.epochs)]) if plan.epochs else \
            np.zeros((0, n), dtype=np.int64)
    order = np.ascontiguousarray(order, dtype=np.int64)
    noise = make_noise(data, order, plan, prog.input_columns, rng)
    losses = np.zeros(order.shape[0])
    ok = _train(*prog.arrays, th, vel, data, order, plan.clean_epochs, noise, plan.noise_targets,
                prog.out_pos, prog.out_col, plan.learning_rate, plan.momentum, plan.grad_clip,
                losses)
    return th, vel, bool(ok), losses


def train(g: Genome, train_set: Sequence[Subsequence], plan: TrainingPlan,
          rng: np.random.Generator) -> Genome:
    """Backprop-through-time training; only weights and cell parameters change.

    An empty training set returns ``g`` unchanged. Divergence returns ``g``'s
    original weights with the fitness marked invalid (NaN).
    """
    if not train_set:
        return g
    prog = compile_genome(g)
    data = _as_array(train_set)
    theta, _, ok, losses = train_program(prog, data, plan, rng)
    through = max(max(s.index for s in train_set), g.trained_through)
    if not ok:
        return g.with_(fitness=float("nan"), trained_through=through)
    return g.with_parameters(theta, trained_through=through,
                             metadata={**g.metadata, "epoch_losses": losses.tolist()})


def evaluate_program(prog: Program, data: np.ndarray, theta: np.ndarray | None = None
                     ) -> EvaluationResult:
    if data.shape[0] == 0:
        return EvaluationResult(float("nan"), np.zeros((0, 0, len(prog.out_pos))), False)
    th = prog.theta if theta is None else theta
    n_sub, T, _ = data.shape
    preds = np.empty((n_sub, T, len(prog.out_pos)))
    sse = np.empty(n_sub)
    ok = _forward_batch(*prog.arrays, th, data, prog.out_pos, prog.out_col, preds, sse)
    denom = (T - 1) * len(prog.out_pos)
    mse = float(sse.sum() / (n_sub * denom))
    valid = bool(ok) and math.isfinite(mse)
    return EvaluationResult(mse if valid else float("nan"), preds[:, :-1], valid, sse / denom)


def evaluate(g: Genome, validation_set) -> EvaluationResult:
    """Mean squared one-step error over every subsequence, each from a reset state."""
    data = _as_array(validation_set) if len(validation_set) else np.zeros((0, 0, 0))
    if data.shape[0] == 0:
        return EvaluationResult(float("nan"), np.zeros((0, 0, 0)), False)
    return evaluate_program(compile_genome(g), data)
