"""Stacked LSTM memory blocks with an affine head, trained by BPTT and RMSProp.

Everything runs in float64 numpy. Gate rows inside every block are stacked in
the order ``store, out, forget, in`` (the last one is the tanh input network).

Shapes used throughout: a batch of subsequences is ``(B, L, n)``; a single
subsequence ``(L, n)`` is accepted wherever a batch is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .signal import StandardizationStats

log = logging.getLogger(__name__)

GATES = ("store", "out", "forget", "in")


def sigmoid(z):
    # tanh form: no overflow for large |z| and no masking
    return 0.5 + 0.5 * np.tanh(0.5 * z)


@dataclass(eq=False)
class LstmBlock:
    """One memory block: ``Wx (4c, n_in)``, ``Wh (4c, c)``, ``b (4c,)``."""

    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray

    @property
    def cells(self) -> int:
        return self.Wh.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.Wx.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(W^x, W^h, b)`` views for one gate."""
        c = self.cells
        i = GATES.index(name)
        rows = slice(i * c, (i + 1) * c)
        return self.Wx[rows], self.Wh[rows], self.b[rows]


@dataclass(eq=False)
class LstmNetwork:
    blocks: list[LstmBlock]
    W_fc: np.ndarray
    b_fc: np.ndarray
    input_stats: StandardizationStats | None = None
    output_stats: StandardizationStats | None = None

    def __post_init__(self):
        width = self.blocks[0].n_inputs
        for i, blk in enumerate(self.blocks):
            c = blk.cells
            if blk.Wx.shape != (4 * c, width) or blk.Wh.shape != (4 * c, c) or blk.b.shape != (4 * c,):
                raise ValueError(f"block {i} has inconsistent shapes")
            width = c
        if self.W_fc.shape[1] != width or self.b_fc.shape != (self.W_fc.shape[0],):
            raise ValueError("output head does not match the last block")

    @property
    def architecture(self) -> tuple[int, ...]:
        return tuple(b.cells for b in self.blocks)

    @property
    def n_inputs(self) -> int:
        return self.blocks[0].n_inputs

    @property
    def n_outputs(self) -> int:
        return self.W_fc.shape[0]

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order; updates happen in place."""
        out = []
        for blk in self.blocks:
            out += [blk.Wx, blk.Wh, blk.b]
        return out + [self.W_fc, self.b_fc]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "LstmNetwork":
        return LstmNetwork(
            [LstmBlock(b.Wx.copy(), b.Wh.copy(), b.b.copy()) for b in self.blocks],
            self.W_fc.copy(), self.b_fc.copy(), self.input_stats, self.output_stats,
        )


def parameter_count(architecture: Sequence[int], n_inputs: int, n_outputs: int) -> int:
    if not architecture:
        raise ValueError("architecture needs at least one block")
    total, width = 0, n_inputs
    for cells in architecture:
        total += 4 * (cells * (width + cells) + cells)
        width = cells
    return total + n_outputs * width + n_outputs


def init_network(architecture: Sequence[int], n_inputs: int, n_outputs: int,
                 rng: np.random.Generator, forget_bias: float = 1.0) -> LstmNetwork:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights, forget bias 1."""
    if not architecture or min(architecture) < 1:
        raise ValueError(f"invalid architecture {architecture}")
    blocks, width = [], n_inputs
    for c in architecture:
        bound = 1.0 / np.sqrt(width + c)
        Wx = rng.uniform(-bound, bound, (4 * c, width))
        Wh = rng.uniform(-bound, bound, (4 * c, c))
        b = np.zeros(4 * c)
        b[2 * c:3 * c] = forget_bias
        blocks.append(LstmBlock(Wx, Wh, b))
        width = c
    bound = 1.0 / np.sqrt(width)
    W_fc = rng.uniform(-bound, bound, (n_outputs, width))
    return LstmNetwork(blocks, W_fc, np.zeros(n_outputs))


def zeros_like_network(net: LstmNetwork) -> LstmNetwork:
    return LstmNetwork(
        [LstmBlock(np.zeros_like(b.Wx), np.zeros_like(b.Wh), np.zeros_like(b.b)) for b in net.blocks],
        np.zeros_like(net.W_fc), np.zeros_like(net.b_fc), net.input_stats, net.output_stats,
    )


# --- forward / backward ----------------------------------------------------

@dataclass(eq=False)
class _BlockCache:
    x: np.ndarray       # (B, L, n_in)
    h: np.ndarray       # (B, L+1, c), h[:, 0] is the zero initial state
    c: np.ndarray       # (B, L+1, c)
    gates: np.ndarray   # (B, L, 4c) activated gate values


@dataclass(eq=False)
class ForwardCache:
    blocks: list[_BlockCache]
    y: np.ndarray
    squeeze: bool
    params_id: tuple = field(default=())


def _block_forward(blk: LstmBlock, x: np.ndarray, keep: bool):
    B, L, _ = x.shape
    c = blk.cells
    # input projections for every step at once; only the recurrence is sequential
    zx = x @ blk.Wx.T + blk.b
    WhT = blk.Wh.T
    h = np.zeros((B, L + 1, c))
    cs = np.zeros((B, L + 1, c))
    gates = np.empty((B, L, 4 * c)) if keep else None
    h_t = np.zeros((B, c))
    c_t = np.zeros((B, c))
    for t in range(L):
        z = zx[:, t] + h_t @ WhT
        g = np.empty_like(z)
        g[:, :3 * c] = sigmoid(z[:, :3 * c])
        g[:, 3 * c:] = np.tanh(z[:, 3 * c:])
        g_store, g_out, g_forget, a_in = g[:, :c], g[:, c:2 * c], g[:, 2 * c:3 * c], g[:, 3 * c:]
        c_t = c_t * g_forget + a_in * g_store
        h_t = np.tanh(c_t) * g_out
        h[:, t + 1] = h_t
        cs[:, t + 1] = c_t
        if keep:
            gates[:, t] = g
    return h, cs, gates


def _params_id(net: LstmNetwork) -> tuple:
    return tuple(id(p) for p in net.parameters())


def forward(net: LstmNetwork, inputs: np.ndarray, cache: bool = False):
    """Run the network from zero state over ``inputs`` (``(L, n)`` or ``(B, L, n)``).

    Returns ``(y, cache)``; ``cache`` is ``None`` unless requested.
    """
    x = np.asarray(inputs, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != net.n_inputs:
        raise ValueError(f"expected input width {net.n_inputs}, got shape {np.shape(inputs)}")
    caches = []
    for blk in net.blocks:
        h, cs, gates = _block_forward(blk, x, cache)
        if cache:
            caches.append(_BlockCache(x, h, cs, gates))
        x = h[:, 1:]
    y = x @ net.W_fc.T + net.b_fc
    out = y[0] if squeeze else y
    if not cache:
        return out, None
    return out, ForwardCache(caches, y, squeeze, _params_id(net))


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> float:
    """Mean of the squared differences over time steps and output channels."""
    prediction = np.asarray(prediction, dtype=float)
    target = np.asarray(target, dtype=float)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    return float(np.mean((prediction - target) ** 2))


def backward(net: LstmNetwork, cache: ForwardCache | None, target: np.ndarray) -> LstmNetwork:
    """Exact gradient of ``mse_loss`` averaged over the batch.

    The result is returned as a network-shaped container of gradient arrays.
    """
    if cache is None or not isinstance(cache, ForwardCache):
        raise ValueError("backward() needs the cache of forward(..., cache=True)")
    if cache.params_id != _params_id(net) or len(cache.blocks) != len(net.blocks):
        raise ValueError("stale cache: it was produced by a different network")
    target = np.asarray(target, dtype=float)
    if cache.squeeze:
        target = target[None]
    y = cache.y
    if target.shape != y.shape:
        raise ValueError(f"target shape {target.shape} does not match prediction {y.shape}")

    grads = zeros_like_network(net)
    dy = 2.0 * (y - target) / y.size
    top = cache.blocks[-1].h[:, 1:]
    grads.W_fc[...] = _contract(dy, top)
    grads.b_fc[...] = dy.sum(axis=(0, 1))
    dh_above = dy @ net.W_fc            # (B, L, c_last)

    for blk, bc, g in zip(reversed(net.blocks), reversed(cache.blocks), reversed(grads.blocks)):
        dh_above = _block_backward(blk, bc, dh_above, g)
    return grads


def _contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum_{batch,time} a[..., i] * b[..., j]`` as one matrix product."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _block_backward(blk: LstmBlock, bc: _BlockCache, dh_above: np.ndarray, g: LstmBlock) -> np.ndarray:
    B, L, _ = dh_above.shape
    c = blk.cells
    Wh = blk.Wh
    dz = np.empty((B, L, 4 * c))
    dh_next = np.zeros((B, c))
    dc_next = np.zeros((B, c))
    for t in range(L - 1, -1, -1):
        gt = bc.gates[:, t]
        g_store, g_out, g_forget, a_in = gt[:, :c], gt[:, c:2 * c], gt[:, 2 * c:3 * c], gt[:, 3 * c:]
        c_prev = bc.c[:, t]
        tc = np.tanh(bc.c[:, t + 1])
        dh = dh_above[:, t] + dh_next
        dc = dh * g_out * (1.0 - tc * tc) + dc_next
        d = dz[:, t]
        d[:, :c] = dc * a_in * g_store * (1.0 - g_store)
        d[:, c:2 * c] = dh * tc * g_out * (1.0 - g_out)
        d[:, 2 * c:3 * c] = dc * c_prev * g_forget * (1.0 - g_forget)
        d[:, 3 * c:] = dc * g_store * (1.0 - a_in * a_in)
        dc_next = dc * g_forget
        dh_next = d @ Wh
    g.Wx[...] = _contract(dz, bc.x)
    g.Wh[...] = _contract(dz, bc.h[:, :-1])
    g.b[...] = dz.sum(axis=(0, 1))
    return dz @ blk.Wx


# --- optimisation ----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-7
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.rmsprop_epsilon <= 0:
            raise ValueError("rmsprop_epsilon must be positive")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, epoch: int, batch: int, history: list[float]):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.history = history


def rmsprop_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                 state: list[np.ndarray] | None, config: TrainConfig) -> list[np.ndarray]:
    """In-place RMSProp update; returns the (possibly new) squared-gradient state."""
    if state is None:
        state = [np.zeros_like(p) for p in params]
    rho, eps, lr = config.rmsprop_decay, config.rmsprop_epsilon, config.learning_rate
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    for p, g, v in zip(params, grads, state):
        v *= rho
        v += (1.0 - rho) * g * g
        p -= lr * g / np.sqrt(v + eps)
    return state


def _clip(grads: list[np.ndarray], max_norm: float) -> None:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm


def train(net: LstmNetwork, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig,
          callback=None) -> tuple[LstmNetwork, list[float]]:
    """Mini-batch RMSProp training on standardized subsequence tensors.

    ``inputs`` is ``(n_sub, L, n_in)`` and ``targets`` ``(n_sub, L, n_out)``.
    The network is updated in place and returned with the per-epoch mean
    training loss. Mini-batch membership is reshuffled every epoch.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if inputs.shape[0] == 0:
        raise ValueError("empty training set")
    if inputs.shape[:2] != targets.shape[:2]:
        raise ValueError("inputs and targets disagree in count or length")
    rng = np.random.default_rng(config.seed)
    params = net.parameters()
    state = None
    history: list[float] = []
    n = inputs.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            y, cache = forward(net, inputs[idx], cache=True)
            loss = mse_loss(y, targets[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {bi}",
                                       epoch, bi, history)
            grads = backward(net, cache, targets[idx]).parameters()
            if config.clip_norm is not None:
                _clip(grads, config.clip_norm)
            try:
                state = rmsprop_step(params, grads, state, config)
            except FloatingPointError:
                raise TrainingDiverged(f"non-finite gradient at epoch {epoch}, batch {bi}",
                                       epoch, bi, history) from None
            total += loss * len(idx)
        history.append(total / n)
        log.debug("epoch %d loss %.6g", epoch, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return net, history
