"""Learned-update networks and their Adam optimizer.

Two single-hidden-layer MLPs drive the optimization: one maps beamforming
gradients to beamforming updates, the other maps position gradients to
position updates.  Both are trained by differentiating the unrolled update
trajectory, so their forward passes are recorded on the autodiff tape.

The hidden layer is 210 neurons wide by default; the beamforming net is
sized 2K+2 in/out and the position net K (strict sizing) or P (per-waveguide
sizing, the default wiring).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var, LEAF, MUL, ADD, RELU

log = logging.getLogger(__name__)

HIDDEN_DIM = 210
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    input_dim: int
    hidden_dim: int
    output_dim: int
    w1: np.ndarray   # (hidden, input)
    b1: np.ndarray   # (hidden,)
    w2: np.ndarray   # (output, hidden)
    b2: np.ndarray   # (output,)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        h, i, o = self.hidden_dim, self.input_dim, self.output_dim
        w1, rest = flat[: h * i].reshape(h, i), flat[h * i:]
        b1, rest = rest[:h], rest[h:]
        w2, b2 = rest[: o * h].reshape(o, h), rest[o * h:]
        return MlpParams(i, h, o, w1.copy(), b1.copy(), w2.copy(), b2.copy())

    @property
    def size(self) -> int:
        h, i, o = self.hidden_dim, self.input_dim, self.output_dim
        return h * i + h + o * h + o


def mlp_init(input_dim: int, hidden_dim: int, output_dim: int, seed: int) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    if input_dim < 1 or hidden_dim < 1 or output_dim < 1:
        raise ValueError("network dimensions must be positive")
    rng = np.random.default_rng(seed)
    lim1 = 1.0 / np.sqrt(input_dim)
    lim2 = 1.0 / np.sqrt(hidden_dim)
    return MlpParams(
        input_dim, hidden_dim, output_dim,
        w1=rng.uniform(-lim1, lim1, size=(hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-lim2, lim2, size=(output_dim, hidden_dim)),
        b2=np.zeros(output_dim),
    )


class _LayerTemplate:
    """Cached index patterns for one dense layer's tape block.

    The block layout is fixed given (m, n) and the parameter leaf bases: a
    multiply block, then bias-seeded left-to-right add chains, then an
    optional relu row.  Only the input node indices and the running tape
    base change between applications.
    """

    def __init__(self, w0: int, b0: int, m: int, n: int, apply_relu: bool):
        self.m, self.n, self.apply_relu = m, n, apply_relu
        mn = m * n
        self.mul_op = np.full(mn, MUL, np.int8)
        self.mul_pa = (w0 + np.arange(mn)).astype(np.int32)
        self.x_gather = np.tile(np.arange(n), m)
        self.add_op = np.full(mn, ADD, np.int8)
        rows = np.arange(m, dtype=np.int64)[:, None]
        cols = np.arange(n, dtype=np.int64)[None, :]
        add_pa_rel = np.empty((m, n), dtype=np.int64)
        add_pa_rel[:, 0] = 0   # absolute bias indices patched below
        if n > 1:
            add_pa_rel[:, 1:] = mn + rows * n + cols[:, : n - 1]
        self.add_pa_rel = add_pa_rel.ravel()
        self.bias_slots = np.arange(m) * n            # positions of bias parents
        self.bias_idx = (b0 + np.arange(m)).astype(np.int64)
        self.add_pb_rel = (rows * n + cols).ravel()
        self.out_rel = mn + np.arange(m, dtype=np.int64) * n + (n - 1)
        if apply_relu:
            self.relu_op = np.full(m, RELU, np.int8)
            self.neg_one = np.full(m, -1, np.int32)

    def apply(self, tape: Tape, wmat, bias, x_idx, x_val):
        m, n, mn = self.m, self.n, self.m * self.n
        base = tape.n
        prods = wmat * x_val[None, :]
        tape.emit_block(self.mul_op, self.mul_pa,
                        np.asarray(x_idx, dtype=np.int64)[self.x_gather],
                        None, prods.ravel())
        add_pa = self.add_pa_rel + base
        add_pa[self.bias_slots] = self.bias_idx
        chain = np.cumsum(np.concatenate([bias[:, None], prods], axis=1),
                          axis=1)[:, 1:]
        tape.emit_block(self.add_op, add_pa, self.add_pb_rel + base,
                        None, chain.ravel())
        out_idx = base + self.out_rel
        out_val = chain[:, -1]
        if self.apply_relu:
            relu_base = tape.n
            out_val = np.maximum(out_val, 0.0)
            tape.emit_block(self.relu_op, out_idx, self.neg_one, None, out_val)
            out_idx = relu_base + np.arange(m)
        return out_idx, out_val


class TapeMlp:
    """One network's parameters recorded as leaf blocks on a tape."""

    def __init__(self, tape: Tape, params: MlpParams):
        self.tape = tape
        self.params = params
        flat = params.flat()
        self.base = tape.n
        m = flat.size
        tape.emit_block(np.full(m, LEAF, np.int8), np.full(m, -1, np.int32),
                        np.full(m, -1, np.int32), None, flat)
        h, i, o = params.hidden_dim, params.input_dim, params.output_dim
        self.w1_base = self.base
        self.b1_base = self.base + h * i
        self.w2_base = self.b1_base + h
        self.b2_base = self.w2_base + o * h
        self._layer1 = _LayerTemplate(self.w1_base, self.b1_base, h, i, True)
        self._layer2 = _LayerTemplate(self.w2_base, self.b2_base, o, h, False)

    def forward_idx(self, x_idx: np.ndarray, x_val: np.ndarray):
        """Hidden relu layer then linear output; index/value arrays in and out."""
        p = self.params
        if len(x_idx) != p.input_dim:
            raise ValueError(f"expected {p.input_dim} inputs, got {len(x_idx)}")
        h_idx, h_val = self._layer1.apply(self.tape, p.w1, p.b1, x_idx, x_val)
        return self._layer2.apply(self.tape, p.w2, p.b2, h_idx, h_val)

    def forward(self, xs: list[Var]) -> list[Var]:
        t = self.tape
        x_idx = np.array([v.i for v in xs], dtype=np.int64)
        x_val = t.val[x_idx]
        out_idx, _ = self.forward_idx(x_idx, x_val)
        return [Var(t, int(i)) for i in out_idx]

    def grads_from(self, adj: np.ndarray) -> np.ndarray:
        """Slice this network's parameter gradients out of a full adjoint array."""
        return adj[self.base: self.base + self.params.size].copy()


def mlp_forward(params: MlpParams, x, tape: Tape | None = None):
    """Record the network and inputs on a tape and run the forward pass.

    Returns (output Vars, TapeMlp handle, input Vars); the handle exposes the
    parameter leaf blocks for gradient checks.
    """
    t = tape if tape is not None else Tape()
    net = TapeMlp(t, params)
    xs = [t.record(v) for v in np.asarray(x, dtype=float)]
    return net.forward(xs), net, xs


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    lr: float = 1e-3

    @classmethod
    def for_params(cls, params: MlpParams, lr: float) -> "AdamState":
        n = params.size
        return cls(m=np.zeros(n), v=np.zeros(n), lr=lr)


def adam_step(state: AdamState, params: MlpParams, grads: np.ndarray) -> MlpParams:
    """One bias-corrected Adam update; returns the new parameters.

    Non-finite gradients skip the step (reported via logging); the state is
    mutated in place otherwise.
    """
    grads = np.asarray(grads, dtype=float).ravel()
    if grads.size != params.size:
        raise ValueError(f"gradient size {grads.size} != parameter count {params.size}")
    if not np.all(np.isfinite(grads)):
        log.warning("non-finite gradient encountered; Adam step skipped")
        return params
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    flat = params.flat() - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.with_flat(flat)


# -- serialization -------------------------------------------------------------

def params_to_doc(params: MlpParams) -> dict:
    return {
        "w1": params.w1.ravel().tolist(),
        "b1": params.b1.tolist(),
        "w2": params.w2.ravel().tolist(),
        "b2": params.b2.tolist(),
    }


def params_from_doc(doc: dict, input_dim: int, hidden_dim: int, output_dim: int) -> MlpParams:
    return MlpParams(
        input_dim, hidden_dim, output_dim,
        w1=np.asarray(doc["w1"], dtype=float).reshape(hidden_dim, input_dim),
        b1=np.asarray(doc["b1"], dtype=float),
        w2=np.asarray(doc["w2"], dtype=float).reshape(output_dim, hidden_dim),
        b2=np.asarray(doc["b2"], dtype=float),
    )


def networks_to_doc(bvn: MlpParams, ppn: MlpParams, seed: int) -> dict:
    return {
        "bvn": params_to_doc(bvn),
        "ppn": params_to_doc(ppn),
        "dims": {
            "bvn": [bvn.input_dim, bvn.hidden_dim, bvn.output_dim],
            "ppn": [ppn.input_dim, ppn.hidden_dim, ppn.output_dim],
        },
        "seed": seed,
    }


def networks_from_doc(doc: dict) -> tuple[MlpParams, MlpParams, int]:
    bi, bh, bo = doc["dims"]["bvn"]
    pi, ph, po = doc["dims"]["ppn"]
    return (
        params_from_doc(doc["bvn"], bi, bh, bo),
        params_from_doc(doc["ppn"], pi, ph, po),
        int(doc["seed"]),
    )


def save_networks(path, bvn: MlpParams, ppn: MlpParams, seed: int):
    with open(path, "w") as fh:
        json.dump(networks_to_doc(bvn, ppn, seed), fh)


def load_networks(path) -> tuple[MlpParams, MlpParams, int]:
    with open(path) as fh:
        return networks_from_doc(json.load(fh))
