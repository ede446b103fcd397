"""The alternating graph-ConvLSTM cell.

One cell keeps three recurrent states per node: a cell state C (velocity-
like), a hidden state H (encodes the internal force left for the next
step), and an accumulation state Y (position-like, the running sum of C).
C and Y update alternately each step, mirroring the second/first-order
update pair of an explicit Euler integrator, with the input and forget
gates acting as learned energy losses.

All peephole connections are graph convolutions, not Hadamard products;
the input and forget gates read the pre-update accumulation Y_{t-1} while
the output gate reads the post-update Y_t. That ordering is normative and
probed by tests. Parameter count is independent of the node count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, DimensionError, NumericFaultError
from .graph import Graph, graph_conv
from .tensor import Tensor, add, add_bias, as_tensor, hadamard, sigmoid, tanh

WEIGHT_NAMES = ("w_xi", "w_xf", "w_xc", "w_xo",
                "w_hi", "w_hf", "w_hc", "w_ho",
                "w_ci", "w_cf", "w_co")
BIAS_NAMES = ("b_i", "b_f", "b_c", "b_o")
PARAM_NAMES = WEIGHT_NAMES + BIAS_NAMES


@dataclass
class CellParams:
    """The 15 learnable tensors of one cell.

    Input weights are k_x-by-k_h, recurrent and peephole weights k_h-by-k_h,
    biases length k_h (shared across nodes). Total entry count is
    4*k_x*k_h + 7*k_h^2 + 4*k_h regardless of graph size.
    """

    w_xi: Tensor
    w_xf: Tensor
    w_xc: Tensor
    w_xo: Tensor
    w_hi: Tensor
    w_hf: Tensor
    w_hc: Tensor
    w_ho: Tensor
    w_ci: Tensor
    w_cf: Tensor
    w_co: Tensor
    b_i: Tensor
    b_f: Tensor
    b_c: Tensor
    b_o: Tensor

    @property
    def k_x(self) -> int:
        return self.w_xi.shape[0]

    @property
    def k_h(self) -> int:
        return self.w_xi.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def zero_(self) -> "CellParams":
        for t in self.tensors().values():
            t.data[...] = 0.0
        return self


@dataclass
class CellState:
    """Per-layer recurrent triple: cell state C, hidden state H, accumulation Y."""

    c: Tensor
    h: Tensor
    y: Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def init_cell_params(k_x: int, k_h: int, rng: np.random.Generator) -> CellParams:
    """Glorot-uniform weights; zero biases except the forget bias at 1
    (standard practice against early vanishing memory)."""
    if k_x < 1 or k_h < 1:
        raise ContractError(f"channel widths must be >= 1, got k_x={k_x}, k_h={k_h}")
    w_x = [glorot_uniform(rng, k_x, k_h) for _ in range(4)]
    w_h = [glorot_uniform(rng, k_h, k_h) for _ in range(4)]
    w_c = [glorot_uniform(rng, k_h, k_h) for _ in range(3)]
    return CellParams(
        *w_x, *w_h, *w_c,
        b_i=Tensor(np.zeros(k_h), requires_grad=True),
        b_f=Tensor(np.ones(k_h), requires_grad=True),
        b_c=Tensor(np.zeros(k_h), requires_grad=True),
        b_o=Tensor(np.zeros(k_h), requires_grad=True),
    )


def zero_cell_state(num_nodes: int, k_h: int) -> CellState:
    return CellState(
        c=Tensor(np.zeros((num_nodes, k_h))),
        h=Tensor(np.zeros((num_nodes, k_h))),
        y=Tensor(np.zeros((num_nodes, k_h))),
    )


def cell_init(g: Graph, k_x: int, k_h: int, seed) -> tuple[CellParams, CellState]:
    """Fresh parameters and an all-zero state for one cell on a graph.

    ``seed`` may be an int or an np.random.Generator (for sharing a stream
    across the cells of a network).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return init_cell_params(k_x, k_h, rng), zero_cell_state(g.num_nodes, k_h)


def param_count(p: CellParams) -> int:
    return sum(t.size for t in p.tensors().values())


def _guard(name: str, t: Tensor) -> Tensor:
    if np.isnan(t.data).any():
        raise NumericFaultError(f"NaN in {name}")
    return t


def _gate_pre(g: Graph, x, w_x, h, w_h, peek, w_peek, bias) -> Tensor:
    # fixed summation order, so probe tests can recompose values bit-exactly:
    # ((conv_x + conv_h) + conv_peek) + bias
    pre = add(graph_conv(g, x, w_x), graph_conv(g, h, w_h))
    if peek is not None:
        pre = add(pre, graph_conv(g, peek, w_peek))
    return add_bias(pre, bias)


def force_tensor(g: Graph, p: CellParams, s: CellState, x) -> Tensor:
    """The encoded total force applied to each node's neighbourhood:
    tanh(conv(x, w_xc) + conv(h, w_hc) + b_c). The cell state update uses
    exactly this value."""
    x = _check_input(g, p, x)
    return _guard("force", tanh(_gate_pre(g, x, p.w_xc, s.h, p.w_hc, None, None, p.b_c)))


def _check_input(g: Graph, p: CellParams, x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] != g.num_nodes or x.shape[1] != p.k_x:
        raise DimensionError(
            f"cell input must be ({g.num_nodes}, {p.k_x}), got {x.shape}")
    return x


def cell_step_detailed(
    g: Graph,
    p: CellParams,
    s: CellState,
    x,
    y_extra: Optional[Tensor] = None,
) -> tuple[CellState, dict[str, Tensor]]:
    """One recurrence step, also returning the gate tensors for probes.

    Update order: input gate i and forget gate f read the pre-update
    accumulation s.y; the cell state C then updates; Y accumulates C (plus
    the optional skip term ``y_extra``, added after C); the output gate o
    reads the post-update Y; finally H = o * tanh(C).
    """
    x = _check_input(g, p, x)

    i = _guard("input gate", sigmoid(_gate_pre(g, x, p.w_xi, s.h, p.w_hi, s.y, p.w_ci, p.b_i)))
    f = _guard("forget gate", sigmoid(_gate_pre(g, x, p.w_xf, s.h, p.w_hf, s.y, p.w_cf, p.b_f)))
    force = force_tensor(g, p, s, x)
    c_new = _guard("cell state", add(hadamard(f, s.c), hadamard(i, force)))
    y_new = add(s.y, c_new)
    if y_extra is not None:
        y_new = add(y_new, as_tensor(y_extra))
    _guard("accumulation state", y_new)
    o = _guard("output gate", sigmoid(_gate_pre(g, x, p.w_xo, s.h, p.w_ho, y_new, p.w_co, p.b_o)))
    h_new = _guard("hidden state", hadamard(o, tanh(c_new)))

    gates = {"i": i, "f": f, "o": o, "force": force}
    return CellState(c=c_new, h=h_new, y=y_new), gates


def cell_step(g: Graph, p: CellParams, s: CellState, x,
              y_extra: Optional[Tensor] = None) -> CellState:
    """One recurrence step; see :func:`cell_step_detailed` for the ordering."""
    new_state, _ = cell_step_detailed(g, p, s, x, y_extra)
    return new_state
