"""Vanilla graph-ConvLSTM baselines for the ablation grid.

Two axes, four variants. Peepholes: convolutional (CP), where the input
and forget gates read C_{t-1} and the output gate reads C_t, or none (NP),
where those terms are absent entirely (and so are their weights). Output
semantics: the output layer's cell state is either a velocity increment
(DeltaY) accumulated into the running prediction, or a position residual
(Y) added onto the rigidly-followed driver path. Both semantics route
through the same driver-displacement skip as the main model, so only the
recurrence differs between a baseline and the alternating cell.

There is no accumulation state here; in the Y wiring nothing feeds the
prediction back into the recurrence, so its single-step and roll-out
predictions coincide by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cell import glorot_uniform
from .errors import ContractError, DimensionError, NumericFaultError
from .graph import Graph, graph_conv
from .network import DESK_SCHEDULE, assemble_input
from .tensor import Tensor, add, add_bias, as_tensor, hadamard, sigmoid, sub, tanh

PEEPHOLE_KINDS = ("CP", "NP")
OUTPUT_SEMANTICS = ("Y", "DeltaY")


@dataclass(frozen=True)
class BaselineSpec:
    peephole: str
    output_semantics: str
    channel_schedule: tuple[int, ...] = DESK_SCHEDULE
    output_channels: int = 3
    input_channels: int = 9

    def __post_init__(self):
        if self.peephole not in PEEPHOLE_KINDS:
            raise ContractError(f"peephole must be one of {PEEPHOLE_KINDS}, got {self.peephole!r}")
        if self.output_semantics not in OUTPUT_SEMANTICS:
            raise ContractError(
                f"output semantics must be one of {OUTPUT_SEMANTICS}, got {self.output_semantics!r}")
        if not self.channel_schedule or any(c < 1 for c in self.channel_schedule):
            raise ContractError(f"bad channel schedule {self.channel_schedule}")

    @property
    def model_kind(self) -> str:
        return f"convlstm-{self.peephole.lower()}-{self.output_semantics.lower()}"

    def to_dict(self) -> dict:
        return {
            "peephole": self.peephole,
            "output_semantics": self.output_semantics,
            "channel_schedule": list(self.channel_schedule),
            "output_channels": self.output_channels,
            "input_channels": self.input_channels,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BaselineSpec":
        return cls(
            peephole=doc["peephole"],
            output_semantics=doc["output_semantics"],
            channel_schedule=tuple(doc["channel_schedule"]),
            output_channels=int(doc["output_channels"]),
            input_channels=int(doc["input_channels"]),
        )


def variant_spec(model_kind: str, channel_schedule=DESK_SCHEDULE) -> BaselineSpec:
    """Parse names like "convlstm-cp-y" / "convlstm-np-deltay"."""
    parts = model_kind.lower().split("-")
    if len(parts) != 3 or parts[0] != "convlstm":
        raise ContractError(f"unknown baseline variant {model_kind!r}")
    peephole = parts[1].upper()
    semantics = {"y": "Y", "deltay": "DeltaY"}.get(parts[2])
    if peephole not in PEEPHOLE_KINDS or semantics is None:
        raise ContractError(f"unknown baseline variant {model_kind!r}")
    return BaselineSpec(peephole, semantics, tuple(channel_schedule))


VANILLA_WEIGHTS = ("w_xi", "w_xf", "w_xc", "w_xo", "w_hi", "w_hf", "w_hc", "w_ho")
PEEPHOLE_WEIGHTS = ("w_ci", "w_cf", "w_co")
VANILLA_BIASES = ("b_i", "b_f", "b_c", "b_o")


@dataclass
class VanillaCellParams:
    """Plain ConvLSTM cell parameters. ``peephole`` is fixed at init; the
    step function dispatches on it, so tensors assigned to the w_c* slots
    of an NP cell are dead weight by construction."""

    peephole: bool
    w_xi: Tensor
    w_xf: Tensor
    w_xc: Tensor
    w_xo: Tensor
    w_hi: Tensor
    w_hf: Tensor
    w_hc: Tensor
    w_ho: Tensor
    b_i: Tensor
    b_f: Tensor
    b_c: Tensor
    b_o: Tensor
    w_ci: Optional[Tensor] = None
    w_cf: Optional[Tensor] = None
    w_co: Optional[Tensor] = None

    @property
    def k_x(self) -> int:
        return self.w_xi.shape[0]

    @property
    def k_h(self) -> int:
        return self.w_xi.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        names = VANILLA_WEIGHTS + (PEEPHOLE_WEIGHTS if self.peephole else ()) + VANILLA_BIASES
        return {name: getattr(self, name) for name in names}

    def zero_(self) -> "VanillaCellParams":
        for t in self.tensors().values():
            t.data[...] = 0.0
        return self


@dataclass
class VanillaCellState:
    c: Tensor
    h: Tensor


def init_vanilla_params(k_x: int, k_h: int, rng: np.random.Generator,
                        peephole: bool) -> VanillaCellParams:
    """Draw order is input weights, recurrent weights, then peepholes, so a
    CP cell with its peepholes zeroed matches the NP cell from the same seed."""
    if k_x < 1 or k_h < 1:
        raise ContractError(f"channel widths must be >= 1, got k_x={k_x}, k_h={k_h}")
    w_x = [glorot_uniform(rng, k_x, k_h) for _ in range(4)]
    w_h = [glorot_uniform(rng, k_h, k_h) for _ in range(4)]
    w_c = [glorot_uniform(rng, k_h, k_h) for _ in range(3)] if peephole else [None] * 3
    return VanillaCellParams(
        peephole, *w_x, *w_h,
        b_i=Tensor(np.zeros(k_h), requires_grad=True),
        b_f=Tensor(np.ones(k_h), requires_grad=True),
        b_c=Tensor(np.zeros(k_h), requires_grad=True),
        b_o=Tensor(np.zeros(k_h), requires_grad=True),
        w_ci=w_c[0], w_cf=w_c[1], w_co=w_c[2],
    )


def zero_vanilla_state(num_nodes: int, k_h: int) -> VanillaCellState:
    return VanillaCellState(c=Tensor(np.zeros((num_nodes, k_h))),
                            h=Tensor(np.zeros((num_nodes, k_h))))


def _guard(name: str, t: Tensor) -> Tensor:
    if np.isnan(t.data).any():
        raise NumericFaultError(f"NaN in {name}")
    return t


def _gate_pre(g, x, w_x, h, w_h, peek, w_peek, bias) -> Tensor:
    pre = add(graph_conv(g, x, w_x), graph_conv(g, h, w_h))
    if peek is not None:
        pre = add(pre, graph_conv(g, peek, w_peek))
    return add_bias(pre, bias)


def vanilla_cell_step(g: Graph, p: VanillaCellParams, s: VanillaCellState,
                      x) -> VanillaCellState:
    """Standard ConvLSTM recurrence with graph convolutions. CP peepholes
    read C_{t-1} for the input/forget gates and C_t for the output gate;
    the NP variant reads no cell state in any gate."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] != g.num_nodes or x.shape[1] != p.k_x:
        raise DimensionError(f"cell input must be ({g.num_nodes}, {p.k_x}), got {x.shape}")
    peek_prev, peek_w_i, peek_w_f = (s.c, p.w_ci, p.w_cf) if p.peephole else (None, None, None)
    i = _guard("input gate", sigmoid(_gate_pre(g, x, p.w_xi, s.h, p.w_hi,
                                               peek_prev, peek_w_i, p.b_i)))
    f = _guard("forget gate", sigmoid(_gate_pre(g, x, p.w_xf, s.h, p.w_hf,
                                                peek_prev, peek_w_f, p.b_f)))
    content = _guard("cell content", tanh(_gate_pre(g, x, p.w_xc, s.h, p.w_hc,
                                                    None, None, p.b_c)))
    c_new = _guard("cell state", add(hadamard(f, s.c), hadamard(i, content)))
    peek_new, peek_w_o = (c_new, p.w_co) if p.peephole else (None, None)
    o = _guard("output gate", sigmoid(_gate_pre(g, x, p.w_xo, s.h, p.w_ho,
                                                peek_new, peek_w_o, p.b_o)))
    h_new = _guard("hidden state", hadamard(o, tanh(c_new)))
    return VanillaCellState(c=c_new, h=h_new)


def vanilla_param_count(p: VanillaCellParams) -> int:
    return sum(t.size for t in p.tensors().values())


@dataclass
class BaselineStates:
    cells: list[VanillaCellState]
    y_acc: Tensor  # running prediction (DeltaY) or rigid driver path (Y)


class BaselineNet:
    """Stacked vanilla cells with the same inter-layer wiring as the main
    model (layer input = cell state of the layer below) and the same
    driver-displacement output skip, dispatched per BaselineSpec."""

    def __init__(self, graph: Graph, bspec: BaselineSpec, seed: int = 0):
        self.bspec = bspec
        self.graph = graph
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        peephole = bspec.peephole == "CP"
        self.layers: list[VanillaCellParams] = []
        prev = bspec.input_channels
        for width in bspec.channel_schedule:
            self.layers.append(init_vanilla_params(prev, width, rng, peephole))
            prev = width
        self.layers.append(init_vanilla_params(prev, bspec.output_channels, rng, peephole))

    @property
    def model_kind(self) -> str:
        return self.bspec.model_kind

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for idx, layer in enumerate(self.layers):
            for name, t in layer.tensors().items():
                out[f"layer{idx}.{name}"] = t
        return out

    def param_count(self) -> int:
        return sum(vanilla_param_count(layer) for layer in self.layers)

    def layer_param_counts(self) -> list[int]:
        return [vanilla_param_count(layer) for layer in self.layers]

    def zero_weights_(self) -> "BaselineNet":
        for layer in self.layers:
            layer.zero_()
        return self

    def describe(self) -> dict:
        return {"kind": self.model_kind, "baseline_spec": self.bspec.to_dict(),
                "seed": self.seed}

    def init_states(self, y_0) -> BaselineStates:
        y_0 = np.asarray(y_0, dtype=np.float64)
        if y_0.shape != (self.graph.num_nodes, self.bspec.output_channels):
            raise DimensionError(
                f"Y_0 must be ({self.graph.num_nodes}, {self.bspec.output_channels}), "
                f"got {y_0.shape}")
        cells = [zero_vanilla_state(self.graph.num_nodes, w)
                 for w in self.bspec.channel_schedule]
        cells.append(zero_vanilla_state(self.graph.num_nodes, self.bspec.output_channels))
        return BaselineStates(cells=cells, y_acc=Tensor(y_0.copy()))

    def step(self, states: BaselineStates, x_t, x_prev, x_0, y_0, teacher_y_prev=None):
        if x_0 is None or y_0 is None:
            raise ContractError("network step needs the context frames X_0 and Y_0")
        inp = assemble_input(x_t, x_prev, x_0, y_0)
        new_cells: list[VanillaCellState] = []
        cur = inp
        for idx, layer in enumerate(self.layers):
            try:
                st = vanilla_cell_step(self.graph, layer, states.cells[idx], cur)
            except NumericFaultError as e:
                raise NumericFaultError(f"layer {idx}: {e}") from e
            new_cells.append(st)
            cur = st.c
        c_out = new_cells[-1].c
        dx = sub(as_tensor(x_t), as_tensor(x_prev))
        if self.bspec.output_semantics == "DeltaY":
            base = as_tensor(teacher_y_prev) if teacher_y_prev is not None else states.y_acc
            y_hat = add(add(base, c_out), dx)
            y_acc = y_hat
        else:  # position residual on top of the rigid driver path
            path = add(states.y_acc, dx)
            y_hat = add(c_out, path)
            y_acc = path
        return BaselineStates(cells=new_cells, y_acc=y_acc), y_hat
