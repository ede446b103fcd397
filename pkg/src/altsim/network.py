"""Stacked alternating graph-ConvLSTM cells in an encoder-decoder.

Layer l consumes the cell state C of layer l-1 as its input; channel
widths rise then fall across the hidden layers, and a 3-channel output
layer closes the stack. Accumulation skips add the cell state of an
earlier layer into a later layer's accumulation update (widths must
match), and the output layer always receives the driver displacement
X_t - X_{t-1} as its skip, so a zero-weight network follows the driver
rigidly. The output layer's accumulation IS the position prediction;
teacher forcing replaces exactly that accumulation (never hidden-layer
states) with ground truth before the update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell import (
    CellParams,
    CellState,
    cell_step,
    init_cell_params,
    param_count,
    zero_cell_state,
)
from .errors import ContractError, DimensionError, NumericFaultError
from .graph import Graph
from .tensor import Tensor, as_tensor, concat_cols, sub

DESK_SCHEDULE = (8, 16, 32, 16, 8)


@dataclass(frozen=True)
class NetSpec:
    """Architecture knobs: hidden channel schedule, fixed 9-channel input and
    3-channel output, and accumulation skip pairs (later, earlier) among
    hidden layers. ``skip_list=None`` picks one skip between the first and
    last hidden layers when their widths match."""

    channel_schedule: tuple[int, ...] = DESK_SCHEDULE
    output_channels: int = 3
    input_channels: int = 9
    skip_list: tuple[tuple[int, int], ...] | None = None
    allow_asymmetric: bool = False

    def skips(self) -> tuple[tuple[int, int], ...]:
        if self.skip_list is not None:
            return tuple((int(a), int(b)) for a, b in self.skip_list)
        sched = self.channel_schedule
        if len(sched) >= 3 and sched[0] == sched[-1]:
            return ((len(sched) - 1, 0),)
        return ()

    def validate(self) -> "NetSpec":
        sched = tuple(int(c) for c in self.channel_schedule)
        if not sched:
            raise ContractError("channel schedule must be nonempty")
        if any(c < 1 for c in sched) or self.output_channels < 1 or self.input_channels < 1:
            raise ContractError(f"channel widths must be positive: {sched}")
        if not self.allow_asymmetric and not _unimodal(sched):
            raise ContractError(
                f"channel schedule {sched} is not increasing-then-decreasing; "
                "set allow_asymmetric to force it")
        for later, earlier in self.skips():
            if not (0 <= earlier < later < len(sched)):
                raise ContractError(f"skip pair ({later}, {earlier}) references invalid layers")
            if sched[later] != sched[earlier]:
                raise ContractError(
                    f"skip pair ({later}, {earlier}) joins widths "
                    f"{sched[later]} and {sched[earlier]}; they must match")
        return self

    def to_dict(self) -> dict:
        return {
            "channel_schedule": list(self.channel_schedule),
            "output_channels": self.output_channels,
            "input_channels": self.input_channels,
            "skip_list": [list(p) for p in self.skips()],
            "allow_asymmetric": self.allow_asymmetric,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetSpec":
        return cls(
            channel_schedule=tuple(doc["channel_schedule"]),
            output_channels=int(doc["output_channels"]),
            input_channels=int(doc["input_channels"]),
            skip_list=tuple(tuple(p) for p in doc["skip_list"]),
            allow_asymmetric=bool(doc.get("allow_asymmetric", False)),
        )


def _unimodal(sched: tuple[int, ...]) -> bool:
    peak = sched.index(max(sched))
    rising = all(sched[i] < sched[i + 1] for i in range(peak))
    falling = all(sched[i] > sched[i + 1] for i in range(peak, len(sched) - 1))
    return rising and falling


def assemble_input(x_t, x_prev, x_0, y_0) -> Tensor:
    """Stack [X_t, X_t - X_{t-1}, Y_0 - X_0] along channels: the current
    driver pose, the pose change applying the force, and the rest offset
    saying where the force originates under the surface."""
    x_t, x_prev, x_0, y_0 = (as_tensor(v) for v in (x_t, x_prev, x_0, y_0))
    rows = x_t.shape[0]
    for v in (x_prev, x_0, y_0):
        if v.data.ndim != 2 or v.shape[0] != rows:
            raise DimensionError(
                f"driver/state blocks need matching row counts, got "
                f"{[t.shape for t in (x_t, x_prev, x_0, y_0)]}")
    return concat_cols([x_t, sub(x_t, x_prev), sub(y_0, x_0)])


class AltConvLSTMNet:
    """The full stacked model over a fixed graph."""

    model_kind = "alt"

    def __init__(self, graph: Graph, spec: NetSpec | None = None, seed: int = 0):
        self.spec = (spec or NetSpec()).validate()
        self.graph = graph
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.layers: list[CellParams] = []
        prev = self.spec.input_channels
        for width in self.spec.channel_schedule:
            self.layers.append(init_cell_params(prev, width, rng))
            prev = width
        self.layers.append(init_cell_params(prev, self.spec.output_channels, rng))
        self._skips = dict(self.skip_pairs())

    def skip_pairs(self) -> tuple[tuple[int, int], ...]:
        return self.spec.skips()

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
        return sum(param_count(layer) for layer in self.layers)

    def layer_param_counts(self) -> list[int]:
        return [param_count(layer) for layer in self.layers]

    def zero_weights_(self) -> "AltConvLSTMNet":
        for layer in self.layers:
            layer.zero_()
        return self

    def describe(self) -> dict:
        return {"kind": self.model_kind, "net_spec": self.spec.to_dict(), "seed": self.seed}

    def init_states(self, y_0) -> list[CellState]:
        """Zero states everywhere except the output layer's accumulation,
        which starts at the initial positions Y_0."""
        y_0 = np.asarray(y_0, dtype=np.float64)
        if y_0.shape != (self.graph.num_nodes, self.spec.output_channels):
            raise DimensionError(
                f"Y_0 must be ({self.graph.num_nodes}, {self.spec.output_channels}), "
                f"got {y_0.shape}")
        states = [zero_cell_state(self.graph.num_nodes, w) for w in self.spec.channel_schedule]
        out_state = zero_cell_state(self.graph.num_nodes, self.spec.output_channels)
        out_state.y = Tensor(y_0.copy())
        states.append(out_state)
        return states

    def step(self, states, x_t, x_prev, x_0, y_0, teacher_y_prev=None):
        """Advance every layer one timestep; returns (new states, position
        prediction). ``teacher_y_prev`` replaces the stored output-layer
        accumulation before the update (teacher forcing)."""
        if x_0 is None or y_0 is None:
            raise ContractError("network step needs the context frames X_0 and Y_0")
        if len(states) != self.num_layers:
            raise ContractError(f"expected {self.num_layers} layer states, got {len(states)}")
        inp = assemble_input(x_t, x_prev, x_0, y_0)
        new_states: list[CellState] = []
        step_cs: dict[int, Tensor] = {}
        cur = inp
        for idx in range(self.num_layers - 1):
            y_extra = step_cs.get(self._skips.get(idx, -1))
            try:
                st = cell_step(self.graph, self.layers[idx], states[idx], cur, y_extra=y_extra)
            except NumericFaultError as e:
                raise NumericFaultError(f"layer {idx}: {e}") from e
            step_cs[idx] = st.c
            new_states.append(st)
            cur = st.c
        out_prev = states[-1]
        if teacher_y_prev is not None:
            out_prev = CellState(c=out_prev.c, h=out_prev.h, y=as_tensor(teacher_y_prev))
        dx = sub(as_tensor(x_t), as_tensor(x_prev))
        try:
            st = cell_step(self.graph, self.layers[-1], out_prev, cur, y_extra=dx)
        except NumericFaultError as e:
            raise NumericFaultError(f"layer {self.num_layers - 1} (output): {e}") from e
        new_states.append(st)
        return new_states, st.y


def predict_sequence(model, drivers, y_0, mode: str, teacher=None) -> np.ndarray:
    """Run a model over driver frames X_0..X_T, returning predictions
    Y-hat_1..T as a (T, |V|, 3) array.

    ``mode`` is "single-step" (the stored output accumulation is replaced by
    ground truth each step; ``teacher`` must hold Y_0..Y_{T-1}) or
    "rollout" (predictions feed back; no ground truth is read beyond Y_0).
    """
    drivers = np.asarray(drivers, dtype=np.float64)
    if drivers.ndim != 3:
        raise ContractError(f"driver frames must be (T+1, |V|, 3), got shape {drivers.shape}")
    total = drivers.shape[0]
    if total < 1:
        raise ContractError("need at least the initial driver frame X_0")
    steps = total - 1
    if mode == "single-step":
        if teacher is None:
            raise ContractError("single-step mode needs ground-truth frames Y_0..Y_{T-1}")
        teacher = np.asarray(teacher, dtype=np.float64)
        if teacher.shape[0] < steps:
            raise ContractError(
                f"single-step mode needs {steps} teacher frames, got {teacher.shape[0]}")
    elif mode == "rollout":
        if teacher is not None:
            raise ContractError("rollout mode must not receive teacher frames")
    else:
        raise ContractError(f"unknown prediction mode {mode!r}")

    states = model.init_states(y_0)
    preds = np.zeros((steps,) + drivers.shape[1:])
    for t in range(1, steps + 1):
        forced = teacher[t - 1] if mode == "single-step" else None
        states, y_hat = model.step(states, drivers[t], drivers[t - 1], drivers[0], y_0,
                                   teacher_y_prev=forced)
        preds[t - 1] = y_hat.data
    return preds
