"""Named-layer network graphs: single streams and every fusion topology.

Graphs are flat node lists evaluated in order by an interpreter. Three
single-stream families (appearance CNN over object depth maps, template
CNN over motion templates, CNN-LSTM over frame sequences) share one trunk
schedule: 5 conv groups with a 2x2 max pool after each, then FC6/RL6/FC7/RL7
and an FC8 class head. Fused graphs cut streams at named layers, join them
with channel stacks or feature concats, and continue as a single stream.

Naming follows the CONVg_i / RLg_i / FCk convention (CONV4_3 is the 3rd conv
of the 4th group); post-fusion tail layers occupy groups 6 (after a CONV
stack) and 8 (after a per-frame concat in the recurrent family).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import ops
from .archspec import ArchSpecError, FusionSpec, LayerName
from .ops import LstmState
from .tensor import DimensionError, Tensor


class ConfigError(ValueError):
    """Invalid scale or build configuration."""


@dataclass(frozen=True)
class ScaleConfig:
    """Width/depth knobs for one build scale.

    The desk defaults are deliberate down-scalings that train on a CPU; the
    full scale (VGG-16 widths, FC 4096, 3x4096 LSTM) remains constructible.
    """

    input_side: int = 64
    group_channels: tuple = (8, 16, 32, 64, 64)
    convs_per_group: tuple = (2, 2, 3, 3, 3)
    fc_width: int = 128
    lstm_layers: int = 2
    lstm_hidden: int = 64

    def __post_init__(self):
        if len(self.group_channels) != 5 or len(self.convs_per_group) != 5:
            raise ConfigError("group_channels and convs_per_group need 5 entries")
        vals = (self.input_side, self.fc_width, self.lstm_layers, self.lstm_hidden,
                *self.group_channels, *self.convs_per_group)
        if any(v <= 0 for v in vals):
            raise ConfigError("all scale parameters must be positive")
        if self.input_side % 32:
            raise ConfigError(f"input_side must be divisible by 32, got {self.input_side}")

    @classmethod
    def desk(cls) -> "ScaleConfig":
        return cls()

    @classmethod
    def paper(cls) -> "ScaleConfig":
        return cls(input_side=224, group_channels=(64, 128, 256, 512, 512),
                   convs_per_group=(2, 2, 3, 3, 3), fc_width=4096,
                   lstm_layers=3, lstm_hidden=4096)


OBJECT_CLASSES = 14
AFFORDANCE_CLASSES = 13


@dataclass
class Node:
    name: LayerName
    kind: str                      # input|conv|conv1|pool|relu|fc|stack|concat|lstm|softmax
    inputs: List[int] = field(default_factory=list)
    params: Dict[str, Tensor] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def describe(self) -> str:
        base = self.name.qualified()
        if self.kind in ("stack", "concat"):
            srcs = " + ".join(self.meta.get("sources", []))
            delay = self.meta.get("delay", 0)
            tag = f" delay={delay}" if delay else ""
            return f"{base}[{self.kind} {srcs}{tag}]"
        return base


@dataclass
class NetworkGraph:
    nodes: List[Node] = field(default_factory=list)
    class_count: int = 0
    cfg: Optional[ScaleConfig] = None
    recurrent: bool = False
    arch: str = ""
    frames_expected: int = 1
    junctions: List[int] = field(default_factory=list)

    @property
    def output_index(self) -> int:
        return len(self.nodes) - 1

    @property
    def input_streams(self) -> List[str]:
        return [n.meta["stream"] for n in self.nodes if n.kind == "input"]

    def parameters(self) -> List[Tensor]:
        out = []
        for n in self.nodes:
            out.extend(n.params.values())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {}
        for n in self.nodes:
            for key, p in n.params.items():
                out[f"{n.name.qualified()}/{key}"] = p.data
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = {}
        for n in self.nodes:
            for key, p in n.params.items():
                own[f"{n.name.qualified()}/{key}"] = p
        missing = sorted(set(own) - set(state))
        if missing:
            raise ConfigError(f"checkpoint missing parameters: {missing[:4]}...")
        for key, p in own.items():
            arr = np.asarray(state[key], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise DimensionError("load_state_dict", key, p.data.shape, arr.shape)
            p.data = arr.copy()


def list_layers(graph: NetworkGraph) -> List[LayerName]:
    """Ordered layer report, input slots excluded."""
    return [n.name for n in graph.nodes if n.kind != "input"]


def structure(graph: NetworkGraph) -> List[str]:
    """Render the wiring, one line per layer, junctions annotated."""
    return [n.describe() for n in graph.nodes if n.kind != "input"]


# ---------------------------------------------------------------------------
# construction


class _Cursor:
    """Tracks the growing end of one stream during construction."""

    __slots__ = ("idx", "channels", "side", "width")

    def __init__(self, idx, channels=None, side=None, width=None):
        self.idx = idx
        self.channels = channels
        self.side = side
        self.width = width


class _Builder:
    def __init__(self, cfg: ScaleConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.nodes: List[Node] = []
        self.junctions: List[int] = []

    def add(self, name: LayerName, kind: str, inputs=(), params=None, meta=None) -> int:
        self.nodes.append(Node(name, kind, list(inputs), params or {}, meta or {}))
        return len(self.nodes) - 1

    def weight(self, shape, fan_in, gain=2.0) -> np.ndarray:
        return self.rng.standard_normal(shape) * np.sqrt(gain / fan_in)

    def add_input(self, stream: str) -> _Cursor:
        idx = self.add(LayerName("INPUT", stream=stream), "input", meta={"stream": stream})
        return _Cursor(idx, channels=3, side=self.cfg.input_side)

    def conv(self, cur: _Cursor, g: int, i: int, stream: str) -> None:
        cout = self.cfg.group_channels[g - 1]
        w = Tensor(self.weight((cout, cur.channels, 3, 3), cur.channels * 9))
        # slightly positive bias: colorized maps are mostly exact-zero
        # background, and dead first-group relus stall from-scratch training
        b = Tensor(np.full(cout, 0.05))
        name = LayerName("CONV", g, i, stream)
        w.name, b.name = f"{name.qualified()}/w", f"{name.qualified()}/b"
        cur.idx = self.add(name, "conv", [cur.idx], {"w": w, "b": b})
        cur.channels = cout

    def conv1(self, cur: _Cursor, g: int, i: int, stream: str, cout: int) -> None:
        cin = cur.channels if cur.channels is not None else cur.width
        w = Tensor(self.weight((cout, cin, 1, 1), cin))
        b = Tensor(np.zeros(cout))
        name = LayerName("CONV", g, i, stream)
        w.name, b.name = f"{name.qualified()}/w", f"{name.qualified()}/b"
        cur.idx = self.add(name, "conv1", [cur.idx], {"w": w, "b": b})
        cur.channels = cout
        cur.side = cur.side if cur.side else 1
        cur.width = None

    def relu(self, cur: _Cursor, g: int, i, stream: str) -> None:
        cur.idx = self.add(LayerName("RL", g, i, stream), "relu", [cur.idx])

    def pool(self, cur: _Cursor, g: int, stream: str) -> None:
        if cur.side % 2:
            raise DimensionError("maxpool2", f"POOL{g}", "even side", cur.side)
        cur.idx = self.add(LayerName("POOL", g, stream=stream), "pool", [cur.idx])
        cur.side //= 2

    def fc(self, cur: _Cursor, k: int, stream: str, out_width: int, classifier=False) -> None:
        if cur.width is not None:
            fan_in = cur.width
        else:
            fan_in = cur.channels * cur.side * cur.side
        w = Tensor(self.weight((out_width, fan_in), fan_in, gain=1.0 if classifier else 2.0))
        b = Tensor(np.zeros(out_width))
        name = LayerName("FC", k, None, stream)
        w.name, b.name = f"{name.qualified()}/w", f"{name.qualified()}/b"
        cur.idx = self.add(name, "fc", [cur.idx], {"w": w, "b": b})
        cur.width = out_width
        cur.channels = cur.side = None

    def lstm(self, cur: _Cursor, layer: int, stream: str) -> None:
        hid = self.cfg.lstm_hidden
        w_ih = Tensor(self.weight((4 * hid, cur.width), cur.width, gain=1.0))
        w_hh = Tensor(self.weight((4 * hid, hid), hid, gain=1.0))
        b = Tensor(np.zeros(4 * hid))
        b.data[hid:2 * hid] = 1.0  # forget gate bias
        name = LayerName("LSTM", layer, None, stream)
        for key, t in (("w_ih", w_ih), ("w_hh", w_hh), ("b", b)):
            t.name = f"{name.qualified()}/{key}"
        cur.idx = self.add(name, "lstm", [cur.idx], {"w_ih": w_ih, "w_hh": w_hh, "b": b},
                           meta={"hidden": hid})
        cur.width = hid

    def join(self, kind: str, a: _Cursor, b_cur: _Cursor, sources, delay=0) -> _Cursor:
        idx = self.add(LayerName("CONCAT", stream="fused"), kind, [a.idx, b_cur.idx],
                       meta={"sources": sources, "delay": delay})
        self.junctions.append(idx)
        if kind == "stack":
            if a.side != b_cur.side:
                raise DimensionError("stack", "spatial", f"{a.side}x{a.side}",
                                     f"{b_cur.side}x{b_cur.side}")
            return _Cursor(idx, channels=a.channels + b_cur.channels, side=a.side)
        return _Cursor(idx, width=a.width + b_cur.width)

    def softmax(self, cur: _Cursor, stream: str) -> None:
        cur.idx = self.add(LayerName("SOFTMAX", stream=stream), "softmax", [cur.idx])


def _conv_schedule(cfg: ScaleConfig):
    steps = []
    for g in range(1, 6):
        for i in range(1, cfg.convs_per_group[g - 1] + 1):
            steps.append(("conv", g, i))
            steps.append(("relu", g, i))
        steps.append(("pool", g, None))
    return steps


def _full_schedule(cfg: ScaleConfig):
    return _conv_schedule(cfg) + [("fc", 6, None), ("relu", 6, None),
                                  ("fc", 7, None), ("relu", 7, None)]


def _emit(b: _Builder, cur: _Cursor, steps, stream: str) -> None:
    for op, g, i in steps:
        if op == "conv":
            b.conv(cur, g, i, stream)
        elif op == "relu":
            b.relu(cur, g, i, stream)
        elif op == "pool":
            b.pool(cur, g, stream)
        elif op == "fc":
            b.fc(cur, g, stream, b.cfg.fc_width)


def _split_after(steps, point: LayerName):
    """Cut the schedule just after the step matching a normalized RL point."""
    want = ("relu", point.group, point.index)
    for pos, step in enumerate(steps):
        if step == want:
            return steps[: pos + 1], steps[pos + 1:]
    raise ArchSpecError(f"fusion point {point.render()} does not exist at this scale",
                        semantic=True)


def _classifier(b: _Builder, cur: _Cursor, classes: int, stream="fused", k=8) -> None:
    b.fc(cur, k, stream, classes, classifier=True)
    b.softmax(cur, stream)


def _finish(b: _Builder, classes, cfg, arch, recurrent=False) -> NetworkGraph:
    return NetworkGraph(nodes=b.nodes, class_count=classes, cfg=cfg,
                        recurrent=recurrent, arch=arch,
                        frames_expected=20 if recurrent else 1,
                        junctions=b.junctions)


def build_appearance_cnn(cfg: ScaleConfig, seed: int = 0) -> NetworkGraph:
    """VGG-style appearance stream over a colorized object depth map."""
    b = _Builder(cfg, seed)
    cur = b.add_input("app")
    _emit(b, cur, _full_schedule(cfg), "app")
    _classifier(b, cur, OBJECT_CLASSES, "app")
    return _finish(b, OBJECT_CLASSES, cfg, "appearance")


def build_tm_cnn(cfg: ScaleConfig, seed: int = 0) -> NetworkGraph:
    """Template-matching affordance stream: same skeleton, 13-way head."""
    b = _Builder(cfg, seed)
    cur = b.add_input("aff")
    _emit(b, cur, _full_schedule(cfg), "aff")
    _classifier(b, cur, AFFORDANCE_CLASSES, "aff")
    return _finish(b, AFFORDANCE_CLASSES, cfg, "tm")


def build_st_cnn_lstm(cfg: ScaleConfig, seed: int = 0) -> NetworkGraph:
    """Spatio-temporal affordance stream: per-frame CNN trunk into LSTM layers."""
    b = _Builder(cfg, seed)
    cur = b.add_input("aff")
    _emit(b, cur, _full_schedule(cfg), "aff")
    for layer in range(1, cfg.lstm_layers + 1):
        b.lstm(cur, layer, "aff")
    _classifier(b, cur, AFFORDANCE_CLASSES, "aff")
    return _finish(b, AFFORDANCE_CLASSES, cfg, "st", recurrent=True)


def build_fused(spec: FusionSpec, cfg: ScaleConfig, seed: int = 0) -> NetworkGraph:
    """Wire a fused object-recognition graph from a parsed FusionSpec.

    Accepts delay_tau == 0 for GST_LA even though the parser requires a
    positive delay: the zero-delay graph is the synchronous one and serves
    as its equivalence oracle.
    """
    b = _Builder(cfg, seed)
    if spec.gat == "GTM":
        if spec.ft == "LS":
            _build_gtm_ls(b, spec)
        elif spec.ft == "SSL":
            _build_gtm_slow(b, spec, multi_level=False)
        elif spec.ft == "SML":
            _build_gtm_slow(b, spec, multi_level=True)
        else:
            raise ArchSpecError("GTM has no asynchronous fusion", semantic=True)
        return _finish(b, OBJECT_CLASSES, cfg, spec.render())
    _build_gst(b, spec)
    return _finish(b, OBJECT_CLASSES, cfg, spec.render(), recurrent=True)


def _last_conv_point(cfg: ScaleConfig) -> LayerName:
    return LayerName("RL", 5, cfg.convs_per_group[4])


def _build_gtm_ls(b: _Builder, spec: FusionSpec) -> None:
    point = spec.fusion_points[0]
    schedule = _full_schedule(b.cfg)
    if point.is_fc_level:
        if point.group != 6:
            raise ArchSpecError("GTM_LS FC-level fusion happens at the FC6 level",
                                semantic=True)
        upto, _ = _split_after(schedule, point)
        app, aff = b.add_input("app"), b.add_input("aff")
        _emit(b, app, upto, "app")
        _emit(b, aff, upto, "aff")
        cur = b.join("concat", app, aff, ["RL6:app", "RL6:aff"])
        b.fc(cur, 7, "fused", b.cfg.fc_width)
        b.relu(cur, 7, None, "fused")
        _classifier(b, cur, OBJECT_CLASSES)
        return
    last = _last_conv_point(b.cfg)
    if (point.group, point.index) != (last.group, last.index):
        raise ArchSpecError(
            f"GTM_LS CONV-level fusion uses the last conv layer "
            f"({last.render()} at this scale), got {point.render()}", semantic=True)
    upto, _ = _split_after(schedule, point)
    app, aff = b.add_input("app"), b.add_input("aff")
    _emit(b, app, upto, "app")
    _emit(b, aff, upto, "aff")
    cur = b.join("stack", app, aff, [f"{point.render()}:app", f"{point.render()}:aff"])
    _emit_tail(b, cur, spec.tail, conv_group=6, fc_start=7)


def _emit_tail(b: _Builder, cur: _Cursor, tail, conv_group: int, fc_start: int) -> None:
    """Post-fusion single stream: n 1x1 convs then 1 or 2 FC layers."""
    n_conv, n_fc = tail
    keep = b.cfg.group_channels[4]
    for j in range(1, n_conv + 1):
        b.conv1(cur, conv_group, j, "fused", keep)
        b.relu(cur, conv_group, j, "fused")
    if n_fc == 2:
        b.fc(cur, fc_start, "fused", b.cfg.fc_width)
        b.relu(cur, fc_start, None, "fused")
        _classifier(b, cur, OBJECT_CLASSES, k=fc_start + 1)
    else:
        _classifier(b, cur, OBJECT_CLASSES, k=fc_start)


def _conv_points(spec: FusionSpec):
    by_stream = {p.stream: p for p in spec.fusion_points[:2]}
    return by_stream["app"], by_stream["aff"]


def _build_gtm_slow(b: _Builder, spec: FusionSpec, multi_level: bool) -> None:
    p_app, p_aff = _conv_points(spec)
    schedule = _full_schedule(b.cfg)
    app_upto, app_rest = _split_after(schedule, p_app)
    aff_upto, aff_rest = _split_after(schedule, p_aff)

    app, aff = b.add_input("app"), b.add_input("aff")
    _emit(b, app, app_upto, "app")
    _emit(b, aff, aff_upto, "aff")
    aff_at_point = _Cursor(aff.idx, aff.channels, aff.side, aff.width)

    if multi_level:
        fc_point = spec.fusion_points[2]
        if fc_point.group != 6:
            raise ArchSpecError("GTM_SML FC-level point must be the FC6 level",
                                semantic=True)
        # affordance stream keeps processing up to its own RL6 to feed the
        # second junction; nothing affordance-side runs past that junction
        aff_cont, _ = _split_after(aff_rest, fc_point)
        _emit(b, aff, aff_cont, "aff")

    fused = b.join("stack", app, aff_at_point,
                   [f"{p_app.render()}:app", f"{p_aff.render()}:aff"])
    if not multi_level:
        # continue the appearance-side schedule as a single stream
        _emit(b, fused, app_rest, "fused")
        _classifier(b, fused, OBJECT_CLASSES)
        return
    fused_cont, _ = _split_after(app_rest, spec.fusion_points[2])
    _emit(b, fused, fused_cont, "fused")
    fused = b.join("concat", fused, aff, ["RL6:fused", "RL6:aff"])
    b.fc(fused, 7, "fused", b.cfg.fc_width)
    b.relu(fused, 7, None, "fused")
    _classifier(b, fused, OBJECT_CLASSES)


def _build_gst(b: _Builder, spec: FusionSpec) -> None:
    schedule = _full_schedule(b.cfg)
    app = b.add_input("app")
    _emit(b, app, schedule, "app")  # per-frame appearance features up to RL7

    aff = b.add_input("aff")
    _emit(b, aff, schedule, "aff")
    if spec.ft in ("LS", "LA"):
        for layer in range(1, b.cfg.lstm_layers + 1):
            b.lstm(aff, layer, "aff")
        h_src = f"LSTM{b.cfg.lstm_layers}:aff" + (f"(t-{spec.delay_tau})" if spec.delay_tau else "")
        cur = b.join("concat", app, aff, ["RL7:app", h_src], delay=spec.delay_tau)
        _emit_tail(b, cur, spec.tail, conv_group=8, fc_start=8)
    else:  # GST slow fusion: concat CNN features, then the LSTM stack
        cur = b.join("concat", app, aff, ["RL7:app", "RL7:aff"])
        for layer in range(1, b.cfg.lstm_layers + 1):
            b.lstm(cur, layer, "fused")
        _emit_tail(b, cur, spec.tail, conv_group=8, fc_start=8)


# ---------------------------------------------------------------------------
# evaluation


def _eval_node(node: Node, values, graph, state, history, t):
    kind = node.kind
    if kind == "conv":
        return ops.conv2d(values[node.inputs[0]], node.params["w"], node.params["b"])
    if kind == "conv1":
        x = values[node.inputs[0]]
        if x.data.ndim <= 2:  # vector tail: treat features as a 1x1 map
            shape = x.data.shape + (1, 1)
            x = ops.reshape(x, shape)
        return ops.conv1x1(x, node.params["w"], node.params["b"])
    if kind == "pool":
        return ops.maxpool2(values[node.inputs[0]])
    if kind == "relu":
        return ops.relu(values[node.inputs[0]])
    if kind == "fc":
        return ops.linear(ops.flatten(values[node.inputs[0]]), node.params["w"], node.params["b"])
    if kind == "softmax":
        return ops.softmax(values[node.inputs[0]])
    if kind == "stack":
        return ops.concat([values[i] for i in node.inputs], axis=-3)
    if kind == "concat":
        left = values[node.inputs[0]]
        delay = node.meta.get("delay", 0)
        src = node.inputs[1]
        if delay == 0:
            right = values[src]
        else:
            past = history.get(src, [])
            if t - delay >= 0:
                right = past[t - delay]
            else:  # warm-up: zero state before the sequence starts
                right = Tensor(np.zeros_like(values[src].data))
        return ops.concat([left, right], axis=-1)
    if kind == "lstm":
        key = id(node)
        prev = state.get(key)
        x = values[node.inputs[0]]
        if prev is None:
            hid = node.meta["hidden"]
            batch = None if x.data.ndim == 1 else x.data.shape[0]
            prev = LstmState.zeros(hid, batch)
        new = ops.lstm_step(x, prev, node.params["w_ih"], node.params["w_hh"], node.params["b"])
        state[key] = new
        return new.h
    raise ConfigError(f"unknown node kind {kind!r}")


def _check_input(graph: NetworkGraph, x: Tensor, stream: str) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    side = graph.cfg.input_side
    spatial = x.data.shape[-2:]
    if x.data.shape[-3] != 3:
        raise DimensionError("forward", f"{stream} channels", 3, x.data.shape[-3])
    if spatial != (side, side):
        raise DimensionError("forward", f"{stream} spatial", (side, side), spatial)
    return x


def _eval_pass(graph, frame_inputs, state, history, t, values_out=None):
    values = [None] * len(graph.nodes)
    for idx, node in enumerate(graph.nodes):
        if node.kind == "input":
            stream = node.meta["stream"]
            if stream not in frame_inputs:
                raise ConfigError(f"graph needs input stream {stream!r}")
            values[idx] = _check_input(graph, frame_inputs[stream], stream)
        else:
            values[idx] = _eval_node(node, values, graph, state, history, t)
    if values_out is not None:
        values_out.append(values)
    return values


def forward(graph: NetworkGraph, inputs: dict, collect: Optional[list] = None):
    """Run the graph.

    GTM graphs take one tensor per stream and return one distribution; GST
    graphs take per-stream frame lists and return one distribution per frame.
    ``collect`` (a list) receives the per-pass node value tables, which is
    how feature extraction and diagnostics reach inside.
    """
    if not graph.recurrent:
        values = _eval_pass(graph, inputs, {}, {}, 0, collect)
        return values[graph.output_index]

    lengths = {s: len(v) for s, v in inputs.items()}
    T = min(lengths.values())
    if max(lengths.values()) != T:
        raise DimensionError("forward", "frame count", T, max(lengths.values()))
    state: dict = {}
    history: dict = {}
    delayed_sources = {n.inputs[1] for n in graph.nodes
                       if n.kind == "concat" and n.meta.get("delay", 0) > 0}
    outs = []
    for t in range(T):
        frame_inputs = {s: seq[t] for s, seq in inputs.items()}
        values = _eval_pass(graph, frame_inputs, state, history, t, collect)
        for src in delayed_sources:
            history.setdefault(src, []).append(values[src])
        outs.append(values[graph.output_index])
    return outs


def capture_layer(graph: NetworkGraph, inputs: dict, layer: str):
    """Forward plus the value(s) of one named layer (qualified name)."""
    idx = next((i for i, n in enumerate(graph.nodes) if n.name.qualified() == layer), None)
    if idx is None:
        raise ConfigError(f"no layer named {layer!r} in this graph")
    passes: list = []
    out = forward(graph, inputs, collect=passes)
    captured = [vals[idx] for vals in passes]
    return out, (captured if graph.recurrent else captured[0])
