"""Fusion architecture naming scheme: parsing ``GAT_FT(args)`` strings.

Grammar (ASCII)::

    spec   := GAT "_" FT "(" args ")"
    GAT    := "GTM" | "GST"
    FT     := "LS" | "LA" | "SSL" | "SML"
    args   := arg ("," arg)*          (whitespace around args is ignored)
    arg    := LAYER [":" STREAM] | "tau=" INT | "agg=" ("last"|"all")
              | "tail=" INT "c" INT "f"
    LAYER  := "CONV" g "_" i | "RL" g "_" i | "FC" k | "RL" k
    STREAM := "app" | "aff"

Examples: ``GTM_SML(RL5_3:app,RL5_3:aff,RL6)``, ``GST_LA(tau=2,agg=all)``,
``GTM_LS(RL5_3,tail=1c2f)``.

Fusion at a named layer always means after its nonlinearity, so points are
normalized here: ``FC6`` becomes ``RL6``, ``CONV5_3`` becomes ``RL5_3``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

GATS = ("GTM", "GST")
FTS = ("LS", "LA", "SSL", "SML")
STREAMS = ("app", "aff")


class ArchSpecError(ValueError):
    """Bad architecture spec. ``offset`` is the byte position for syntax errors."""

    def __init__(self, message: str, offset: Optional[int] = None, semantic: bool = False):
        self.offset = offset
        self.semantic = semantic
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


@dataclass(frozen=True)
class LayerName:
    """A layer identity in the CONVg_i / RLg_i / FCk naming scheme."""

    kind: str  # CONV | RL | POOL | FC | LSTM | SOFTMAX | CONCAT
    group: Optional[int] = None
    index: Optional[int] = None
    stream: str = "fused"  # app | aff | fused

    def render(self) -> str:
        if self.kind in ("CONV", "RL", "FC", "POOL", "LSTM") and self.group is not None:
            if self.index is not None:
                return f"{self.kind}{self.group}_{self.index}"
            return f"{self.kind}{self.group}"
        return self.kind

    def qualified(self) -> str:
        return f"{self.render()}:{self.stream}"

    @property
    def is_conv_level(self) -> bool:
        return self.kind in ("CONV", "RL") and self.index is not None

    @property
    def is_fc_level(self) -> bool:
        return self.kind in ("FC", "RL") and self.index is None

    def normalized(self) -> "LayerName":
        """Map a fusion point to the post-nonlinearity layer (FC6 -> RL6)."""
        if self.kind in ("FC", "CONV"):
            return LayerName("RL", self.group, self.index, self.stream)
        return self

    def __str__(self) -> str:
        return self.render()


@dataclass
class FusionSpec:
    """Parsed form of a GAT_FT(args) architecture string."""

    gat: str
    ft: str
    fusion_points: list = field(default_factory=list)
    tail: tuple = (0, 2)  # (n_conv1x1, n_fc)
    delay_tau: int = 0
    aggregation: str = "all_frames"  # last_frame | all_frames

    def render(self) -> str:
        args = [p.qualified() if p.stream in STREAMS else p.render() for p in self.fusion_points]
        if self.ft == "LA":
            args.append(f"tau={self.delay_tau}")
        if self.gat == "GST":
            args.append(f"agg={'all' if self.aggregation == 'all_frames' else 'last'}")
        if self.gat == "GST" or self.ft == "LS":  # families with a fused tail
            args.append(f"tail={self.tail[0]}c{self.tail[1]}f")
        return f"{self.gat}_{self.ft}({','.join(args)})"


_LAYER_RE = re.compile(r"(CONV|RL|FC)(\d+)(?:_(\d+))?")
_TAIL_RE = re.compile(r"(\d+)c(\d+)f")


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def literal(self, s: str) -> bool:
        if self.text.startswith(s, self.pos):
            self.pos += len(s)
            return True
        return False

    def expect(self, s: str, what: str):
        if not self.literal(s):
            raise ArchSpecError(f"expected {what}", offset=self.pos)

    def match(self, regex):
        m = regex.match(self.text, self.pos)
        if m:
            self.pos = m.end()
        return m


def _parse_layer_arg(sc: _Scanner):
    start = sc.pos
    m = sc.match(_LAYER_RE)
    if not m:
        raise ArchSpecError("expected layer name, tau=, agg= or tail=", offset=start)
    kind, g, i = m.group(1), int(m.group(2)), m.group(3)
    if kind == "CONV" and i is None:
        raise ArchSpecError("CONV layer needs a _<index>", offset=start)
    if kind == "FC" and i is not None:
        raise ArchSpecError("FC layer takes no _<index>", offset=start)
    stream = "fused"
    if sc.literal(":"):
        sstart = sc.pos
        for s in STREAMS:
            if sc.literal(s):
                stream = s
                break
        else:
            raise ArchSpecError("stream must be 'app' or 'aff'", offset=sstart)
    index = int(i) if i is not None else None
    return LayerName(kind, g, index, stream).normalized()


def parse_arch_spec(text: str) -> FusionSpec:
    """Parse and validate an architecture spec string.

    Raises ArchSpecError with a byte offset for syntax problems and without
    one (``semantic=True``) for structurally valid but meaningless combos
    such as GTM_LA or an SSL point at the FC level.
    """
    sc = _Scanner(text)
    sc.skip_ws()
    gat = next((g for g in GATS if sc.literal(g)), None)
    if gat is None:
        raise ArchSpecError("expected architecture type GTM or GST", offset=sc.pos)
    sc.expect("_", "'_' between architecture and fusion type")
    ft = next((f for f in ("SSL", "SML", "LS", "LA") if sc.literal(f)), None)
    if ft is None:
        raise ArchSpecError("expected fusion type LS, LA, SSL or SML", offset=sc.pos)
    sc.expect("(", "'('")

    points: list = []
    tau: Optional[int] = None
    agg: Optional[str] = None
    tail: Optional[tuple] = None

    sc.skip_ws()
    if not sc.literal(")"):
        while True:
            sc.skip_ws()
            if sc.literal("tau="):
                vstart = sc.pos
                m = sc.match(re.compile(r"\d+"))
                if not m:
                    raise ArchSpecError("tau= needs a nonnegative integer", offset=vstart)
                tau = int(m.group(0))
            elif sc.literal("agg="):
                vstart = sc.pos
                if sc.literal("last"):
                    agg = "last_frame"
                elif sc.literal("all"):
                    agg = "all_frames"
                else:
                    raise ArchSpecError("agg= must be 'last' or 'all'", offset=vstart)
            elif sc.literal("tail="):
                vstart = sc.pos
                m = sc.match(_TAIL_RE)
                if not m:
                    raise ArchSpecError("tail= must look like '1c2f'", offset=vstart)
                tail = (int(m.group(1)), int(m.group(2)))
            else:
                points.append(_parse_layer_arg(sc))
            sc.skip_ws()
            if sc.literal(","):
                continue
            sc.expect(")", "',' or ')'")
            break
    sc.skip_ws()
    if sc.pos != len(sc.text):
        raise ArchSpecError("trailing characters after ')'", offset=sc.pos)

    return _validate(gat, ft, points, tau, agg, tail)


def _sem(msg: str) -> ArchSpecError:
    return ArchSpecError(msg, semantic=True)


def _validate(gat, ft, points, tau, agg, tail) -> FusionSpec:
    if gat == "GTM" and ft == "LA":
        raise _sem("asynchronous (LA) fusion exists only for GST")
    if tau is not None and ft != "LA":
        raise _sem("tau applies only to LA fusion")
    if ft == "LA":
        if tau is None:
            raise _sem("LA fusion requires tau=<frames>")
        if tau < 1:
            raise _sem("LA delay must be at least 1 frame")
    if agg is not None and gat != "GST":
        raise _sem("agg applies only to GST architectures")

    if gat == "GST":
        if points:
            raise _sem("GST fusion points are fixed; no layer arguments allowed")
        default_tail = (0, 2)
    elif ft == "LS":
        if len(points) != 1:
            raise _sem("GTM_LS takes exactly one fusion point")
        p = points[0]
        if p.stream != "fused":
            raise _sem("the GTM_LS point applies to both streams; drop the stream tag")
        if not (p.is_fc_level or p.is_conv_level):
            raise _sem("GTM_LS point must be an FC-level or CONV-level layer")
        default_tail = (1, 2) if p.is_conv_level else (0, 2)
    elif ft == "SSL":
        if tail is not None:
            raise _sem("GTM_SSL continues the trunk; no tail applies")
        if len(points) != 2:
            raise _sem("GTM_SSL takes exactly two CONV-level points")
        _check_two_conv_points(points[:2])
        default_tail = (0, 2)
    else:  # GTM SML
        if tail is not None:
            raise _sem("GTM_SML continues the trunk; no tail applies")
        if len(points) != 3:
            raise _sem("GTM_SML takes two CONV-level points plus one FC-level point")
        _check_two_conv_points(points[:2])
        if not points[2].is_fc_level:
            raise _sem("the third GTM_SML point must be FC-level (e.g. RL6)")
        if points[2].stream != "fused":
            raise _sem("the GTM_SML FC-level point takes no stream tag")
        default_tail = (0, 2)

    if tail is not None:
        if not (0 <= tail[0] <= 2 and 1 <= tail[1] <= 2):
            raise _sem(f"tail must have 0..2 conv1x1 and 1..2 FC layers, got {tail}")

    return FusionSpec(
        gat=gat,
        ft=ft,
        fusion_points=points,
        tail=tail if tail is not None else default_tail,
        delay_tau=tau or 0,
        aggregation=agg or "all_frames",
    )


def _check_two_conv_points(points) -> None:
    if not all(p.is_conv_level for p in points):
        raise _sem("CONV-level fusion points must name a specific conv (e.g. RL4_3)")
    tags = sorted(p.stream for p in points)
    if tags != ["aff", "app"]:
        raise _sem("CONV-level points need one :app and one :aff stream tag")
