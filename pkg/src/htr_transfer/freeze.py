"""Trainable-layer sets written the way the transfer tables label them.

Grammar (whitespace-insensitive, names case-insensitive)::

    spec   := group ("," group)*
    group  := "FC" | kind "[" index ("," index)* "]" | kind index
    kind   := "Conv" | "BLSTM"
    index  := 1..5

Layers named in a freeze spec are trainable; every other layer stays frozen.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

MAX_INDEX = 5
_KINDS = {"conv": "conv", "blstm": "blstm"}
_GROUP = re.compile(r"(conv|blstm)(?:\[([^\[\]]*)\]|(\d+))$|fc$", re.IGNORECASE)


class FreezeSpecError(ValueError):
    pass


def layer_of(tensor_name: str) -> str:
    """``'blstm2.fwd.w_input'`` -> ``'blstm2'``."""
    return tensor_name.split(".", 1)[0]


@dataclass(frozen=True)
class FreezeSpec:
    trainable: frozenset
    text: str = ""

    def is_trainable(self, layer: str) -> bool:
        return layer_of(layer) in self.trainable

    @classmethod
    def all_layers(cls, layers) -> "FreezeSpec":
        return cls(frozenset(layers), "all")

    def label(self) -> str:
        """Canonical table label, e.g. ``Conv[3,4,5], BLSTM[1,2,3,4,5], FC``."""
        parts = []
        for kind, title in (("conv", "Conv"), ("blstm", "BLSTM")):
            idx = sorted(int(n[len(kind):]) for n in self.trainable
                         if n.startswith(kind) and n[len(kind):].isdigit())
            if idx:
                parts.append(f"{title}[{','.join(map(str, idx))}]")
        if "fc" in self.trainable:
            parts.append("FC")
        return ", ".join(parts)


def _split_groups(text: str) -> list[str]:
    groups, depth, cur = [], 0, []
    for ch in text:
        if ch == "[":
            depth += 1
            if depth > 1:
                raise FreezeSpecError(f"nested brackets in {text!r}")
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise FreezeSpecError(f"unbalanced ']' in {text!r}")
        if ch == "," and depth == 0:
            groups.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise FreezeSpecError(f"unclosed '[' in {text!r}")
    groups.append("".join(cur))
    return groups


def parse_freeze_spec(text: str) -> FreezeSpec:
    compact = re.sub(r"\s+", "", text)
    if not compact:
        raise FreezeSpecError("empty freeze spec")
    layers: list[str] = []
    for group in _split_groups(compact):
        if not group:
            raise FreezeSpecError(f"empty group in {text!r}")
        m = _GROUP.match(group)
        if m is None:
            raise FreezeSpecError(f"cannot parse group {group!r}")
        if m.group(1) is None:
            layers.append("fc")
            continue
        kind = _KINDS[m.group(1).lower()]
        raw = m.group(2) if m.group(2) is not None else m.group(3)
        items = raw.split(",")
        for item in items:
            if not item.isdigit():
                raise FreezeSpecError(f"bad layer index {item!r} in {group!r}")
            i = int(item)
            if not 1 <= i <= MAX_INDEX:
                raise FreezeSpecError(f"layer index {i} out of range 1..{MAX_INDEX}")
            layers.append(f"{kind}{i}")
    seen = set()
    for name in layers:
        if name in seen:
            raise FreezeSpecError(f"layer {name} listed twice in {text!r}")
        seen.add(name)
    return FreezeSpec(frozenset(layers), text)
