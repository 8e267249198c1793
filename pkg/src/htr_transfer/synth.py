"""Synthetic handwriting-like text lines rendered from a stroke font.

Glyphs are polylines in a unit line box (y up): descender 0.05, baseline
0.25, x-height 0.55, ascender 0.9. A :class:`Style` turns them into pixels
with a slant, pen width, letter spacing and per-character jitter, which is
enough to give two corpora a visible domain gap.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image, ImageDraw

from .data import write_manifest
from .tensor import make_rng

DESC, BASE, XH, ASC = 0.05, 0.25, 0.55, 0.9
MID = (BASE + XH) / 2
R = (XH - BASE) / 2


def _arc(cx, cy, rx, ry, a0, a1, n=10):
    t = np.deg2rad(np.linspace(a0, a1, n))
    return list(zip(cx + rx * np.cos(t), cy + ry * np.sin(t)))


def _bowl(cx=0.15, rx=0.15):
    return _arc(cx, MID, rx, R, 0, 360, 16)


# name -> (advance width, strokes)
GLYPHS: dict[str, tuple[float, list]] = {
    "a": (0.34, [_bowl(), [(0.3, XH), (0.3, BASE)]]),
    "b": (0.34, [[(0.0, ASC), (0.0, BASE)], _bowl()]),
    "c": (0.30, [_arc(0.15, MID, 0.15, R, 40, 320, 12)]),
    "d": (0.34, [_bowl(), [(0.3, ASC), (0.3, BASE)]]),
    "e": (0.32, [[(0.0, MID), (0.3, MID)] + _arc(0.15, MID, 0.15, R, 0, 320, 12)[1:]]),
    "f": (0.26, [[(0.08, BASE), (0.08, ASC - 0.1)] + _arc(0.16, ASC - 0.1, 0.08, 0.08, 180, 20, 6),
                 [(0.0, XH), (0.2, XH)]]),
    "g": (0.34, [_bowl(), [(0.3, XH), (0.3, DESC + 0.08)] + _arc(0.17, DESC + 0.08, 0.13, 0.06, 0, -160, 6)]),
    "h": (0.34, [[(0.0, ASC), (0.0, BASE)], [(0.0, MID)] + _arc(0.15, MID, 0.15, R, 180, 0, 8)[1:] + [(0.3, BASE)]]),
    "i": (0.14, [[(0.05, XH), (0.05, BASE)], [(0.05, XH + 0.1), (0.05, XH + 0.13)]]),
    "j": (0.20, [[(0.14, XH), (0.14, DESC + 0.06)] + _arc(0.07, DESC + 0.06, 0.07, 0.05, 0, -170, 5),
                 [(0.14, XH + 0.1), (0.14, XH + 0.13)]]),
    "k": (0.30, [[(0.0, ASC), (0.0, BASE)], [(0.25, XH), (0.0, MID - 0.03), (0.26, BASE)]]),
    "l": (0.14, [[(0.05, ASC), (0.05, BASE)]]),
    "m": (0.46, [[(0.0, XH), (0.0, BASE)], [(0.0, MID)] + _arc(0.1, MID, 0.1, R, 180, 0, 6)[1:] + [(0.2, BASE)],
                 [(0.2, MID)] + _arc(0.3, MID, 0.1, R, 180, 0, 6)[1:] + [(0.4, BASE)]]),
    "n": (0.34, [[(0.0, XH), (0.0, BASE)], [(0.0, MID)] + _arc(0.15, MID, 0.15, R, 180, 0, 8)[1:] + [(0.3, BASE)]]),
    "o": (0.34, [_bowl()]),
    "p": (0.34, [[(0.0, XH), (0.0, DESC)], _bowl()]),
    "q": (0.34, [_bowl(), [(0.3, XH), (0.3, DESC)]]),
    "r": (0.26, [[(0.0, XH), (0.0, BASE)], [(0.0, MID)] + _arc(0.13, MID, 0.13, R * 0.9, 180, 60, 5)[1:]]),
    "s": (0.28, [_arc(0.13, MID + R / 2, 0.12, R / 2, 20, 270, 8) + _arc(0.13, MID - R / 2, 0.12, R / 2, 90, -160, 8)[1:]]),
    "t": (0.24, [[(0.08, ASC - 0.12), (0.08, BASE + 0.05)] + _arc(0.14, BASE + 0.05, 0.06, 0.05, 180, 300, 4),
                 [(0.0, XH), (0.2, XH)]]),
    "u": (0.34, [[(0.0, XH), (0.0, MID)] + _arc(0.15, MID, 0.15, R, 180, 360, 8)[1:] + [(0.3, XH)],
                 [(0.3, XH), (0.3, BASE)]]),
    "v": (0.32, [[(0.0, XH), (0.15, BASE), (0.3, XH)]]),
    "w": (0.44, [[(0.0, XH), (0.1, BASE), (0.2, XH - 0.1), (0.3, BASE), (0.4, XH)]]),
    "x": (0.32, [[(0.0, XH), (0.3, BASE)], [(0.3, XH), (0.0, BASE)]]),
    "y": (0.32, [[(0.0, XH), (0.15, BASE)], [(0.3, XH), (0.05, DESC)]]),
    "z": (0.32, [[(0.0, XH), (0.3, XH), (0.0, BASE), (0.3, BASE)]]),
    " ": (0.28, []),
}
FONT_CHARSET = "".join(sorted(GLYPHS))


@dataclass(frozen=True)
class Style:
    """Rendering style; the two presets stand in for modern vs historical hands."""

    height: int = 40  # rendered line height in pixels
    slant: float = 0.0  # x shift per unit of height above the baseline
    pen: int = 2  # stroke width in pixels
    spacing: float = 0.08  # extra advance per character, in line heights
    jitter: float = 0.02  # per-character vertical/horizontal jitter, in line heights
    scale_jitter: float = 0.05
    margin: int = 4
    supersample: int = 1  # >1 renders larger and downsamples, giving gray anti-aliased edges


STYLES = {
    "modern": Style(height=40, slant=0.0, pen=2, spacing=0.16, supersample=4),
    "historical": Style(height=48, slant=0.35, pen=4, spacing=0.2, jitter=0.03, scale_jitter=0.08),
}


def text_width(text: str, style: Style) -> int:
    adv = sum(GLYPHS[c][0] + style.spacing for c in text)
    return int(np.ceil(adv * style.height * (1 + style.scale_jitter))) + 2 * style.margin \
        + int(abs(style.slant) * style.height) + style.pen


def render_line(text: str, style: Style, rng: np.random.Generator) -> np.ndarray:
    """Dark ink on white, uint8 [H, W]."""
    unknown = sorted({c for c in text if c not in GLYPHS})
    if unknown:
        raise ValueError(f"no glyphs for {unknown!r}")
    k = style.supersample
    if k > 1:
        big = replace(style, height=style.height * k, pen=style.pen * k, margin=style.margin * k, supersample=1)
        hi = Image.fromarray(render_line(text, big, rng))
        w = max(1, hi.width // k)
        return np.asarray(hi.resize((w, style.height), Image.BOX))
    h = style.height
    img = Image.new("L", (text_width(text, style), h), 255)
    draw = ImageDraw.Draw(img)
    x0 = float(style.margin)
    for ch in text:
        adv, strokes = GLYPHS[ch]
        s = 1.0 + rng.uniform(-style.scale_jitter, style.scale_jitter)
        dx = rng.uniform(-style.jitter, style.jitter) * h
        dy = rng.uniform(-style.jitter, style.jitter) * h
        for stroke in strokes:
            pts = []
            for x, y in stroke:
                yy = BASE + (y - BASE) * s
                px = x0 + dx + (x * s + style.slant * (yy - BASE)) * h
                py = (1.0 - yy) * h + dy
                pts.append((px, py))
            draw.line(pts, fill=0, width=style.pen, joint="curve")
        x0 += (adv * s + style.spacing) * h
    return np.asarray(img)


def random_text(rng: np.random.Generator, charset: str, min_len: int, max_len: int) -> str:
    letters = [c for c in charset if c != " "]
    if not letters:
        raise ValueError("charset has no printable characters")
    n = int(rng.integers(min_len, max_len + 1))
    chars = []
    for i in range(n):
        if " " in charset and 0 < i < n - 1 and chars[-1] != " " and rng.random() < 0.18:
            chars.append(" ")
        else:
            chars.append(letters[int(rng.integers(len(letters)))])
    return "".join(chars)


@dataclass(frozen=True)
class DomainSpec:
    name: str
    style: str
    charset: str
    splits: dict = field(default_factory=dict)  # split name -> line count
    min_len: int = 4
    max_len: int = 9


@dataclass(frozen=True)
class SynthSpec:
    domains: tuple

    @classmethod
    def source_target(cls, source_lines: int = 1000, target_lines: int = 100, valid_lines: int = 100,
                      test_lines: int = 100, source_charset: str = "abcdefghijklmnopqrs ",
                      target_charset: str = "fghijklmnopqrstuvwxyz ") -> "SynthSpec":
        """Two domains in different styles over partially overlapping charsets."""
        return cls((
            DomainSpec("source", "modern", source_charset,
                       {"train": source_lines, "valid": valid_lines}),
            DomainSpec("target", "historical", target_charset,
                       {"train": target_lines, "valid": valid_lines, "test": test_lines}),
        ))


def synth_generate(spec: SynthSpec, seed: int, out_dir) -> dict:
    """Render every domain/split to ``out_dir/<domain>/`` as PNGs plus
    ``<split>.tsv`` manifests. Returns ``{domain: {split: manifest path}}``."""
    styles = {d.style for d in spec.domains}
    if len(spec.domains) >= 2 and len(styles) < 2:
        raise ValueError("domains must use at least two distinct styles")
    out = {}
    for dom in spec.domains:
        if not dom.charset:
            raise ValueError(f"domain {dom.name!r} has an empty charset")
        style = STYLES[dom.style]
        rng = make_rng(seed, f"synth:{dom.name}")
        root = os.path.join(out_dir, dom.name)
        os.makedirs(os.path.join(root, "img"), exist_ok=True)
        out[dom.name] = {}
        for split, count in dom.splits.items():
            records = []
            for i in range(count):
                text = random_text(rng, dom.charset, dom.min_len, dom.max_len)
                rel = f"img/{split}_{i:05d}.png"
                Image.fromarray(render_line(text, style, rng)).save(os.path.join(root, rel))
                records.append((rel, text))
            path = os.path.join(root, f"{split}.tsv")
            write_manifest(path, records)
            out[dom.name][split] = path
    return out
