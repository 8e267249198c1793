import hashlib
import os

import numpy as np
import pytest

from htr_transfer.data import load_manifest
from htr_transfer.synth import FONT_CHARSET, STYLES, SynthSpec, random_text, render_line, synth_generate


def tree_digest(root):
    h = hashlib.sha256()
    for d, _, files in sorted(os.walk(root)):
        for f in sorted(files):
            p = os.path.join(d, f)
            h.update(os.path.relpath(p, root).encode())
            with open(p, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def small_spec():
    return SynthSpec.source_target(source_lines=6, target_lines=4, valid_lines=3, test_lines=2)


def test_generate_is_byte_deterministic(tmp_path):
    synth_generate(small_spec(), 3, tmp_path / "a")
    synth_generate(small_spec(), 3, tmp_path / "b")
    synth_generate(small_spec(), 4, tmp_path / "c")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_counts_and_charsets(tmp_path):
    paths = synth_generate(small_spec(), 0, tmp_path)
    assert set(paths) == {"source", "target"}
    assert set(paths["source"]) == {"train", "valid"}
    sizes = {(d, s): len(load_manifest(p)) for d, sp in paths.items() for s, p in sp.items()}
    assert sizes == {("source", "train"): 6, ("source", "valid"): 3, ("target", "train"): 4,
                     ("target", "valid"): 3, ("target", "test"): 2}
    for s in load_manifest(paths["source"]["train"]):
        assert set(s.transcript) <= set("abcdefghijklmnopqrs ")
        assert s.image.dtype == np.uint8


def test_styles_differ():
    rng = np.random.default_rng(0)
    modern = render_line("ghost", STYLES["modern"], rng)
    hist = render_line("ghost", STYLES["historical"], rng)
    assert modern.shape[0] == 40 and hist.shape[0] == 48
    assert len(np.unique(modern)) > 2  # anti-aliased
    assert set(np.unique(hist).tolist()) <= {0, 255}


def test_every_glyph_leaves_ink():
    rng = np.random.default_rng(1)
    for c in FONT_CHARSET.replace(" ", ""):
        assert (render_line(c, STYLES["modern"], rng) < 128).any(), c


def test_unknown_character_rejected():
    with pytest.raises(ValueError):
        render_line("A", STYLES["modern"], np.random.default_rng(0))


def test_random_text_shape():
    rng = np.random.default_rng(2)
    for _ in range(50):
        t = random_text(rng, "ab ", 4, 9)
        assert 4 <= len(t) <= 9 and t[0] != " " and t[-1] != " " and "  " not in t
