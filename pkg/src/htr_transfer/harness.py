"""Training runs and the experiment commands built on them.

Each command takes a :class:`RunConfig`, writes everything under
``config.out_dir`` (config snapshot, checkpoints, curve and report CSVs) and
returns the resulting :class:`EvalReport` (or list of them).
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .augment import AugmentRanges, random_augment
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .ctc import greedy_decode
from .data import (Alphabet, Sample, UnknownCharacterError, build_alphabet, check_feasible,
                   collate, load_manifest, make_batches, preprocess_samples)
from .freeze import FreezeSpec, FreezeSpecError, parse_freeze_spec
from .metrics import EvalReport, SplitScore, curve_lines, report_table
from .model import Model, ModelConfig, build_model, forward, swap_head, train_step
from .optim import DEFAULT_LR, adam_init
from .synth import SynthSpec, synth_generate
from .tensor import make_rng

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train_manifest: str = ""
    valid_manifest: str = ""
    test_manifest: str = ""
    out_dir: str = "run"
    profile: str = "paper"
    precision: str = "float64"
    seed: int = 0
    epochs: int = 10
    max_steps: int = 0  # 0: no cap beyond the epoch budget
    batch_size: int = 20
    lr: float = DEFAULT_LR
    patience: int = 0  # epochs without valid-CER improvement before stopping; 0 disables
    eval_train: bool = True
    freeze: str = ""  # trainable layers for finetune; empty means all
    freeze_specs: list = field(default_factory=list)  # sweep rows
    train_sizes: list = field(default_factory=list)  # sweep columns; 0 means the whole manifest
    train_size: int = 0
    source_checkpoint: str = ""
    checkpoint: str = ""
    allow_unknown: bool = False
    dump: bool = True
    augment: bool = False
    aug_rotation: float = 3.0
    aug_shear: float = 0.3
    aug_translation: float = 5.0
    aug_scale_min: float = 0.9
    aug_scale_max: float = 1.1
    aug_radius: int = 1
    source_lines: int = 1000
    target_lines: int = 100
    valid_lines: int = 100
    test_lines: int = 100
    source_charset: str = "abcdefghijklmnopqrs "
    target_charset: str = "fghijklmnopqrstuvwxyz "

    def augment_ranges(self) -> AugmentRanges:
        return AugmentRanges(self.aug_rotation, self.aug_shear, self.aug_translation,
                             self.aug_scale_min, self.aug_scale_max, self.aug_radius)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


# --- config files -------------------------------------------------------------
#
# One ``key = value`` per line, ``#`` starts a comment line. Keys are RunConfig
# field names (dashes allowed). List values are separated by ';' because
# freeze specs contain commas. A string value with leading or trailing
# whitespace is written as a JSON string literal ("abc ").

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _field_kind(name: str) -> str:
    default = RunConfig()
    value = getattr(default, name)
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, list):
        return "int_list" if name == "train_sizes" else "str_list"
    return "str"


def parse_value(name: str, raw: str):
    kind = _field_kind(name)
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "int_list":
            return [int(x) for x in raw.split(";") if x.strip()]
        if kind == "str_list":
            return [x.strip() for x in raw.split(";") if x.strip()]
        if raw.startswith('"'):
            return json.loads(raw)
    except ValueError as err:
        raise ConfigError(f"bad value {raw!r} for {name}") from err
    return raw


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ";".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    value = str(value)
    if value != value.strip() or value.startswith('"'):
        return json.dumps(value, ensure_ascii=False)
    return value


def read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = parse_value(key, value.strip())
    return values


def config_text(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {format_value(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))


def write_snapshot(cfg: RunConfig, command: str) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# command: {command}\n")
        fh.write(config_text(cfg))


# --- data helpers -------------------------------------------------------------

def load_split(path: str, height: int) -> list[Sample]:
    if not path:
        return []
    return preprocess_samples(load_manifest(path), height)


def subset(samples: Sequence[Sample], size: int, seed: int) -> list[Sample]:
    """Seeded random subset of ``size`` samples, kept in manifest order."""
    if size <= 0 or size >= len(samples):
        return list(samples)
    rng = make_rng(seed, f"subset:{size}")
    keep = np.sort(rng.choice(len(samples), size=size, replace=False))
    return [samples[i] for i in keep]


def transcribe(model: Model, samples: Sequence[Sample], batch_size: int = 20) -> list[str]:
    alphabet = Alphabet(tuple(model.alphabet))
    out = []
    for i in range(0, len(samples), batch_size):
        batch = collate(samples[i:i + batch_size], None, model.config.downsample,
                        min_width=model.config.downsample)
        logp, lens = forward(model, batch.images, batch.widths, "infer")
        out += [alphabet.decode(greedy_decode(logp[j], lens[j])) for j in range(len(batch))]
    return out


def score(model: Model, samples: Sequence[Sample], batch_size: int = 20):
    hyps = transcribe(model, samples, batch_size)
    return SplitScore.from_pairs([(s.transcript, h) for s, h in zip(samples, hyps)]), hyps


# --- training loop -----------------------------------------------------------------

@dataclass
class FitResult:
    model: Model  # best-valid model when a validation split exists, else final
    final: Model
    curve: list  # (epoch, split, cer)
    losses: list  # per-step mean batch loss
    steps: int
    rejected: int


def fit(model: Model, train: Sequence[Sample], valid: Sequence[Sample], cfg: RunConfig,
        freeze: FreezeSpec | None = None, out_dir: str | None = None) -> FitResult:
    alphabet = Alphabet(tuple(model.alphabet))
    ds = model.config.downsample
    usable, rejected = check_feasible(train, alphabet, ds)
    for s, why in rejected:
        log.warning("excluding sample %s: %s", s.id, why)
    if rejected:
        log.warning("excluded %d of %d training samples", len(rejected), len(train))
    if not usable:
        raise ValueError("no usable training samples")
    if freeze is not None and not freeze.trainable:
        raise ValueError("freeze spec leaves nothing trainable")

    state = adam_init(model.params, lr=cfg.lr)
    shuffle_rng = make_rng(cfg.seed, "shuffle")
    dropout_rng = make_rng(cfg.seed, "dropout")
    aug_rng = make_rng(cfg.seed, "augment")
    ranges = cfg.augment_ranges()
    transform = (lambda img: random_augment(img, aug_rng, ranges)) if cfg.augment else None

    curve, losses = [], []
    best, best_model, stale, steps = np.inf, None, 0, 0
    for epoch in range(1, cfg.epochs + 1):
        for batch in make_batches(usable, alphabet, cfg.batch_size, shuffle_rng, ds, transform):
            losses.append(train_step(model, batch, state, freeze, dropout_rng))
            steps += 1
            if cfg.max_steps and steps >= cfg.max_steps:
                break
        if cfg.eval_train:
            curve.append((epoch, "train", score(model, usable, cfg.batch_size)[0].cer))
        if valid:
            v = score(model, valid, cfg.batch_size)[0].cer
            curve.append((epoch, "valid", v))
            if v < best:
                best, best_model, stale = v, model.copy(), 0
                if out_dir:
                    save_checkpoint(model, os.path.join(out_dir, "best.ckpt"))
            else:
                stale += 1
        log.info("epoch %d step %d loss %.4f %s", epoch, steps, losses[-1],
                 " ".join(f"{s}={c:.4f}" for e, s, c in curve if e == epoch))
        if cfg.patience and valid and stale >= cfg.patience:
            break
        if cfg.max_steps and steps >= cfg.max_steps:
            break
    if out_dir:
        save_checkpoint(model, os.path.join(out_dir, "final.ckpt"))
        with open(os.path.join(out_dir, "curve.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(curve_lines(curve))
    return FitResult(best_model or model, model, curve, losses, steps, len(rejected))


def evaluate_splits(model: Model, splits: dict, label: str, cfg: RunConfig,
                    train_size: int | None = None) -> EvalReport:
    rep = EvalReport(label, train_size=train_size, seed=cfg.seed)
    for name, samples in splits.items():
        if samples:
            rep.splits[name] = score(model, samples, cfg.batch_size)[0]
    return rep


def write_report(reports, path) -> str:
    text = report_table(reports)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return text


# --- commands -----------------------------------------------------------------------

def cmd_pretrain(cfg: RunConfig) -> EvalReport:
    """Train from a fresh initialization."""
    if not cfg.train_manifest:
        raise ConfigError("pretrain needs train_manifest")
    write_snapshot(cfg, "pretrain")
    probe = ModelConfig.from_profile(cfg.profile, 1, precision=cfg.precision)
    train = subset(load_split(cfg.train_manifest, probe.input_height), cfg.train_size, cfg.seed)
    valid = load_split(cfg.valid_manifest, probe.input_height)
    test = load_split(cfg.test_manifest, probe.input_height)
    alphabet = build_alphabet(list(train) + valid + test)
    mcfg = ModelConfig.from_profile(cfg.profile, alphabet.size, precision=cfg.precision)
    model = build_model(mcfg, make_rng(cfg.seed, "init"), alphabet.chars)
    res = fit(model, train, valid, cfg, None, cfg.out_dir)
    label = FreezeSpec.all_layers(mcfg.layer_names()).label()
    rep = evaluate_splits(res.model, {"train": train, "valid": valid, "test": test}, label, cfg, len(train))
    write_report([rep], os.path.join(cfg.out_dir, "report.csv"))
    return rep


def _finetune(cfg: RunConfig, source: Model, freeze_text: str, train_all: Sequence[Sample],
              valid, test, size: int) -> EvalReport:
    spec = parse_freeze_spec(freeze_text) if freeze_text else FreezeSpec.all_layers(source.layer_names())
    label = freeze_text or spec.label()
    if "fc" not in spec.trainable:
        raise FreezeSpecError("the FC layer must stay trainable when transferring")
    train = subset(train_all, size, cfg.seed)
    alphabet = build_alphabet(list(train_all) + list(valid) + list(test))
    model = swap_head(source, alphabet.chars, make_rng(cfg.seed, "head"))
    os.makedirs(cfg.out_dir, exist_ok=True)
    res = fit(model, train, valid, cfg, spec, cfg.out_dir)
    rep = evaluate_splits(res.model, {"train": train, "valid": valid, "test": test}, label, cfg, len(train))
    write_report([rep], os.path.join(cfg.out_dir, "report.csv"))
    return rep


def _load_source(cfg: RunConfig) -> Model:
    if not cfg.source_checkpoint:
        raise ConfigError("source_checkpoint is required")
    source = load_checkpoint(cfg.source_checkpoint)
    if source.config.profile != cfg.profile:
        raise CheckpointError(
            f"checkpoint profile {source.config.profile!r} does not match run profile {cfg.profile!r}")
    return source


def cmd_finetune(cfg: RunConfig) -> EvalReport:
    """Load a source checkpoint, swap its head for the target alphabet and
    retrain the layers named by ``cfg.freeze``."""
    if not cfg.train_manifest:
        raise ConfigError("finetune needs train_manifest")
    if cfg.freeze:
        parse_freeze_spec(cfg.freeze)
    write_snapshot(cfg, "finetune")
    source = _load_source(cfg)
    h = source.config.input_height
    train = load_split(cfg.train_manifest, h)
    valid = load_split(cfg.valid_manifest, h)
    test = load_split(cfg.test_manifest, h)
    return _finetune(cfg, source, cfg.freeze, train, valid, test, cfg.train_size)


def cmd_sweep(cfg: RunConfig) -> list[EvalReport]:
    """Fine-tune once per (training size, freeze spec) cell and tabulate."""
    if not cfg.freeze_specs:
        raise ConfigError("sweep needs at least one entry in freeze_specs")
    write_snapshot(cfg, "sweep")
    source = _load_source(cfg)
    h = source.config.input_height
    train = load_split(cfg.train_manifest, h)
    valid = load_split(cfg.valid_manifest, h)
    test = load_split(cfg.test_manifest, h)
    sizes = cfg.train_sizes or [cfg.train_size]
    reports = []
    cell = 0
    for size in sizes:
        for text in cfg.freeze_specs:
            cell += 1
            sub = cfg.replace(out_dir=os.path.join(cfg.out_dir, f"cell_{cell:02d}"), freeze=text, train_size=size)
            try:
                write_snapshot(sub, "finetune")
                reports.append(_finetune(sub, source, text, train, valid, test, size))
            except (FreezeSpecError, ValueError, UnknownCharacterError) as err:
                log.error("sweep cell %d (%s, size %d) failed: %s", cell, text, size, err)
                n = len(subset(train, size, cfg.seed))
                reports.append(EvalReport(text, train_size=n, seed=cfg.seed,
                                          error=f"{type(err).__name__}: {err}"))
    write_report(reports, os.path.join(cfg.out_dir, "sweep.csv"))
    return reports


def cmd_evaluate(cfg: RunConfig) -> EvalReport:
    """Greedy-decode the given manifests with a checkpoint and score CER."""
    if not cfg.checkpoint:
        raise ConfigError("evaluate needs checkpoint")
    write_snapshot(cfg, "evaluate")
    model = load_checkpoint(cfg.checkpoint)
    h = model.config.input_height
    splits = {"train": load_split(cfg.train_manifest, h), "valid": load_split(cfg.valid_manifest, h),
              "test": load_split(cfg.test_manifest, h)}
    if not any(splits.values()):
        raise ConfigError("evaluate needs at least one manifest")
    alphabet = Alphabet(tuple(model.alphabet))
    unknown = sorted({c for samples in splits.values() for s in samples for c in alphabet.unknown(s.transcript)})
    if unknown and not cfg.allow_unknown:
        raise UnknownCharacterError(f"characters missing from the checkpoint alphabet: {unknown!r}", unknown)
    rep = EvalReport(os.path.basename(cfg.checkpoint), seed=cfg.seed)
    for name, samples in splits.items():
        if not samples:
            continue
        sc, hyps = score(model, samples, cfg.batch_size)
        rep.splits[name] = sc
        if cfg.dump:
            with open(os.path.join(cfg.out_dir, f"decodes_{name}.tsv"), "w", encoding="utf-8", newline="\n") as fh:
                for s, hyp in zip(samples, hyps):
                    fh.write(f"{s.id}\t{s.transcript}\t{hyp}\n")
    write_report([rep], os.path.join(cfg.out_dir, "report.csv"))
    return rep


def cmd_synth(cfg: RunConfig) -> dict:
    """Render a source/target synthetic corpus pair under ``cfg.out_dir``."""
    write_snapshot(cfg, "synth")
    spec = SynthSpec.source_target(cfg.source_lines, cfg.target_lines, cfg.valid_lines, cfg.test_lines,
                                   cfg.source_charset, cfg.target_charset)
    return synth_generate(spec, cfg.seed, cfg.out_dir)
