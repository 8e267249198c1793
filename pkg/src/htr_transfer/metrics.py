"""Edit distance, character error rate and CSV reporting."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

SPLITS = ("train", "valid", "test")


def edit_distance(reference: str, hypothesis: str) -> int:
    """Levenshtein distance over code points (unit insert/delete/substitute)."""
    if len(reference) < len(hypothesis):
        reference, hypothesis = hypothesis, reference
    prev = list(range(len(hypothesis) + 1))
    for i, rc in enumerate(reference, 1):
        cur = [i]
        for j, hc in enumerate(hypothesis, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (rc != hc)))
        prev = cur
    return prev[-1]


def error_counts(pairs: Iterable[tuple[str, str]]) -> tuple[int, int]:
    edits = chars = 0
    for ref, hyp in pairs:
        edits += edit_distance(ref, hyp)
        chars += len(ref)
    return edits, chars


def cer(pairs: Iterable[tuple[str, str]]) -> float:
    """Corpus-level CER: total edits over total reference characters."""
    edits, chars = error_counts(pairs)
    if chars == 0:
        raise ValueError("CER undefined: references contain no characters")
    return edits / chars


@dataclass
class SplitScore:
    cer: float
    samples: int
    edits: int
    ref_chars: int

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, str]]) -> "SplitScore":
        edits, chars = error_counts(pairs)
        if chars == 0:
            raise ValueError("CER undefined: references contain no characters")
        return cls(edits / chars, len(pairs), edits, chars)


@dataclass
class EvalReport:
    label: str
    splits: dict = field(default_factory=dict)  # split name -> SplitScore
    train_size: int | None = None
    seed: int | None = None
    error: str = ""


COLUMNS = ("trainable_layers", "train_cer", "valid_cer", "test_cer", "train_size", "seed",
           "train_edits", "train_chars", "valid_edits", "valid_chars", "test_edits", "test_chars",
           "error")


def format_percent(ratio: float) -> str:
    return f"{100.0 * ratio:.1f}"


def report_rows(reports: Sequence[EvalReport]) -> list[dict]:
    rows = []
    for rep in reports:
        row = dict.fromkeys(COLUMNS, "")
        row["trainable_layers"] = rep.label
        row["train_size"] = "" if rep.train_size is None else str(rep.train_size)
        row["seed"] = "" if rep.seed is None else str(rep.seed)
        row["error"] = rep.error
        for split in SPLITS:
            score = rep.splits.get(split)
            if score is not None:
                row[f"{split}_cer"] = format_percent(score.cer)
                row[f"{split}_edits"] = str(score.edits)
                row[f"{split}_chars"] = str(score.ref_chars)
        rows.append(row)
    return rows


def report_table(reports: Sequence[EvalReport]) -> str:
    """One CSV row per report, CER columns in percent with one decimal."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(report_rows(reports))
    return buf.getvalue()


def curve_lines(points: Iterable[tuple[int, str, float]]) -> str:
    """Per-epoch learning curve as CSV ``epoch,split,cer`` with CER as a ratio."""
    lines = ["epoch,split,cer"]
    lines += [f"{epoch},{split},{value:.6f}" for epoch, split, value in points]
    return "\n".join(lines) + "\n"
