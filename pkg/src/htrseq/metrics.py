"""Character error rate."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over code points (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass
class EvalRecord:
    id: str
    hypothesis: str
    reference: str
    edits: int


@dataclass
class EvalReport:
    cer: float
    total_edits: int
    total_target_chars: int
    records: list[EvalRecord] = field(default_factory=list)

    def summary(self, label: str = "CER") -> str:
        return (f"{label} {100.0 * self.cer:.2f}% ({self.total_edits} edits / "
                f"{self.total_target_chars} chars, {len(self.records)} lines)")

    def write_tsv(self, path) -> None:
        lines = ["id\thypothesis\treference\tedits\n"]
        lines += [f"{r.id}\t{r.hypothesis}\t{r.reference}\t{r.edits}\n" for r in self.records]
        Path(path).write_text("".join(lines), encoding="utf-8")


def corpus_cer(pairs: Iterable[tuple[str, str]], ids: Sequence[str] | None = None) -> EvalReport:
    """Micro-averaged CER: total edits over total reference characters."""
    pairs = list(pairs)
    ids = list(ids) if ids is not None else [str(i) for i in range(len(pairs))]
    records = [EvalRecord(i, h, r, levenshtein(h, r)) for i, (h, r) in zip(ids, pairs)]
    chars = sum(len(r) for _, r in pairs)
    if chars == 0:
        raise ValueError("CER is undefined when every reference is empty")
    edits = sum(rec.edits for rec in records)
    return EvalReport(edits / chars, edits, chars, records)
