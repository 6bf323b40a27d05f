"""ROUGE-N/L, corpus BLEU, span EM/F1 and accuracy over token sequences."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import ContractError


@dataclass
class MetricReport:
    metric: str
    precision: float | None
    recall: float | None
    score: float
    count: int

    def as_lines(self) -> list[str]:
        lines = [f"{self.metric}.score={self.score:.6f}", f"{self.metric}.count={self.count}"]
        if self.precision is not None:
            lines.insert(0, f"{self.metric}.precision={self.precision:.6f}")
            lines.insert(1, f"{self.metric}.recall={self.recall:.6f}")
        return lines


def _prf(overlap: float, n_cand: int, n_ref: int) -> tuple[float, float, float]:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0, 0.0, 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return p, r, 2 * p * r / (p + r)


def _fold(seq, lower: bool):
    return [t.lower() if lower and isinstance(t, str) else t for t in seq]


def ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def rouge_n(candidate: Sequence, reference: Sequence, n: int = 1, lower: bool = True):
    if n < 1:
        raise ContractError("n must be >= 1")
    cand, ref = ngrams(_fold(candidate, lower), n), ngrams(_fold(reference, lower), n)
    overlap = sum((cand & ref).values())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence, reference: Sequence, lower: bool = True):
    if not reference:
        raise ContractError("ROUGE-L needs a non-empty reference")
    cand, ref = _fold(candidate, lower), _fold(reference, lower)
    return _prf(lcs_length(cand, ref), len(cand), len(ref))


def brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)


def bleu(candidates: Sequence[Sequence], references: Sequence[Sequence], max_n: int = 4,
         smooth: bool = False) -> float:
    """Corpus BLEU in [0, 100] with one reference per candidate."""
    if len(candidates) != len(references):
        raise ContractError("candidate and reference lists differ in length")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            c, r = ngrams(list(cand), n), ngrams(list(ref), n)
            matches[n - 1] += sum((c & r).values())
            totals[n - 1] += sum(c.values())
    log_p = 0.0
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if smooth and n > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t) / max_n
    return 100.0 * brevity_penalty(c_len, r_len) * math.exp(log_p)


def span_em_f1(pred: Sequence, gold: Sequence) -> tuple[float, float]:
    if not gold:
        raise ContractError("gold span must be non-empty")
    em = float(list(pred) == list(gold))
    overlap = sum((Counter(pred) & Counter(gold)).values())
    return em, _prf(overlap, len(pred), len(gold))[2]


def accuracy(preds: Sequence, golds: Sequence) -> float:
    if len(preds) != len(golds):
        raise ContractError("prediction and gold lists differ in length")
    if not golds:
        raise ContractError("accuracy over zero items")
    return sum(p == g for p, g in zip(preds, golds)) / len(golds)


def token_accuracy(hyp: Sequence, ref: Sequence) -> float:
    """Position-wise matches over the longer of the two sequences."""
    n = max(len(hyp), len(ref))
    if n == 0:
        return 1.0
    return sum(a == b for a, b in zip(hyp, ref)) / n


def corpus_rouge(candidates, references, lower: bool = True) -> dict[str, MetricReport]:
    out = {}
    for name, fn in (("rouge1", lambda c, r: rouge_n(c, r, 1, lower)),
                     ("rouge2", lambda c, r: rouge_n(c, r, 2, lower)),
                     ("rougeL", lambda c, r: rouge_l(c, r, lower))):
        rows = [fn(c, r) for c, r in zip(candidates, references)]
        n = max(1, len(rows))
        out[name] = MetricReport(name, sum(p for p, _, _ in rows) / n, sum(r for _, r, _ in rows) / n,
                                 sum(f for _, _, f in rows) / n, len(rows))
    return out
