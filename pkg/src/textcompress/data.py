"""Tokenisation, vocabularies, noise synthesis, synthetic datasets and file IO.

Synthetic keep/drop grammar
---------------------------
Sequences mix *backbone* tokens ``k0..k{n-1}`` with *filler* tokens
``w0..w{m-1}``. The gold compression of a sequence is its backbone tokens in
their original order. The translation variant maps each backbone token
``kI`` to ``tI`` on the target side and drops the fillers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import DataError

PAD, BOS, EOS, UNK, CLS, SEP = range(6)
SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>", "[CLS]", "[SEP]"]

_TOKEN_RE = re.compile(r"\w+(?:['\-]\w+)*|[^\w\s]")
_NO_SPACE_BEFORE = set(".,!?;:%)]}")
_NO_SPACE_AFTER = set("([{")


def tokenize(text: str, lower: bool = False) -> list[str]:
    if lower:
        text = text.lower()
    return _TOKEN_RE.findall(text)


def detokenize(tokens: Sequence[str]) -> str:
    out: list[str] = []
    glue = False
    for tok in tokens:
        if out and not glue and tok not in _NO_SPACE_BEFORE:
            out.append(" ")
        out.append(tok)
        glue = tok in _NO_SPACE_AFTER
    return "".join(out)


class Vocab:
    """Token/id bijection. Ids 0-5 are PAD, BOS, EOS, UNK, CLS, SEP."""

    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = list(SPECIALS)
        for tok in tokens:
            if tok not in SPECIALS:
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], max_size: int | None = None) -> "Vocab":
        counts: dict[str, int] = {}
        for seq in sequences:
            for tok in seq:
                counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts, key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(SPECIALS))]
        return cls(ranked)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i] if 0 <= i < len(self.itos) else SPECIALS[UNK])
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[: len(SPECIALS)] != SPECIALS:
            raise DataError(f"{path}: vocabulary must start with the reserved tokens {SPECIALS}")
        return cls(lines[len(SPECIALS):])


# ---------------------------------------------------------------------------
# noise synthesis
# ---------------------------------------------------------------------------


@dataclass
class NoiseConfig:
    additive_fraction: float = 0.5
    shuffle_level: str = "token"  # or "sentence"
    dropout_p: float = 0.1
    seed: int = 0
    full_stop: Hashable = "."

    def __post_init__(self):
        if self.additive_fraction < 0:
            raise ValueError("additive_fraction must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.shuffle_level not in ("token", "sentence"):
            raise ValueError("shuffle_level must be token or sentence")


def _rng(cfg: NoiseConfig, rng) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(cfg.seed)


def noise_additive(x: Sequence, corpus: Sequence[Sequence], cfg: NoiseConfig, rng=None) -> list:
    """Append ceil(fraction * |x|) words sub-sampled from random corpus lines."""
    rng = _rng(cfg, rng)
    need = math.ceil(round(cfg.additive_fraction * len(x), 9))
    if need == 0:
        return list(x)
    pool = [line for line in corpus if len(line)]
    if not pool:
        raise DataError("additive noise needs a non-empty corpus")
    extra: list = []
    while len(extra) < need:
        line = pool[int(rng.integers(len(pool)))]
        k = min(need - len(extra), int(rng.integers(1, len(line) + 1)))
        picks = rng.choice(len(line), size=k, replace=False)
        extra.extend(line[int(i)] for i in picks)
    return list(x) + extra


def split_sentences(x: Sequence, full_stop) -> list[list]:
    blocks, cur = [], []
    for tok in x:
        cur.append(tok)
        if tok == full_stop:
            blocks.append(cur)
            cur = []
    if cur:
        blocks.append(cur)
    return blocks


def noise_shuffle(x: Sequence, cfg: NoiseConfig, rng=None, sampled_from: int | None = None) -> list:
    """Token mode permutes tokens; sentence mode permutes full-stop blocks.

    In sentence mode, ``x[sampled_from:]`` (the additive sample) forms one extra block.
    """
    rng = _rng(cfg, rng)
    x = list(x)
    if len(x) <= 1:
        return x
    if cfg.shuffle_level == "token":
        return [x[int(i)] for i in rng.permutation(len(x))]
    cut = len(x) if sampled_from is None else sampled_from
    blocks = split_sentences(x[:cut], cfg.full_stop)
    if cut < len(x):
        blocks.append(x[cut:])
    return [tok for i in rng.permutation(len(blocks)) for tok in blocks[int(i)]]


def noise_word_dropout(x: Sequence, cfg: NoiseConfig, rng=None) -> list:
    rng = _rng(cfg, rng)
    x = list(x)
    if not x or cfg.dropout_p == 0.0:
        return x
    keep = rng.random(len(x)) >= cfg.dropout_p
    if not keep.any():
        keep[int(rng.integers(len(x)))] = True
    return [t for t, k in zip(x, keep) if k]


def synthesize_pair(x: Sequence, corpus: Sequence[Sequence], cfg: NoiseConfig, rng=None) -> tuple[list, list]:
    """Noisy input for a clean target: dropout(shuffle(additive(x)))."""
    rng = _rng(cfg, rng)
    extended = noise_additive(x, corpus, cfg, rng)
    shuffled = noise_shuffle(extended, cfg, rng, sampled_from=len(x))
    return noise_word_dropout(shuffled, cfg, rng), list(x)


def synthesize_corpus(corpus: Sequence[Sequence], cfg: NoiseConfig) -> list[tuple[list, list]]:
    rng = np.random.default_rng(cfg.seed)
    return [synthesize_pair(x, corpus, cfg, rng) for x in corpus if len(x)]


# ---------------------------------------------------------------------------
# synthetic labelled sets
# ---------------------------------------------------------------------------


@dataclass
class KeepDropGrammar:
    n_keywords: int = 60
    n_fillers: int = 134
    min_len: int = 8
    max_len: int = 16
    ratio: float = 0.4

    def keywords(self) -> list[str]:
        return [f"k{i}" for i in range(self.n_keywords)]

    def fillers(self) -> list[str]:
        return [f"w{i}" for i in range(self.n_fillers)]

    def targets(self) -> list[str]:
        return [f"t{i}" for i in range(self.n_keywords)]

    def vocab(self, translation: bool = False) -> Vocab:
        toks = self.keywords() + self.fillers()
        if translation:
            toks += self.targets()
        return Vocab(toks)


def is_backbone(token: str) -> bool:
    return token.startswith("k")


def _keep_drop_sequence(g: KeepDropGrammar, rng: np.random.Generator) -> tuple[list[str], list[str]]:
    n = int(rng.integers(g.min_len, g.max_len + 1))
    k = max(1, int(round(g.ratio * n)))
    slots = set(int(i) for i in rng.choice(n, size=k, replace=False))
    x = [f"k{int(rng.integers(g.n_keywords))}" if i in slots else f"w{int(rng.integers(g.n_fillers))}"
         for i in range(n)]
    return x, [t for t in x if is_backbone(t)]


def make_synthetic_supervised_set(grammar: KeepDropGrammar, n: int, seed: int) -> list[tuple[list[str], list[str]]]:
    """(x, backbone) pairs; the backbone is the ordered subsequence of ``k*`` tokens."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return [_keep_drop_sequence(grammar, rng) for _ in range(n)]


def make_noisy_copy_translation_set(grammar: KeepDropGrammar, n: int, seed: int):
    """(source, target, backbone) triples; target maps ``kI`` to ``tI``."""
    pairs = make_synthetic_supervised_set(grammar, n, seed)
    return [(x, ["t" + t[1:] for t in y], y) for x, y in pairs]


def split_train_test(make, n_train: int, n_test: int, seed: int):
    """Build train and test from distinct seeds, dropping test items seen in train."""
    train = make(n_train, seed * 2 + 1)
    seen = {tuple(item[0]) for item in train}
    test = [item for item in make(n_test, seed * 2 + 2) if tuple(item[0]) not in seen]
    return train, test


def make_span_set(n: int, seed: int, n_keywords: int = 20, n_fillers: int = 60,
                  answerable: float = 0.7, min_len: int = 8, max_len: int = 14):
    """Passages of fillers that may contain one run of 1-3 keyword tokens.

    Returns (passage, question, start, end) with positions indexing the
    passage; (-1, -1) marks an unanswerable item.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        p = [f"w{int(rng.integers(n_fillers))}" for _ in range(length)]
        if rng.random() < answerable:
            span = int(rng.integers(1, 4))
            s = int(rng.integers(0, length - span + 1))
            for i in range(s, s + span):
                p[i] = f"k{int(rng.integers(n_keywords))}"
            out.append((p, ["find"], s, s + span - 1))
        else:
            out.append((p, ["find"], -1, -1))
    return out


def make_choice_set(n: int, seed: int, n_options: int = 4, n_keywords: int = 20, n_fillers: int = 60,
                    min_len: int = 6, max_len: int = 10):
    """The right option is the one sharing the passage's single keyword."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        p = [f"w{int(rng.integers(n_fillers))}" for _ in range(length)]
        kws = rng.choice(n_keywords, size=n_options, replace=False)
        p[int(rng.integers(length))] = f"k{int(kws[0])}"
        label = int(rng.integers(n_options))
        order = [int(k) for k in kws[1:]]
        order.insert(label, int(kws[0]))
        options = [[f"k{k}", f"w{int(rng.integers(n_fillers))}"] for k in order]
        out.append((p, ["which"], options, label))
    return out


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------


def read_lines(path) -> list[list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return [tokenize(line) for line in text.splitlines()]


def write_lines(path, sequences: Iterable[Sequence[str]]) -> None:
    Path(path).write_text("".join(" ".join(s) + "\n" for s in sequences), encoding="utf-8")


def read_tsv(path, n_fields: int) -> list[list[str]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != n_fields:
            raise DataError(f"{path}:{no}: expected {n_fields} tab-separated fields, got {len(fields)}")
        rows.append(fields)
    return rows


def read_pairs(path) -> list[tuple[list[str], list[str]]]:
    return [(tokenize(a), tokenize(b)) for a, b in read_tsv(path, 2)]


def write_pairs(path, pairs) -> None:
    Path(path).write_text("".join(f"{' '.join(a)}\t{' '.join(b)}\n" for a, b, *_ in pairs), encoding="utf-8")


def read_span_file(path):
    """passage <TAB> question <TAB> start <TAB> end, positions in passage tokens, -1 for none."""
    out = []
    for p, q, s, e in read_tsv(path, 4):
        try:
            out.append((tokenize(p), tokenize(q), int(s), int(e)))
        except ValueError as exc:
            raise DataError(f"{path}: bad span position: {exc}") from exc
    return out


def write_span_file(path, items) -> None:
    Path(path).write_text(
        "".join(f"{' '.join(p)}\t{' '.join(q)}\t{s}\t{e}\n" for p, q, s, e in items), encoding="utf-8")


def read_choice_file(path):
    """passage <TAB> question <TAB> opt1 ||| opt2 ... <TAB> label index."""
    out = []
    for p, q, opts, label in read_tsv(path, 4):
        options = [tokenize(o) for o in opts.split("|||")]
        try:
            out.append((tokenize(p), tokenize(q), options, int(label)))
        except ValueError as exc:
            raise DataError(f"{path}: bad label: {exc}") from exc
    return out


def write_choice_file(path, items) -> None:
    Path(path).write_text(
        "".join(f"{' '.join(p)}\t{' '.join(q)}\t{' ||| '.join(' '.join(o) for o in opts)}\t{label}\n"
                for p, q, opts, label in items), encoding="utf-8")


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, max((len(s) for s in seqs), default=1))
    ids = np.full((len(seqs), n), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask
