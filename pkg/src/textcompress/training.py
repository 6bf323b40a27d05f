"""Training orchestration for the three compression manners, plus the
ratio sweep and the compression-quality ablation.

A run is a list of stages. Each stage iterates epochs of shuffled index
batches through one loss function with its own Adam optimizer. Batch order
comes from a generator seeded by (seed, stage, epoch), so a run resumed from
an epoch-boundary checkpoint replays the remaining steps exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (CLS, NoiseConfig, Vocab, KeepDropGrammar, pad_batch, read_choice_file, read_lines, read_pairs,
                   read_span_file, synthesize_corpus)
from .errors import ConfigError, DataError
from .etc import DEFAULT_BANNED, BeamConfig, baseline_compress, beam_search_compress, joint_greedy_compress
from .itc import itc_pretrain_loss
from .metrics import accuracy, bleu, corpus_rouge, span_em_f1, token_accuracy
from .optim import Adam
from .seq2seq import Seq2SeqModel
from .tasks import (EncoderClassifier, answerability_verify, build_span_input, choice_scores, span_loss,
                    span_predict, translate)

log = logging.getLogger(__name__)

VERIFIER_WEIGHT = 0.5
COMPRESSOR_SEED_OFFSET = 100_003


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class RunData:
    """Everything a run consumes, already mapped to ids.

    Item shapes by task:
      translate: (src, tgt); compress: (src, backbone);
      span: (passage, question, start, end); choice: (passage, question, options, label).
    """

    vocab: Vocab
    train: list
    test: list = field(default_factory=list)
    compression_pairs: list = field(default_factory=list)
    corpus: list = field(default_factory=list)


def source_of(task: str, item) -> list[int]:
    """The sequence a compressor sees for one task item."""
    return list(item[0])


def _encode_items(task: str, vocab: Vocab, items) -> list:
    enc = vocab.encode
    if task in ("translate", "compress"):
        return [(enc(a), enc(b)) for a, b, *_ in items]
    if task == "span":
        return [(enc(p), enc(q), s, e) for p, q, s, e in items]
    return [(enc(p), enc(q), [enc(o) for o in opts], label) for p, q, opts, label in items]


def _read_task_file(task: str, path):
    if task in ("translate", "compress"):
        return read_pairs(path)
    if task == "span":
        return read_span_file(path)
    return read_choice_file(path)


def _item_tokens(task: str, item) -> list[list[str]]:
    if task in ("translate", "compress"):
        return [item[0], item[1]]
    if task == "span":
        return [item[0], item[1]]
    return [item[0], item[1], *item[2]]


def load_run_data(cfg: RunConfig) -> RunData:
    """Read the files named in ``cfg``; builds a vocabulary unless one is given."""
    if not cfg.train:
        raise ConfigError("a training file is required (paths.train)")
    train = _read_task_file(cfg.task, cfg.train)
    test = _read_task_file(cfg.task, cfg.test) if cfg.test else []
    comp = read_pairs(cfg.compression_pairs) if cfg.compression_pairs else []
    corpus = read_lines(cfg.corpus) if cfg.corpus else []
    if not train:
        raise DataError(f"{cfg.train}: no training items")
    if cfg.vocab:
        try:
            vocab = Vocab.load(cfg.vocab)
        except OSError as exc:
            raise DataError(f"cannot read vocabulary {cfg.vocab}: {exc}") from exc
    else:
        seqs = [s for it in train + test for s in _item_tokens(cfg.task, it)]
        seqs += [s for pair in comp for s in pair] + corpus
        vocab = Vocab.build(seqs)
    train_ids = _encode_items(cfg.task, vocab, train)
    comp_ids = [(vocab.encode(a), vocab.encode(b)) for a, b in comp]
    if cfg.task == "compress" and not comp_ids:
        # the training pairs are themselves compression pairs
        comp_ids = list(train_ids)
    return RunData(vocab, train_ids, _encode_items(cfg.task, vocab, test), comp_ids, [vocab.encode(s) for s in corpus])


def keep_drop_data(n_train: int, n_test: int, seed: int, task: str = "compress",
                   n_compression: int | None = None, grammar: KeepDropGrammar | None = None) -> RunData:
    """Synthetic keep/drop (task=compress) or noisy-copy translation data.

    For translation the compression pairs are drawn from a third stream so
    the compressor never sees the task's own sources.
    """
    from .data import make_noisy_copy_translation_set, make_synthetic_supervised_set, split_train_test

    g = grammar or KeepDropGrammar()
    vocab = g.vocab(translation=task == "translate")
    if task == "compress":
        train, test = split_train_test(lambda n, s: make_synthetic_supervised_set(g, n, s), n_train, n_test, seed)
        items = lambda rows: [(vocab.encode(x), vocab.encode(y)) for x, y in rows]
        return RunData(vocab, items(train), items(test), items(train), [vocab.encode(x) for x, _ in train])
    if task != "translate":
        raise ConfigError(f"keep/drop data supports compress or translate, not {task}")
    train, test = split_train_test(lambda n, s: make_noisy_copy_translation_set(g, n, s), n_train, n_test, seed)
    comp = make_synthetic_supervised_set(g, n_compression or n_train, seed * 2 + 3)
    return RunData(vocab,
                   [(vocab.encode(x), vocab.encode(t)) for x, t, _ in train],
                   [(vocab.encode(x), vocab.encode(t)) for x, t, _ in test],
                   [(vocab.encode(x), vocab.encode(y)) for x, y in comp],
                   [vocab.encode(x) for x, _, _ in train])


# ---------------------------------------------------------------------------
# stage machinery
# ---------------------------------------------------------------------------


def batch_order(n: int, batch_size: int, seed: int, stage: int, epoch: int) -> list[np.ndarray]:
    perm = np.random.default_rng([seed, 100 + stage, epoch]).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def warmup_lr(base: float, step: int, warmup: int) -> float:
    return base * min(1.0, (step + 1) / warmup) if warmup > 0 else base


@dataclass
class Stage:
    name: str
    epochs: int
    n_items: int
    loss: Callable[[np.ndarray], ad.Tensor]
    params: Callable[[], list]
    prepare: Callable[[], None] | None = None


@dataclass
class LogRow:
    stage: str
    epoch: int
    step: int
    loss: float


@dataclass
class RunResult:
    config: RunConfig
    data: RunData
    model: object
    compressor: Seq2SeqModel | None
    log: list[LogRow]
    metrics: dict[str, float] = field(default_factory=dict)
    predictions: list = field(default_factory=list)
    run: "Run | None" = None

    def losses(self) -> list[float]:
        return [row.loss for row in self.log]


class Run:
    """Builds the models and stage list for one config and executes them."""

    def __init__(self, cfg: RunConfig, data: RunData):
        self.cfg = cfg.validate()
        self.data = data
        if not data.train:
            raise DataError("no training items")
        v = len(data.vocab)
        mcfg = cfg.model_config(v)
        itc_cfg = cfg.nat_config(v) if cfg.manner == "itc-joint" else None
        if cfg.task in ("translate", "compress"):
            self.model = Seq2SeqModel(mcfg, cfg.fusion, cfg.seed, itc_cfg, cfg.independent_encoder)
        else:
            self.model = EncoderClassifier(mcfg, cfg.fusion, cfg.seed, itc_cfg)
        self.compressor = (Seq2SeqModel(mcfg, "none", cfg.seed + COMPRESSOR_SEED_OFFSET)
                           if cfg.uses_compressor else None)
        self.gamma = cfg.effective_gamma
        self.log: list[LogRow] = []
        self.step = 0
        self.compressed: dict[str, list[list[int]]] = {}
        self.stages = self._build_stages()

    # -- compression sources ---------------------------------------------

    def _compression_data(self) -> tuple[list, list]:
        """(unsupervised, supervised) pairs for compressor or ITC pretraining."""
        sup = list(self.data.compression_pairs)
        unsup: list = []
        if self.cfg.setting in ("unsupervised", "semi"):
            corpus = self.data.corpus or [source_of(self.cfg.task, it) for it in self.data.train]
            noise = NoiseConfig(self.cfg.additive_fraction, self.cfg.shuffle_level, self.cfg.dropout_p, self.cfg.seed)
            unsup = synthesize_corpus(corpus, noise)
        if self.cfg.setting == "unsupervised":
            sup = []
        if self.cfg.setting == "supervised" and not sup:
            raise DataError("supervised compression needs compression pairs")
        return unsup, sup

    def _seq2seq_stage(self, name: str, model: Seq2SeqModel, pairs, epochs: int) -> Stage:
        def loss(idx):
            src = [pairs[i][0] for i in idx]
            ids, mask = pad_batch(src)
            return model.teacher_forced_loss(model.source_context(ids, mask), [pairs[i][1] for i in idx])

        return Stage(name, epochs, len(pairs), loss, model.parameters)

    def _itc_stage(self, name: str, pairs, epochs: int) -> Stage:
        m = self.model

        def loss(idx):
            return itc_pretrain_loss(m.encoder, m.itc, [pairs[i][0] for i in idx], [pairs[i][1] for i in idx],
                                     self.gamma)

        return Stage(name, epochs, len(pairs), loss, lambda: m.encoder.parameters() + m.itc.parameters())

    def _build_stages(self) -> list[Stage]:
        cfg = self.cfg
        stages: list[Stage] = []
        if cfg.task == "compress":
            unsup, sup = self._compression_data()
            if unsup:
                stages.append(self._seq2seq_stage("compress-unsup", self.model, unsup, cfg.unsup_epochs))
            if sup:
                stages.append(self._seq2seq_stage("compress", self.model, sup, cfg.epochs))
            return stages
        if self.compressor is not None:
            unsup, sup = self._compression_data()
            if unsup:
                stages.append(self._seq2seq_stage("compressor-unsup", self.compressor, unsup, cfg.unsup_epochs))
            if sup:
                stages.append(self._seq2seq_stage("compressor", self.compressor, sup, cfg.compressor_epochs))
        if cfg.manner == "itc-joint":
            unsup, sup = self._compression_data()
            if unsup:
                stages.append(self._itc_stage("itc-unsup", unsup, cfg.unsup_epochs))
            if sup:
                stages.append(self._itc_stage("itc-pretrain", sup, cfg.itc_pretrain_epochs))
        prepare = self._cache_compressions if cfg.manner == "etc-pipeline" else None
        stages.append(Stage("task", cfg.epochs, len(self.data.train), self._task_loss, self._task_params, prepare))
        return stages

    def _task_params(self) -> list:
        params = self.model.parameters()
        if self.cfg.manner == "etc-joint":
            params = params + self.compressor.parameters()
        return params

    # -- compressed features ---------------------------------------------

    def compress_sources(self, sources: Sequence[Sequence[int]], split: str) -> list[list[int]]:
        cfg = self.cfg
        if cfg.baseline != "none":
            out = []
            for i, s in enumerate(sources):
                rng = np.random.default_rng([cfg.seed, 7, 0 if split == "train" else 1, i])
                out.append(baseline_compress(s, cfg.baseline, self.gamma, rng))
            return out
        beam = BeamConfig(cfg.beam, cfg.alpha, cfg.beta, self.gamma)
        memo: dict[tuple, list[int]] = {}
        for s in sources:
            key = tuple(s)
            if key not in memo:
                memo[key] = beam_search_compress(s, self.compressor, beam)
        return [memo[tuple(s)] for s in sources]

    def _cache_compressions(self) -> None:
        self.compressed["train"] = self.compress_sources([source_of(self.cfg.task, it) for it in self.data.train],
                                                         "train")

    def features(self, split: str, idx, items=None) -> tuple:
        """(hc, hc_mask) for the given items, or (None, None) when the model builds its own."""
        cfg = self.cfg
        if items is None:
            items = self.data.train if split == "train" else self.data.test
        if cfg.manner == "etc-pipeline":
            rows = [self.compressed[split][i] or [CLS] for i in idx]
            ids, mask = pad_batch(rows)
            return self.model.encode_compressed(ids, mask), mask
        if cfg.manner == "etc-joint":
            ids, mask = pad_batch([source_of(cfg.task, items[i]) for i in idx])
            joint = joint_greedy_compress(self.compressor, ids, mask, self.gamma)
            return joint.hidden, joint.mask
        return None, None

    # -- task losses -----------------------------------------------------

    def _task_loss(self, idx) -> ad.Tensor:
        items = [self.data.train[i] for i in idx]
        hc, hc_mask = self.features("train", idx)
        loss = self.task_loss(items, hc, hc_mask)
        if self.cfg.manner == "etc-joint" and self.data.compression_pairs:
            pairs = self.data.compression_pairs
            sub = [pairs[i % len(pairs)] for i in idx]
            ids, mask = pad_batch([a for a, _ in sub])
            ctx = self.compressor.source_context(ids, mask)
            loss = loss + self.compressor.teacher_forced_loss(ctx, [b for _, b in sub])
        return loss

    def task_loss(self, items, hc, hc_mask) -> ad.Tensor:
        task, m, g = self.cfg.task, self.model, self.gamma
        if task == "translate":
            ids, mask = pad_batch([it[0] for it in items])
            return m.teacher_forced_loss(m.source_context(ids, mask, hc, hc_mask, g), [it[1] for it in items])
        if task == "span":
            rows = [build_span_input(p, q, self.cfg.max_len) for p, q, _, _ in items]
            ids, mask = pad_batch(rows)
            h = m.hidden(ids, mask, hc, hc_mask, g)
            valid = _span_valid(items, ids.shape[1])
            starts = [s + 1 if s >= 0 else 0 for _, _, s, _ in items]
            ends = [e + 1 if e >= 0 else 0 for _, _, _, e in items]
            answerable = np.array([float(s >= 0) for _, _, s, _ in items])
            ver = ad.bce_with_logits(m.verifier_logit(h), answerable)
            return span_loss(m, h, valid, starts, ends) + ver * VERIFIER_WEIGHT
        n_opt = len(items[0][2])
        kw = {"gamma": g}
        if hc is not None:
            rep = np.repeat(np.arange(len(items)), n_opt)
            kw.update(hc=hc[rep], hc_mask=hc_mask[rep])
        scores = choice_scores(m, [it[0] for it in items], [it[1] for it in items], [it[2] for it in items],
                               self.cfg.max_len, **kw)
        return ad.cross_entropy(scores, np.array([it[3] for it in items]))

    # -- execution -------------------------------------------------------

    def state_arrays(self, optimizer: Adam | None) -> dict[str, np.ndarray]:
        arrays = {f"model.{k}": v for k, v in self.model.state_dict().items()}
        if self.compressor is not None:
            arrays.update({f"compressor.{k}": v for k, v in self.compressor.state_dict().items()})
        if optimizer is not None:
            arrays.update({f"optim.{k}": v for k, v in optimizer.state_arrays().items()})
        return arrays

    def save(self, path, stage: int, epoch: int, optimizer: Adam | None) -> None:
        meta = {"config": self.cfg.to_ini(), "stage": stage, "epoch": epoch, "step": self.step,
                "log": [[r.stage, r.epoch, r.step, r.loss] for r in self.log]}
        save_checkpoint(path, self.state_arrays(optimizer), meta)

    def _restore(self, path) -> tuple[int, int, dict]:
        arrays, meta = load_checkpoint(path)
        if _comparable(meta.get("config", "")) != _comparable(self.cfg.to_ini()):
            raise ConfigError(f"{path} was written by a different configuration")
        self.model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model.")})
        if self.compressor is not None:
            self.compressor.load_state_dict({k[11:]: v for k, v in arrays.items() if k.startswith("compressor.")})
        self.step = int(meta["step"])
        self.log = [LogRow(s, int(e), int(t), float(l)) for s, e, t, l in meta["log"]]
        optim = {k[6:]: v for k, v in arrays.items() if k.startswith("optim.")}
        return int(meta["stage"]), int(meta["epoch"]), optim

    def execute(self, checkpoint_dir=None, stop_after: tuple[int, int] | None = None) -> None:
        """Run every stage. ``stop_after=(stage, epoch)`` halts after that epoch
        (the checkpoint is still written), which is how resumption is tested."""
        cfg = self.cfg
        start_stage, start_epoch, optim_state = 0, 0, None
        if cfg.resume:
            start_stage, start_epoch, optim_state = self._restore(cfg.resume)
        for si in range(start_stage, len(self.stages)):
            stage = self.stages[si]
            if stage.prepare is not None:
                stage.prepare()
            if stage.n_items == 0 or stage.epochs == 0:
                continue
            opt = Adam(stage.params(), cfg.lr, clip_norm=cfg.clip_norm)
            first = 0
            if si == start_stage and optim_state:
                opt.load_state_arrays(optim_state)
                first = start_epoch
            for epoch in range(first, stage.epochs):
                total = 0.0
                batches = batch_order(stage.n_items, cfg.batch_size, cfg.seed, si, epoch)
                for idx in batches:
                    opt.zero_grad()
                    loss = stage.loss(idx)
                    ad.backward(loss, opt.params)
                    opt.lr = warmup_lr(cfg.lr, opt.state.step, cfg.warmup_steps)
                    opt.step()
                    self.step += 1
                    self.log.append(LogRow(stage.name, epoch, self.step, loss.item()))
                    total += loss.item()
                log.info("%s epoch %d loss %.4f", stage.name, epoch, total / len(batches))
                done = (si, epoch + 1) if epoch + 1 < stage.epochs else (si + 1, 0)
                if checkpoint_dir is not None:
                    self.save(Path(checkpoint_dir) / "checkpoint.tcck", *done,
                              opt if done[0] == si else None)
                if stop_after == (si, epoch):
                    return

    # -- evaluation ------------------------------------------------------

    def predict(self, items=None) -> list:
        cfg, m = self.cfg, self.model
        items = self.data.test if items is None else items
        if not items:
            return []
        if cfg.task == "compress":
            beam = BeamConfig(cfg.beam, cfg.alpha, cfg.beta, self.gamma)
            return [beam_search_compress(it[0], m, beam) for it in items]
        if cfg.manner == "etc-pipeline":
            self.compressed["test"] = self.compress_sources([source_of(cfg.task, it) for it in items], "test")
        preds = []
        bs = cfg.batch_size
        for lo in range(0, len(items), bs):
            idx = list(range(lo, min(lo + bs, len(items))))
            chunk = [items[i] for i in idx]
            with ad.no_grad():
                hc, hc_mask = self.features("test", idx, items)
                preds.extend(self._predict_chunk(chunk, hc, hc_mask))
        return preds

    def _predict_chunk(self, items, hc, hc_mask) -> list:
        task, m, g = self.cfg.task, self.model, self.gamma
        if task == "translate":
            feats = None if hc is None else (lambda ids, mask: (hc, hc_mask))
            return translate([it[0] for it in items], m, feats, g, banned=DEFAULT_BANNED)
        if task == "span":
            rows = [build_span_input(p, q, self.cfg.max_len) for p, q, _, _ in items]
            ids, mask = pad_batch(rows)
            h = m.hidden(ids, mask, hc, hc_mask, g)
            spans = span_predict(m, h, _span_valid(items, ids.shape[1]))
            p_ans = answerability_verify(m, h) if self.cfg.span_verifier else np.ones(len(items))
            out = []
            for sp, pa in zip(spans, p_ans):
                none = pa < 0.5 or sp.start == 0 or sp.end == 0
                out.append((-1, -1) if none else (sp.start - 1, sp.end - 1))
            return out
        n_opt = len(items[0][2])
        kw = {"gamma": g}
        if hc is not None:
            rep = np.repeat(np.arange(len(items)), n_opt)
            kw.update(hc=hc[rep], hc_mask=hc_mask[rep])
        scores = choice_scores(m, [it[0] for it in items], [it[1] for it in items], [it[2] for it in items],
                               self.cfg.max_len, **kw)
        return [int(i) for i in scores.data.argmax(axis=1)]

    def evaluate(self, items=None, preds=None) -> dict[str, float]:
        items = self.data.test if items is None else items
        preds = self.predict(items) if preds is None else preds
        return score_predictions(self.cfg.task, items, preds)


def _span_valid(items, width: int) -> np.ndarray:
    """CLS plus passage positions are the only legal pointer targets."""
    valid = np.zeros((len(items), width), dtype=bool)
    for b, it in enumerate(items):
        valid[b, : 1 + len(it[0])] = True
    return valid


def _comparable(ini: str) -> str:
    return "\n".join(line for line in ini.splitlines()
                     if not line.startswith(("resume", "out_dir", "epochs", "compressor_epochs")))


def score_predictions(task: str, items, preds) -> dict[str, float]:
    if not items:
        return {}
    if task == "compress":
        refs = [it[1] for it in items]
        f1 = float(np.mean([span_em_f1(p, r)[1] for p, r in zip(preds, refs)]))
        rouge = corpus_rouge(preds, refs)
        return {"token_f1": f1, **{k: v.score for k, v in rouge.items()}}
    if task == "translate":
        refs = [it[1] for it in items]
        return {"token_accuracy": float(np.mean([token_accuracy(p, r) for p, r in zip(preds, refs)])),
                "bleu": bleu(preds, refs),
                "exact": accuracy([list(p) for p in preds], [list(r) for r in refs])}
    if task == "span":
        em = f1 = 0.0
        for (p, _, s, e), (ps, pe) in zip(items, preds):
            if s < 0 or ps < 0:
                hit = float(s < 0 and ps < 0)
                em, f1 = em + hit, f1 + hit
                continue
            a, b = span_em_f1(p[ps : pe + 1], p[s : e + 1])
            em, f1 = em + a, f1 + b
        return {"em": em / len(items), "f1": f1 / len(items)}
    return {"accuracy": accuracy(preds, [it[3] for it in items])}


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def run_train(cfg: RunConfig, data: RunData | None = None, evaluate: bool = True) -> RunResult:
    """Train per ``cfg`` and, when test items exist, evaluate.

    With ``cfg.out_dir`` set, writes config.ini, train_log.tsv, model.tcck,
    metrics.txt and a rolling checkpoint for resumption.
    """
    cfg.validate()
    data = data or load_run_data(cfg)
    run = Run(cfg, data)
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.ini")
        data.vocab.save(out / "vocab.txt")
    run.execute(out)
    result = RunResult(cfg, data, run.model, run.compressor, run.log, run=run)
    if evaluate and data.test:
        result.predictions = run.predict()
        result.metrics = score_predictions(cfg.task, data.test, result.predictions)
    if out is not None:
        write_log(out / "train_log.tsv", run.log)
        run.save(out / "model.tcck", len(run.stages), 0, None)
        (out / "metrics.txt").write_text("".join(f"{k}={v:.6f}\n" for k, v in result.metrics.items()))
    return result


def write_log(path, rows: list[LogRow]) -> None:
    Path(path).write_text("stage\tepoch\tstep\tloss\n" + "".join(
        f"{r.stage}\t{r.epoch}\t{r.step}\t{r.loss!r}\n" for r in rows), encoding="utf-8")


def load_trained(path) -> tuple[Run, RunConfig]:
    """Rebuild a finished run's models from its model checkpoint."""
    arrays, meta = load_checkpoint(path)
    cfg = RunConfig.from_ini(meta["config"])
    vocab_path = Path(path).with_name("vocab.txt")
    try:
        vocab = Vocab.load(vocab_path)
    except OSError as exc:
        raise DataError(f"missing vocabulary next to checkpoint: {exc}") from exc
    stub = [([CLS], [CLS])] if cfg.task in ("translate", "compress") else None
    if stub is None:
        stub = [([CLS], [CLS], -1, -1)] if cfg.task == "span" else [([CLS], [CLS], [[CLS], [CLS]], 0)]
    data = RunData(vocab, stub, compression_pairs=[([CLS], [CLS])], corpus=[[CLS]])
    run = Run(cfg.replace(setting="supervised", resume=None), data)
    run.model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model.")})
    if run.compressor is not None:
        run.compressor.load_state_dict({k[11:]: v for k, v in arrays.items() if k.startswith("compressor.")})
    return run, cfg


@dataclass
class SweepRow:
    gamma: float
    metrics: dict[str, float]


def run_sweep_gamma(cfg: RunConfig, grid: Sequence[float], data: RunData | None = None) -> list[SweepRow]:
    """Train and evaluate once per ratio, rows in grid order."""
    grid = list(grid)
    if not grid:
        raise ConfigError("empty gamma grid")
    for g in grid:
        if not 0.0 < g <= 1.0:
            raise ConfigError(f"gamma {g} outside (0, 1]")
    data = data or load_run_data(cfg)
    rows = []
    for g in grid:
        sub = cfg.replace(gamma=g, out_dir=None if cfg.out_dir is None else str(Path(cfg.out_dir) / f"gamma-{g:g}"))
        rows.append(SweepRow(g, run_train(sub, data).metrics))
    return rows


ABLATION_ROWS = ("baseline", "alltext", "f8w", "randsample", "etc-pipeline", "itc-joint")


def ablation_config(cfg: RunConfig, row: str) -> RunConfig:
    fusion = cfg.fusion if cfg.fusion != "none" else ("bbf" if cfg.task == "translate" else "bef")
    if row == "baseline":
        return cfg.replace(manner="none", fusion="none", baseline="none")
    if row in ("alltext", "f8w", "randsample"):
        return cfg.replace(manner="etc-pipeline", fusion=fusion, baseline=row)
    if row in ("etc-pipeline", "etc-joint", "itc-joint"):
        return cfg.replace(manner=row, fusion=fusion, baseline="none")
    raise ConfigError(f"unknown ablation row {row!r}; expected one of {', '.join(ABLATION_ROWS)}")


@dataclass
class AblationReport:
    metric: str
    seeds: list[int]
    rows: dict[str, list[float]]

    def mean(self, row: str) -> float:
        return float(np.mean(self.rows[row]))

    def as_lines(self) -> list[str]:
        out = []
        for row, vals in self.rows.items():
            out.append(f"{row}.{self.metric}.mean={np.mean(vals):.6f}")
            out += [f"{row}.{self.metric}.seed{s}={v:.6f}" for s, v in zip(self.seeds, vals)]
        return out

    def table(self) -> str:
        head = f"{'row':<14}" + "".join(f"{'seed ' + str(s):>10}" for s in self.seeds) + f"{'mean':>10}"
        lines = [head, "-" * len(head)]
        for row, vals in self.rows.items():
            lines.append(f"{row:<14}" + "".join(f"{v:>10.4f}" for v in vals) + f"{np.mean(vals):>10.4f}")
        return "\n".join(lines)


PRIMARY_METRIC = {"translate": "token_accuracy", "compress": "token_f1", "span": "f1", "choice": "accuracy"}


def run_ablation_quality(cfg: RunConfig, seeds: Sequence[int] = (0, 1, 2), rows: Sequence[str] = ABLATION_ROWS,
                         data_for_seed: Callable[[int], RunData] | None = None) -> AblationReport:
    """Train every row under every seed on the same task data and tabulate the primary metric."""
    metric = PRIMARY_METRIC[cfg.task]
    report = AblationReport(metric, list(seeds), {r: [] for r in rows})
    for seed in seeds:
        data = data_for_seed(seed) if data_for_seed else load_run_data(cfg)
        for row in rows:
            sub = ablation_config(cfg, row).replace(seed=seed)
            if cfg.out_dir:
                sub = sub.replace(out_dir=str(Path(cfg.out_dir) / f"{row}-seed{seed}"))
            result = run_train(sub, data)
            report.rows[row].append(result.metrics[metric])
            log.info("ablation %s seed %d %s=%.4f", row, seed, metric, result.metrics[metric])
    return report


def report_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
