import numpy as np
import pytest

from textcompress import autodiff as ad
from textcompress.config import RunConfig
from textcompress.data import CLS, SEP, Vocab, make_choice_set, make_span_set, pad_batch
from textcompress.errors import ContractError, LengthError
from textcompress.seq2seq import Seq2SeqModel
from textcompress.tasks import (EncoderClassifier, answerability_verify, best_span, build_choice_input,
                                build_span_input, choice_predict, parse_choice_input, parse_span_input,
                                span_predict, strip_eos, translate)
from textcompress.training import RunData, _encode_items, _span_valid, run_train

TOY = dict(layers=2, d_model=32, d_ff=64, heads=2, lr=2e-3, warmup_steps=50, seed=0, max_len=64)


# -- templates ------------------------------------------------------------------


def test_span_template():
    assert build_span_input([6, 7], [8]) == [CLS, 6, 7, SEP, 8, SEP]


def test_choice_template():
    assert build_choice_input([6, 7], [8], [9, 10]) == [CLS, 6, 7, 8, SEP, 9, 10, SEP]


@pytest.mark.parametrize("build", [lambda p, q: build_span_input(p, q, 12),
                                   lambda p, q: build_choice_input(p, q, [9], 12)])
def test_templates_have_one_cls_two_seps(build, rng):
    for _ in range(20):
        ids = build(list(rng.integers(6, 20, size=rng.integers(1, 15))), [7, 8])
        assert ids.count(CLS) == 1 and ids.count(SEP) == 2 and len(ids) <= 12


def test_truncation_only_cuts_passage():
    ids = build_span_input([6, 7, 8, 9, 10], [11, 12], max_len=6)
    assert ids == [CLS, 6, SEP, 11, 12, SEP]
    ids = build_choice_input([6, 7, 8, 9], [11], [12], max_len=6)
    assert ids == [CLS, 6, 11, SEP, 12, SEP]


def test_truncation_impossible():
    with pytest.raises(LengthError):
        build_span_input([6], [7, 8, 9, 10], max_len=6)


def test_template_round_trip(rng):
    for _ in range(20):
        p, q = list(rng.integers(6, 30, size=5)), list(rng.integers(6, 30, size=3))
        o = list(rng.integers(6, 30, size=2))
        assert parse_span_input(build_span_input(p, q)) == (p, q)
        assert parse_choice_input(build_choice_input(p, q, o), len(p)) == (p, q, o)


def test_empty_template_parts():
    with pytest.raises(ContractError):
        build_span_input([], [7])
    with pytest.raises(ContractError):
        build_choice_input([6], [7], [])


# -- heads ----------------------------------------------------------------------


@pytest.fixture
def clf(tiny_cfg):
    return EncoderClassifier(tiny_cfg, seed=1)


def test_span_distributions_sum_to_one(clf, rng):
    ids, mask = pad_batch([build_span_input([6, 7, 8], [9]), build_span_input([6, 7, 8, 10, 11], [9])])
    valid = _span_valid([([6, 7, 8],), ([6, 7, 8, 10, 11],)], ids.shape[1])
    preds = span_predict(clf, clf.hidden(ids, mask), valid)
    for p in preds:
        assert abs(p.start_probs.sum() - 1) < 1e-12 and abs(p.end_probs.sum() - 1) < 1e-12
        assert p.start <= p.end


def test_masked_position_never_chosen(clf):
    ids, mask = pad_batch([build_span_input([6, 7, 8, 9], [10])])
    h = clf.hidden(ids, mask)
    full = span_predict(clf, h, mask)[0]
    valid = mask.copy()
    valid[0, full.start] = False
    again = span_predict(clf, h, valid)[0]
    assert again.start != full.start and again.start_probs[full.start] == 0.0


def test_best_span_matches_enumeration(rng):
    for _ in range(50):
        n, w = int(rng.integers(1, 12)), int(rng.integers(1, 5))
        s, e = rng.normal(size=n), rng.normal(size=n)
        legal = [(i, j) for i in range(n) for j in range(i, min(n, i + w))]
        assert best_span(s, e, max_span=w) == max(legal, key=lambda ij: s[ij[0]] + e[ij[1]])


def test_zero_verifier_gives_half(tiny_cfg, rng):
    m = EncoderClassifier(tiny_cfg, zero_verifier=True)
    ids, mask = pad_batch([build_span_input([6, 7], [8])] * 3)
    assert np.array_equal(answerability_verify(m, m.hidden(ids, mask)), np.full(3, 0.5))


def test_verifier_in_open_interval(clf):
    ids, mask = pad_batch([build_span_input([6, 7, 8], [9])])
    p = answerability_verify(clf, clf.hidden(ids, mask))
    assert 0.0 < p[0] < 1.0


def test_choice_sums_to_one_and_is_equivariant(clf):
    p, q = [6, 7, 8], [9]
    opts = [[10], [11, 12], [13], [14, 6]]
    a = choice_predict(clf, [p], [q], [opts])[0]
    perm = [2, 0, 3, 1]
    b = choice_predict(clf, [p], [q], [[opts[i] for i in perm]])[0]
    assert abs(a.sum() - 1) < 1e-12 and np.allclose(b, a[perm], rtol=0, atol=1e-12)


def test_choice_needs_two_options(clf):
    with pytest.raises(ContractError):
        choice_predict(clf, [[6]], [[7]], [[[8]]])


def test_unfused_translate_matches_plain_path(tiny_cfg, rng):
    m = Seq2SeqModel(tiny_cfg, seed=3)
    src = [[6, 7, 8, 9], [10, 11]]
    ids, mask = pad_batch(src)
    with ad.no_grad():
        ref = m.greedy_decode(m.source_context(ids, mask), 12)
    assert translate(src, m, max_len=12) == ref


def test_strip_eos():
    assert strip_eos([6, 7, 2, 8]) == [6, 7]


# -- toy training runs ------------------------------------------------------------


def _span_data(n=1000):
    tr, te = make_span_set(n, 1), make_span_set(200, 2)
    vocab = Vocab.build([s for p, q, _, _ in tr + te for s in (p, q)])
    return RunData(vocab, _encode_items("span", vocab, tr), _encode_items("span", vocab, te))


@pytest.fixture(scope="module")
def span_run():
    return run_train(RunConfig(task="span", span_verifier=True, epochs=30, **TOY), _span_data())


@pytest.mark.slow
def test_span_exact_match(span_run):
    assert span_run.metrics["em"] >= 0.95


@pytest.mark.slow
def test_verifier_auc(span_run):
    run, items = span_run.run, span_run.data.test
    ids, mask = pad_batch([build_span_input(p, q) for p, q, _, _ in items])
    with ad.no_grad():
        p = answerability_verify(run.model, run.model.hidden(ids, mask))
    pos, neg = p[[s >= 0 for _, _, s, _ in items]], p[[s < 0 for _, _, s, _ in items]]
    auc = (pos[:, None] > neg[None, :]).mean() + 0.5 * (pos[:, None] == neg[None, :]).mean()
    assert auc > 0.9


@pytest.mark.slow
def test_choice_accuracy():
    tr, te = make_choice_set(1000, 1), make_choice_set(200, 2)
    vocab = Vocab.build([s for p, q, o, _ in tr + te for s in (p, q, *o)])
    data = RunData(vocab, _encode_items("choice", vocab, tr), _encode_items("choice", vocab, te))
    assert run_train(RunConfig(task="choice", epochs=10, **TOY), data).metrics["accuracy"] >= 0.95


@pytest.mark.slow
def test_copy_task():
    rng = np.random.default_rng(0)
    toks = [f"a{i}" for i in range(20)]
    vocab = Vocab(toks)
    seqs = lambda m: [vocab.encode([toks[j] for j in rng.integers(0, 20, size=rng.integers(3, 9))]) for _ in range(m)]
    data = RunData(vocab, [(s, s) for s in seqs(1000)], [(s, s) for s in seqs(200)])
    assert run_train(RunConfig(task="translate", epochs=20, **TOY), data).metrics["token_accuracy"] >= 0.99
