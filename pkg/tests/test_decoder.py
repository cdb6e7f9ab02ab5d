import numpy as np
import pytest

from htrseq.attention import AttentionConfig
from htrseq.core.tensor import Tensor
from htrseq.decoder import Alphabet, Decoder, DecoderConfig, beam_search

from toymodels import TableModel, run_beam


@pytest.mark.parametrize("seed", range(30))
def test_beam_finds_global_argmax(seed):
    rng = np.random.default_rng(seed)
    model = TableModel(rng, vocab=int(rng.integers(2, 5)), eos=0, steps=int(rng.integers(1, 4)))
    lp, seq = model.exhaustive()
    hyp = run_beam(model, 16)
    assert hyp.tokens == seq
    assert hyp.log_prob == pytest.approx(lp, abs=1e-12)


@pytest.mark.parametrize("seed", range(30))
def test_beam_one_is_greedy(seed):
    rng = np.random.default_rng(100 + seed)
    model = TableModel(rng, vocab=4, eos=3, steps=3)
    seq, lp = model.greedy()
    hyp = run_beam(model, 1)
    assert hyp.tokens == seq
    assert hyp.log_prob == pytest.approx(lp, abs=1e-12)


def test_beam_branch_order_irrelevant():
    rng = np.random.default_rng(9)
    model = TableModel(rng, vocab=4, eos=0, steps=3)
    ref = run_beam(model, 16)
    for s in range(5):
        hyp = run_beam(model, 16, np.random.default_rng(s))
        assert hyp.tokens == ref.tokens
        assert hyp.log_prob == ref.log_prob


def test_beam_immediate_eos():
    def step(prev, state, k):
        return np.log(np.tile([1e-300, 1.0, 1e-300], (k, 1))), state
    hyp = beam_search(step, None, lambda s, i: s, 2, 1, 16, 10)
    assert hyp.tokens == [] and hyp.finished


def test_beam_truncation_flagged():
    def step(prev, state, k):
        return np.log(np.tile([0.9, 0.1], (k, 1))), state
    hyp = beam_search(step, None, lambda s, i: s, 5, 1, 1, 4)
    assert hyp.truncated and not hyp.finished


def test_two_step_table():
    # P(first), P(second | first), eos forced third
    first = np.log([0.0 + 1e-300, 0.5, 0.5])
    second = {1: np.log([1e-300, 0.5, 0.5]), 2: np.log([1e-300, 0.9, 0.1])}

    def step(prev, state, k):
        rows, new = [], []
        for s, t in zip(state, prev):
            s = s + [int(t)] if t != 9 else []
            new.append(s)
            if len(s) == 0:
                rows.append(first)
            elif len(s) == 1:
                rows.append(second[s[0]])
            else:
                rows.append(np.log([1.0, 1e-300, 1e-300]))
        return np.stack(rows), new

    hyp = beam_search(step, [[]], lambda st, idx: [list(st[i]) for i in idx], 9, 0, 9, 5)
    assert hyp.tokens == [2, 1]
    assert hyp.log_prob == pytest.approx(np.log(0.45))


def test_invalid_width():
    with pytest.raises(ValueError):
        beam_search(lambda *a: None, None, None, 0, 1, 0, 3)


# -- alphabet ------------------------------------------------------------------
def test_alphabet_layout():
    a = Alphabet.from_texts(["ba", "c"])
    assert a.characters == ["a", "b", "c"]
    assert (a.blank_id, a.eos_id, a.sos_id, a.pad_id) == (3, 4, 5, 6)
    assert a.ctc_size == 4 and a.output_size == 5 and a.embedding_size == 7
    assert a.decoder_target("cab") == [5, 2, 0, 1, 4]
    assert a.decode([2, 0, 4, 1]) == "cab"
    assert not a.output_mask()[a.blank_id]
    with pytest.raises(KeyError):
        a.encode("z")
    with pytest.raises(ValueError):
        Alphabet(["a", "a"])


# -- neural decoder --------------------------------------------------------------
def _decoder(mechanism="hybrid-monotonic", seed=0, dropout=0.0):
    a = Alphabet(list("abc"))
    cfg = DecoderConfig(hidden_units=8, embedding_dim=4, dropout=dropout, beam_width=4)
    att = AttentionConfig(mechanism=mechanism, attention_dim=6, location_filters=3, location_kernel=3,
                          summary_dim=5)
    return Decoder(a, 4, cfg, att, np.random.default_rng(seed), np.float64), a


def _features(seed=0, B=2, M=5):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=(B, M, 4))), np.array([M, M - 2][:B])


def test_step_distribution_and_blank_masked():
    dec, a = _decoder()
    H, lengths = _features()
    mem = dec.prepare(H, lengths)
    dist, _ = dec.decode_step([a.sos_id, a.sos_id], dec.initial_state(mem), mem)
    np.testing.assert_allclose(dist.data.sum(-1), 1.0, atol=1e-12)
    assert np.all(dist.data[:, a.blank_id] == 0.0)


def test_zero_weights_give_uniform():
    dec, a = _decoder()
    for p in dec.parameters():
        p.data[...] = 0.0
    H, lengths = _features()
    mem = dec.prepare(H, lengths)
    dist, _ = dec.decode_step([a.sos_id] * 2, dec.initial_state(mem), mem)
    np.testing.assert_allclose(dist.data, np.where(a.output_mask(), 1.0 / (a.output_size - 1), 0.0)[None]
                               .repeat(2, 0), atol=1e-15)


def test_step_deterministic():
    dec, a = _decoder()
    H, lengths = _features()
    mem = dec.prepare(H, lengths)
    st = dec.initial_state(mem)
    d1, _ = dec.decode_step([0, 1], st, mem)
    d2, _ = dec.decode_step([0, 1], st, mem)
    np.testing.assert_array_equal(d1.data, d2.data)


def test_teacher_forcing_noise_extremes():
    dec, a = _decoder()
    H, lengths = _features()
    mem = dec.prepare(H, lengths)
    targets = np.array([[a.sos_id, 0, 1, 2, a.eos_id]] * 2)
    clean = dec.teacher_forced_unroll(mem, targets, 0.0, False, np.random.default_rng(0)).data
    again = dec.teacher_forced_unroll(mem, targets, 0.0, False, np.random.default_rng(99)).data
    np.testing.assert_array_equal(clean, again)
    n1 = dec.teacher_forced_unroll(mem, targets, 1.0, False, np.random.default_rng(5)).data
    n2 = dec.teacher_forced_unroll(mem, targets, 1.0, False, np.random.default_rng(5)).data
    np.testing.assert_array_equal(n1, n2)
    np.testing.assert_array_equal(n1[:, 0], clean[:, 0])
    assert not np.array_equal(n1, clean)


def test_beam_one_equals_greedy_neural():
    for seed in range(5):
        dec, a = _decoder(seed=seed)
        H, lengths = _features(seed)
        g = dec.greedy(H, lengths)
        b = dec.beam_search(H, lengths, 1)
        assert [h.tokens for h in g] == [h.tokens for h in b]
        np.testing.assert_allclose([h.log_prob for h in g], [h.log_prob for h in b], atol=1e-9)


def test_beam_not_worse_than_greedy():
    dec, a = _decoder(seed=3)
    H, lengths = _features(3)
    g = dec.greedy(H, lengths)
    b = dec.beam_search(H, lengths, 8)
    for hg, hb in zip(g, b):
        if hg.finished:
            assert hb.log_prob >= hg.log_prob - 1e-9


def test_decode_step_rejects_bad_token():
    dec, a = _decoder()
    H, lengths = _features()
    mem = dec.prepare(H, lengths)
    with pytest.raises(IndexError):
        dec.decode_step([a.embedding_size, 0], dec.initial_state(mem), mem)
