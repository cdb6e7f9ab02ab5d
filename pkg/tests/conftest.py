import numpy as np
import pytest

from htrseq.core.tensor import Tensor


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(regime="hybrid", mechanism="hybrid-monotonic", epochs=2, **training):
    from htrseq.config import ExperimentConfig

    cfg = ExperimentConfig(regime=regime, seed=7)
    cfg.encoder.blstm_units, cfg.encoder.blstm_layers = 8, 1
    cfg.attention.mechanism = mechanism
    cfg.attention.attention_dim, cfg.attention.summary_dim, cfg.attention.location_filters = 6, 6, 3
    cfg.decoder.hidden_units, cfg.decoder.embedding_dim = 8, 4
    cfg.training.epochs, cfg.training.epoch_size, cfg.training.batch_size = epochs, 8, 4
    cfg.training.decay_epochs = 1
    for k, v in training.items():
        setattr(cfg.training, k, v)
    return cfg


@pytest.fixture(scope="session")
def tiny_corpus():
    from htrseq.data.synth import synth_corpus

    return synth_corpus(6, "abc", seed=3, min_len=2, max_len=4)


# acceptance verdicts, printed after the run
VERDICTS = {}


def record_verdict(number, ok, detail):
    VERDICTS[number] = (bool(ok), detail)
    assert ok, f"criterion {number}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
