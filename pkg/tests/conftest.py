from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from econet.lexicon import load_default
from econet.masking import build_corpus
from econet.model import MiniLM, ModelConfig
from econet.objectives import LabelSpaces, encode_samples
from econet.synthetic import make_documents
from econet.vocab import Vocabulary

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def lex():
    return load_default()


def tiny_config(vocab_size: int = 50, **kw) -> ModelConfig:
    base = dict(n_layers=2, n_heads=2, hidden_dim=16, ffn_dim=32, vocab_size=vocab_size,
                max_seq_len=48, dropout_rate=0.1, init_std=0.3)
    base.update(kw)
    return ModelConfig(**base)


def numeric_grad(f, params: dict[str, np.ndarray], eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of the scalar ``f()`` w.r.t. every entry of ``params``."""
    out = {}
    for name, v in params.items():
        flat = v.reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f()
            flat[i] = orig - eps
            down = f()
            flat[i] = orig
            g[i] = (up - down) / (2 * eps)
        out[name] = g.reshape(v.shape)
    return out


def block_errors(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray],
                 floor: float = 1e-8) -> dict[str, float]:
    """Relative error per block; blocks whose true gradient vanishes (both norms
    under ``floor``) score 0."""
    errs = {}
    for k, n in numeric.items():
        a = analytic[k]
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        errs[k] = 0.0 if scale < floor else float(np.linalg.norm(a - n) / scale)
    return errs


@pytest.fixture(scope="session")
def small_corpus(lex):
    docs = make_documents(40, seed=3, n_events=8, relational_rate=0.75)
    samples, events, stats = build_corpus(docs, lex, budget=64, seed=1)
    vocab = Vocabulary.build([s.unmasked() for s in samples], lex, extra=events.words)
    data = encode_samples(samples, vocab)
    spaces = LabelSpaces.build(vocab, lex, events)
    return samples, events, vocab, data, spaces


@pytest.fixture
def tiny_model():
    return MiniLM(tiny_config(), seed=1)
