import numpy as np
import pytest

from wclsm import model as M
from wclsm.objective import TrainingExample
from wclsm.text import TrigramVocabulary, hash_text

CORPUS = [
    "red running shoes", "buy red shoes online", "blue suede shoes",
    "cheap flights to paris", "paris hotel deals", "ford mustang gt500 parts",
    "mustang parts and accessories", "dog harness comfort control",
    "comfort control harness for dogs", "cat food delivery", "organic cat food",
    "used cars for sale", "car insurance quotes", "running shoes for men",
]


def small_vocab(size=50) -> TrigramVocabulary:
    full = TrigramVocabulary.build(CORPUS)
    return TrigramVocabulary.from_trigrams(full.trigrams[:size])


@pytest.fixture
def vocab50():
    return small_vocab(50)


@pytest.fixture
def full_vocab():
    return TrigramVocabulary.build(CORPUS)


def tiny_params(vocab, conv_dim=8, sem_dim=4, seed=0, scale=1.0):
    params = M.init_params(M.Hyper(vocab.size, 3, conv_dim, sem_dim), seed)
    if scale != 1.0:
        params = params.scaled(scale)
    rng = np.random.default_rng(seed + 1)
    # non-zero biases so their gradients are exercised too
    return M.ModelParams(params.conv_weight, rng.normal(0, 0.1, conv_dim), params.sem_weight,
                         rng.normal(0, 0.1, sem_dim), params.hyper, seed)


def random_text(rng, n_words=None):
    words = " ".join(CORPUS).split()
    n = n_words or int(rng.integers(1, 6))
    return " ".join(words[i] for i in rng.integers(len(words), size=n))


def random_examples(rng, vocab, n=3, J=2, weights=None):
    out = []
    for i in range(n):
        h = lambda: hash_text(random_text(rng), vocab)
        w = 1.0 if weights is None else weights[i]
        out.append(TrainingExample(h(), h(), [h() for _ in range(J)], w))
    return out


def fd_gradient(f, params: M.ModelParams, step=1e-4) -> M.ModelParams:
    """Central finite differences of scalar ``f(params)`` over every entry."""
    grads = {}
    for name in M.ModelParams.TENSORS:
        base = getattr(params, name)
        g = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus, minus = base.copy(), base.copy()
            plus[idx] += step
            minus[idx] -= step
            lp = f(M.ModelParams(**{**_fields(params), name: plus}))
            lm = f(M.ModelParams(**{**_fields(params), name: minus}))
            g[idx] = (lp - lm) / (2 * step)
        grads[name] = g
    return M.ModelParams(**{**_fields(params), **grads})


def _fields(p: M.ModelParams) -> dict:
    return {n: getattr(p, n) for n in M.ModelParams.TENSORS} | {"hyper": p.hyper, "seed": p.seed}


def max_rel_error(analytic: M.ModelParams, numeric: M.ModelParams, floor=1e-8) -> float:
    """Elementwise relative error; entries with both |g| < floor compare absolutely."""
    a, n = analytic.flat(), numeric.flat()
    denom = np.maximum(np.abs(a), np.abs(n))
    small = denom < floor
    rel = np.where(small, np.abs(a - n), np.abs(a - n) / np.where(small, 1.0, denom))
    return float(rel.max())
