import itertools

import numpy as np
import pytest

from sparsepos.corpus import Corpus, Vocabulary
from sparsepos.hmm import HmmModel


def random_model(rng, J, V, sparsity=0.0):
    """Multinomial HMM with Dirichlet rows; ``sparsity`` zeroes random entries."""
    trans = rng.dirichlet(np.ones(J), size=J + 1)
    emit = rng.dirichlet(np.ones(V), size=J).T
    if sparsity:
        emit = emit * (rng.random(emit.shape) >= sparsity)
        emit[rng.integers(0, V, size=J), np.arange(J)] += 0.1
        emit /= emit.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore"):
        return HmmModel(np.log(trans), "multinomial", [f"w{i}" for i in range(V)],
                        np.ones(V, dtype=np.int64), log_emit=np.log(emit))


def random_corpus(rng, V, n_sent, max_len, min_len=1):
    sents = [rng.integers(0, V, size=int(rng.integers(min_len, max_len + 1))) for _ in range(n_sent)]
    return Corpus(sents)


def make_vocab(types, counts):
    return Vocabulary(list(types), np.asarray(counts, dtype=np.int64), [np.zeros(0, np.int64)] * len(types))


def enumerate_sentence(log_start, log_tt, log_obs):
    """Brute-force log joint over every tag sequence of one sentence."""
    L, J = log_obs.shape
    seqs = np.array(list(itertools.product(range(J), repeat=L)), dtype=np.int64)
    scores = log_start[seqs[:, 0]] + log_obs[0, seqs[:, 0]]
    for i in range(1, L):
        scores = scores + log_tt[seqs[:, i - 1], seqs[:, i]] + log_obs[i, seqs[:, i]]
    return seqs, scores


def brute_force(model, corpus, log_obs=None):
    """Marginals, pairwise marginals, log-likelihoods, entropies and MAP paths."""
    if log_obs is None:
        log_obs = model.log_emit[corpus.tokens]
    J = model.J
    T = corpus.num_tokens
    unary = np.zeros((T, J))
    pair = np.zeros((T, J, J))
    lls, ents, paths = [], [], []
    for n in range(len(corpus)):
        lo, hi = corpus.offsets[n], corpus.offsets[n + 1]
        seqs, scores = enumerate_sentence(model.log_start, model.log_tt, log_obs[lo:hi])
        m = scores.max()
        ll = m + np.log(np.exp(scores - m).sum())
        p = np.exp(scores - ll)
        lls.append(ll)
        pos = p > 0
        ents.append(-(p[pos] * np.log(p[pos])).sum())
        paths.append(seqs[np.argmax(scores)])  # first maximum = lexicographically lowest
        for i in range(hi - lo):
            np.add.at(unary[lo + i], seqs[:, i], p)
            if i:
                np.add.at(pair[lo + i], (seqs[:, i - 1], seqs[:, i]), p)
    return unary, pair, np.array(lls), float(np.sum(ents)), np.concatenate(paths)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
