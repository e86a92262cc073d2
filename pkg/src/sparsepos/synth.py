"""Synthetic tagged corpora sampled from a known HMM.

Each word type has a primary tag whose suffix it carries; a fraction
``1 - sparsity`` of types may also be emitted by one other tag. Emission
weights within a tag follow a Zipf law.
"""
from dataclasses import dataclass

import numpy as np

from .corpus import PreprocessPolicy, build_corpus

_LETTERS = np.array(list("bcdfghjklmnprstvwz"))
_VOWELS = np.array(list("aeiou"))


@dataclass
class SynthTruth:
    trans: np.ndarray   # (J+1, J), start row last
    emit: np.ndarray    # (V, J), columns sum to one
    words: list
    word_tags: list     # allowed tags per word type


def _stem(rng, length):
    out = []
    for i in range(length):
        out.append(rng.choice(_VOWELS) if i % 2 else rng.choice(_LETTERS))
    return "".join(out)


def _make_words(rng, V, J):
    suffixes = []
    while len(suffixes) < J:
        s = rng.choice(_VOWELS) + rng.choice(_LETTERS) + rng.choice(_VOWELS)
        if s not in suffixes:
            suffixes.append(s)
    primary = np.concatenate([np.arange(J), rng.integers(0, J, size=max(V - J, 0))])[:V]
    rng.shuffle(primary)
    words, seen = [], set()
    for v in range(V):
        while True:
            w = _stem(rng, int(rng.integers(2, 6))) + suffixes[primary[v]]
            if w not in seen:
                break
        seen.add(w)
        words.append(w)
    return words, primary


def generate_truth(J, V, sparsity=1.0, seed=0, zipf=1.1, trans_concentration=0.3):
    if J < 1 or V < 1:
        raise ValueError("J and V must be >= 1")
    rng = np.random.default_rng(seed)
    trans = rng.dirichlet(np.full(J, trans_concentration), size=J + 1)
    words, primary = _make_words(rng, V, J)
    allowed = [[int(p)] for p in primary]
    if J > 1:
        for v in np.nonzero(rng.random(V) >= sparsity)[0]:
            other = int(rng.integers(0, J - 1))
            allowed[v].append(other + (other >= primary[v]))
    emit = np.zeros((V, J))
    for y in range(J):
        members = [v for v in range(V) if y in allowed[v]]
        if not members:
            members = [int(rng.integers(0, V))]
            allowed[members[0]].append(y)
        ranks = rng.permutation(len(members)) + 1
        emit[members, y] = 1.0 / ranks ** zipf
    emit /= emit.sum(axis=0, keepdims=True)
    return SynthTruth(trans, emit, words, allowed)


def sample(truth, tokens, seed=0, min_len=5, max_len=20):
    """Draw sentences from ``truth`` until ``tokens`` tokens are produced."""
    rng = np.random.default_rng(seed)
    J = truth.trans.shape[1]
    V = truth.emit.shape[0]
    cdf_t = np.cumsum(truth.trans, axis=1)
    cdf_e = np.cumsum(truth.emit, axis=0)
    word_sents, tag_sents = [], []
    total = 0
    while total < tokens:
        n = min(int(rng.integers(min_len, max_len + 1)), tokens - total)
        u_t = rng.random(n)
        u_e = rng.random(n)
        prev = J
        ws, ts = [], []
        for i in range(n):
            y = min(int(np.searchsorted(cdf_t[prev], u_t[i], side="right")), J - 1)
            x = min(int(np.searchsorted(cdf_e[:, y], u_e[i], side="right")), V - 1)
            ws.append(truth.words[x])
            ts.append(f"T{y}")
            prev = y
        word_sents.append(ws)
        tag_sents.append(ts)
        total += n
    return word_sents, tag_sents


def synth_generate(J, V, tokens, sparsity=1.0, seed=0, policy=None, **kw):
    """Sample a gold-tagged corpus; returns ``(corpus, vocab, truth)``."""
    truth = generate_truth(J, V, sparsity, seed, **{k: kw[k] for k in ("zipf", "trans_concentration") if k in kw})
    ws, ts = sample(truth, tokens, seed + 7919, **{k: kw[k] for k in ("min_len", "max_len") if k in kw})
    tagset = [f"T{y}" for y in range(J)]
    corpus, vocab = build_corpus(ws, ts, policy or PreprocessPolicy(), name=f"synth-J{J}-V{V}-s{seed}", tagset=tagset)
    return corpus, vocab, truth


def write_tagged(path, word_sents, tag_sents=None):
    with open(path, "w", encoding="utf-8") as fh:
        for n, ws in enumerate(word_sents):
            for i, w in enumerate(ws):
                fh.write(f"{w}\t{tag_sents[n][i]}\n" if tag_sents is not None else f"{w}\n")
            fh.write("\n")
