"""Supervised averaged-perceptron tagger that can use induced clusters.

The tagger classifies each token on its own. Its features are the max-ent
emission templates with no frequency cutoffs, plus ``cluster=k`` for the
token's induced cluster when a cluster source is given.
"""
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureConfig, word_features

CLUSTER_FEATURES = FeatureConfig(variant="large")


@dataclass(frozen=True)
class PerceptronConfig:
    max_epochs: int = 10
    dev_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not 0 < self.dev_frac < 1:
            raise ValueError("dev_frac must be in (0, 1)")


@dataclass(frozen=True)
class CurveConfig:
    sizes: tuple = (50, 100, 200, 500)
    samples: int = 10
    dev_frac: float = 0.2
    test_size: int = 500
    max_epochs: int = 10

    def __post_init__(self):
        if not self.sizes or any(s <= 0 for s in self.sizes):
            raise ValueError("sizes must be positive")
        if not 0 < self.dev_frac < 1:
            raise ValueError("dev_frac must be in (0, 1)")
        if self.samples < 1 or self.test_size < 1:
            raise ValueError("samples and test_size must be >= 1")


class TokenFeaturizer:
    """Feature names per token: word templates plus an optional cluster id."""

    def __init__(self, types, config=CLUSTER_FEATURES):
        self.types = list(types)
        self.config = config
        self._type_feats = {}

    def type_features(self, w):
        feats = self._type_feats.get(w)
        if feats is None:
            feats = word_features(self.types[w], 0, self.config)
            self._type_feats[w] = feats
        return feats

    def __call__(self, tokens, clusters=None):
        out = []
        for i, w in enumerate(tokens):
            feats = self.type_features(int(w))
            if clusters is not None:
                feats = feats + [f"cluster={int(clusters[i])}"]
            out.append(feats)
        return out


@dataclass
class PerceptronModel:
    """Final and averaged (feature, tag) weights of a per-token perceptron."""

    weights: np.ndarray
    averaged: np.ndarray
    feature_index: dict
    num_tags: int
    epochs: int
    steps: int = 0
    dev_accuracy: list = field(default_factory=list)

    def encode(self, feature_names):
        return [np.array([self.feature_index[f] for f in fs if f in self.feature_index], dtype=np.int64)
                for fs in feature_names]

    def predict(self, feature_names, averaged=True):
        """Best tag per token; ties go to the lowest tag index."""
        W = self.averaged if averaged else self.weights
        out = np.zeros(len(feature_names), dtype=np.int64)
        for t, ids in enumerate(self.encode(feature_names)):
            if len(ids):
                out[t] = int(np.argmax(W[ids].sum(axis=0)))
        return out


def _index_features(feature_names):
    index = {}
    for fs in feature_names:
        for f in fs:
            index.setdefault(f, len(index))
    return index


def _run_epochs(encoded, gold, num_tags, F, epochs, rng, on_epoch=None):
    """Online updates over ``epochs`` shuffled passes.

    The averaged weights are the mean of the weight snapshots taken after
    every example, kept with the usual lazy accumulator: an update at step
    k (0-based) adds k * delta to ``acc``, so the mean over S steps is
    ``W - acc / S``.
    """
    W = np.zeros((F, num_tags))
    acc = np.zeros((F, num_tags))
    step = 0
    n = len(encoded)
    for epoch in range(epochs):
        for t in rng.permutation(n):
            ids = encoded[t]
            y = gold[t]
            pred = int(np.argmax(W[ids].sum(axis=0))) if len(ids) else 0
            if pred != y:
                W[ids, y] += 1.0
                W[ids, pred] -= 1.0
                acc[ids, y] += step
                acc[ids, pred] -= step
            step += 1
        if on_epoch is not None:
            on_epoch(epoch + 1, W - acc / step)
    avg = W - acc / step if step else W.copy()
    return W, avg, step


def _accuracy(W, encoded, gold):
    if not len(gold):
        return float("nan")
    pred = np.array([int(np.argmax(W[ids].sum(axis=0))) if len(ids) else 0 for ids in encoded])
    return float((pred == gold).mean())


def perceptron_train(feature_names, gold, num_tags, config=None):
    """Train a per-token averaged perceptron.

    The epoch count is chosen by averaged-weight accuracy on a random
    ``dev_frac`` share of the tokens' sentences; the model is then retrained
    on all tokens for that many epochs. ``feature_names`` and ``gold`` are
    lists of per-sentence sequences.
    """
    config = config or PerceptronConfig()
    if not feature_names or not sum(len(s) for s in feature_names):
        raise ValueError("empty labeled set")
    rng = np.random.default_rng(config.seed)
    flat_feats = [f for s in feature_names for f in s]
    flat_gold = np.concatenate([np.asarray(g, dtype=np.int64) for g in gold])
    index = _index_features(flat_feats)
    F = len(index)

    def enc(names):
        return [np.array([index[f] for f in fs if f in index], dtype=np.int64) for fs in names]

    N = len(feature_names)
    order = rng.permutation(N)
    n_dev = int(round(config.dev_frac * N)) if N > 1 else 0
    n_dev = min(max(n_dev, 1 if N > 1 else 0), N - 1)
    dev_ids, tr_ids = order[:n_dev], order[n_dev:]
    tr_feats = [f for i in tr_ids for f in feature_names[i]]
    tr_gold = np.concatenate([np.asarray(gold[i], dtype=np.int64) for i in tr_ids])
    dev_feats = [f for i in dev_ids for f in feature_names[i]]
    dev_gold = (np.concatenate([np.asarray(gold[i], dtype=np.int64) for i in dev_ids])
                if n_dev else np.zeros(0, np.int64))
    dev_enc = enc(dev_feats)
    scores = []
    if n_dev and config.max_epochs:
        _run_epochs(enc(tr_feats), tr_gold, num_tags, F, config.max_epochs, rng,
                    lambda e, avg: scores.append(_accuracy(avg, dev_enc, dev_gold)))
        epochs = int(np.argmax(scores)) + 1  # first best epoch
    else:
        epochs = config.max_epochs
    W, avg, steps = _run_epochs(enc(flat_feats), flat_gold, num_tags, F, epochs, rng)
    return PerceptronModel(W, avg, index, num_tags, epochs, steps, scores)


def _sentences(corpus, featurize, clusters):
    feats = []
    for n, sent in enumerate(corpus.sentences):
        cl = None if clusters is None else clusters[corpus.offsets[n]:corpus.offsets[n + 1]]
        feats.append(featurize(sent, cl))
    return feats


@dataclass
class CurveRow:
    size: int
    source: str
    accuracy: float
    per_sample: list

    @property
    def error(self):
        return 1.0 - self.accuracy


def learning_curve(corpus, vocab, sources, config=None, seed=0):
    """Mean test accuracy per labeled-set size and cluster source.

    ``sources`` maps a name to a flat per-token cluster array; a no-cluster
    ``"baseline"`` row is always added. A fixed random set of ``test_size``
    sentences is held out; every training sample is shared by all sources.
    """
    config = config or CurveConfig()
    if not corpus.has_gold:
        raise ValueError("learning curves need gold tags")
    for name, cl in sources.items():
        if len(cl) != corpus.num_tokens:
            raise ValueError(f"cluster source {name!r} covers {len(cl)} of {corpus.num_tokens} tokens")
    rng = np.random.default_rng(seed)
    N = len(corpus)
    test_size = min(config.test_size, N - 1)
    order = rng.permutation(N)
    test_ids, pool = order[:test_size], order[test_size:]
    if max(config.sizes) > len(pool):
        raise ValueError(f"size {max(config.sizes)} exceeds the {len(pool)} training sentences available")
    featurize = TokenFeaturizer(vocab.types)
    named = [("baseline", None)] + list(sources.items())
    feats = {name: _sentences(corpus, featurize, cl) for name, cl in named}
    gold = corpus.gold
    test_gold = np.concatenate([gold[i] for i in test_ids])
    num_tags = len(corpus.tagset) if corpus.tagset else int(corpus.gold_flat.max()) + 1
    rows = []
    for size in config.sizes:
        acc = {name: [] for name, _ in named}
        for s in range(config.samples):
            sample = rng.choice(pool, size=size, replace=False)
            pc = PerceptronConfig(config.max_epochs, config.dev_frac, int(rng.integers(2**31)))
            for name, _ in named:
                f = feats[name]
                model = perceptron_train([f[i] for i in sample], [gold[i] for i in sample], num_tags, pc)
                pred = model.predict([tok for i in test_ids for tok in f[i]])
                acc[name].append(float((pred == test_gold).mean()))
        for name, _ in named:
            rows.append(CurveRow(size, name, float(np.mean(acc[name])), acc[name]))
    return rows


def write_curve(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("size\tsource\taccuracy\terror\tper_sample\n")
        for r in rows:
            fh.write(f"{r.size}\t{r.source}\t{r.accuracy!r}\t{r.error!r}\t"
                     + ",".join(repr(a) for a in r.per_sample) + "\n")
