"""Sparse binary feature table for the log-linear emission model.

Each word type gets a set of active templates (identity, suffixes,
orthographic cues, bias). The parameter vector has one weight per
(feature, tag), laid out as an (F, J) array.
"""
from collections import Counter
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .corpus import fold_case

TEMPLATES = ("id", "suf", "cap", "digit", "hyphen", "punct", "bias")


@dataclass(frozen=True)
class FeatureConfig:
    variant: str = "reduced"
    identity_cutoff: int = 10
    suffix_cutoff: int = 20
    max_suffix_len: int = 3
    include_bias: bool = True
    templates: tuple = None  # override the variant's template set

    def __post_init__(self):
        if self.variant not in ("large", "reduced"):
            raise ValueError(f"unknown feature variant {self.variant!r}")
        if self.identity_cutoff < 1 or self.suffix_cutoff < 1:
            raise ValueError("cutoffs must be >= 1")
        if self.max_suffix_len < 1:
            raise ValueError("max_suffix_len must be >= 1")

    def active_templates(self):
        if self.templates is not None:
            return tuple(self.templates)
        base = ["id", "suf", "cap", "digit", "hyphen"]
        if self.variant == "reduced":
            base.append("punct")
        if self.include_bias:
            base.append("bias")
        return tuple(base)


def is_punctuation(word):
    return all(not ch.isalnum() for ch in word)


def word_features(word, count, config, templates=None):
    """Feature names firing for ``word`` whose (lowercased) count is ``count``."""
    templates = templates or config.active_templates()
    low = fold_case(word)
    cutoffs = config.variant == "reduced"
    feats = []
    if "id" in templates and (not cutoffs or count >= config.identity_cutoff):
        feats.append("id=" + low)
    if "suf" in templates and (not cutoffs or count >= config.suffix_cutoff):
        for k in range(1, min(config.max_suffix_len, len(low)) + 1):
            feats.append("suf=" + low[-k:])
    if "cap" in templates and word[:1].isupper():
        feats.append("cap")
    if "digit" in templates and any(ch.isdigit() for ch in word):
        feats.append("digit")
    if "hyphen" in templates and "-" in word:
        feats.append("hyphen")
    if "punct" in templates and is_punctuation(word):
        feats.append("punct")
    if "bias" in templates:
        feats.append("bias")
    # a word can repeat a suffix only if it equals a shorter one; keep order
    return list(dict.fromkeys(feats))


class FeatureTable:
    """Per-type active feature indices plus the (V, F) sparse design matrix."""

    def __init__(self, names, rows, config):
        self.names = list(names)
        self.index = {n: i for i, n in enumerate(self.names)}
        self.rows = [np.asarray(r, dtype=np.int64) for r in rows]
        self.config = config
        indptr = np.concatenate([[0], np.cumsum([len(r) for r in self.rows])])
        indices = np.concatenate(self.rows) if self.rows else np.zeros(0, np.int64)
        self.matrix = sp.csr_matrix(
            (np.ones(len(indices)), indices, indptr), shape=(len(self.rows), len(self.names))
        )

    @property
    def num_features(self):
        return len(self.names)

    @property
    def num_types(self):
        return len(self.rows)

    def features_for(self, word, count=0):
        """Indices of known features firing for a possibly unseen word."""
        names = word_features(word, count, self.config)
        return np.array([self.index[n] for n in names if n in self.index], dtype=np.int64)

    def dump(self, path, types):
        with open(path, "w", encoding="utf-8") as fh:
            for w, row in zip(types, self.rows):
                fh.write(w + "\t" + ",".join(self.names[i] for i in row) + "\n")


def lowercase_counts(vocab):
    agg = Counter()
    for w, c in zip(vocab.types, vocab.counts):
        agg[fold_case(w)] += int(c)
    return agg


def build_features(vocab, config=None):
    """Feature table over ``vocab`` types, in vocabulary order.

    Cutoffs in the reduced variant compare against the count of the
    lowercased form, since identity and suffix features are keyed on it.
    """
    config = config or FeatureConfig()
    if len(vocab) == 0:
        raise ValueError("empty vocabulary")
    agg = lowercase_counts(vocab)
    templates = config.active_templates()
    index = {}
    rows = []
    for w in vocab.types:
        names = word_features(w, agg[fold_case(w)], config, templates)
        rows.append([index.setdefault(n, len(index)) for n in names])
    for w, row in zip(vocab.types, rows):
        if not row:
            raise ValueError(f"word type {w!r} has no active features; enable the bias feature")
    return FeatureTable(list(index), rows, config)


def template_of(name):
    return name.split("=", 1)[0]


def feature_count_report(table):
    """Number of features per template, in ``TEMPLATES`` order."""
    counts = Counter(template_of(n) for n in table.names)
    return {t: counts[t] for t in TEMPLATES if counts[t]}
