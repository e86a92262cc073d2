"""Clustering metrics against gold tags: 1-Many, greedy 1-1, VI and V-measure.

Entropies are in nats.
"""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ContingencyTable:
    """(K clusters) x (N gold tags) token co-occurrence counts."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if (self.counts < 0).any():
            raise ValueError("negative counts")
        self.total = float(self.counts.sum())
        self.cluster_sizes = self.counts.sum(axis=1)
        self.tag_sizes = self.counts.sum(axis=0)

    @property
    def shape(self):
        return self.counts.shape


def build_contingency(predicted, gold, num_clusters=None, num_tags=None):
    predicted = np.concatenate([np.ravel(p) for p in predicted]) if isinstance(predicted, list) else np.ravel(predicted)
    gold = np.concatenate([np.ravel(g) for g in gold]) if isinstance(gold, list) else np.ravel(gold)
    if predicted.shape != gold.shape:
        raise ValueError(f"predicted has {predicted.size} tokens, gold has {gold.size}")
    predicted = predicted.astype(np.int64)
    gold = gold.astype(np.int64)
    K = num_clusters or (int(predicted.max()) + 1 if predicted.size else 1)
    N = num_tags or (int(gold.max()) + 1 if gold.size else 1)
    counts = np.zeros((K, N))
    np.add.at(counts, (predicted, gold), 1.0)
    return ContingencyTable(counts)


def map_1many(table):
    """Each cluster maps to its most frequent gold tag (ties: lowest tag)."""
    mapping = np.argmax(table.counts, axis=1)
    acc = table.counts.max(axis=1).sum() / table.total
    return mapping, float(acc)


def map_11(table):
    """Greedy one-to-one matching on the largest remaining cell.

    Ties go to the lower cluster, then the lower tag. Clusters left over when
    K > N map to -1 and score nothing.
    """
    c = table.counts
    K, N = c.shape
    mapping = np.full(K, -1, dtype=np.int64)
    # sort cells by count descending, then cluster, then tag
    order = np.lexsort((np.tile(np.arange(N), K), np.repeat(np.arange(K), N), -c.ravel()))
    used_k = np.zeros(K, bool)
    used_n = np.zeros(N, bool)
    score = 0.0
    for cell in order:
        k, n = divmod(int(cell), N)
        if used_k[k] or used_n[n]:
            continue
        used_k[k] = used_n[n] = True
        mapping[k] = n
        score += c[k, n]
        if used_k.all() or used_n.all():
            break
    return mapping, float(score / table.total)


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def _conditional_entropies(table):
    p = table.counts / table.total
    pk = p.sum(axis=1)
    pc = p.sum(axis=0)
    h_k = _entropy(pk)
    h_c = _entropy(pc)
    h_joint = _entropy(p.ravel())
    return h_c, h_k, h_joint - h_k, h_joint - h_c  # H(C), H(K), H(C|K), H(K|C)


def vi(table):
    """Variation of information H(C|K) + H(K|C)."""
    _, _, h_ck, h_kc = _conditional_entropies(table)
    return max(h_ck + h_kc, 0.0)


def vmeasure(table, beta=1.0):
    h_c, h_k, h_ck, h_kc = _conditional_entropies(table)
    # clip: H(C|K) can exceed H(C) by a rounding error
    h = 1.0 if h_c == 0 else min(max(1.0 - h_ck / h_c, 0.0), 1.0)
    c = 1.0 if h_k == 0 else min(max(1.0 - h_kc / h_k, 0.0), 1.0)
    if h + c == 0:
        return 0.0
    return float((1 + beta) * h * c / (beta * h + c))


@dataclass
class MetricReport:
    one_many: float
    one_one: float
    vi: float
    v: float
    map_one_many: np.ndarray = field(default=None, repr=False)
    map_one_one: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        return {"1-many": self.one_many, "1-1": self.one_one, "vi": self.vi, "v": self.v}


METRICS = ("1-many", "1-1", "vi", "v")


def evaluate(predicted, gold, num_clusters=None, num_tags=None):
    table = build_contingency(predicted, gold, num_clusters, num_tags)
    m1, a1 = map_1many(table)
    m2, a2 = map_11(table)
    return MetricReport(a1, a2, vi(table), vmeasure(table), m1, m2)


DEFAULT_BIN_EDGES = (1, 4, 9, 50)
DEFAULT_BIN_LABELS = ("<1", "<5", "<10", "<=50", ">50")


def freq_stratified_accuracy(predicted, gold, token_counts, edges=DEFAULT_BIN_EDGES, labels=DEFAULT_BIN_LABELS):
    """1-Many accuracy split by the frequency of each token's word type.

    ``token_counts[t]`` is the corpus count of token t's type. Bin i holds
    counts in ``(edges[i-1], edges[i]]``; the last bin holds counts above
    ``edges[-1]``. The mapping is learned on all tokens first.
    """
    predicted = np.ravel(predicted)
    gold = np.ravel(gold)
    table = build_contingency(predicted, gold)
    mapping, _ = map_1many(table)
    correct = mapping[predicted] == gold
    which = np.searchsorted(np.asarray(edges), np.ravel(token_counts), side="left")
    out = {}
    for i, lab in enumerate(labels):
        sel = which == i
        out[lab] = (float(correct[sel].mean()) if sel.any() else float("nan"), int(sel.sum()))
    return out


def ambiguity_histogram(values, index, bins=None, J=None):
    """Per-word l1/linf values and histogram rows ``(lo, hi, count)``."""
    from .pr import ambiguity_penalty

    per_word = ambiguity_penalty(values, index, J).per_word
    if bins is None:
        top = max(1.0, float(np.ceil(per_word.max()))) if len(per_word) else 1.0
        bins = np.arange(1.0, top + 0.25, 0.25) if top > 1 else np.array([1.0, 1.25])
        bins = np.concatenate([[0.0], bins])
    hist, edges = np.histogram(per_word, bins=bins)
    rows = [(float(edges[i]), float(edges[i + 1]), int(hist[i])) for i in range(len(hist))]
    return per_word, rows


@dataclass
class SeedSummary:
    mean: dict
    per_seed: list


def multi_seed_report(reports, configs=None):
    """Average metric reports across seeds, keeping the per-seed values."""
    if not reports:
        raise ValueError("no reports")
    if configs is not None and any(c != configs[0] for c in configs):
        raise ValueError("reports come from different configurations")
    dicts = [r.as_dict() if isinstance(r, MetricReport) else dict(r) for r in reports]
    keys = list(dicts[0])
    mean = {k: float(np.mean([d[k] for d in dicts])) for k in keys}
    return SeedSummary(mean, dicts)


def cluster_composition(predicted, gold, tagset=None, top=3):
    """Per cluster: size and its most frequent gold tags with shares."""
    table = build_contingency(predicted, gold, num_tags=len(tagset) if tagset else None)
    rows = []
    for k in range(table.shape[0]):
        size = table.cluster_sizes[k]
        if size == 0:
            continue
        order = np.argsort(-table.counts[k], kind="stable")[:top]
        parts = [((tagset[n] if tagset else str(n)), float(table.counts[k, n] / size)) for n in order if table.counts[k, n] > 0]
        rows.append((k, int(size), parts))
    return rows


def write_report(path, summary):
    """TSV with columns metric, value, per-seed values."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric\tvalue\tper_seed\n")
        for k, v in summary.mean.items():
            seeds = ",".join(repr(float(d[k])) for d in summary.per_seed)
            fh.write(f"{k}\t{v!r}\t{seeds}\n")
