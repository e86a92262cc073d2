"""First-order HMM with multinomial or log-linear emissions.

All probabilities are kept as logs. ``log_trans`` has J+1 rows: rows
0..J-1 are previous tags and row J is the start state, which is never a
column. There is no stop probability.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from . import kernels
from .corpus import Corpus, PreprocessPolicy, Vocabulary, fold_case
from .features import FeatureConfig, FeatureTable, build_features

FORMAT_VERSION = 1


class InferenceError(ArithmeticError):
    """Non-finite parameters or a sentence with zero probability."""


class ModelFormatError(ValueError):
    pass


@dataclass
class HmmModel:
    """HMM parameters.

    ``emission`` is ``"multinomial"`` (``log_emit`` is a (V, J) table of
    log p(x|y)) or ``"maxent"`` (``theta`` is an (F, J) weight array over
    ``features``).
    """

    log_trans: np.ndarray
    emission: str
    types: list
    counts: np.ndarray
    log_emit: np.ndarray = None
    theta: np.ndarray = None
    features: FeatureTable = None
    policy: PreprocessPolicy = field(default_factory=PreprocessPolicy)

    @property
    def J(self):
        return self.log_trans.shape[1]

    @property
    def V(self):
        return len(self.types)

    @property
    def log_start(self):
        return self.log_trans[self.J]

    @property
    def log_tt(self):
        """(J, J) tag-to-tag block without the start row."""
        return self.log_trans[: self.J]

    def copy(self):
        return HmmModel(
            self.log_trans.copy(), self.emission, self.types, self.counts,
            None if self.log_emit is None else self.log_emit.copy(),
            None if self.theta is None else self.theta.copy(),
            self.features, self.policy,
        )

    def check(self, tol=1e-8):
        """Raise ``InferenceError`` if a row or column fails to normalize."""
        for arr in (self.log_trans, self.log_emit, self.theta):
            if arr is not None and (np.isnan(arr).any() or np.isposinf(arr).any()):
                raise InferenceError("non-finite model parameter")
        rows = np.exp(logsumexp(self.log_trans, axis=1))
        if np.abs(rows - 1).max() > tol:
            raise InferenceError("transition rows do not sum to one")
        cols = np.exp(logsumexp(emission_log_probs(self), axis=0))
        if np.abs(cols - 1).max() > tol:
            raise InferenceError("emission columns do not sum to one")


def log_softmax_cols(scores):
    m = scores.max(axis=0, keepdims=True)
    z = m + np.log(np.exp(scores - m).sum(axis=0, keepdims=True))
    return scores - z


def emission_log_probs(model):
    """(V, J) table of log p(x|y)."""
    if model.emission == "multinomial":
        return model.log_emit
    scores = model.features.matrix @ model.theta
    return log_softmax_cols(np.asarray(scores))


@dataclass
class PosteriorSet:
    """Per-token tag marginals of a (possibly modified) HMM posterior.

    ``pairwise[t]`` holds the joint of tags (t-1, t) for non-initial
    positions; rows at sentence starts are zero (their joint with the start
    state is ``unary[t]``). ``entropy`` is the entropy of the whole
    distribution over tag sequences.
    """

    unary: np.ndarray
    offsets: np.ndarray
    start_counts: np.ndarray
    trans_counts: np.ndarray
    logliks: np.ndarray
    entropy: float
    pairwise: np.ndarray = None

    @property
    def loglik(self):
        return float(np.sum(self.logliks))

    def sentence(self, n):
        return self.unary[self.offsets[n]:self.offsets[n + 1]]

    def transition_counts(self):
        """(J+1, J) expected transition counts with the start row last."""
        return np.vstack([self.trans_counts, self.start_counts])


def token_indicator(corpus, V):
    """Sparse (V, T) matrix with a one where token t is word type x."""
    cache = getattr(corpus, "_indicator", None)
    if cache is not None and cache.shape[0] == V:
        return cache
    T = corpus.num_tokens
    ind = sp.csr_matrix((np.ones(T), (corpus.tokens, np.arange(T))), shape=(V, T))
    corpus._indicator = ind
    return ind


def emission_counts(posteriors, corpus, V):
    """(V, J) expected word/tag counts."""
    return np.asarray(token_indicator(corpus, V) @ posteriors.unary)


def _xlogy(p, logq):
    # 0 log 0 = 0, also where logq is -inf
    pos = p > 0
    return np.where(pos, p * np.where(pos, logq, 0.0), 0.0)


def expected_complete_loglik(counts_trans, counts_emit, log_trans, log_emit):
    """E_q[log p(X, Y)] from expected counts."""
    return float(_xlogy(counts_trans, log_trans).sum() + _xlogy(counts_emit, log_emit).sum())


def forward_backward(model, corpus, modifier=None, pairwise=False, log_emit=None, backend=None,
                     log_obs=None):
    """Exact marginals of the HMM posterior, optionally reweighted.

    ``modifier`` is a (T, J) array of log multipliers added to each token's
    emission scores; the result is the posterior of the reweighted,
    per-sentence renormalized distribution. ``log_obs`` skips the emission
    lookup and uses the given (T, J) token scores directly.
    """
    if log_obs is None:
        if log_emit is None:
            log_emit = emission_log_probs(model)
        if np.isnan(log_emit).any():
            raise InferenceError("non-finite model parameter")
        log_obs = log_emit[corpus.tokens]
    if np.isnan(model.log_trans).any():
        raise InferenceError("non-finite model parameter")
    if modifier is not None:
        modifier = np.asarray(modifier, dtype=float)
        if modifier.shape != log_obs.shape:
            raise ValueError(f"modifier shape {modifier.shape} != {log_obs.shape}")
        log_obs = log_obs + modifier
    log_obs = np.ascontiguousarray(log_obs, dtype=float)
    impl = kernels.get_backend(backend)
    gamma, sc, tc, ll, pair, obs_score = impl.forward_backward(
        np.ascontiguousarray(model.log_start), np.ascontiguousarray(model.log_tt),
        log_obs, corpus.offsets, pairwise,
    )
    bad = np.nonzero(~np.isfinite(ll))[0]
    if len(bad):
        raise InferenceError(f"sentence {int(bad[0])} has zero probability under the model")
    total = float(np.sum(ll))
    expected = _xlogy(sc, model.log_start).sum() + _xlogy(tc, model.log_tt).sum() + obs_score
    return PosteriorSet(gamma, corpus.offsets, sc, tc, ll, total - float(expected), pair)


def loglik(model, corpus, log_emit=None):
    return forward_backward(model, corpus, log_emit=log_emit).loglik


def lower_bound(model, corpus, q):
    """F(q, theta) = E_q[log p_theta(X, Y)] + H(q)."""
    ecl = expected_complete_loglik(
        q.transition_counts(), emission_counts(q, corpus, model.V),
        model.log_trans, emission_log_probs(model),
    )
    return ecl + q.entropy


def posterior_decode(posteriors):
    """Per-token argmax of the marginals; ties go to the lowest tag."""
    unary = posteriors.unary if isinstance(posteriors, PosteriorSet) else np.asarray(posteriors)
    return np.argmax(unary, axis=1)


def viterbi_decode(model, corpus, log_emit=None, backend=None):
    """Most probable tag sequence per sentence, flattened over the corpus."""
    if log_emit is None:
        log_emit = emission_log_probs(model)
    if np.isnan(log_emit).any() or np.isnan(model.log_trans).any():
        raise InferenceError("non-finite model parameter")
    impl = kernels.get_backend(backend)
    path, scores = impl.viterbi(
        np.ascontiguousarray(model.log_start), np.ascontiguousarray(model.log_tt),
        np.ascontiguousarray(log_emit[corpus.tokens]), corpus.offsets,
    )
    bad = np.nonzero(~np.isfinite(scores))[0]
    if len(bad):
        raise InferenceError(f"sentence {int(bad[0])} has zero probability under the model")
    return path


# applying a trained model to new text

def encode_for_model(model, word_sentences):
    """Map word strings to model rows; returns ``(corpus, log_emit)``.

    Unseen types use the unk row (multinomial) or the score of their known
    features under the training normalizers (max-ent).
    """
    words = [list(s) for s in word_sentences]
    if model.policy.lowercase:
        words = [[fold_case(w) for w in s] for s in words]
    index = {w: i for i, w in enumerate(model.types)}
    log_emit = emission_log_probs(model)
    extra = {}
    sents = []
    for s in words:
        ids = []
        for w in s:
            if w in index:
                ids.append(index[w])
            elif model.emission == "multinomial":
                if model.policy.map_singletons_to_unk and model.policy.unk_token in index:
                    ids.append(index[model.policy.unk_token])
                else:
                    raise KeyError(f"word {w!r} not in model vocabulary and no unk type")
            else:
                ids.append(model.V + extra.setdefault(w, len(extra)))
        sents.append(np.array(ids, dtype=np.int64))
    if extra:
        scores = np.asarray(model.features.matrix @ model.theta)
        logz = logsumexp(scores, axis=0)
        rows = np.zeros((len(extra), model.J))
        big = np.iinfo(np.int64).max
        for w, k in extra.items():
            feats = model.features.features_for(w, big)
            rows[k] = model.theta[feats].sum(axis=0) - logz
        log_emit = np.vstack([log_emit, rows])
    return Corpus(sents), log_emit


# serialization

def _fmt_row(values):
    return " ".join(repr(float(v)) for v in values)


def _parse_row(line, n, what):
    parts = line.split()
    if len(parts) != n:
        raise ModelFormatError(f"{what}: expected {n} values, got {len(parts)}")
    return [float(p) for p in parts]


def save_model(model, path):
    """Write a plain-text model file that ``load_model`` reads back exactly."""
    F = model.features.num_features if model.features is not None else 0
    pol = model.policy
    lines = [
        f"sparsepos-model {FORMAT_VERSION}",
        f"J {model.J}",
        f"V {model.V}",
        f"F {F}",
        f"emission {model.emission}",
        f"policy lowercase={int(pol.lowercase)} unk={int(pol.map_singletons_to_unk)} unk_token={pol.unk_token}",
    ]
    if model.emission == "maxent":
        c = model.features.config
        tmpl = ",".join(c.templates) if c.templates is not None else "-"
        lines.append(
            f"features variant={c.variant} identity_cutoff={c.identity_cutoff} "
            f"suffix_cutoff={c.suffix_cutoff} max_suffix_len={c.max_suffix_len} "
            f"bias={int(c.include_bias)} templates={tmpl}"
        )
    lines.append("types")
    lines.extend(f"{w}\t{int(n)}" for w, n in zip(model.types, model.counts))
    lines.append("transitions")
    lines.extend(_fmt_row(r) for r in model.log_trans)
    if model.emission == "multinomial":
        lines.append("emission")
        lines.extend(_fmt_row(r) for r in model.log_emit)
    else:
        lines.append("weights")
        lines.extend(f"{n}\t{_fmt_row(r)}" for n, r in zip(model.features.names, model.theta))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _kv(line, head):
    parts = line.split(" ")
    if parts[0] != head:
        raise ModelFormatError(f"expected {head!r} line, got {line[:40]!r}")
    return dict(p.split("=", 1) for p in parts[1:])


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        it = iter(fh.read().split("\n"))

    def expect(prefix):
        line = next(it)
        if not line.startswith(prefix):
            raise ModelFormatError(f"expected {prefix!r}, got {line[:40]!r}")
        return line[len(prefix):].strip()

    try:
        version = int(expect("sparsepos-model"))
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {version}")
        J = int(expect("J "))
        V = int(expect("V "))
        F = int(expect("F "))
        emission = expect("emission ")
        if emission not in ("multinomial", "maxent"):
            raise ModelFormatError(f"unknown emission variant {emission!r}")
        pol = _kv(next(it), "policy")
        policy = PreprocessPolicy(bool(int(pol["lowercase"])), bool(int(pol["unk"])), pol["unk_token"])
        fconf = None
        if emission == "maxent":
            fc = _kv(next(it), "features")
            fconf = FeatureConfig(
                fc["variant"], int(fc["identity_cutoff"]), int(fc["suffix_cutoff"]),
                int(fc["max_suffix_len"]), bool(int(fc["bias"])),
                None if fc["templates"] == "-" else tuple(fc["templates"].split(",")),
            )
        expect("types")
        types, counts = [], []
        for _ in range(V):
            w, n = next(it).rsplit("\t", 1)
            types.append(w)
            counts.append(int(n))
        counts = np.array(counts, dtype=np.int64)
        expect("transitions")
        log_trans = np.array([_parse_row(next(it), J, "transitions") for _ in range(J + 1)])
        if emission == "multinomial":
            expect("emission")
            log_emit = np.array([_parse_row(next(it), J, "emission") for _ in range(V)]).reshape(V, J)
            return HmmModel(log_trans, emission, types, counts, log_emit=log_emit, policy=policy)
        expect("weights")
        names, theta = [], []
        for _ in range(F):
            n, row = next(it).split("\t", 1)
            names.append(n)
            theta.append(_parse_row(row, J, "weights"))
    except StopIteration:
        raise ModelFormatError(f"{path}: truncated model file") from None
    except ModelFormatError:
        raise
    except (ValueError, KeyError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    vocab = Vocabulary(types, counts, [np.zeros(0, np.int64)] * V)
    table = build_features(vocab, fconf)
    if table.names != names:
        raise ModelFormatError("feature names do not match the rebuilt feature table")
    return HmmModel(log_trans, emission, types, counts, theta=np.array(theta).reshape(F, J),
                    features=table, policy=policy)
