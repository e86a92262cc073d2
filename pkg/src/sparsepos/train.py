"""Maximum-likelihood and variational training of the HMM.

* EM with a closed-form multinomial M-step or an L-BFGS max-ent M-step.
* Direct gradient: L-BFGS on the marginal log-likelihood itself.
* Variational Bayes with Dirichlet priors (mean-field digamma updates).
"""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import digamma

from .hmm import (
    HmmModel, emission_counts, emission_log_probs, forward_backward, log_softmax_cols,
    lower_bound,
)
from .optimize import LbfgsConfig, lbfgs_minimize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "em"
    iterations: int = 200
    seed: int = 0
    jitter: float = 0.01
    prior_variance: float = 10.0
    vb_transition_alpha: float = 0.001
    vb_emission_alpha: float = 0.1
    mstep: LbfgsConfig = field(default_factory=lambda: LbfgsConfig(max_iters=50, grad_tol=1e-5))
    # first ``mstep_loose_iters`` EM iterations use ``mstep_loose`` instead
    mstep_loose_iters: int = 0
    mstep_loose: LbfgsConfig = field(default_factory=lambda: LbfgsConfig(max_iters=5, grad_tol=1e-2))
    rel_tol: float = 1e-7
    # no relative-change stop before this many iterations: near the jittered
    # uniform start the likelihood moves very little while symmetry breaks
    min_iterations: int = 10
    dg_regularize_transitions: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.prior_variance <= 0:
            raise ValueError("prior variance must be positive")


class TrainTrace:
    """Per-iteration log of a training run."""

    def __init__(self, columns=("iter", "loglik", "bound", "seconds")):
        self.columns = list(columns)
        self.rows = []
        self.warnings = []
        self._t0 = time.perf_counter()

    def add(self, **values):
        values.setdefault("seconds", time.perf_counter() - self._t0)
        for k in values:
            if k not in self.columns:
                self.columns.append(k)
        self.rows.append(values)

    def column(self, name):
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def to_tsv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(self.columns) + "\n")
            for r in self.rows:
                fh.write("\t".join(_fmt(r.get(c, "")) for c in self.columns) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- initialization ----------------------------------------------------------

def _jittered(rng, shape, jitter, axis):
    dim = shape[axis]
    p = 1.0 / dim + rng.uniform(0.0, jitter, size=shape)
    return p / p.sum(axis=axis, keepdims=True)


def init_model(J, vocab, features=None, config=None, policy=None):
    """Near-uniform model with uniform jitter, deterministic in ``config.seed``.

    Multinomial tables get ``1/dim + U[0, jitter]`` per entry and are then
    normalized; max-ent weights are drawn from ``U[-jitter, jitter]``.
    """
    from .corpus import PreprocessPolicy

    if J < 1:
        raise ValueError("J must be >= 1")
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed)
    log_trans = np.log(_jittered(rng, (J + 1, J), config.jitter, axis=1))
    common = dict(types=list(vocab.types), counts=np.asarray(vocab.counts),
                  policy=policy or PreprocessPolicy())
    if features is None:
        log_emit = np.log(_jittered(rng, (len(vocab), J), config.jitter, axis=0))
        return HmmModel(log_trans, "multinomial", log_emit=log_emit, **common)
    theta = rng.uniform(-config.jitter, config.jitter, size=(features.num_features, J))
    return HmmModel(log_trans, "maxent", theta=theta, features=features, **common)


# -- M-steps -----------------------------------------------------------------

def _normalize_log(counts, axis):
    tot = counts.sum(axis=axis, keepdims=True)
    dim = counts.shape[axis]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tot > 0, counts / np.where(tot > 0, tot, 1.0), 1.0 / dim)
        return np.log(p)


def mstep_multinomial(posteriors, corpus, V):
    """Normalized expected counts: returns ``(log_trans, log_emit)``."""
    log_trans = _normalize_log(posteriors.transition_counts(), axis=1)
    log_emit = _normalize_log(emission_counts(posteriors, corpus, V), axis=0)
    return log_trans, log_emit


def maxent_objective(theta_flat, X, counts, variance):
    """Negated expected complete emission log-likelihood plus L2 penalty.

    ``counts`` is the (V, J) expected word/tag count table. Returns
    ``(value, gradient)`` for minimization.
    """
    J = counts.shape[1]
    theta = theta_flat.reshape(-1, J)
    logp = log_softmax_cols(np.asarray(X @ theta))
    totals = counts.sum(axis=0)
    value = float((counts * logp).sum())
    grad = np.asarray(X.T @ (counts - np.exp(logp) * totals[None, :]))
    if variance is not None and np.isfinite(variance):
        value -= float((theta * theta).sum()) / (2.0 * variance)
        grad = grad - theta / variance
    return -value, -grad.ravel()


def mstep_maxent(posteriors, corpus, features, theta0, variance, lbfgs=None, counts=None):
    """Fit max-ent emission weights to expected counts; warm-starts at ``theta0``."""
    if counts is None:
        counts = emission_counts(posteriors, corpus, features.num_types)
    X = features.matrix
    res = lbfgs_minimize(lambda th: maxent_objective(th, X, counts, variance),
                         np.asarray(theta0, dtype=float).ravel(), lbfgs or LbfgsConfig(max_iters=50))
    return res.x.reshape(theta0.shape), res


def _mstep(model, q, corpus, config, iteration, trace=None):
    log_trans, log_emit = mstep_multinomial(q, corpus, model.V) if model.emission == "multinomial" \
        else (_normalize_log(q.transition_counts(), axis=1), None)
    new = model.copy()
    new.log_trans = log_trans
    if model.emission == "multinomial":
        new.log_emit = log_emit
        return new
    lb = config.mstep_loose if iteration < config.mstep_loose_iters else config.mstep
    theta, res = mstep_maxent(q, corpus, model.features, model.theta, config.prior_variance, lb)
    if res.status == "line_search_failed" and trace is not None:
        msg = f"iteration {iteration}: max-ent M-step line search failed after {res.iterations} L-BFGS steps"
        log.warning(msg)
        trace.warnings.append(msg)
    new.theta = theta
    return new


def _converged(prev, cur, tol):
    return tol > 0 and prev is not None and abs(cur - prev) <= tol * abs(prev)


def em_train(corpus, model, config=None, trace=None, start_iteration=0):
    """Alternate E- and M-steps for ``config.iterations`` rounds.

    Each trace row holds L(theta_t) from the E-step and the bound
    F(q_{t+1}, theta_{t+1}) after the M-step.
    """
    config = config or TrainConfig()
    trace = trace if trace is not None else TrainTrace()
    prev = None
    for it in range(config.iterations):
        q = forward_backward(model, corpus)
        L = q.loglik
        model = _mstep(model, q, corpus, config, start_iteration + it, trace)
        trace.add(iter=start_iteration + it, loglik=L, bound=lower_bound(model, corpus, q))
        if it + 1 >= config.min_iterations and _converged(prev, L, config.rel_tol):
            break
        prev = L
    return model, trace


# -- direct gradient -----------------------------------------------------------

def _dg_unpack(x, J, F):
    scores = x[: (J + 1) * J].reshape(J + 1, J)
    theta = x[(J + 1) * J:].reshape(F, J)
    return scores, theta


def dg_objective(x, model, corpus, variance, regularize_transitions=False):
    """Negated penalized marginal log-likelihood and its gradient.

    ``x`` concatenates (J+1, J) transition scores (softmax per row) and the
    (F, J) emission weights.
    """
    J, F = model.J, model.features.num_features
    scores, theta = _dg_unpack(x, J, F)
    m = model.copy()
    m.log_trans = scores - np.logaddexp.reduce(scores, axis=1, keepdims=True)
    m.theta = theta
    q = forward_backward(m, corpus)
    counts = emission_counts(q, corpus, m.V)
    logp = emission_log_probs(m)
    g_theta = np.asarray(m.features.matrix.T @ (counts - np.exp(logp) * counts.sum(axis=0)[None, :]))
    c = q.transition_counts()
    g_scores = c - c.sum(axis=1, keepdims=True) * np.exp(m.log_trans)
    value = q.loglik
    if variance is not None and np.isfinite(variance):
        value -= float((theta * theta).sum()) / (2 * variance)
        g_theta = g_theta - theta / variance
        if regularize_transitions:
            value -= float((scores * scores).sum()) / (2 * variance)
            g_scores = g_scores - scores / variance
    return -value, -np.concatenate([g_scores.ravel(), g_theta.ravel()])


def _dg_penalty(x, J, variance, regularize_transitions):
    if variance is None or not np.isfinite(variance):
        return 0.0
    body = x if regularize_transitions else x[(J + 1) * J:]
    return float(body @ body) / (2 * variance)


def dg_train(corpus, model, config=None):
    """L-BFGS on the marginal likelihood of a max-ent model."""
    if model.emission != "maxent":
        raise ValueError("direct gradient training needs a max-ent emission model")
    config = config or TrainConfig(algorithm="dg")
    trace = TrainTrace()
    J = model.J
    x0 = np.concatenate([model.log_trans.ravel(), model.theta.ravel()])

    def fun(x):
        return dg_objective(x, model, corpus, config.prior_variance, config.dg_regularize_transitions)

    def record(it, x, f, g):
        L = -f + _dg_penalty(x, J, config.prior_variance, config.dg_regularize_transitions)
        trace.add(iter=it - 1, loglik=L, bound=L)

    lb = replace(config.mstep, max_iters=config.iterations, rel_tol=config.rel_tol)
    res = lbfgs_minimize(fun, x0, lb, callback=record)
    if res.status == "line_search_failed":
        trace.warnings.append(f"direct gradient line search failed after {res.iterations} iterations")
    scores, theta = _dg_unpack(res.x, J, model.features.num_features)
    out = model.copy()
    out.log_trans = scores - np.logaddexp.reduce(scores, axis=1, keepdims=True)
    out.theta = theta
    return out, trace


# -- variational Bayes -----------------------------------------------------------

def vb_mstep(trans_counts, emit_counts, alpha_trans, alpha_emit):
    """Mean-field log weights exp(digamma(c + a)) / exp(digamma(C + dim * a)).

    Transition rows normalize over next tags, emission columns over words.
    The weights are sub-normalized.
    """
    J = trans_counts.shape[1]
    V = emit_counts.shape[0]
    lt = digamma(trans_counts + alpha_trans) - digamma(trans_counts.sum(axis=1, keepdims=True) + J * alpha_trans)
    le = digamma(emit_counts + alpha_emit) - digamma(emit_counts.sum(axis=0, keepdims=True) + V * alpha_emit)
    return lt, le


def vb_train(corpus, model, config=None):
    """Variational Bayes for a multinomial HMM with symmetric Dirichlet priors.

    E-steps use the sub-normalized mean-field weights. The returned model
    holds those weights renormalized, so it is a proper HMM.
    """
    if model.emission != "multinomial":
        raise ValueError("variational Bayes needs a multinomial emission model")
    config = config or TrainConfig(algorithm="vb")
    trace = TrainTrace()
    weights = model.copy()
    prev = None
    for it in range(config.iterations):
        q = forward_backward(weights, corpus)
        L = q.loglik
        lt, le = vb_mstep(q.transition_counts(), emission_counts(q, corpus, model.V),
                          config.vb_transition_alpha, config.vb_emission_alpha)
        weights = weights.copy()
        weights.log_trans, weights.log_emit = lt, le
        trace.add(iter=it, loglik=L, bound=np.nan)
        if it + 1 >= config.min_iterations and _converged(prev, L, config.rel_tol):
            break
        prev = L
    out = weights.copy()
    out.log_trans = weights.log_trans - np.logaddexp.reduce(weights.log_trans, axis=1, keepdims=True)
    out.log_emit = weights.log_emit - np.logaddexp.reduce(weights.log_emit, axis=0, keepdims=True)
    return out, trace


def train(corpus, model, config):
    """Dispatch on ``config.algorithm`` (em, dg or vb)."""
    if config.algorithm == "em":
        return em_train(corpus, model, config)
    if config.algorithm == "dg":
        return dg_train(corpus, model, config)
    if config.algorithm == "vb":
        return vb_train(corpus, model, config)
    raise ValueError(f"unknown algorithm {config.algorithm!r}")
