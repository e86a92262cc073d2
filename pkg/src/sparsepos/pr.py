"""Posterior regularization with the l1/linf word-tag ambiguity penalty.

The E-step projects the model posterior p onto low-ambiguity
distributions q by maximizing the concave dual

    g(lam) = -sum_n log sum_y p(y | x_n) exp(-lam . phi(x_n, y))

over lam >= 0 with sum_j lam[w, v, j] <= sigma for every word w and tag v.
Here phi[w, v, j] fires when the j-th occurrence of w takes tag v. The
optimal q is an HMM whose emission at each regulated token is multiplied
by exp(-lam).
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .corpus import fold_case
from .hmm import emission_log_probs, forward_backward, lower_bound
from .optimize import ProjGradConfig, projected_gradient_ascent
from .train import TrainConfig, TrainTrace, _mstep, em_train

PR_COLUMNS = ("iter", "loglik", "bound", "seconds", "penalty", "objective18", "dual-iters")


@dataclass(frozen=True)
class PrConfig:
    sigma: float = 32.0
    min_occurrence: int = 10
    em_warmup: int = 30
    pr_iterations: int = 170
    dual: ProjGradConfig = field(default_factory=ProjGradConfig)
    lowercase_index: bool = False

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class ConstraintIndex:
    """Occurrence slots of every regulated word, grouped word by word.

    ``positions[word_offsets[w]:word_offsets[w + 1]]`` are the flat corpus
    positions of word ``w``'s occurrences in corpus order.
    """

    words: list
    positions: np.ndarray
    word_offsets: np.ndarray

    @property
    def num_words(self):
        return len(self.words)

    @property
    def num_slots(self):
        return len(self.positions)

    def word_of_slot(self):
        return np.repeat(np.arange(self.num_words), np.diff(self.word_offsets))


def build_constraint_index(corpus, vocab, min_occurrence=10, lowercase=False):
    """Regulate every word type (or lowercased form) seen >= ``min_occurrence`` times."""
    keys = [fold_case(w) for w in vocab.types] if lowercase else list(vocab.types)
    key_of_type = {}
    order = []
    for k in keys:
        if k not in key_of_type:
            key_of_type[k] = len(order)
            order.append(k)
    type_key = np.array([key_of_type[k] for k in keys], dtype=np.int64)
    tok_key = type_key[corpus.tokens]
    counts = np.bincount(tok_key, minlength=len(order))
    regulated = np.nonzero(counts >= min_occurrence)[0]
    keep = np.isin(tok_key, regulated)
    pos = np.nonzero(keep)[0]
    # stable sort keeps corpus order within a word
    pos = pos[np.argsort(tok_key[pos], kind="stable")]
    offsets = np.concatenate([[0], np.cumsum(counts[regulated])]).astype(np.int64)
    return ConstraintIndex([order[k] for k in regulated], pos.astype(np.int64), offsets)


@dataclass
class DualVariables:
    lam: np.ndarray  # (num_slots, J)
    sigma: float

    def feasible(self, index, rtol=1e-9):
        # block sums of thousands of entries carry rounding error
        if (self.lam < 0).any():
            return False
        sums = np.add.reduceat(self.lam, index.word_offsets[:-1], axis=0) if index.num_slots else self.lam
        return bool((sums <= self.sigma * (1 + rtol)).all())


@dataclass
class AmbiguityResult:
    per_word: np.ndarray
    total: float

    @property
    def mean(self):
        return float(self.per_word.mean()) if len(self.per_word) else 0.0


def _as_marginals(values, J):
    values = np.asarray(values)
    if values.ndim == 1:
        J = int(values.max()) + 1 if J is None else J
        onehot = np.zeros((len(values), J))
        onehot[np.arange(len(values)), values] = 1.0
        return onehot
    return values


def ambiguity_penalty(values, index, J=None):
    """Sum over tags of the max over occurrences, per regulated word.

    ``values`` is a (T, J) array of token marginals or a length-T array of
    hard tags; for hard tags the result counts distinct tags per word.
    """
    marg = _as_marginals(values, J)
    if index.num_slots == 0:
        return AmbiguityResult(np.zeros(0), 0.0)
    cols = np.maximum.reduceat(marg[index.positions], index.word_offsets[:-1], axis=0)
    per_word = cols.sum(axis=1)
    return AmbiguityResult(per_word, float(per_word.sum()))


def warm_start_duals(prev, index=None, J=None, sigma=None):
    """Duals for the next E-step: the previous ones, or zeros on the first call."""
    if prev is not None:
        return prev
    return DualVariables(np.zeros((index.num_slots, J)), sigma)


def dual_modifier(lam, index, T):
    """(T, J) log emission multipliers -lam at regulated slots, 0 elsewhere."""
    mod = np.zeros((T, lam.shape[1]))
    mod[index.positions] = -lam
    return mod


@dataclass
class EStepResult:
    duals: DualVariables
    q: object
    p_loglik: float
    dual_value: float
    iterations: int
    status: str


def pr_estep(model, corpus, index, lam0, config=None, log_emit=None):
    """Solve the dual E-step by projected gradient; returns ``EStepResult``.

    ``lam0`` is a DualVariables (or array) that must already be feasible.
    """
    config = config or PrConfig()
    J, T = model.J, corpus.num_tokens
    lam0 = lam0.lam if isinstance(lam0, DualVariables) else np.asarray(lam0, dtype=float)
    if lam0.shape != (index.num_slots, J):
        raise ValueError(f"dual shape {lam0.shape} != {(index.num_slots, J)}")
    if not DualVariables(lam0, config.sigma).feasible(index):
        raise ValueError("initial duals are infeasible")
    if log_emit is None:
        log_emit = emission_log_probs(model)
    base = np.ascontiguousarray(log_emit[corpus.tokens])
    p = forward_backward(model, corpus, log_obs=base)
    p_ll = p.loglik
    sigma = config.sigma
    last = {}
    slots = index.positions

    def fun(lam):
        if not lam.any():
            q = p
        else:
            obs = base.copy()
            obs[slots] -= lam
            q = forward_backward(model, corpus, log_obs=obs)
        last["lam"], last["q"] = lam, q
        return -(q.loglik - p_ll), q.unary[index.positions]

    def project(lam):
        out = kernels.project_blocks(np.ascontiguousarray(lam), index.word_offsets, sigma)
        if not DualVariables(out, sigma).feasible(index):
            raise AssertionError("dual projection left the feasible set")
        return out

    if index.num_slots == 0:
        return EStepResult(DualVariables(lam0, sigma), p, p_ll, 0.0, 0, "converged")
    res = projected_gradient_ascent(fun, project, lam0, config.dual)
    if not np.array_equal(last["lam"], res.x):
        fun(res.x)
    q = last["q"]
    return EStepResult(DualVariables(res.x, sigma), q, p_ll, res.value, res.iterations, res.status)


def pr_train(corpus, model, index, pr_config=None, train_config=None, trace=None):
    """EM warm-up followed by PR iterations of {dual E-step, M-step on q}."""
    pr_config = pr_config or PrConfig()
    train_config = train_config or TrainConfig()
    trace = trace if trace is not None else TrainTrace(PR_COLUMNS)
    if pr_config.em_warmup > 0:
        model, trace = em_train(corpus, model, replace(train_config, iterations=pr_config.em_warmup), trace)
    duals = None
    start = len(trace)
    for k in range(pr_config.pr_iterations):
        duals = warm_start_duals(duals, index, model.J, pr_config.sigma)
        est = pr_estep(model, corpus, index, duals, pr_config)
        duals, q = est.duals, est.q
        penalty = ambiguity_penalty(q.unary, index).total
        f_q = lower_bound(model, corpus, q)
        obj = f_q - pr_config.sigma * penalty
        model = _mstep(model, q, corpus, train_config, start + k, trace)
        trace.add(iter=start + k, loglik=est.p_loglik, bound=lower_bound(model, corpus, q),
                  penalty=penalty, objective18=obj, **{"dual-iters": est.iterations})
    trace.final_duals = duals
    return model, trace
