"""Acceptance criteria 1-10, each at its stated tolerance and time limit.

Every criterion prints one PASS/FAIL/SKIP line, both inline and in the
"acceptance criteria" section of the pytest summary. Criterion 9 needs a
user-supplied corpus (SPARSEPOS_EN17=path/to/corpus.txt) and runs for hours.
"""
import itertools
import os
import time

import cvxpy as cp
import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, brute_force, random_corpus, random_model

from sparsepos import kernels
from sparsepos.corpus import Corpus, PreprocessPolicy
from sparsepos.evaluate import build_contingency, evaluate, map_11, map_1many, vi, vmeasure, ContingencyTable
from sparsepos.features import FeatureConfig, build_features
from sparsepos.hmm import forward_backward, posterior_decode
from sparsepos.optimize import ProjGradConfig, simplex_project
from sparsepos.pr import (
    ConstraintIndex, PrConfig, ambiguity_penalty, build_constraint_index, dual_modifier, pr_estep, pr_train,
)
from sparsepos.semisup import CurveConfig, learning_curve
from sparsepos.synth import synth_generate
from sparsepos.train import TrainConfig, dg_objective, em_train, init_model, maxent_objective

# desk-scale synthetic benchmark shared by criteria 6 and 7
BENCH = dict(J=8, V=2000, tokens=50_000, sparsity=1.0)
BENCH_SEEDS = range(5)
WARMUP, PR_ITERS, DUAL_ITERS, SIGMA = 30, 30, 5, 32.0


def report(capsys, number, name, ok, elapsed, limit, detail):
    passed = bool(ok) and elapsed < limit
    line = f"criterion {number} {'PASS' if passed else 'FAIL'} {name}: {detail} [{elapsed:.1f}s, limit {limit}s]"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


# 1 --------------------------------------------------------------------------

def test_c01_inference_exactness(capsys):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        J = int(rng.integers(1, 5))
        V = int(rng.integers(1, 9))
        model = random_model(rng, J, V, sparsity=float(rng.choice([0.0, 0.3])))
        corpus = random_corpus(rng, V, int(rng.integers(1, 4)), 6)
        with np.errstate(invalid="ignore"):
            unary, pair, lls, _, _ = brute_force(model, corpus)
            while not np.isfinite(lls).all():  # zero-probability draw under a sparse model
                corpus = random_corpus(rng, V, int(rng.integers(1, 4)), 6)
                unary, pair, lls, _, _ = brute_force(model, corpus)
        q = forward_backward(model, corpus, pairwise=True)
        starts = corpus.offsets[:-1]
        inner = np.setdiff1d(np.arange(corpus.num_tokens), starts)
        worst = max(worst, np.abs(q.unary - unary).max(), np.abs(q.logliks - lls).max(),
                    np.abs(q.pairwise[inner] - pair[inner]).max() if len(inner) else 0.0)
    elapsed = time.perf_counter() - t0
    report(capsys, 1, "inference exactness", worst <= 1e-10, elapsed, 10,
           f"200 models, max |fb - enumeration| = {worst:.1e} (tol 1e-10)")


# 2 --------------------------------------------------------------------------

def test_c02_em_monotonicity(capsys):
    t0 = time.perf_counter()
    corpus, vocab, _ = synth_generate(2, 50, 10_000, 0.7, seed=2)
    model = init_model(2, vocab, config=TrainConfig(seed=2))
    _, trace = em_train(corpus, model, TrainConfig(iterations=200, rel_tol=0.0))
    ll = trace.column("loglik")
    drops = (ll[:-1] - ll[1:]) / np.abs(ll[:-1])
    elapsed = time.perf_counter() - t0
    report(capsys, 2, "EM monotonicity", len(ll) == 200 and drops.max() <= 1e-8, elapsed, 30,
           f"{len(ll)} iterations, largest relative decrease {max(drops.max(), 0.0):.1e} (tol 1e-8)")


# 3 --------------------------------------------------------------------------

def _central(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def test_c03_gradients(capsys):
    from conftest import make_vocab
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    vocab = make_vocab(["run", "runs", "ran", "The", "dog"], [4, 3, 2, 5, 1])
    table = build_features(vocab, FeatureConfig("large"))
    corpus = Corpus([np.array([0, 1, 2]), np.array([3, 4]), np.array([2, 0, 1, 4])])
    model = init_model(2, vocab, table, TrainConfig(seed=5))
    worst_m = worst_d = 0.0
    for _ in range(20):
        counts = rng.uniform(0, 3, size=(5, 2))
        theta = rng.normal(size=table.num_features * 2)
        _, g = maxent_objective(theta, table.matrix, counts, 10.0)
        num = _central(lambda t: maxent_objective(t, table.matrix, counts, 10.0)[0], theta)
        worst_m = max(worst_m, np.abs(g - num).max() / np.abs(num).max())
        x = rng.normal(size=6 + table.num_features * 2)
        _, g = dg_objective(x, model, corpus, 10.0)
        num = _central(lambda z: dg_objective(z, model, corpus, 10.0)[0], x)
        worst_d = max(worst_d, np.abs(g - num).max() / np.abs(num).max())
    elapsed = time.perf_counter() - t0
    report(capsys, 3, "gradient correctness", max(worst_m, worst_d) <= 1e-4, elapsed, 10,
           f"20 points, max relative error M-step {worst_m:.1e}, marginal likelihood {worst_d:.1e} (tol 1e-4)")


# 4 --------------------------------------------------------------------------

def _kkt(v, p, sigma):
    r = v - p
    pos = p > 1e-12
    mu = float(r[pos].max()) if pos.any() and p.sum() >= sigma - 1e-9 else 0.0
    return max(np.abs(r[pos] - mu).max(initial=0.0), np.maximum(r[~pos] - mu, 0).max(initial=0.0)), mu


def test_c04_simplex_projection(capsys):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    err_qp = err_grid = err_kkt = 0.0
    ok = np.allclose(simplex_project([2.0, 1.0], 1.0), [1.0, 0.0], atol=1e-15)
    blocks = kernels.project_blocks
    for dim in (2, 3):
        u = cp.Variable(dim)
        vp = cp.Parameter(dim)
        sp_ = cp.Parameter(nonneg=True)
        qp = cp.Problem(cp.Minimize(cp.sum_squares(u - vp)), [u >= 0, cp.sum(u) <= sp_])
        for _ in range(10):
            v = rng.normal(scale=2, size=dim)
            sigma = float(rng.uniform(0.1, 3))
            p = simplex_project(v, sigma)
            pb = blocks(np.ascontiguousarray(v[:, None]), np.array([0, dim]), sigma)[:, 0]
            vp.value, sp_.value = v, sigma
            qp.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
            err_qp = max(err_qp, np.abs(p - u.value).max(), np.abs(pb - u.value).max())
            n = 2001 if dim == 2 else 101
            pts = np.linspace(0, sigma, n)
            cand = np.stack([g.ravel() for g in np.meshgrid(*([pts] * dim), indexing="ij")], axis=1)
            cand = cand[cand.sum(1) <= sigma + 1e-12]
            best = cand[np.argmin(((cand - v) ** 2).sum(1))]
            # the grid optimum can be no closer than the exact projection
            ok &= np.sum((v - p) ** 2) <= np.sum((v - best) ** 2) + 1e-12
            err_grid = max(err_grid, np.abs(p - best).max() / (sigma / (n - 1)))
    for _ in range(200):
        n = int(rng.integers(1, 51))
        v = rng.normal(scale=3, size=n)
        sigma = float(rng.uniform(0.01, 10))
        for p in (simplex_project(v, sigma), blocks(np.ascontiguousarray(v[:, None]), np.array([0, n]), sigma)[:, 0]):
            res, mu = _kkt(v, p, sigma)
            ok &= (p >= 0).all() and p.sum() <= sigma + 1e-12 and mu >= 0
            err_kkt = max(err_kkt, res)
    elapsed = time.perf_counter() - t0
    ok &= err_qp <= 1e-8 and err_kkt <= 1e-8 and err_grid <= 1.0
    report(capsys, 4, "simplex projection", ok, elapsed, 5,
           f"QP oracle error {err_qp:.1e}, KKT residual {err_kkt:.1e} (tol 1e-8), "
           f"grid within {err_grid:.2f} cells, [2,1] sigma=1 -> [1,0]")


# 5 --------------------------------------------------------------------------

def _primal_oracle(model, corpus, index, sigma):
    J, T = model.J, corpus.num_tokens
    per_sent = []
    for n in range(len(corpus)):
        lo, hi = corpus.offsets[n], corpus.offsets[n + 1]
        obs = model.log_emit[corpus.tokens[lo:hi]]
        seqs = np.array(list(itertools.product(range(J), repeat=hi - lo)))
        s = model.log_start[seqs[:, 0]] + obs[0, seqs[:, 0]]
        for i in range(1, hi - lo):
            s = s + model.log_tt[seqs[:, i - 1], seqs[:, i]] + obs[i, seqs[:, i]]
        per_sent.append((seqs, s))
    Y = np.array([np.concatenate(c) for c in itertools.product(*[x[0] for x in per_sent])])
    logp = np.array([sum(c) for c in itertools.product(*[x[1] for x in per_sent])])
    p = np.exp(logp - np.logaddexp.reduce(logp))
    q = cp.Variable(len(p), nonneg=True)
    xi = cp.Variable(J)
    cons = [cp.sum(q) == 1] + [(Y[:, t] == v).astype(float) @ q <= xi[v] for t in index.positions for v in range(J)]
    cp.Problem(cp.Minimize(cp.sum(cp.rel_entr(q, p)) + sigma * cp.sum(xi)), cons).solve(
        solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return np.array([[q.value[Y[:, t] == v].sum() for v in range(J)] for t in range(T)])


def test_c05_pr_estep(capsys):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    worst = 0.0
    identity_exact = True
    cases = 0
    tight = ProjGradConfig(max_iters=5000, tol=1e-10)
    for occ in (1, 2, 3, 4):
        for sigma in (0.3, 1.0, 5.0):
            model = random_model(rng, 2, 3)
            flat = rng.integers(1, 3, size=6)
            flat[rng.choice(6, size=occ, replace=False)] = 0
            corpus = Corpus([flat[:3], flat[3:]])
            pos = np.nonzero(corpus.tokens == 0)[0]
            index = ConstraintIndex(["w0"], pos, np.array([0, len(pos)]))
            est = pr_estep(model, corpus, index, np.zeros((occ, 2)), PrConfig(sigma=sigma, dual=tight))
            worst = max(worst, np.abs(est.q.unary - _primal_oracle(model, corpus, index, sigma)).max())
            p = forward_backward(model, corpus)
            q0 = forward_backward(model, corpus, modifier=dual_modifier(np.zeros((occ, 2)), index, 6))
            identity_exact &= np.array_equal(p.unary, q0.unary) and p.loglik == q0.loglik
            cases += 1
    elapsed = time.perf_counter() - t0
    report(capsys, 5, "PR E-step correctness", worst <= 1e-4 and identity_exact, elapsed, 60,
           f"{cases} instances, max |q_dual - q_primal| = {worst:.1e} (tol 1e-4), lambda=0 identity exact: {identity_exact}")


# 6 and 7 ---------------------------------------------------------------------

_RUNS = {}


def _bench_run(variant, seed):
    """EM (warm-up + PR iteration budget) and PR runs from the same start."""
    key = (variant, seed)
    if key in _RUNS:
        return _RUNS[key]
    t0 = time.perf_counter()
    policy = PreprocessPolicy(True, True) if variant == "multinomial" else PreprocessPolicy()
    corpus, vocab, _ = synth_generate(BENCH["J"], BENCH["V"], BENCH["tokens"], BENCH["sparsity"], seed=seed,
                                      policy=policy)
    feats = build_features(vocab, FeatureConfig("reduced")) if variant == "maxent" else None
    index = build_constraint_index(corpus, vocab, 10, lowercase=variant == "maxent")
    cfg = TrainConfig(iterations=WARMUP + PR_ITERS, seed=seed)
    m0 = init_model(BENCH["J"], vocab, feats, cfg)
    em, _ = em_train(corpus, m0, cfg)
    pr, _ = pr_train(corpus, m0, index, PrConfig(SIGMA, 10, WARMUP, PR_ITERS, ProjGradConfig(max_iters=DUAL_ITERS)),
                     cfg)
    out = {}
    for name, m in (("em", em), ("pr", pr)):
        q = forward_backward(m, corpus)
        out[name] = (evaluate(posterior_decode(q), corpus.gold_flat).one_many,
                     ambiguity_penalty(q.unary, index).mean)
    out["seconds"] = time.perf_counter() - t0
    _RUNS[key] = out
    return out


@pytest.mark.slow
def test_c06_ambiguity_reduction(capsys):
    t0 = time.perf_counter()
    runs = [_bench_run("multinomial", s) for s in BENCH_SEEDS]
    elapsed = time.perf_counter() - t0
    em_amb = np.array([r["em"][1] for r in runs])
    pr_amb = np.array([r["pr"][1] for r in runs])
    lower = int((pr_amb < em_amb).sum())
    near = np.abs(pr_amb - 1.0) <= 0.2
    report(capsys, 6, "ambiguity reduction", lower >= 4 and near.all(), elapsed, 300,
           f"PR lower in {lower}/5 seeds; mean l1/linf EM {em_amb.mean():.3f} vs PR {pr_amb.mean():.3f} "
           f"(PR per seed {', '.join(f'{a:.3f}' for a in pr_amb)}; gold 1.0, tol 0.2)")


@pytest.mark.slow
def test_c07_directional_gains(capsys):
    t0 = time.perf_counter()
    # multinomial runs may be cached from criterion 6; charge their time here too
    reused = sum(_RUNS[k]["seconds"] for k in list(_RUNS) if k[0] == "multinomial")
    res = {v: [_bench_run(v, s) for s in BENCH_SEEDS] for v in ("multinomial", "maxent")}
    elapsed = time.perf_counter() - t0 + reused
    parts, ok = [], True
    for v, runs in res.items():
        em = np.mean([r["em"][0] for r in runs])
        pr = np.mean([r["pr"][0] for r in runs])
        ok &= pr >= em
        parts.append(f"{v} 1-Many EM {em:.3f} vs PR {pr:.3f}")
    report(capsys, 7, "directional metric gains", ok, elapsed, 900, "; ".join(parts) + " (5 seeds)")


# 8 --------------------------------------------------------------------------

def _partitions(n):
    out = []

    def rec(i, labels, k):
        if i == n:
            out.append(np.array(labels))
            return
        for lab in range(k + 1):
            rec(i + 1, labels + [lab], max(k, lab + 1))

    rec(0, [], 0)
    return out


def test_c08_metric_module(capsys):
    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    parts = _partitions(6)
    n = len(parts)
    D = np.array([[vi(build_contingency(a, b)) for b in parts] for a in parts])
    symmetric = np.allclose(D, D.T, atol=1e-12)
    identity = np.allclose(np.diag(D), 0, atol=1e-12) and (D[~np.eye(n, dtype=bool)] > 1e-9).all()
    triangle = all((D <= D[:, [j]] + D[[j], :] + 1e-12).all() for j in range(n))
    same = all(evaluate(p, p).v == pytest.approx(1.0) and evaluate(p, p).vi == pytest.approx(0, abs=1e-12)
               for p in parts)
    bad = out_of_range = 0
    for _ in range(10_000):
        K, N = rng.integers(1, 6, size=2)
        c = rng.integers(0, 5, size=(K, N))
        c[0, 0] += 1
        t = ContingencyTable(c)
        bad += map_11(t)[1] > map_1many(t)[1] + 1e-15
        out_of_range += not (0 <= vmeasure(t) <= 1 and 0 <= vi(t))
    elapsed = time.perf_counter() - t0
    ok = symmetric and identity and triangle and same and bad == 0 and out_of_range == 0
    report(capsys, 8, "metric module", ok, elapsed, 30,
           f"{n} partitions of 6: symmetry {symmetric}, identity {identity}, triangle {triangle}; "
           f"V=1/VI=0 on identical {same}; 1-1 > 1-Many on {bad} of 10^4 tables, V or VI out of range on {out_of_range}")


# 9 --------------------------------------------------------------------------

@pytest.mark.slow
def test_c09_full_reproduction(capsys, tmp_path):
    path = os.environ.get("SPARSEPOS_EN17")
    if not path:
        line = ("criterion 9 SKIP full reproduction: conditional, set SPARSEPOS_EN17 to a token<TAB>tag "
                "corpus to run the 5-seed protocol (hours)")
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        pytest.skip("needs SPARSEPOS_EN17")
    from sparsepos.cli import ExperimentConfig, run_experiment
    t0 = time.perf_counter()
    base = dict(train=path, seeds=(1, 2, 3, 4, 5))
    hmm = run_experiment(ExperimentConfig(**base, algorithm="em", iterations=200), str(tmp_path / "hmm"))
    sp = run_experiment(ExperimentConfig(**base, algorithm="pr", sigma=32.0, min_occ=10, em_warmup=30,
                                         pr_iterations=170), str(tmp_path / "sp"))
    elapsed = time.perf_counter() - t0
    a, b = 100 * hmm.summary["1-many"], 100 * sp.summary["1-many"]
    report(capsys, 9, "full reproduction", abs(a - 65.6) <= 2.0 and abs(b - 70.3) <= 2.0, elapsed, float("inf"),
           f"HMM 1-Many {a:.1f} (target 65.6), HMM+Sp {b:.1f} (target 70.3), tol 2.0")


# 10 -------------------------------------------------------------------------

def test_c10_semisupervised_dominance(capsys):
    t0 = time.perf_counter()
    corpus, vocab, _ = synth_generate(8, 2000, 50_000, 0.5, seed=10)
    rows = learning_curve(corpus, vocab, {"oracle": corpus.gold_flat},
                          CurveConfig(sizes=(50, 100, 200, 500), samples=10), seed=10)
    by = {(r.size, r.source): r.error for r in rows}
    sizes = sorted({r.size for r in rows})
    ok = all(by[(s, "oracle")] < by[(s, "baseline")] for s in sizes)
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"n={s}: {by[(s, 'baseline')]:.3f} -> {by[(s, 'oracle')]:.3f}" for s in sizes)
    report(capsys, 10, "semi-supervised dominance", ok, elapsed, 300, "test error baseline -> oracle clusters: " + detail)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
