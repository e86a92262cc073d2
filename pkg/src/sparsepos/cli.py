"""Command-line interface.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
"""
import argparse
import dataclasses
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .corpus import CorpusFormatError, PreprocessPolicy, build_corpus, corpus_stats, format_stats, read_tagged
from .evaluate import (
    METRICS, cluster_composition, evaluate, freq_stratified_accuracy, multi_seed_report, write_report,
)
from .features import FeatureConfig, build_features, feature_count_report
from .hmm import (
    InferenceError, ModelFormatError, encode_for_model, forward_backward, load_model,
    posterior_decode, save_model, viterbi_decode,
)
from .optimize import LbfgsConfig, OptimizationError, ProjGradConfig
from .pr import PR_COLUMNS, PrConfig, build_constraint_index, pr_train
from .semisup import CurveConfig, learning_curve, write_curve
from .synth import synth_generate, write_tagged
from .train import TrainConfig, TrainTrace, init_model, train

log = logging.getLogger("sparsepos")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


DATA_ERRORS = (DataError, CorpusFormatError, ModelFormatError, OSError, KeyError, UnicodeDecodeError)
NUMERIC_ERRORS = (InferenceError, OptimizationError, FloatingPointError)


# experiment configuration

@dataclass
class ExperimentConfig:
    """Every setting of a training run; defaults follow the standard protocol (200 iterations, 5 seeds)."""

    train: str = ""
    test: str = ""
    states: int = 0  # 0 means the number of gold tags
    emission: str = "multinomial"
    algorithm: str = "em"
    seeds: tuple = (1, 2, 3, 4, 5)
    iterations: int = 200
    jitter: float = 0.01
    preprocess: str = "auto"
    features: str = "reduced"
    identity_cutoff: int = 10
    suffix_cutoff: int = 20
    variance: float = 10.0
    mstep_iters: int = 50
    mstep_tol: float = 1e-5
    mstep_loose_iters: int = 0
    sigma: float = 32.0
    min_occ: int = 10
    em_warmup: int = 30
    pr_iterations: int = 170
    dual_iters: int = 500
    dual_tol: float = 1e-6
    dual_step: str = "bb"
    vb_alpha_trans: float = 0.001
    vb_alpha_emit: float = 0.1
    decode: str = "posterior"

    CHOICES = {
        "emission": ("multinomial", "maxent"),
        "algorithm": ("em", "dg", "vb", "pr"),
        "preprocess": ("auto", "none", "lowercase", "lowercase+unk"),
        "features": ("reduced", "large"),
        "dual_step": ("bb", "fixed"),
        "decode": ("posterior", "viterbi"),
    }

    def validate(self, need_paths=True):
        for k, allowed in self.CHOICES.items():
            if getattr(self, k) not in allowed:
                raise UsageError(f"{k} must be one of {', '.join(allowed)}")
        if not self.seeds:
            raise UsageError("seeds must be non-empty")
        if self.algorithm == "dg" and self.emission != "maxent":
            raise UsageError("algorithm dg needs emission maxent")
        if self.algorithm == "vb" and self.emission != "multinomial":
            raise UsageError("algorithm vb needs emission multinomial")
        if self.states < 0 or self.iterations < 1:
            raise UsageError("states must be >= 0 and iterations >= 1")
        if need_paths:
            if not self.train:
                raise UsageError("no training corpus given (train=...)")
            for p in (self.train, self.test):
                if p and not os.path.exists(p):
                    raise DataError(f"{p}: no such file")
        return self

    def policy(self):
        mode = self.preprocess
        if mode == "auto":
            mode = "lowercase+unk" if self.emission == "multinomial" else "none"
        return PreprocessPolicy(lowercase=mode != "none", map_singletons_to_unk=mode == "lowercase+unk")

    def train_config(self, seed):
        return TrainConfig(
            algorithm="em" if self.algorithm == "pr" else self.algorithm,
            iterations=self.iterations, seed=seed, jitter=self.jitter, prior_variance=self.variance,
            vb_transition_alpha=self.vb_alpha_trans, vb_emission_alpha=self.vb_alpha_emit,
            mstep=LbfgsConfig(max_iters=self.mstep_iters, grad_tol=self.mstep_tol),
            mstep_loose_iters=self.mstep_loose_iters,
        )

    def pr_config(self):
        return PrConfig(self.sigma, self.min_occ, self.em_warmup, self.pr_iterations,
                        ProjGradConfig(max_iters=self.dual_iters, tol=self.dual_tol, step_rule=self.dual_step))

    def feature_config(self):
        return FeatureConfig(self.features, self.identity_cutoff, self.suffix_cutoff)

    def to_pairs(self):
        out = {}
        for f in config_fields():
            v = getattr(self, f.name)
            out[f.name] = ",".join(str(s) for s in v) if isinstance(v, tuple) else str(v)
        return out


def config_fields():
    return [f for f in fields(ExperimentConfig)]


def _convert(name, kind, text):
    try:
        if kind is tuple:
            return tuple(int(s) for s in text.split(",") if s.strip())
        if kind is bool:
            return text.lower() in ("1", "true", "yes", "on")
        return kind(text)
    except ValueError:
        raise UsageError(f"bad value for {name}: {text!r}") from None


_TYPES = {"str": str, "int": int, "float": float, "tuple": tuple}


def apply_pairs(config, pairs):
    """Return a copy of ``config`` with ``key=value`` strings applied."""
    known = {f.name: _TYPES[f.type if isinstance(f.type, str) else f.type.__name__] for f in config_fields()}
    updates = {}
    for key, text in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
        updates[key] = _convert(key, known[key], text.strip())
    return dataclasses.replace(config, **updates)


def read_config_file(path):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
    return pairs


def write_config_file(path, config):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in config.to_pairs().items():
            fh.write(f"{k} = {v}\n")


# pipeline

@dataclass
class Prepared:
    corpus: object
    vocab: object
    features: object
    J: int
    policy: PreprocessPolicy


def prepare(config):
    words, tags = read_tagged(config.train)
    policy = config.policy()
    corpus, vocab = build_corpus(words, tags, policy, name=config.train)
    J = config.states or (len(corpus.tagset) if corpus.has_gold else 0)
    if J < 1:
        raise UsageError("states not given and the training corpus has no gold tags")
    feats = build_features(vocab, config.feature_config()) if config.emission == "maxent" else None
    return Prepared(corpus, vocab, feats, J, policy)


def train_seed(config, prep, seed):
    """Train one model; returns ``(model, trace)``."""
    tc = config.train_config(seed)
    model = init_model(prep.J, prep.vocab, prep.features, tc, prep.policy)
    if config.algorithm == "pr":
        # max-ent models see raw types, so occurrences are grouped by lowercased form
        index = build_constraint_index(prep.corpus, prep.vocab, config.min_occ,
                                       lowercase=config.emission == "maxent")
        # em_warmup + pr_iterations replaces the iteration budget
        return pr_train(prep.corpus, model, index, config.pr_config(), tc, TrainTrace(PR_COLUMNS))
    return train(prep.corpus, model, tc)


def decode(model, word_sentences, how="posterior"):
    corpus, log_emit = encode_for_model(model, word_sentences)
    if how == "viterbi":
        return corpus, viterbi_decode(model, corpus, log_emit=log_emit)
    return corpus, posterior_decode(forward_backward(model, corpus, log_emit=log_emit))


def write_tags(path, corpus, tags):
    with open(path, "w", encoding="utf-8") as fh:
        for piece in corpus.split_flat(tags):
            fh.write("".join(f"{int(t)}\n" for t in piece) + "\n")


def read_tags(path):
    """Cluster ids per sentence from a tag file."""
    sents, cur = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                if cur:
                    sents.append(np.array(cur, dtype=np.int64))
                    cur = []
                continue
            try:
                cur.append(int(line))
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected an integer cluster id") from None
            if cur[-1] < 0:
                raise DataError(f"{path}:{lineno}: negative cluster id")
    if cur:
        sents.append(np.array(cur, dtype=np.int64))
    if not sents:
        raise DataError(f"{path}: no tags")
    return sents


def aligned_tags(path, gold_corpus):
    sents = read_tags(path)
    if len(sents) != len(gold_corpus) or any(len(a) != len(b) for a, b in zip(sents, gold_corpus.sentences)):
        raise DataError(f"{path}: tags do not align with the gold corpus")
    return np.concatenate(sents)


@dataclass
class RunManifest:
    config: dict
    version: str
    runs: list
    summary: dict
    path: str = ""

    def to_json(self):
        return {"tool": "sparsepos", "version": self.version, "config": self.config,
                "runs": self.runs, "summary": self.summary}


def run_experiment(config, out_dir):
    """Train and evaluate every seed into ``out_dir/run-<i>-seed-<s>``.

    A failure aborts only that seed and is recorded with the stage name.
    """
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    write_config_file(os.path.join(out_dir, "experiment.cfg"), config)
    prep = prepare(config)
    eval_path = config.test or config.train
    eval_words, eval_tags = read_tagged(eval_path)
    gold_corpus, _ = build_corpus(eval_words, eval_tags, PreprocessPolicy())
    runs, reports = [], []
    for i, seed in enumerate(config.seeds):
        run_dir = os.path.join(out_dir, f"run-{i}-seed-{seed}")
        os.makedirs(run_dir, exist_ok=True)
        run = {"seed": seed, "dir": run_dir, "model": None, "trace": None, "tags": None,
               "metrics": None, "warnings": [], "error": None}
        stage = "train"
        try:
            model, trace = train_seed(config, prep, seed)
            stage = "save"
            run["model"] = os.path.join(run_dir, "model.txt")
            save_model(model, run["model"])
            run["trace"] = os.path.join(run_dir, "trace.tsv")
            trace.to_tsv(run["trace"])
            run["warnings"] = list(trace.warnings)
            stage = "decode"
            corpus, tags = decode(model, eval_words, config.decode)
            run["tags"] = os.path.join(run_dir, "tags.txt")
            write_tags(run["tags"], corpus, tags)
            if gold_corpus.has_gold:
                stage = "evaluate"
                rep = evaluate(tags, gold_corpus.gold_flat)
                run["metrics"] = rep.as_dict()
                reports.append(rep)
        except NUMERIC_ERRORS + DATA_ERRORS as exc:
            log.error("seed %s failed at %s: %s", seed, stage, exc)
            run["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
        runs.append(run)
    summary = {}
    if reports:
        s = multi_seed_report(reports)
        summary = s.mean
        write_report(os.path.join(out_dir, "report.tsv"), s)
    manifest = RunManifest(config.to_pairs(), __version__, runs, summary,
                           os.path.join(out_dir, "manifest.json"))
    with open(manifest.path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
    return manifest


# commands

def cmd_stats(args):
    words, tags = read_tagged(args.corpus)
    raw_types = len({w for s in words for w in s})
    corpus, vocab = build_corpus(words, tags, PreprocessPolicy(args.lowercase, args.unk))
    sys.stdout.write(format_stats(corpus_stats(corpus, vocab, raw_types)))
    return EXIT_OK


def cmd_features(args):
    words, _ = read_tagged(args.corpus)
    _, vocab = build_corpus(words, None, PreprocessPolicy())
    table = build_features(vocab, FeatureConfig(args.variant, args.identity_cutoff, args.suffix_cutoff))
    rep = feature_count_report(table)
    for k, v in rep.items():
        print(f"{k}\t{v}")
    print(f"total\t{table.num_features}")
    if args.states:
        print(f"parameters\t{table.num_features * args.states}")
    if args.dump:
        table.dump(args.dump, vocab.types)
    return EXIT_OK


def _config_from_args(args, need_paths=True):
    config = ExperimentConfig()
    if args.config:
        config = apply_pairs(config, read_config_file(args.config))
    pairs = {f.name: getattr(args, f.name) for f in config_fields() if getattr(args, f.name, None) is not None}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k] = v
    return apply_pairs(config, pairs).validate(need_paths)


def cmd_train(args):
    config = _config_from_args(args)
    prep = prepare(config)
    seed = config.seeds[0]
    model, trace = train_seed(config, prep, seed)
    save_model(model, args.model)
    if args.trace:
        trace.to_tsv(args.trace)
    for w in trace.warnings:
        print(f"warning: {w}", file=sys.stderr)
    manifest = {"tool": "sparsepos", "version": __version__, "command": "train",
                "config": dict(config.to_pairs(), seeds=str(seed)), "model": args.model, "trace": args.trace}
    with open(args.model + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    last = trace.rows[-1] if trace.rows else {}
    print(f"trained {config.algorithm}/{config.emission} J={prep.J} iterations={len(trace)} "
          f"loglik={last.get('loglik', float('nan')):.6f}")
    return EXIT_OK


def cmd_tag(args):
    if not args.model:
        raise UsageError("no model given")
    model = load_model(args.model)
    words, _ = read_tagged(args.corpus)
    corpus, tags = decode(model, words, args.decode)
    if args.out:
        write_tags(args.out, corpus, tags)
    else:
        for piece in corpus.split_flat(tags):
            sys.stdout.write("".join(f"{int(t)}\n" for t in piece) + "\n")
    return EXIT_OK


def cmd_eval(args):
    words, tags = read_tagged(args.gold)
    if tags is None:
        raise DataError(f"{args.gold}: no gold tags")
    gold_corpus, _ = build_corpus(words, tags, PreprocessPolicy())
    counts = Counter(w for s in words for w in s)
    token_counts = np.array([counts[w] for s in words for w in s])
    metrics = METRICS if args.metrics == "all" else tuple(m.strip() for m in args.metrics.split(","))
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise UsageError(f"unknown metric(s) {', '.join(unknown)}; choose from {', '.join(METRICS)}")
    reports = []
    for path in args.pred.split(","):
        pred = aligned_tags(path, gold_corpus)
        d = evaluate(pred, gold_corpus.gold_flat).as_dict()
        reports.append({m: d[m] for m in metrics})
        print(path + "\t" + "\t".join(f"{m}={d[m]:.4f}" for m in metrics))
        if args.freq:
            for lab, (acc, n) in freq_stratified_accuracy(pred, gold_corpus.gold_flat, token_counts).items():
                print(f"  freq {lab}\t{acc:.4f}\t{n}")
        if args.composition:
            for k, size, parts in cluster_composition(pred, gold_corpus.gold_flat, gold_corpus.tagset):
                print(f"  cluster {k}\t{size}\t" + " ".join(f"{t}:{p:.2f}" for t, p in parts))
    if args.out:
        write_report(args.out, multi_seed_report(reports))
    return EXIT_OK


def cmd_semisup(args):
    words, tags = read_tagged(args.corpus)
    if tags is None:
        raise DataError(f"{args.corpus}: no gold tags")
    corpus, vocab = build_corpus(words, tags, PreprocessPolicy())
    sources = {}
    for path in [p for p in (args.clusters or "").split(",") if p]:
        name = os.path.splitext(os.path.basename(path))[0]
        sources[name] = aligned_tags(path, corpus)
    if args.oracle:
        sources["gold"] = corpus.gold_flat
    try:
        cfg = CurveConfig(tuple(int(s) for s in args.sizes.split(",")), args.samples, args.dev_frac,
                          args.test_size, args.epochs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        rows = learning_curve(corpus, vocab, sources, cfg, args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if args.out:
        write_curve(args.out, rows)
    for r in rows:
        print(f"{r.size}\t{r.source}\t{r.accuracy:.4f}")
    return EXIT_OK


def cmd_synth(args):
    if args.states < 1 or args.types < 1 or args.tokens < 1:
        raise UsageError("states, types and tokens must be >= 1")
    if not 0 <= args.sparsity <= 1:
        raise UsageError("sparsity must be in [0, 1]")
    corpus, vocab, _ = synth_generate(args.states, args.types, args.tokens, args.sparsity, args.seed,
                                      zipf=args.zipf, trans_concentration=args.trans_concentration)
    words = [[vocab.types[i] for i in s] for s in corpus.sentences]
    tags = [[corpus.tagset[t] for t in g] for g in corpus.gold]
    write_tagged(args.out, words, tags)
    print(f"wrote {corpus.num_tokens} tokens, {len(corpus)} sentences, {len(vocab)} types to {args.out}")
    return EXIT_OK


def cmd_experiment(args):
    config = _config_from_args(args)
    manifest = run_experiment(config, args.out)
    failed = [r for r in manifest.runs if r["error"]]
    for r in manifest.runs:
        status = f"failed at {r['error']['stage']}: {r['error']['message']}" if r["error"] else \
            " ".join(f"{k}={v:.4f}" for k, v in (r["metrics"] or {}).items())
        print(f"seed {r['seed']}\t{status}")
    if manifest.summary:
        print("mean\t" + " ".join(f"{k}={v:.4f}" for k, v in manifest.summary.items()))
    print(f"manifest: {manifest.path}")
    if failed and len(failed) == len(manifest.runs):
        types = {r["error"]["type"] for r in failed}
        return EXIT_NUMERIC if types & {e.__name__ for e in NUMERIC_ERRORS} else EXIT_DATA
    return EXIT_OK


# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


FLAG_ALIASES = {
    "algorithm": ["--algo"],
    "seeds": ["--seed"],
    "iterations": ["--iters"],
    "variance": ["--prior-variance"],
    "vb_alpha_emit": ["--vb-alpha"],
    "em_warmup": ["--warmup"],
    "pr_iterations": ["--pr-iters"],
}


def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    for f in config_fields():
        flags = ["--" + f.name.replace("_", "-")] + FLAG_ALIASES.get(f.name, [])
        p.add_argument(*flags, dest=f.name, default=None, metavar="V")


def build_parser():
    parser = _Parser(prog="sparsepos", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sparsepos {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("corpus")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--unk", action="store_true", help="map singletons to the unk token")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("features", help="feature counts of the max-ent emission model")
    p.add_argument("corpus")
    p.add_argument("--variant", choices=("reduced", "large"), default="reduced")
    p.add_argument("--identity-cutoff", type=int, default=10)
    p.add_argument("--suffix-cutoff", type=int, default=20)
    p.add_argument("--states", type=int, default=0, help="report F*J parameters")
    p.add_argument("--dump", help="write per-type feature lists here")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one model (first seed)")
    _add_config_flags(p)
    p.add_argument("--model", "--out", dest="model", required=True, help="output model file")
    p.add_argument("--trace", help="output per-iteration TSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tag", help="decode a corpus with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--decode", choices=("posterior", "viterbi"), default="posterior")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("eval", help="score tag files against gold tags")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True, help="comma-separated tag files")
    p.add_argument("--metrics", default="all", help="'all' or a comma-separated subset of " + ",".join(METRICS))
    p.add_argument("--out", "--report", dest="out", help="report TSV: metric, mean, per-seed values")
    p.add_argument("--freq", action="store_true", help="frequency-stratified accuracy")
    p.add_argument("--composition", action="store_true", help="per-cluster gold tag shares")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("semisup", help="perceptron learning curves with cluster features")
    p.add_argument("--corpus", required=True)
    p.add_argument("--clusters", default="", help="comma-separated tag files")
    p.add_argument("--oracle", action="store_true", help="add gold tags as a cluster source")
    p.add_argument("--sizes", default="50,100,200,500")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--dev-frac", type=float, default=0.2)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_semisup)

    p = sub.add_parser("synth", help="sample a gold-tagged corpus from a random HMM")
    p.add_argument("--states", type=int, default=8)
    p.add_argument("--types", type=int, default=2000)
    p.add_argument("--tokens", type=int, default=50000)
    p.add_argument("--sparsity", type=float, default=1.0, help="fraction of one-tag words")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zipf", type=float, default=1.1)
    p.add_argument("--trans-concentration", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("experiment", help="multi-seed train/decode/evaluate run")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(invalid="ignore", divide="ignore"):
            return args.func(args)
    except UsageError as exc:
        print(f"sparsepos: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"sparsepos: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"sparsepos: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"sparsepos: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
