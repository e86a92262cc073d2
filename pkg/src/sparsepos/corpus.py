"""Token/tag corpus loading, vocabularies and corpus statistics.

File format: one token per line, optionally followed by a tab and a gold
tag; a blank line ends a sentence.
"""
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class CorpusFormatError(ValueError):
    """Raised for malformed corpus files."""


@dataclass(frozen=True)
class PreprocessPolicy:
    lowercase: bool = False
    map_singletons_to_unk: bool = False
    unk_token: str = "*unk*"


def fold_case(word):
    # per-character simple folding; multi-char lowercasings are left alone
    out = []
    for ch in word:
        low = ch.lower()
        out.append(low if len(low) == 1 else ch)
    return "".join(out)


@dataclass
class Vocabulary:
    """Dense word-type indexing with per-type counts and occurrence lists."""

    types: list
    counts: np.ndarray
    occurrences: list = field(repr=False)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.types)}

    def __len__(self):
        return len(self.types)

    @property
    def num_tokens(self):
        return int(self.counts.sum())

    @classmethod
    def from_sentences(cls, sentences):
        """Build from word-string sentences; types are ordered by first use."""
        index = {}
        occ = []
        pos = 0
        for sent in sentences:
            for w in sent:
                i = index.setdefault(w, len(index))
                if i == len(occ):
                    occ.append([])
                occ[i].append(pos)
                pos += 1
        types = list(index)
        occurrences = [np.asarray(o, dtype=np.int64) for o in occ]
        counts = np.array([len(o) for o in occ], dtype=np.int64)
        return cls(types, counts, occurrences)

    def lookup(self, word, unk_token=None):
        if word in self.index:
            return self.index[word]
        if unk_token is not None and unk_token in self.index:
            return self.index[unk_token]
        raise KeyError(word)


@dataclass
class Corpus:
    """Sentences as arrays of word-type indices, with optional gold tags."""

    sentences: list
    gold: list = None
    tagset: list = None
    name: str = ""

    def __post_init__(self):
        if any(len(s) == 0 for s in self.sentences):
            raise CorpusFormatError("empty sentence")
        if self.gold is not None:
            if len(self.gold) != len(self.sentences) or any(
                len(g) != len(s) for g, s in zip(self.gold, self.sentences)
            ):
                raise CorpusFormatError("gold tags do not align with tokens")
        lengths = [len(s) for s in self.sentences]
        self.offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        self.tokens = (
            np.concatenate(self.sentences).astype(np.int64)
            if self.sentences else np.zeros(0, dtype=np.int64)
        )
        self.gold_flat = None
        if self.gold is not None:
            self.gold_flat = np.concatenate(self.gold).astype(np.int64)

    def __len__(self):
        return len(self.sentences)

    @property
    def num_tokens(self):
        return int(self.offsets[-1])

    @property
    def has_gold(self):
        return self.gold is not None

    def subset(self, indices, name=None):
        """Corpus made of the sentences at ``indices`` (vocabulary shared)."""
        sents = [self.sentences[i] for i in indices]
        gold = [self.gold[i] for i in indices] if self.gold is not None else None
        return Corpus(sents, gold, self.tagset, name or self.name)

    def split_flat(self, flat):
        """Split a per-token array into per-sentence pieces."""
        return [flat[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def read_tagged(path):
    """Parse a token file into (word sentences, tag sentences or None)."""
    sentences, tags = [], []
    cur_w, cur_t = [], []
    n_tagged = n_untagged = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                if cur_w:
                    sentences.append(cur_w)
                    tags.append(cur_t)
                    cur_w, cur_t = [], []
                continue
            fields = line.split("\t")
            if len(fields) >= 3:
                raise CorpusFormatError(f"{path}:{lineno}: expected 'token' or 'token<TAB>tag', got {len(fields)} fields")
            if not fields[0]:
                raise CorpusFormatError(f"{path}:{lineno}: empty token")
            cur_w.append(fields[0])
            if len(fields) == 2:
                cur_t.append(fields[1])
                n_tagged += 1
            else:
                cur_t.append(None)
                n_untagged += 1
    if cur_w:
        sentences.append(cur_w)
        tags.append(cur_t)
    if not sentences:
        raise CorpusFormatError(f"{path}: no tokens")
    if n_tagged and n_untagged:
        raise CorpusFormatError(f"{path}: mixes tagged and untagged tokens")
    return sentences, (tags if n_tagged else None)


def preprocess(sentences, policy):
    """Apply lowercasing and singleton-to-unk mapping to word sentences."""
    if policy.lowercase:
        sentences = [[fold_case(w) for w in s] for s in sentences]
    if policy.map_singletons_to_unk:
        counts = Counter(w for s in sentences for w in s)
        sentences = [[policy.unk_token if counts[w] == 1 else w for w in s] for s in sentences]
    return sentences


def build_corpus(word_sentences, tag_sentences=None, policy=None, name="", tagset=None):
    policy = policy or PreprocessPolicy()
    words = preprocess(word_sentences, policy)
    vocab = Vocabulary.from_sentences(words)
    sents = [np.array([vocab.index[w] for w in s], dtype=np.int64) for s in words]
    gold = None
    if tag_sentences is not None:
        if tagset is None:
            tagset = []
            seen = set()
            for s in tag_sentences:
                for t in s:
                    if t not in seen:
                        seen.add(t)
                        tagset.append(t)
        tix = {t: i for i, t in enumerate(tagset)}
        gold = [np.array([tix[t] for t in s], dtype=np.int64) for s in tag_sentences]
    return Corpus(sents, gold, tagset, name), vocab


def load_corpus(path, policy=None):
    """Read ``path`` and return ``(corpus, vocab)`` after preprocessing."""
    words, tags = read_tagged(path)
    return build_corpus(words, tags, policy, name=str(path))


def corpus_words(corpus, vocab):
    return [[vocab.types[i] for i in s] for s in corpus.sentences]


def write_corpus(path, corpus, vocab):
    """Write in the same token<TAB>tag format ``load_corpus`` reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for n, sent in enumerate(corpus.sentences):
            for i, w in enumerate(sent):
                if corpus.gold is not None:
                    fh.write(f"{vocab.types[w]}\t{corpus.tagset[corpus.gold[n][i]]}\n")
                else:
                    fh.write(f"{vocab.types[w]}\n")
            fh.write("\n")


def gold_ambiguity(corpus, vocab):
    """Distinct gold tags per word type (hard l1/linf value per type)."""
    distinct = [set() for _ in range(len(vocab))]
    for w, t in zip(corpus.tokens, corpus.gold_flat):
        distinct[w].add(int(t))
    return np.array([len(d) for d in distinct], dtype=float)


def corpus_stats(corpus, vocab, raw_types=None):
    """Table-1 style statistics as an ordered dict of name -> value.

    ``raw_types`` is the type count before preprocessing; when given, the
    surviving percentage is reported. Ambiguity keys are omitted, not zeroed,
    when the corpus has no gold tags.
    """
    stats = {
        "sentences": len(corpus),
        "types": len(vocab),
        "tokens": corpus.num_tokens,
    }
    if raw_types is not None:
        stats["raw_types"] = raw_types
        stats["pct_types_kept"] = 100.0 * len(vocab) / raw_types
    if corpus.has_gold:
        amb = gold_ambiguity(corpus, vocab)
        used = vocab.counts > 0
        stats["tags"] = len(corpus.tagset)
        stats["avg_ambiguity_per_type"] = float(amb[used].mean())
        stats["avg_ambiguity_per_token"] = float((amb * vocab.counts).sum() / vocab.counts.sum())
        stats["total_ambiguity"] = float(amb.sum())
    return stats


def format_stats(stats):
    """Aligned text table followed by ``key=value`` lines."""
    width = max(len(k) for k in stats)
    lines = []
    for k, v in stats.items():
        val = f"{v:.4f}" if isinstance(v, float) else str(v)
        lines.append(f"{k:<{width}}  {val}")
    lines.append("")
    for k, v in stats.items():
        lines.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"
