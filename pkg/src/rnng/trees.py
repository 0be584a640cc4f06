"""Bracketed phrase-structure trees plus the corpus utilities built on them.

Trees are immutable: a ``Leaf`` carries a terminal token, an ``Internal``
node carries a nonterminal label and one or more children.  Nonterminal
labels and terminal tokens live in disjoint alphabets.  The reader accepts
standard bracketed treebank text, one tree per line or spread over several
lines (groups are delimited by bracket balance).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field


class TreebankError(ValueError):
    """Malformed bracketed input, with 1-based line/column when known."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Leaf:
    token: str


@dataclass(frozen=True)
class Internal:
    label: str
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError(f"internal node {self.label!r} has no children")


def leaves(tree) -> list[str]:
    """Terminal tokens of `tree` in left-to-right order."""
    if isinstance(tree, Leaf):
        return [tree.token]
    out = []
    for child in tree.children:
        out.extend(leaves(child))
    return out


def internal_labels(tree) -> list[str]:
    """Nonterminal labels of `tree` in pre-order."""
    if isinstance(tree, Leaf):
        return []
    out = [tree.label]
    for child in tree.children:
        out.extend(internal_labels(child))
    return out


def count_internal(tree) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + sum(count_internal(c) for c in tree.children)


def serialize(tree) -> str:
    """Single-line bracketed form; inverse of parse_bracketed."""
    if isinstance(tree, Leaf):
        return tree.token
    return "(" + tree.label + " " + " ".join(serialize(c) for c in tree.children) + ")"


_TOKEN_PAT = re.compile(r"\(|\)|[^()\s]+")


def _lex(text):
    """Yield (token, line, column) with 1-based positions."""
    for lineno, line in enumerate(text.split("\n"), start=1):
        for m in _TOKEN_PAT.finditer(line):
            yield m.group(), lineno, m.start() + 1


def parse_bracketed(text: str) -> list:
    """Parse bracketed text into a list of trees, one per top-level group.

    Raises TreebankError with the offending position on unbalanced
    parentheses, empty constituents, or stray material outside brackets.
    """
    tokens = list(_lex(text))
    pos = 0
    n = len(tokens)

    def error(msg, at=None):
        if at is None:
            if tokens:
                _, ln, col = tokens[-1]
            else:
                ln = col = 1
        else:
            _, ln, col = at
        raise TreebankError(msg, ln, col)

    def parse_node():
        nonlocal pos
        tok, ln, col = tokens[pos]
        if tok == ")":
            error("unexpected ')'", tokens[pos])
        if tok != "(":
            pos += 1
            return Leaf(tok)
        open_tok = tokens[pos]
        pos += 1
        if pos >= n:
            error("unbalanced '(' at end of input", open_tok)
        label, _, _ = tokens[pos]
        if label == ")":
            error("empty constituent '()'", open_tok)
        if label == "(":
            error("constituent is missing its label", tokens[pos])
        pos += 1
        children = []
        while True:
            if pos >= n:
                error("unbalanced '(' at end of input", open_tok)
            tok, _, _ = tokens[pos]
            if tok == ")":
                pos += 1
                break
            children.append(parse_node())
        if not children:
            error(f"constituent {label!r} has no children", open_tok)
        return Internal(label, tuple(children))

    trees = []
    while pos < n:
        tok, _, _ = tokens[pos]
        if tok != "(":
            error("expected '(' at top level", tokens[pos])
        trees.append(parse_node())
    return trees


def read_corpus(path) -> list:
    with open(path, encoding="utf-8") as f:
        return parse_bracketed(f.read())


def write_corpus(path, trees) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in trees:
            f.write(serialize(t) + "\n")


def strip_preterminals(tree):
    """Replace each internal node whose only child is a Leaf by that Leaf.

    The test is made against the input structure, so a unary chain of
    nonterminals collapses by exactly one level per call: (X (Y (Z a)))
    becomes (X (Y a)), not (X a).
    """
    if isinstance(tree, Leaf):
        return tree
    if len(tree.children) == 1 and isinstance(tree.children[0], Leaf):
        return tree.children[0]
    return Internal(tree.label, tuple(strip_preterminals(c) for c in tree.children))


# ---------------------------------------------------------------------------
# Vocabulary and unknown-word mapping

UNK = "UNK"

BERKELEY_RULES = "berkeley_rules"
SINGLE_UNK = "single_unk"

# Frozen suffix table for the orthographic unknown-word signatures, matched
# longest-first against the lowercased token; a match requires a stem of at
# least three characters.  The trailing plural-'s' rule is applied before
# this table (see unk_signature).
UNK_SUFFIXES = (
    "ance", "ence", "ment", "ness", "less", "able",
    "ing", "ion", "ity", "ive", "ous", "est", "ful", "ism", "ist",
    "ed", "er", "ly", "al", "y",
)


def unk_signature(word: str, position: int, known=frozenset()) -> str:
    """Orthographic unknown-word class of `word` at sentence `position`.

    Frozen rule table:
      1. capitalization: first-char uppercase at position 0 with exactly one
         uppercase char -> INITC (plus KNOWNLC when the lowercased form is a
         known word); any other uppercase usage -> CAPS; otherwise LC when
         the word has a lowercase letter;
      2. NUM when the word contains a digit, DASH when it contains '-';
      3. a single suffix flag: plural 's' (not 'ss'/'is'/'us'), else the
         longest match from UNK_SUFFIXES with a stem of >= 3 characters.
    """
    if not word:
        return UNK
    sig = UNK
    n_upper = sum(1 for ch in word if ch.isupper())
    has_lower = any(ch.islower() for ch in word)
    lower = word.lower()
    if word[0].isupper():
        if position == 0 and n_upper == 1:
            sig += "-INITC"
            if lower in known:
                sig += "-KNOWNLC"
        else:
            sig += "-CAPS"
    elif n_upper > 0:
        sig += "-CAPS"
    elif has_lower:
        sig += "-LC"
    if any(ch.isdigit() for ch in word):
        sig += "-NUM"
    if "-" in word:
        sig += "-DASH"
    if len(lower) >= 4 and lower.endswith("s") and lower[-2] not in "siu":
        sig += "-s"
    else:
        for suf in sorted(UNK_SUFFIXES, key=len, reverse=True):
            if len(lower) >= len(suf) + 3 and lower.endswith(suf):
                sig += "-" + suf
                break
    return sig


@dataclass(frozen=True)
class Vocab:
    """Immutable terminal/nonterminal inventories with training counts.

    `terminals` contains surface tokens that survived singleton replacement
    plus the UNK-class tokens introduced by it; `counts` holds training
    frequencies aggregated over that final inventory.
    """

    terminals: tuple
    nonterminals: tuple
    counts: dict
    policy: str
    term_index: dict = field(repr=False, compare=False, default=None)
    nt_index: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "term_index", {t: i for i, t in enumerate(self.terminals)})
        object.__setattr__(self, "nt_index", {x: i for i, x in enumerate(self.nonterminals)})
        dup = set(self.terminals) & set(self.nonterminals)
        if dup:
            raise ValueError(f"terminal/nonterminal alphabets overlap: {sorted(dup)[:5]}")

    def __contains__(self, token):
        return token in self.term_index

    def to_json(self):
        return {
            "policy": self.policy,
            "terminals": list(self.terminals),
            "nonterminals": list(self.nonterminals),
            "counts": dict(self.counts),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            terminals=tuple(obj["terminals"]),
            nonterminals=tuple(obj["nonterminals"]),
            counts={k: int(v) for k, v in obj["counts"].items()},
            policy=obj["policy"],
        )


def _iter_yields(corpus):
    for tree in corpus:
        yield leaves(tree)


def build_vocab(corpus, policy=BERKELEY_RULES) -> Vocab:
    """Build a vocabulary, replacing training singletons by UNK-class tokens.

    Under `single_unk` every singleton maps to the one token "UNK"; under
    `berkeley_rules` it maps to its orthographic signature (unk_signature).
    A corpus without singletons therefore yields a vocabulary without any
    UNK token.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if policy not in (BERKELEY_RULES, SINGLE_UNK):
        raise ValueError(f"unknown singleton policy: {policy!r}")
    raw_counts = Counter()
    for sent in _iter_yields(corpus):
        raw_counts.update(sent)
    kept = frozenset(w for w, c in raw_counts.items() if c >= 2)
    final_counts = Counter()
    for sent in _iter_yields(corpus):
        for i, w in enumerate(sent):
            if w in kept:
                final_counts[w] += 1
            elif policy == SINGLE_UNK:
                final_counts[UNK] += 1
            else:
                final_counts[unk_signature(w, i, kept)] += 1
    nts = sorted({lab for t in corpus for lab in internal_labels(t)})
    return Vocab(
        terminals=tuple(sorted(final_counts)),
        nonterminals=tuple(nts),
        counts=dict(final_counts),
        policy=policy,
    )


def inventory_vocab(corpus, nonterminals=None, policy=SINGLE_UNK) -> Vocab:
    """Vocabulary over the corpus inventory verbatim (no singleton mapping).

    Used when the corpus has already been preprocessed.
    """
    counts = Counter()
    for sent in _iter_yields(corpus):
        counts.update(sent)
    if nonterminals is None:
        nonterminals = sorted({lab for t in corpus for lab in internal_labels(t)})
    return Vocab(tuple(sorted(counts)), tuple(nonterminals), dict(counts), policy)


def unkify(word: str, position: int, vocab: Vocab) -> str:
    """Map `word` to itself when in-vocabulary, else to its UNK-class token.

    Total and deterministic.  Under berkeley_rules, when the exact signature
    was never seen in training the trailing features are dropped one at a
    time; if no prefix (down to bare "UNK") is in the vocabulary the full
    signature is returned unchanged.
    """
    if word in vocab.term_index:
        return word
    if vocab.policy == SINGLE_UNK:
        return UNK
    sig = unk_signature(word, position, vocab.term_index)
    probe = sig
    while probe not in vocab.term_index and "-" in probe:
        probe = probe.rsplit("-", 1)[0]
    return probe if probe in vocab.term_index else sig


def unkify_sentence(words, vocab) -> list[str]:
    return [unkify(w, i, vocab) for i, w in enumerate(words)]


def unkify_tree(tree, vocab):
    """Replace out-of-vocabulary leaf tokens, leaf positions counted in the yield."""
    mapped = unkify_sentence(leaves(tree), vocab)
    it = iter(mapped)

    def rebuild(node):
        if isinstance(node, Leaf):
            return Leaf(next(it))
        return Internal(node.label, tuple(rebuild(c) for c in node.children))

    return rebuild(tree)


# ---------------------------------------------------------------------------
# Word classes for the class-factored softmax

@dataclass(frozen=True)
class WordClasses:
    """Partition of the terminal index set into word classes."""

    class_of: tuple
    members: tuple
    num_classes: int

    def __post_init__(self):
        seen = sorted(i for group in self.members for i in group)
        if seen != list(range(len(self.class_of))):
            raise ValueError("word classes do not partition the terminal set")

    def to_json(self):
        return {"class_of": list(self.class_of), "num_classes": self.num_classes}

    @classmethod
    def from_json(cls, obj):
        class_of = tuple(int(c) for c in obj["class_of"])
        k = int(obj["num_classes"])
        members = [[] for _ in range(k)]
        for i, c in enumerate(class_of):
            members[c].append(i)
        return cls(class_of, tuple(tuple(m) for m in members), k)


def default_num_classes(num_terminals: int) -> int:
    return max(1, math.ceil(math.sqrt(num_terminals)))


def read_cluster_file(path) -> dict:
    """Read `word<TAB>class-id` lines into a token -> class-label mapping."""
    mapping = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>class-id'")
            mapping[parts[0]] = parts[1]
    return mapping


def assign_word_classes(vocab: Vocab, external: dict | None = None,
                        num_classes: int | None = None) -> WordClasses:
    """Partition the vocabulary terminals into word classes.

    With an `external` token->class mapping the grouping is taken verbatim
    (every terminal must be covered).  Otherwise terminals are sorted by
    descending training frequency and cut into `num_classes` contiguous
    bins of near-equal total frequency (default ceil(sqrt(|terminals|))).
    """
    terms = vocab.terminals
    if external is not None:
        missing = [t for t in terms if t not in external]
        if missing:
            raise ValueError(f"cluster file does not cover terminal {missing[0]!r}")
        labels = sorted({external[t] for t in terms})
        dense = {lab: i for i, lab in enumerate(labels)}
        class_of = tuple(dense[external[t]] for t in terms)
        members = [[] for _ in labels]
        for i, c in enumerate(class_of):
            members[c].append(i)
        return WordClasses(class_of, tuple(tuple(m) for m in members), len(labels))

    k = num_classes if num_classes else default_num_classes(len(terms))
    k = min(k, len(terms))
    order = sorted(range(len(terms)), key=lambda i: (-vocab.counts.get(terms[i], 0), terms[i]))
    total = sum(vocab.counts.get(t, 0) for t in terms) or len(terms)
    class_of = [0] * len(terms)
    members = [[] for _ in range(k)]
    cum = 0.0
    cls = 0
    for rank, idx in enumerate(order):
        remaining_terms = len(order) - rank
        remaining_bins = k - cls
        members[cls].append(idx)
        class_of[idx] = cls
        cum += vocab.counts.get(terms[idx], 0) or 1
        boundary = total * (cls + 1) / k
        if cls < k - 1 and (cum >= boundary or remaining_terms - 1 <= remaining_bins - 1):
            cls += 1
    return WordClasses(tuple(class_of), tuple(tuple(m) for m in members), k)


# ---------------------------------------------------------------------------
# Corpus statistics

def corpus_stats(corpus) -> dict:
    """Sequence/token/type counts over the trees as given.

    `unk_types` counts the terminal types in the reserved UNK namespace
    (the literal token "UNK" or any "UNK-..." signature), so it reflects
    unkification when the corpus has been preprocessed and is 0 otherwise.
    """
    sequences = 0
    tokens = 0
    types = set()
    for sent in _iter_yields(corpus):
        sequences += 1
        tokens += len(sent)
        types.update(sent)
    unk_types = sum(1 for t in types if t == UNK or t.startswith(UNK + "-"))
    return {"sequences": sequences, "tokens": tokens, "types": len(types),
            "unk_types": unk_types}


def format_stats_table(stats_by_name: dict) -> str:
    """Aligned plain-text table, one corpus per column."""
    rows = ["sequences", "tokens", "types", "unk_types"]
    names = list(stats_by_name)
    width0 = max(len(r) for r in rows)
    widths = [max(len(n), *(len(f"{stats_by_name[n][r]:,}") for r in rows)) for n in names]
    lines = [" ".join([" " * width0] + [n.rjust(w) for n, w in zip(names, widths)])]
    for r in rows:
        cells = [f"{stats_by_name[n][r]:,}".rjust(w) for n, w in zip(names, widths)]
        lines.append(" ".join([r.ljust(width0)] + cells))
    return "\n".join(lines) + "\n"
