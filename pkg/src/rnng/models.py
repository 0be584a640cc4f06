"""Model parameterizations over the transition system.

Three models share the neural core:

  * GenerativeModel: joint distribution over (sentence, tree) via generator
    transitions.  GEN is a single action symbol; the word choice is priced
    by a separate class-factored softmax.
  * DiscriminativeModel: conditional distribution over parser transitions
    given the sentence; the terminal history is replaced by an encoding of
    the remaining input buffer (an LSTM run right-to-left over the sentence
    once, before parsing starts).
  * LstmLmModel: sequential LSTM language model baseline with the same
    class-factored output layer and an end-of-sentence symbol.

Action inventory order is fixed and shared by scoring, sampling, and
greedy tie-breaking: [SHIFT or GEN, REDUCE, NT(label) in vocabulary order].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import transitions as tr
from .autodiff import Value
from .nn import Composer, ParamStore, StackEncoder, dropout
from .trees import (Vocab, WordClasses, assign_word_classes, default_num_classes,
                    leaves)

LM_STOP = "</s>"


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters, serializable as `key = value` text."""

    dim: int = 128
    layers: int = 2
    dropout: float = 0.2
    cap: int = 100
    classes: int = 0             # 0 -> ceil(sqrt(|terminals|))
    composition: str = "correct"
    seed: int = 1
    precision: str = "f32"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.composition not in Composer.VARIANTS:
            raise ValueError(f"composition must be one of {Composer.VARIANTS}")

    @classmethod
    def generative_defaults(cls, **kw):
        return cls(**{"dim": 256, "dropout": 0.3, **kw})

    @classmethod
    def discriminative_defaults(cls, **kw):
        return cls(**{"dim": 128, "dropout": 0.2, **kw})

    @classmethod
    def lm_defaults(cls, **kw):
        return cls(**{"dim": 256, "dropout": 0.3, **kw})

    def to_text(self) -> str:
        lines = [f"{k} = {getattr(self, k)}" for k in
                 ("dim", "layers", "dropout", "cap", "classes",
                  "composition", "seed", "precision")]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kw = {}
        casts = {"dim": int, "layers": int, "dropout": float, "cap": int,
                 "classes": int, "composition": str, "seed": int, "precision": str}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in casts:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kw[key] = casts[key](val)
        return cls(**kw)

    def to_json(self):
        return {k: getattr(self, k) for k in
                ("dim", "layers", "dropout", "cap", "classes",
                 "composition", "seed", "precision")}

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


def action_inventory(vocab: Vocab, mode: str) -> list[tr.Action]:
    first = tr.GEN_ACTION if mode == tr.GENERATE else tr.SHIFT_ACTION
    return [first, tr.REDUCE_ACTION] + [tr.nt(x) for x in vocab.nonterminals]


@dataclass(frozen=True)
class DerivState:
    """One step of a derivation: symbolic state plus encoder states."""

    algo: tr.AlgoState
    stack: object                 # StackRnn over stack items
    hist: object                  # StackRnn over action symbols
    outbuf: object = None         # generative: StackRnn over generated words
    buffer_encs: tuple = None     # discriminative: encodings of x[p:] by p
    sentence: tuple = None        # discriminative: full input
    steps: int = 0


class _TransitionModel:
    """Parameters and state transitions shared by both transition models."""

    mode: str

    def __init__(self, vocab: Vocab, config: ModelConfig):
        self.vocab = vocab
        self.config = config
        d = config.dim
        self.store = ParamStore(seed=config.seed, precision=config.precision)
        self.inventory = action_inventory(vocab, self.mode)
        self.action_index = {a: i for i, a in enumerate(self.inventory)}
        s = self.store
        self.emb_term = s.add("emb/term", (len(vocab.terminals), d))
        self.emb_nt = s.add("emb/nt", (len(vocab.nonterminals), d))
        self.emb_action = s.add("emb/action", (len(self.inventory), d))
        self.stack_enc = StackEncoder(s, "stack", d, d, config.layers)
        self.hist_enc = StackEncoder(s, "history", d, d, config.layers)
        self.composer = Composer(s, "compose", d)
        self.comb_w = s.add("combine/w", (d, 3 * d))
        self.comb_b = s.add("combine/b", (d,), init="zeros")
        self.act_w = s.add("act_out/w", (len(self.inventory), d))
        self.act_b = s.add("act_out/b", (len(self.inventory),), init="zeros")

    # -- state plumbing ----------------------------------------------------

    def _check(self, ds: DerivState) -> None:
        if ds.hist.depth != ds.steps:
            raise ValueError(
                f"history length {ds.hist.depth} inconsistent with step count {ds.steps}")

    def valid_mask(self, ds: DerivState) -> np.ndarray:
        if tr.is_terminal(ds.algo):
            raise tr.TransitionError("no actions are defined in a terminal state")
        flags = tr.action_flags(ds.algo)
        mask = np.zeros(len(self.inventory), dtype=bool)
        mask[0] = flags[tr.GEN if self.mode == tr.GENERATE else tr.SHIFT]
        mask[1] = flags[tr.REDUCE]
        mask[2:] = flags[tr.NT]
        return mask

    def _term_vec(self, word: str) -> Value:
        try:
            idx = self.vocab.term_index[word]
        except KeyError:
            raise ValueError(
                f"word {word!r} is not in the vocabulary; unkify the input first"
            ) from None
        return ad.row(self.emb_term, idx)

    def advance(self, ds: DerivState, action: tr.Action,
                training=False, rng=None) -> DerivState:
        """Apply `action` to both the symbolic state and the encoders."""
        self._check(ds)
        algo = tr.apply(ds.algo, action)  # validates legality
        stack = ds.stack
        outbuf = ds.outbuf
        if action.tag == tr.NT:
            stack = stack.push(ad.row(self.emb_nt, self.vocab.nt_index[action.nt_label]))
        elif action.tag == tr.SHIFT:
            stack = stack.push(self._term_vec(ds.algo.buffer[0]))
        elif action.tag == tr.GEN:
            vec = self._term_vec(action.word)
            stack = stack.push(vec)
            outbuf = outbuf.push(vec)
        else:  # REDUCE
            k = tr.reduce_width(ds.algo)
            child_vecs = []
            for _ in range(k):
                stack, vec = stack.pop()
                child_vecs.append(vec)
            child_vecs.reverse()
            stack, label_vec = stack.pop()
            composed = self.composer.compose(
                label_vec, child_vecs, self.config.composition,
                training, self.config.dropout, rng)
            stack = stack.push(composed)
        key = tr.GEN_ACTION if action.tag == tr.GEN else action
        hist = ds.hist.push(ad.row(self.emb_action, self.action_index[key]))
        return replace(ds, algo=algo, stack=stack, hist=hist, outbuf=outbuf,
                       steps=ds.steps + 1)

    # -- scoring -----------------------------------------------------------

    def _context_vec(self, ds: DerivState) -> Value:
        raise NotImplementedError

    def state_embedding(self, ds: DerivState, training=False, rng=None) -> Value:
        """u_t = tanh(W [context; stack; history] + c), with dropout when
        training (the same dropped u_t feeds action and word scoring)."""
        self._check(ds)
        u = ad.tanh(ad.affine(
            self.comb_w,
            ad.concat([self._context_vec(ds), ds.stack.embedding(),
                       ds.hist.embedding()]),
            self.comb_b))
        return dropout(u, self.config.dropout, training, rng)

    def action_log_probs(self, u: Value, ds: DerivState):
        """(log-probability vector over the inventory, validity mask)."""
        mask = self.valid_mask(ds)
        scores = ad.affine(self.act_w, u, self.act_b)
        return ad.log_softmax(scores, mask), mask

    def action_log_prob(self, u: Value, ds: DerivState) -> dict:
        """Mapping of each valid action (GEN as the bare marker) to its
        log-probability."""
        logp, mask = self.action_log_probs(u, ds)
        return {a: float(logp.data[i])
                for i, a in enumerate(self.inventory) if mask[i]}

    # -- persistence ---------------------------------------------------------

    kind = None

    def _meta(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_json(),
                "vocab": self.vocab.to_json()}

    def save(self, path) -> None:
        self.store.save(path, self._meta())


class GenerativeModel(_TransitionModel):
    """Joint model p(sentence, tree) over generator transitions."""

    mode = tr.GENERATE
    kind = "generative"

    def __init__(self, vocab: Vocab, classes: WordClasses | None = None,
                 config: ModelConfig | None = None):
        config = config if config is not None else ModelConfig.generative_defaults()
        super().__init__(vocab, config)
        if classes is None:
            k = config.classes or default_num_classes(len(vocab.terminals))
            classes = assign_word_classes(vocab, num_classes=k)
        self.classes = classes
        d = config.dim
        self.outbuf_enc = StackEncoder(self.store, "terms", d, d, config.layers)
        self.cls_w = self.store.add("cls/w", (classes.num_classes, d))
        self.cls_b = self.store.add("cls/b", (classes.num_classes,), init="zeros")
        self.word_w = self.store.add("word/w", (len(vocab.terminals), d))
        self.word_b = self.store.add("word/b", (len(vocab.terminals),), init="zeros")
        self._members = [np.asarray(m, dtype=np.int64) for m in classes.members]
        self._pos_in_class = np.zeros(len(vocab.terminals), dtype=np.int64)
        for m in self._members:
            self._pos_in_class[m] = np.arange(len(m))

    def initial_state(self, training=False, rng=None) -> DerivState:
        dr = self.config.dropout
        return DerivState(
            algo=tr.initial_state(tr.GENERATE, max_open_nts=self.config.cap),
            stack=self.stack_enc.empty(training, dr, rng),
            hist=self.hist_enc.empty(training, dr, rng),
            outbuf=self.outbuf_enc.empty(training, dr, rng))

    def _check(self, ds):
        super()._check(ds)
        if ds.outbuf.depth != len(ds.algo.terms):
            raise ValueError(
                f"terminal history length {ds.outbuf.depth} inconsistent with "
                f"{len(ds.algo.terms)} generated terminals")

    def _context_vec(self, ds):
        return ds.outbuf.embedding()

    def class_log_probs(self, u: Value) -> Value:
        return ad.log_softmax(ad.affine(self.cls_w, u, self.cls_b))

    def within_class_log_probs(self, u: Value, cls: int) -> Value:
        return ad.log_softmax(ad.rows_affine(self.word_w, self.word_b,
                                             self._members[cls], u))

    def word_log_prob(self, u: Value, word: str) -> Value:
        """log p(word | u) = log p(class | u) + log p(word | class, u)."""
        try:
            idx = self.vocab.term_index[word]
        except KeyError:
            raise ValueError(
                f"word {word!r} is not in the vocabulary; unkify the input first"
            ) from None
        cls = self.classes.class_of[idx]
        total = ad.pick(self.class_log_probs(u), cls)
        within = ad.pick(self.within_class_log_probs(u, cls),
                         int(self._pos_in_class[idx]))
        return ad.add(total, within)

    def sequence_log_prob(self, x, y, training=False, rng=None) -> Value:
        """log p(x, y): the sum of action log-probabilities along the unique
        generator derivation of y, plus a word log-probability per GEN."""
        if list(leaves(y)) != list(x):
            raise ValueError("the tree's terminals do not match the sentence")
        actions = tr.oracle(y, tr.GENERATE, self.config.cap)
        ds = self.initial_state(training, rng)
        parts = []
        for action in actions:
            u = self.state_embedding(ds, training, rng)
            logp, _ = self.action_log_probs(u, ds)
            key = tr.GEN_ACTION if action.tag == tr.GEN else action
            parts.append(ad.pick(logp, self.action_index[key]))
            if action.tag == tr.GEN:
                parts.append(self.word_log_prob(u, action.word))
            ds = self.advance(ds, action, training, rng)
        return ad.vsum(parts)

    def _meta(self):
        meta = super()._meta()
        meta["classes"] = self.classes.to_json()
        return meta


class DiscriminativeModel(_TransitionModel):
    """Conditional model q(tree | sentence) over parser transitions."""

    mode = tr.PARSE
    kind = "discriminative"

    def __init__(self, vocab: Vocab, config: ModelConfig | None = None):
        config = config if config is not None else ModelConfig.discriminative_defaults()
        super().__init__(vocab, config)
        d = config.dim
        self.buffer_enc = StackEncoder(self.store, "buffer", d, d, config.layers)

    def initial_state(self, sentence, training=False, rng=None) -> DerivState:
        """Precomputes the right-to-left buffer encodings for `sentence`:
        buffer_encs[p] encodes the remaining input x[p:]."""
        sentence = tuple(sentence)
        dr = self.config.dropout
        enc = self.buffer_enc.empty(training, dr, rng)
        encs = [enc.embedding()]
        for word in reversed(sentence):
            enc = enc.push(self._term_vec(word))
            encs.append(enc.embedding())
        encs.reverse()  # encs[p] now corresponds to x[p:]
        return DerivState(
            algo=tr.initial_state(tr.PARSE, sentence, self.config.cap),
            stack=self.stack_enc.empty(training, dr, rng),
            hist=self.hist_enc.empty(training, dr, rng),
            buffer_encs=tuple(encs),
            sentence=sentence)

    def _check(self, ds):
        super()._check(ds)
        if len(ds.buffer_encs) != len(ds.sentence) + 1:
            raise ValueError("buffer encodings inconsistent with the sentence")

    def _context_vec(self, ds):
        consumed = len(ds.sentence) - len(ds.algo.buffer)
        return ds.buffer_encs[consumed]

    def sequence_log_prob(self, x, y, training=False, rng=None) -> Value:
        """log q(y | x): the sum of action log-probabilities along the
        unique parser derivation of y."""
        if list(leaves(y)) != list(x):
            raise ValueError("the tree's terminals do not match the sentence")
        actions = tr.oracle(y, tr.PARSE, self.config.cap)
        ds = self.initial_state(x, training, rng)
        parts = []
        for action in actions:
            u = self.state_embedding(ds, training, rng)
            logp, _ = self.action_log_probs(u, ds)
            parts.append(ad.pick(logp, self.action_index[action]))
            ds = self.advance(ds, action, training, rng)
        return ad.vsum(parts)


class LstmLmModel:
    """Sequential LSTM language model with a class-factored softmax.

    The end-of-sentence symbol is an extra terminal in its own word class;
    per-word probabilities marginalize to 1 over vocabulary + stop.
    """

    kind = "lstm_lm"

    def __init__(self, vocab: Vocab, classes: WordClasses | None = None,
                 config: ModelConfig | None = None):
        if LM_STOP in vocab.term_index:
            raise ValueError(f"the stop symbol {LM_STOP!r} collides with the vocabulary")
        self.vocab = vocab
        self.config = config if config is not None else ModelConfig.lm_defaults()
        config = self.config
        if classes is None:
            k = config.classes or default_num_classes(len(vocab.terminals))
            classes = assign_word_classes(vocab, num_classes=k)
        # Extend the partition with the stop symbol as its own class.
        self.stop_index = len(vocab.terminals)
        self.classes = WordClasses(
            class_of=tuple(classes.class_of) + (classes.num_classes,),
            members=tuple(classes.members) + ((self.stop_index,),),
            num_classes=classes.num_classes + 1)
        d = config.dim
        n_sym = len(vocab.terminals) + 1
        self.store = ParamStore(seed=config.seed, precision=config.precision)
        self.emb = self.store.add("emb/term", (n_sym, d))
        self.encoder = StackEncoder(self.store, "lm", d, d, config.layers)
        self.cls_w = self.store.add("cls/w", (self.classes.num_classes, d))
        self.cls_b = self.store.add("cls/b", (self.classes.num_classes,), init="zeros")
        self.word_w = self.store.add("word/w", (n_sym, d))
        self.word_b = self.store.add("word/b", (n_sym,), init="zeros")
        self._members = [np.asarray(m, dtype=np.int64) for m in self.classes.members]
        self._pos_in_class = np.zeros(n_sym, dtype=np.int64)
        for m in self._members:
            self._pos_in_class[m] = np.arange(len(m))

    def _index(self, word: str) -> int:
        if word == LM_STOP:
            return self.stop_index
        try:
            return self.vocab.term_index[word]
        except KeyError:
            raise ValueError(
                f"word {word!r} is not in the vocabulary; unkify the input first"
            ) from None

    def start(self, training=False, rng=None):
        return self.encoder.empty(training, self.config.dropout, rng)

    def advance(self, enc, word: str):
        return enc.push(ad.row(self.emb, self._index(word)))

    def class_log_probs(self, u: Value) -> Value:
        return ad.log_softmax(ad.affine(self.cls_w, u, self.cls_b))

    def within_class_log_probs(self, u: Value, cls: int) -> Value:
        return ad.log_softmax(ad.rows_affine(self.word_w, self.word_b,
                                             self._members[cls], u))

    def word_log_prob(self, enc, word: str, training=False, rng=None) -> Value:
        """log p(word | prefix) for `word` in vocabulary or the stop symbol."""
        idx = self._index(word)
        u = dropout(enc.embedding(), self.config.dropout, training, rng)
        cls = self.classes.class_of[idx]
        total = ad.pick(self.class_log_probs(u), cls)
        within = ad.pick(self.within_class_log_probs(u, cls),
                         int(self._pos_in_class[idx]))
        return ad.add(total, within)

    def sentence_log_prob(self, x, training=False, rng=None) -> Value:
        """log p(x . stop) by the left-to-right chain rule."""
        enc = self.start(training, rng)
        parts = []
        for word in list(x) + [LM_STOP]:
            parts.append(self.word_log_prob(enc, word, training, rng))
            if word != LM_STOP:
                enc = self.advance(enc, word)
        return ad.vsum(parts)

    def save(self, path) -> None:
        self.store.save(path, {"kind": self.kind, "config": self.config.to_json(),
                               "vocab": self.vocab.to_json(),
                               "classes": self.classes.to_json()})


def load_model(path):
    """Load any saved model (dispatches on the checkpoint metadata)."""
    store, meta = ParamStore.load(path)
    kind = meta.get("kind")
    vocab = Vocab.from_json(meta["vocab"])
    config = ModelConfig.from_json(meta["config"])
    if kind == "generative":
        model = GenerativeModel(vocab, WordClasses.from_json(meta["classes"]), config)
    elif kind == "discriminative":
        model = DiscriminativeModel(vocab, config)
    elif kind == "lstm_lm":
        classes = WordClasses.from_json(meta["classes"])
        # stored classes include the stop class; strip it for the constructor
        vocab_classes = WordClasses(
            class_of=classes.class_of[:-1],
            members=classes.members[:-1],
            num_classes=classes.num_classes - 1)
        model = LstmLmModel(vocab, vocab_classes, config)
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    if set(model.store.names()) != set(store.names()):
        raise ValueError(f"{path}: checkpoint parameters do not match the model")
    model.store.restore(store.snapshot())
    return model
