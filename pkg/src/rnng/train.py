"""Maximum-likelihood training with validation-based model selection.

All three trainers run plain per-sentence SGD, shuffle the corpus each
epoch with a seeded RNG, evaluate on the dev set (dropout off) every
`eval_every` sentences and at the end of each epoch, and keep the best-dev
parameter snapshot.  The training log is line-oriented:

    epoch<SP>sentence<SP>loss           one record per training sentence
    epoch<SP>sentence<SP>loss<SP>dev_loss   when a dev evaluation ran here

Comment lines start with '#'.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import transitions as tr
from .nn import sgd_step
from .trees import leaves


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 10
    eval_every: int = 0          # sentences between dev evaluations; 0 = per epoch
    seed: int = 1
    patience: int = 0            # dev evaluations without improvement; 0 = off
    lr_decay: bool = False       # lr / (1 + epoch) when on
    max_norm: float | None = None

    def __post_init__(self):
        # lr == 0 is allowed (useful as a no-op training check).
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainResult:
    model: object
    best_dev_loss: float
    dev_losses: list
    skipped: int


def _log(stream, line):
    if stream is not None:
        stream.write(line + "\n")


def _train(model, examples, dev, config: TrainConfig, loss_fn, log=None) -> TrainResult:
    """Shared loop.  `loss_fn(model, example, training, rng) -> scalar Value
    of the negative log-likelihood`."""
    if not dev:
        raise ValueError("a non-empty dev set is required for model selection")
    if not examples:
        raise ValueError("the training set is empty")
    root = np.random.SeedSequence(config.seed)
    shuffle_rng = np.random.default_rng(root.spawn(1)[0])
    dropout_rng = np.random.default_rng(root.spawn(1)[0])

    def dev_loss():
        with ad.no_grad():
            total = 0.0
            for ex in dev:
                total += float(loss_fn(model, ex, False, None).data)
        return total / len(dev)

    best = float("inf")
    best_snap = model.store.snapshot()
    dev_losses = []
    evals_since_best = 0
    skipped = 0
    stop = False
    seen = 0

    def evaluate(epoch, seen, train_loss):
        nonlocal best, best_snap, evals_since_best, stop
        d = dev_loss()
        dev_losses.append(d)
        _log(log, f"{epoch} {seen} {train_loss:.6f} {d:.6f}")
        if d < best:
            best = d
            best_snap = model.store.snapshot()
            evals_since_best = 0
        else:
            evals_since_best += 1
            if config.patience and evals_since_best >= config.patience:
                stop = True

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(examples))
        lr = config.learning_rate / (1 + epoch) if config.lr_decay else config.learning_rate
        last_loss = float("nan")
        for j in order:
            ex = examples[j]
            try:
                loss = loss_fn(model, ex, True, dropout_rng)
            except tr.TransitionError as e:
                skipped += 1
                _log(log, f"# skipped example {j}: {e}")
                continue
            loss = ad.neg(loss)
            ad.backward(loss)
            sgd_step(model.store, lr, config.max_norm)
            seen += 1
            last_loss = float(loss.data)
            if config.eval_every and seen % config.eval_every == 0:
                evaluate(epoch, seen, last_loss)
                if stop:
                    break
            else:
                _log(log, f"{epoch} {seen} {last_loss:.6f}")
        if stop:
            break
        evaluate(epoch, seen, last_loss)
        if stop:
            break
    if skipped:
        _log(log, f"# skipped {skipped} examples that violate the open-nonterminal cap")
    model.store.restore(best_snap)
    _log(log, f"# best dev loss {best:.6f}")
    return TrainResult(model, best, dev_losses, skipped)


def _tree_loss(m, tree, training, rng):
    return m.sequence_log_prob(leaves(tree), tree, training, rng)


def train_generative(corpus, dev, config: TrainConfig, model, log=None) -> TrainResult:
    """SGD on -log p(x, y) over (sentence, tree) pairs.

    `corpus` and `dev` are lists of trees; sentences are their yields.
    Trees deeper than the model's open-nonterminal cap are skipped and
    counted in the log.
    """
    return _train(model, corpus, dev, config, _tree_loss, log)


def train_discriminative(corpus, dev, config: TrainConfig, model, log=None) -> TrainResult:
    """SGD on -log q(y | x) over (sentence, tree) pairs."""
    return _train(model, corpus, dev, config, _tree_loss, log)


def train_lstm_lm(sentences, dev, config: TrainConfig, model, log=None) -> TrainResult:
    """SGD on -log p(x . stop) over token sequences."""
    def loss_fn(m, sent, training, rng):
        return m.sentence_log_prob(sent, training, rng)

    return _train(model, sentences, dev, config, loss_fn, log)
