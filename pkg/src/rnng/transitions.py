"""Top-down transition system shared by the parser and the generator.

A configuration holds a stack of open nonterminals, terminals and completed
constituents, plus either an input buffer (parse mode) or the terminals
generated so far (generate mode), and the count of open nonterminals.
States are immutable; `apply` returns a new state.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .trees import Internal, Leaf, count_internal, leaves

PARSE = "parse"
GENERATE = "generate"

NT = "NT"
SHIFT = "SHIFT"
GEN = "GEN"
REDUCE = "REDUCE"

DEFAULT_MAX_OPEN_NTS = 100


class TransitionError(ValueError):
    """Illegal action or ill-formed action sequence."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class Action:
    tag: str
    nt_label: str | None = None
    word: str | None = None

    def __str__(self):
        if self.tag == NT:
            return f"NT({self.nt_label})"
        if self.tag == GEN and self.word is not None:
            return f"GEN({self.word})"
        return self.tag


SHIFT_ACTION = Action(SHIFT)
REDUCE_ACTION = Action(REDUCE)
# Word-independent marker for the generate decision; apply() needs a
# concrete GEN(x), but legality is the same for every x.
GEN_ACTION = Action(GEN)


def nt(label: str) -> Action:
    return Action(NT, nt_label=label)


def gen(word: str) -> Action:
    return Action(GEN, word=word)


_ACTION_PAT = re.compile(r"^(NT|GEN)\((.+)\)$|^(SHIFT|REDUCE)$")


def parse_action(text: str) -> Action:
    m = _ACTION_PAT.match(text.strip())
    if not m:
        raise TransitionError(f"cannot parse action {text!r}")
    if m.group(3):
        return SHIFT_ACTION if m.group(3) == SHIFT else REDUCE_ACTION
    return nt(m.group(2)) if m.group(1) == NT else gen(m.group(2))


OPEN = "open"
TERM = "term"
TREE = "tree"


@dataclass(frozen=True)
class StackItem:
    kind: str
    label: str | None = None
    token: str | None = None
    tree: object = None

    @property
    def is_open(self):
        return self.kind == OPEN

    def as_tree(self):
        if self.kind == TERM:
            return Leaf(self.token)
        if self.kind == TREE:
            return self.tree
        raise ValueError("an open nonterminal is not a tree")


def open_item(label):
    return StackItem(OPEN, label=label)


def term_item(token):
    return StackItem(TERM, token=token)


def tree_item(tree):
    return StackItem(TREE, tree=tree)


@dataclass(frozen=True)
class AlgoState:
    mode: str
    stack: tuple
    buffer: tuple
    terms: tuple
    open_nts: int
    max_open_nts: int = DEFAULT_MAX_OPEN_NTS


def initial_state(mode, sentence=None, max_open_nts=DEFAULT_MAX_OPEN_NTS) -> AlgoState:
    if mode not in (PARSE, GENERATE):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == PARSE:
        if not sentence:
            raise TransitionError("parse mode requires a non-empty sentence")
        buffer = tuple(sentence)
    else:
        buffer = ()
    return AlgoState(mode, (), buffer, (), 0, max_open_nts)


def is_terminal(state: AlgoState) -> bool:
    done = len(state.stack) == 1 and state.stack[0].kind == TREE
    if state.mode == PARSE:
        return done and not state.buffer
    return done


def action_flags(state: AlgoState) -> dict:
    """Legality of each action class in `state` (tag -> bool)."""
    n = state.open_nts
    top_not_open = bool(state.stack) and not state.stack[-1].is_open
    if state.mode == PARSE:
        has_buf = bool(state.buffer)
        return {
            NT: has_buf and n < state.max_open_nts,
            SHIFT: has_buf and n >= 1,
            REDUCE: top_not_open and n >= 1 and (n >= 2 or not has_buf),
        }
    return {
        NT: n < state.max_open_nts,
        GEN: n >= 1,
        REDUCE: top_not_open and n >= 1,
    }


def valid_actions(state: AlgoState, nt_inventory) -> set:
    """The set of legal actions in `state`; error on a terminal state.

    In generate mode the word-level choice is not enumerated here: GEN
    appears as the bare GEN_ACTION marker whenever generating a terminal is
    legal, since legality does not depend on which word is generated.
    """
    if is_terminal(state):
        raise TransitionError("no actions are defined in a terminal state")
    flags = action_flags(state)
    out = set()
    if flags[NT]:
        out.update(nt(x) for x in nt_inventory)
    if state.mode == PARSE and flags[SHIFT]:
        out.add(SHIFT_ACTION)
    if state.mode == GENERATE and flags[GEN]:
        out.add(GEN_ACTION)
    if flags[REDUCE]:
        out.add(REDUCE_ACTION)
    return out


def reduce_width(state: AlgoState) -> int:
    """Number of items the next REDUCE would wrap (excluding the open NT)."""
    k = 0
    for item in reversed(state.stack):
        if item.is_open:
            return k
        k += 1
    raise TransitionError("REDUCE with no open nonterminal on the stack")


def apply(state: AlgoState, action: Action) -> AlgoState:
    """Apply `action`, raising TransitionError naming any violated constraint."""
    flags = action_flags(state)
    if action.tag == NT:
        if state.mode == PARSE and not state.buffer:
            raise TransitionError("NT requires a non-empty buffer")
        if state.open_nts >= state.max_open_nts:
            raise TransitionError(
                f"NT would exceed the open-nonterminal cap ({state.max_open_nts})")
        return replace(state, stack=state.stack + (open_item(action.nt_label),),
                       open_nts=state.open_nts + 1)
    if action.tag == SHIFT:
        if state.mode != PARSE:
            raise TransitionError("SHIFT is a parse-mode action")
        if not state.buffer:
            raise TransitionError("SHIFT requires a non-empty buffer")
        if state.open_nts < 1:
            raise TransitionError("SHIFT requires at least one open nonterminal")
        return replace(state, stack=state.stack + (term_item(state.buffer[0]),),
                       buffer=state.buffer[1:])
    if action.tag == GEN:
        if state.mode != GENERATE:
            raise TransitionError("GEN is a generate-mode action")
        if state.open_nts < 1:
            raise TransitionError("GEN requires at least one open nonterminal")
        return replace(state, stack=state.stack + (term_item(action.word),),
                       terms=state.terms + (action.word,))
    if action.tag == REDUCE:
        if not flags[REDUCE]:
            if state.stack and state.stack[-1].is_open:
                raise TransitionError("REDUCE with an open nonterminal on top of the stack")
            if state.open_nts < 1:
                raise TransitionError("REDUCE with no open nonterminal on the stack")
            raise TransitionError(
                "REDUCE requires >= 2 open nonterminals or an empty buffer")
        k = reduce_width(state)
        children = tuple(item.as_tree() for item in state.stack[-k:])
        label = state.stack[-k - 1].label
        completed = tree_item(Internal(label, children))
        return replace(state, stack=state.stack[:-k - 1] + (completed,),
                       open_nts=state.open_nts - 1)
    raise TransitionError(f"unknown action tag {action.tag!r}")


# ---------------------------------------------------------------------------
# Oracles and replay

def oracle(tree, mode, max_open_nts=DEFAULT_MAX_OPEN_NTS) -> list[Action]:
    """The unique depth-first, left-to-right transition sequence of `tree`."""
    if isinstance(tree, Leaf):
        raise TransitionError("the tree must have an internal root")
    if mode not in (PARSE, GENERATE):
        raise ValueError(f"unknown mode {mode!r}")
    actions = []

    def walk(node, depth):
        if isinstance(node, Leaf):
            actions.append(SHIFT_ACTION if mode == PARSE else gen(node.token))
            return
        if depth + 1 > max_open_nts:
            raise TransitionError(
                f"tree nesting depth exceeds the open-nonterminal cap ({max_open_nts})")
        actions.append(nt(node.label))
        for child in node.children:
            walk(child, depth + 1)
        actions.append(REDUCE_ACTION)

    walk(tree, 0)
    return actions


def execute(actions, mode, sentence=None, max_open_nts=DEFAULT_MAX_OPEN_NTS):
    """Replay `actions` and return the single completed constituent."""
    state = initial_state(mode, sentence, max_open_nts)
    for i, action in enumerate(actions):
        if is_terminal(state):
            raise TransitionError("action after the terminal state", step=i)
        try:
            state = apply(state, action)
        except TransitionError as e:
            raise TransitionError(str(e), step=i) from None
    if not is_terminal(state):
        raise TransitionError(
            f"sequence ended in a non-terminal state "
            f"(stack size {len(state.stack)}, open NTs {state.open_nts}, "
            f"buffer remaining {len(state.buffer)})")
    return state.stack[0].tree


def oracle_length(tree) -> int:
    """2 * internal nodes + leaves; the length of both oracle sequences."""
    return 2 * count_internal(tree) + len(leaves(tree))


# ---------------------------------------------------------------------------
# Oracle file format: one derivation per block, blank-line separated.
# Line 1 is the raw sentence, line 2 the unkified sentence, then one action
# per line.  This layout is golden-file tested and must stay byte-stable.

def format_oracle_block(raw_words, unk_words, actions) -> str:
    lines = [" ".join(raw_words), " ".join(unk_words)]
    lines.extend(str(a) for a in actions)
    return "\n".join(lines) + "\n\n"


def write_oracle_file(path, entries) -> None:
    """`entries` yields (raw_words, unk_words, actions) triples."""
    with open(path, "w", encoding="utf-8") as f:
        for raw_words, unk_words, actions in entries:
            f.write(format_oracle_block(raw_words, unk_words, actions))


def read_oracle_file(path) -> list[tuple]:
    """Inverse of write_oracle_file."""
    entries = []
    with open(path, encoding="utf-8") as f:
        block = []
        for line in f:
            line = line.rstrip("\n")
            if line:
                block.append(line)
                continue
            if block:
                entries.append(_parse_block(block))
                block = []
        if block:
            entries.append(_parse_block(block))
    return entries


def _parse_block(block):
    if len(block) < 3:
        raise TransitionError("oracle block needs a sentence pair and at least one action")
    raw = block[0].split()
    unk = block[1].split()
    actions = [parse_action(line) for line in block[2:]]
    return raw, unk, actions
