"""Sequential-instruction world simulator for three domains.

World states are fixed-length lists of integer pairs; actions are 3-or-4
integer tuples (op, pos1, pos2[, prop]) with 1-based positions. The concrete
op/color code tables are frozen in data/scone_tables.json. ``execute`` is a
pure function; invalid actions raise SconeRejection and never mutate state.

The machine-comprehension reduction renders the encoded previous world state
as the context, templated instructions as questions, and action tuples as
pointer + class targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .model import DialogueBatch
from .tensor import Rng, UsageError

with resources.files(__package__).joinpath("data/scone_tables.json").open() as _f:
    TABLES = json.load(_f)

DOMAINS = ("scene", "tangrams", "alchemy")
EMPTY = (0, 0)
ALCHEMY_CAPACITY = TABLES["alchemy"]["capacity"]
MIXED_COLOR = TABLES["alchemy"]["mixed_color"]
_COLOR_NAMES = {int(k): v for k, v in TABLES["scene"]["colors"].items()}


class SconeRejection(Exception):
    """An action invalid in the given state; carries a short reason code."""

    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


class DecodeError(ValueError):
    """Malformed encoded state or action."""


@dataclass(frozen=True)
class WorldState:
    domain: str
    positions: tuple  # tuple of (int, int) pairs

    def validate(self):
        n = TABLES[self.domain]["positions"]
        if len(self.positions) != n:
            raise DecodeError(f"{self.domain} state needs {n} positions, got {len(self.positions)}")
        for i, (a, b) in enumerate(self.positions):
            if self.domain == "alchemy" and not (0 <= b <= ALCHEMY_CAPACITY):
                raise DecodeError(f"beaker {i + 1} units {b} out of range")
            if self.domain == "tangrams" and (a == 0) != (b == 0):
                raise DecodeError(f"slot {i + 1} image/present flags inconsistent")
        return self


@dataclass(frozen=True)
class ActionCode:
    op: int
    pos1: int
    pos2: int
    prop: int = None  # present iff the op's arity is 4

    def encode(self):
        base = (self.op, self.pos1, self.pos2)
        return base + (self.prop,) if self.prop is not None else base


def op_table(domain):
    return {int(k): v for k, v in TABLES[domain]["actions"].items()}


# ---------------------------------------------------------------------------
# encoding


def encode_state(state: WorldState):
    """Flat integer-pair sequence; lossless."""
    return [list(p) for p in state.positions]


def decode_state(domain, pairs) -> WorldState:
    out = []
    for i, p in enumerate(pairs):
        if len(p) != 2:
            raise DecodeError(f"pair at offset {i} has length {len(p)}")
        out.append((int(p[0]), int(p[1])))
    return WorldState(domain, tuple(out)).validate()


def encode_action(action: ActionCode):
    return action.encode()


def decode_action(domain, ints) -> ActionCode:
    table = op_table(domain)
    if len(ints) not in (3, 4):
        raise DecodeError(f"action tuple must have 3 or 4 integers, got {len(ints)}")
    op = int(ints[0])
    if op not in table:
        raise DecodeError(f"unknown op code {op} for domain {domain}")
    arity = table[op]["arity"]
    if len(ints) != arity:
        raise DecodeError(f"op {op} ({table[op]['name']}) needs arity {arity}, got {len(ints)}")
    prop = int(ints[3]) if arity == 4 else None
    return ActionCode(op, int(ints[1]), int(ints[2]), prop)


# ---------------------------------------------------------------------------
# execution


def _check_pos(state, pos):
    if not (1 <= pos <= len(state.positions)):
        raise SconeRejection("pos_out_of_range")
    return state.positions[pos - 1]


def _with(state, updates):
    pos = list(state.positions)
    for p, pair in updates.items():
        pos[p - 1] = pair
    return WorldState(state.domain, tuple(pos))


def execute(state: WorldState, action: ActionCode) -> WorldState:
    """Apply one action; pure, total over valid pairs, rejects otherwise."""
    name = op_table(state.domain)[action.op]["name"] \
        if action.op in op_table(state.domain) else None
    if name is None:
        raise SconeRejection("unknown_op")
    fn = _EXECUTORS[(state.domain, name)]
    return fn(state, action)


def _scene_enter(state, a):
    pair = _check_pos(state, a.pos1)
    if pair != EMPTY:
        raise SconeRejection("position_occupied")
    if not (1 <= a.prop <= 6):
        raise SconeRejection("bad_color")
    return _with(state, {a.pos1: (a.prop, 0)})


def _scene_swap_hats(state, a):
    p1 = _check_pos(state, a.pos1)
    p2 = _check_pos(state, a.pos2)
    if a.pos1 == a.pos2:
        raise SconeRejection("same_position")
    if p1 == EMPTY or p2 == EMPTY:
        raise SconeRejection("position_empty")
    return _with(state, {a.pos1: (p1[0], p2[1]), a.pos2: (p2[0], p1[1])})


def _scene_leave(state, a):
    if _check_pos(state, a.pos1) == EMPTY:
        raise SconeRejection("position_empty")
    return _with(state, {a.pos1: EMPTY})


def _scene_move(state, a):
    src = _check_pos(state, a.pos1)
    dst = _check_pos(state, a.pos2)
    if src == EMPTY:
        raise SconeRejection("position_empty")
    if dst != EMPTY:
        raise SconeRejection("position_occupied")
    return _with(state, {a.pos1: EMPTY, a.pos2: src})


def _scene_put_hat(state, a):
    pair = _check_pos(state, a.pos1)
    if pair == EMPTY:
        raise SconeRejection("position_empty")
    if pair[1] != 0:
        raise SconeRejection("already_has_hat")
    if not (1 <= a.prop <= 6):
        raise SconeRejection("bad_color")
    return _with(state, {a.pos1: (pair[0], a.prop)})


def _scene_take_hat(state, a):
    pair = _check_pos(state, a.pos1)
    if pair == EMPTY or pair[1] == 0:
        raise SconeRejection("no_hat")
    return _with(state, {a.pos1: (pair[0], 0)})


def _tangrams_remove(state, a):
    if _check_pos(state, a.pos1) == EMPTY:
        raise SconeRejection("slot_empty")
    return _with(state, {a.pos1: EMPTY})


def _tangrams_insert(state, a):
    if _check_pos(state, a.pos1) != EMPTY:
        raise SconeRejection("slot_occupied")
    if a.prop not in TABLES["tangrams"]["image_ids"]:
        raise SconeRejection("bad_image")
    if any(p[0] == a.prop for p in state.positions):
        raise SconeRejection("image_already_present")
    return _with(state, {a.pos1: (a.prop, 1)})


def _tangrams_swap(state, a):
    p1 = _check_pos(state, a.pos1)
    p2 = _check_pos(state, a.pos2)
    if a.pos1 == a.pos2:
        raise SconeRejection("same_position")
    if p1 == EMPTY or p2 == EMPTY:
        raise SconeRejection("slot_empty")
    return _with(state, {a.pos1: (p2[0], 1), a.pos2: (p1[0], 1)})


def _alchemy_pour(state, a):
    src = _check_pos(state, a.pos1)
    dst = _check_pos(state, a.pos2)
    units = a.prop
    if a.pos1 == a.pos2:
        raise SconeRejection("same_position")
    if units is None or units < 1:
        raise SconeRejection("bad_units")
    if src[1] < units:
        raise SconeRejection("not_enough_liquid")
    if dst[1] + units > ALCHEMY_CAPACITY:
        raise SconeRejection("over_capacity")
    if dst[1] == 0:
        new_color = src[0]
    elif dst[0] == src[0]:
        new_color = src[0]
    else:
        new_color = MIXED_COLOR
    src_left = src[1] - units
    return _with(state, {
        a.pos1: (src[0] if src_left else 0, src_left),
        a.pos2: (new_color, dst[1] + units),
    })


def _alchemy_mix(state, a):
    pair = _check_pos(state, a.pos1)
    if pair[1] < 1:
        raise SconeRejection("beaker_empty")
    return _with(state, {a.pos1: (MIXED_COLOR, pair[1])})


def _alchemy_drain(state, a):
    pair = _check_pos(state, a.pos1)
    units = a.prop
    if units is None or units < 1:
        raise SconeRejection("bad_units")
    if pair[1] < units:
        raise SconeRejection("not_enough_liquid")
    left = pair[1] - units
    return _with(state, {a.pos1: (pair[0] if left else 0, left)})


_EXECUTORS = {
    ("scene", "enter"): _scene_enter,
    ("scene", "swap_hats"): _scene_swap_hats,
    ("scene", "leave"): _scene_leave,
    ("scene", "move"): _scene_move,
    ("scene", "put_hat"): _scene_put_hat,
    ("scene", "take_hat"): _scene_take_hat,
    ("tangrams", "remove"): _tangrams_remove,
    ("tangrams", "insert"): _tangrams_insert,
    ("tangrams", "swap"): _tangrams_swap,
    ("alchemy", "pour"): _alchemy_pour,
    ("alchemy", "mix"): _alchemy_mix,
    ("alchemy", "drain"): _alchemy_drain,
}


# ---------------------------------------------------------------------------
# episodes


@dataclass
class Episode:
    domain: str
    w0: WorldState
    actions: list  # K ActionCodes
    states: list  # K derived WorldStates
    instructions: list  # K token lists

    @property
    def k(self):
        return len(self.actions)

    def replay_consistent(self):
        s = self.w0
        for a, want in zip(self.actions, self.states):
            s = execute(s, a)
            if s != want:
                return False
        return True


def random_state(domain, rng: Rng) -> WorldState:
    n = TABLES[domain]["positions"]
    pairs = []
    if domain == "scene":
        for _ in range(n):
            if rng.randint(0, 2):
                pairs.append((rng.randint(1, 7), rng.randint(0, 7)))
            else:
                pairs.append(EMPTY)
        if all(p == EMPTY for p in pairs):
            pairs[rng.randint(0, n)] = (rng.randint(1, 7), 0)
    elif domain == "tangrams":
        images = [1, 2, 3, 4, 5]
        rng.shuffle(images)
        count = rng.randint(2, n + 1)
        for i in range(n):
            pairs.append((images[i], 1) if i < count else EMPTY)
    else:
        for _ in range(n):
            units = rng.randint(0, ALCHEMY_CAPACITY + 1)
            pairs.append((rng.randint(1, 7), units) if units else EMPTY)
        if all(p == EMPTY for p in pairs):
            pairs[rng.randint(0, n)] = (rng.randint(1, 7), rng.randint(1, 5))
    return WorldState(domain, tuple(pairs)).validate()


def _random_action(state, rng: Rng):
    """One feasible action in the given state, or None if the draw failed."""
    domain = state.domain
    ops = list(op_table(domain).items())
    op, meta = ops[rng.randint(0, len(ops))]
    n = len(state.positions)
    occupied = [i + 1 for i, p in enumerate(state.positions) if p != EMPTY]
    empty = [i + 1 for i, p in enumerate(state.positions) if p == EMPTY]
    name = meta["name"]
    try:
        if name == "enter" and empty:
            return ActionCode(op, rng.choice(empty), 0, rng.randint(1, 7))
        if name == "swap_hats" and len(occupied) >= 2:
            p1, p2 = _two_distinct(occupied, rng)
            return ActionCode(op, p1, p2)
        if name in ("leave", "take_hat") and occupied:
            pos = rng.choice(occupied)
            if name == "take_hat" and state.positions[pos - 1][1] == 0:
                return None
            return ActionCode(op, pos, 0)
        if name == "move" and occupied and empty:
            return ActionCode(op, rng.choice(occupied), rng.choice(empty))
        if name == "put_hat" and occupied:
            bare = [p for p in occupied if state.positions[p - 1][1] == 0]
            if bare:
                return ActionCode(op, rng.choice(bare), 0, rng.randint(1, 7))
        if name == "remove" and occupied:
            return ActionCode(op, rng.choice(occupied), 0)
        if name == "insert" and empty:
            present = {p[0] for p in state.positions if p != EMPTY}
            free = [i for i in TABLES["tangrams"]["image_ids"] if i not in present]
            if free:
                return ActionCode(op, rng.choice(empty), 0, rng.choice(free))
        if name == "swap" and len(occupied) >= 2:
            p1, p2 = _two_distinct(occupied, rng)
            return ActionCode(op, p1, p2)
        if name == "pour" and occupied:
            src = rng.choice(occupied)
            dsts = [i + 1 for i, p in enumerate(state.positions)
                    if i + 1 != src and p[1] < ALCHEMY_CAPACITY]
            if dsts:
                dst = rng.choice(dsts)
                room = ALCHEMY_CAPACITY - state.positions[dst - 1][1]
                units = rng.randint(1, min(state.positions[src - 1][1], room) + 1)
                return ActionCode(op, src, dst, units)
        if name == "mix" and occupied:
            return ActionCode(op, rng.choice(occupied), 0)
        if name == "drain" and occupied:
            pos = rng.choice(occupied)
            return ActionCode(op, pos, 0, rng.randint(1, state.positions[pos - 1][1] + 1))
    except SconeRejection:
        return None
    return None


def _two_distinct(items, rng):
    a = rng.choice(items)
    b = rng.choice([x for x in items if x != a])
    return a, b


def render_instruction(domain, state, action, rng: Rng):
    """Templated surrogate utterance; sometimes refers by attribute, not index."""
    name = op_table(domain)[action.op]["name"]
    color = _COLOR_NAMES.get
    if domain == "scene":
        pair = state.positions[action.pos1 - 1]
        by_attr = pair != EMPTY and rng.randint(0, 2) == 1
        who = (f"the person in the {color(pair[0])} shirt" if by_attr
               else f"the person at position {action.pos1}")
        texts = {
            "enter": f"a person in a {color(action.prop)} shirt enters at position {action.pos1}",
            "swap_hats": f"{who} swaps hats with the person at position {action.pos2}",
            "leave": f"{who} leaves",
            "move": f"{who} moves to position {action.pos2}",
            "put_hat": f"{who} puts on a {color(action.prop)} hat",
            "take_hat": f"{who} takes off their hat",
        }
    elif domain == "tangrams":
        texts = {
            "remove": f"remove the figure in slot {action.pos1}",
            "insert": f"insert figure {action.prop} into slot {action.pos1}",
            "swap": f"swap the figures in slots {action.pos1} and {action.pos2}",
        }
    else:
        pair = state.positions[action.pos1 - 1]
        by_attr = pair != EMPTY and rng.randint(0, 2) == 1
        src = (f"the {color(pair[0])} beaker" if by_attr
               else f"beaker {action.pos1}")
        texts = {
            "pour": f"pour {action.prop} units from {src} into beaker {action.pos2}",
            "mix": f"mix {src}",
            "drain": f"drain {action.prop} units from {src}",
        }
    return texts[name].split()


def generate_episode(domain, rng: Rng, k=5) -> Episode:
    """Random valid initial state plus k feasible actions; deterministic by seed."""
    if k < 1:
        raise UsageError("episode needs at least one instruction")
    if domain not in DOMAINS:
        raise UsageError(f"unknown domain {domain!r}")
    w0 = random_state(domain, rng)
    state = w0
    actions, states, instructions = [], [], []
    while len(actions) < k:
        a = _random_action(state, rng)
        if a is None:
            continue
        try:
            nxt = execute(state, a)
        except SconeRejection:
            continue
        instructions.append(render_instruction(domain, state, a, rng))
        actions.append(a)
        states.append(nxt)
        state = nxt
    return Episode(domain, w0, actions, states, instructions)


# ---------------------------------------------------------------------------
# reduction to machine comprehension


def render_state_tokens(state: WorldState):
    """Context rendering: three tokens (marker, first, second) per position."""
    toks = []
    for i, (a, b) in enumerate(state.positions):
        toks.extend([f"pos{i + 1}", f"a{a}", f"b{b}"])
    return toks


def pointer_for_position(pos):
    """Context token index of a 1-based state position's marker token."""
    return 3 * (pos - 1)


def reduce_to_mc(episode: Episode) -> DialogueBatch:
    """Encode an episode as a dialogue: state text as context, instructions
    as questions, actions as pointer + class targets.

    gold_spans holds the sorted pair of position pointers so the generic
    span invariant (start <= end) holds; the faithful 4-integer target is in
    action_targets.
    """
    contexts, questions, spans, targets = [], [], [], []
    prev = episode.w0
    for a, inst in zip(episode.actions, episode.instructions):
        contexts.append(render_state_tokens(prev))
        questions.append(list(inst))
        p1 = pointer_for_position(a.pos1)
        p2 = pointer_for_position(a.pos2 if a.pos2 >= 1 else a.pos1)
        spans.append((min(p1, p2), max(p1, p2)))
        targets.append(encode_action(a))
        prev = episode.states[len(contexts) - 1]
    return DialogueBatch(
        context_tokens=contexts[0],
        questions=questions,
        gold_spans=spans,
        turn_contexts=contexts,
        action_targets=targets,
    ).validate()


def dialogue_accuracy(predicted, episodes):
    """Fraction of episodes whose predicted actions reproduce the gold final
    state; any infeasible predicted action makes that episode wrong."""
    if len(predicted) != len(episodes):
        raise UsageError(f"{len(predicted)} predictions for {len(episodes)} episodes")
    correct = 0
    for seq, ep in zip(predicted, episodes):
        state = ep.w0
        ok = True
        for ints in seq:
            try:
                state = execute(state, decode_action(ep.domain, tuple(ints)))
            except (SconeRejection, DecodeError):
                ok = False
                break
        if ok and state == ep.states[-1]:
            correct += 1
    return correct / len(episodes) if episodes else 0.0


# ---------------------------------------------------------------------------
# episode files (line-delimited json records)


def save_episodes(path, episodes):
    with open(path, "w") as f:
        for ep in episodes:
            rec = {
                "domain": ep.domain,
                "w0": encode_state(ep.w0),
                "instructions": [" ".join(toks) for toks in ep.instructions],
                "actions": [list(encode_action(a)) for a in ep.actions],
            }
            f.write(json.dumps(rec) + "\n")


def load_episodes(path):
    episodes = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                w0 = decode_state(rec["domain"], rec["w0"])
                actions = [decode_action(rec["domain"], tuple(a)) for a in rec["actions"]]
            except (KeyError, json.JSONDecodeError, DecodeError) as exc:
                raise DecodeError(f"line {line_no}: {exc}")
            states = []
            s = w0
            for a in actions:
                s = execute(s, a)
                states.append(s)
            episodes.append(Episode(rec["domain"], w0, actions, states,
                                    [i.split() for i in rec["instructions"]]))
    return episodes
