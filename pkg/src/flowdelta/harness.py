"""Metrics, data ingestion, and synthetic dialogue generation.

The synthetic QA generator builds passages of entity-attribute facts and
asks follow-up questions with pronouns, so later turns are only answerable
through dialogue history. That gives the flow/no-flow ablation something to
disagree about at desk scale.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass

from .model import DataError, DialogueBatch, decode_span
from .tensor import Rng, UsageError
from . import tensor as T

ARTICLES = {"a", "an", "the"}
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_tokens(text):
    text = text.lower().translate(_PUNCT_TABLE)
    return [t for t in text.split() if t not in ARTICLES]


def token_f1(prediction, gold):
    """Bag-of-tokens F1 after normalization; both-empty is 1, one-empty is 0."""
    if isinstance(prediction, str):
        prediction = prediction.split()
    if isinstance(gold, str):
        gold = gold.split()
    p = normalize_tokens(" ".join(prediction))
    g = normalize_tokens(" ".join(gold))
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    common = Counter(p) & Counter(g)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2 * precision * recall / (precision + recall)


def heq(model_f1, human_f1, dialogue_sizes):
    """(HEQ-Q, HEQ-D): per-question and per-dialogue rates of model >= human."""
    if human_f1 is None or any(h is None for h in human_f1):
        return None, None
    if len(model_f1) != len(human_f1):
        raise UsageError("model and human F1 lists differ in length")
    if sum(dialogue_sizes) != len(model_f1):
        raise UsageError("dialogue sizes do not partition the question list")
    wins = [m >= h for m, h in zip(model_f1, human_f1)]
    heq_q = sum(wins) / len(wins) if wins else 0.0
    d_wins, offset = [], 0
    for size in dialogue_sizes:
        d_wins.append(all(wins[offset:offset + size]))
        offset += size
    heq_d = sum(d_wins) / len(d_wins) if d_wins else 0.0
    return heq_q, heq_d


# ---------------------------------------------------------------------------
# dialogue files: one json record per line


def load_dialogues(path):
    """Parse and validate a line-delimited dialogue file."""
    out = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"record {line_no}: invalid json: {exc}")
            try:
                context = rec["context"].lower().split()
                qas = rec["qas"]
            except (KeyError, AttributeError, TypeError) as exc:
                raise DataError(f"record {line_no}: missing field: {exc}")
            if not qas:
                raise DataError(f"record {line_no}: qas is empty")
            questions, spans, human, hist = [], [], [], []
            for qi, qa in enumerate(qas):
                try:
                    q = qa["question"].lower().split()
                    s, e = int(qa["answer_start"]), int(qa["answer_end"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise DataError(f"record {line_no} qas[{qi}]: {exc}")
                if not q:
                    raise DataError(f"record {line_no} qas[{qi}]: empty question")
                if not (0 <= s <= e < len(context)):
                    raise DataError(
                        f"record {line_no} qas[{qi}]: span ({s},{e}) out of bounds "
                        f"for context length {len(context)}")
                questions.append(q)
                spans.append((s, e))
                human.append(float(qa["human_f1"]) if "human_f1" in qa else None)
                hist.append(bool(qa.get("history_dependent", False)))
            out.append(DialogueBatch(context, questions, spans,
                                     human_f1=human, history_dependent=hist))
    return out


def save_dialogues(path, dialogues):
    with open(path, "w") as f:
        for d in dialogues:
            rec = {"context": " ".join(d.context_tokens), "qas": []}
            for i, (q, (s, e)) in enumerate(zip(d.questions, d.gold_spans)):
                qa = {"question": " ".join(q), "answer_start": s, "answer_end": e}
                if d.human_f1 and d.human_f1[i] is not None:
                    qa["human_f1"] = d.human_f1[i]
                if d.history_dependent is not None:
                    qa["history_dependent"] = d.history_dependent[i]
                rec["qas"].append(qa)
            f.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# synthetic conversational QA

_COLORS = ["red", "blue", "green", "black", "white", "silver", "golden",
           "purple", "orange", "pink"]
_OBJECTS = ["box", "jar", "bag", "chest", "basket", "crate", "tin", "pouch",
            "drawer", "safe", "trunk", "case"]
_ITEMS = ["key", "coin", "ring", "map", "gem", "letter", "shell", "token",
          "pearl", "feather", "button", "marble"]


def _passage(rng: Rng, n_obj):
    colors = list(_COLORS)
    objects = list(_OBJECTS)
    items = list(_ITEMS)
    rng.shuffle(colors)
    rng.shuffle(objects)
    rng.shuffle(items)
    facts = []
    tokens = []
    for i in range(n_obj):
        base = len(tokens)
        tokens.extend(["the", colors[i], objects[i], "holds", "the", items[i], "."])
        facts.append({"color": colors[i], "obj": objects[i], "item": items[i],
                      "color_pos": base + 1, "obj_pos": base + 2, "item_pos": base + 5})
    return tokens, facts


def generate_synthetic_qa(rng: Rng, count, m_range=(3, 5), t_range=(2, 4)):
    """Deterministic dataset of entity-attribute dialogues.

    m_range bounds the object count per passage (7 tokens per object);
    t_range bounds turns per dialogue. Turn 1 is always direct; later turns
    use "it" to refer to the previous turn's entity unless they re-anchor.
    human_f1 is fixed at 1.0 so HEQ degenerates to exact-style scoring.
    """
    if count < 1:
        raise UsageError("count must be >= 1")
    dialogues = []
    for _ in range(count):
        n_obj = rng.randint(m_range[0], m_range[1] + 1)
        tokens, facts = _passage(rng, n_obj)
        t = rng.randint(t_range[0], t_range[1] + 1)
        questions, spans, hist = [], [], []
        focus = None
        for turn in range(t):
            direct = turn == 0 or rng.randint(0, 4) == 0
            if direct:
                focus = facts[rng.randint(0, n_obj)]
                qkind = rng.randint(0, 3)
                if qkind == 0:
                    q = ["what", "holds", "the", focus["item"], "?"]
                    span = (focus["color_pos"], focus["obj_pos"])
                elif qkind == 1:
                    q = ["what", "color", "is", "the", focus["obj"], "?"]
                    span = (focus["color_pos"], focus["color_pos"])
                else:
                    q = ["what", "does", "the", focus["obj"], "hold", "?"]
                    span = (focus["item_pos"], focus["item_pos"])
                hist.append(False)
            else:
                if rng.randint(0, 2) == 0:
                    q = ["what", "color", "is", "it", "?"]
                    span = (focus["color_pos"], focus["color_pos"])
                else:
                    q = ["what", "does", "it", "hold", "?"]
                    span = (focus["item_pos"], focus["item_pos"])
                hist.append(True)
            questions.append(q)
            spans.append(span)
        dialogues.append(DialogueBatch(tokens, questions, spans,
                                       human_f1=[1.0] * t,
                                       history_dependent=hist).validate())
    return dialogues


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    mean_f1: float
    exact_acc: float
    heq_q: float
    heq_d: float
    per_turn_f1: list
    history_dependent_acc: float
    history_independent_acc: float
    runtime_seconds: float
    config: dict
    seed: int
    n_dialogues: int = 0
    n_questions: int = 0

    def to_text(self):
        lines = [
            f"n_dialogues = {self.n_dialogues}",
            f"n_questions = {self.n_questions}",
            f"mean_token_f1 = {self.mean_f1:.6f}",
            f"exact_span_accuracy = {self.exact_acc:.6f}",
            f"heq_q = {'absent' if self.heq_q is None else format(self.heq_q, '.6f')}",
            f"heq_d = {'absent' if self.heq_d is None else format(self.heq_d, '.6f')}",
            f"history_dependent_acc = {self.history_dependent_acc:.6f}",
            f"history_independent_acc = {self.history_independent_acc:.6f}",
            f"seed = {self.seed}",
        ]
        for i, f1 in enumerate(self.per_turn_f1):
            lines.append(f"turn_{i}_mean_f1 = {f1:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(model, dialogues, runtime_seconds=0.0):
    from dataclasses import asdict
    f1s, human, sizes = [], [], []
    exact_hits = []
    hist_hits, nohist_hits = [], []
    by_turn = {}
    for d in dialogues:
        T.active_tape().reset()
        pred = model.forward(d)
        spans = decode_span(pred, model.config.max_answer_len)
        T.active_tape().reset()
        sizes.append(len(d.questions))
        ctx = (lambda sp: d.context_tokens[sp[0]:sp[1] + 1])
        for i, (got, want) in enumerate(zip(spans, d.gold_spans)):
            f1 = token_f1(ctx(got), ctx(want))
            f1s.append(f1)
            human.append(d.human_f1[i] if d.human_f1 else None)
            hit = tuple(got) == tuple(want)
            exact_hits.append(hit)
            by_turn.setdefault(i, []).append(f1)
            if d.history_dependent is not None:
                (hist_hits if d.history_dependent[i] else nohist_hits).append(hit)
    heq_q, heq_d = heq(f1s, human, sizes)
    mean = lambda xs: sum(xs) / len(xs) if xs else 0.0
    return EvalReport(
        mean_f1=mean(f1s),
        exact_acc=mean(exact_hits),
        heq_q=heq_q, heq_d=heq_d,
        per_turn_f1=[mean(by_turn[i]) for i in sorted(by_turn)],
        history_dependent_acc=mean(hist_hits),
        history_independent_acc=mean(nohist_hits),
        runtime_seconds=runtime_seconds,
        config=asdict(model.config),
        seed=model.config.seed,
        n_dialogues=len(dialogues),
        n_questions=len(f1s),
    )
