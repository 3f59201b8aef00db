"""End-to-end span-extraction models over dialogues, plus training utilities.

Two models share one data path:
  * recurrent: word attention -> bigru over words -> flow over turns, twice,
    then context self-attention and an affine span head.
  * transformer: embeddings + positions, per-turn transformer blocks, flow
    inserted into the last block's residual and concatenated before the head.

``variant`` "none" removes every cross-turn path, which is the ablation
baseline: turns become independent single-turn QA.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .attention import (FlowBranchParams, TransformerBlockParams,
                        init_transformer_block, self_attention_context,
                        transformer_block, transformer_block_inflow,
                        word_attention)
from .flow import FlowVariantKind, flow_variant_forward, variant_extra_width
from .recurrent import GruParams, bigru_encode, glorot, init_gru
from .tensor import NumericError, Rng, Tensor, UsageError

PAD, UNK = 0, 1
PROB_FLOOR = 1e-12


class DataError(ValueError):
    """Raised on malformed or out-of-contract input data."""


@dataclass
class DialogueBatch:
    """One dialogue: a shared context and t question/answer-span turns."""
    context_tokens: list
    questions: list  # t lists of token strings
    gold_spans: list  # t (start, end) inclusive pairs
    human_f1: list = None  # optional per-turn floats
    history_dependent: list = None  # optional per-turn flags
    turn_contexts: list = None  # per-turn contexts (SCONE reduction only)
    action_targets: list = None  # per-turn (op, ptr1, ptr2, prop) (SCONE only)

    def validate(self):
        m = len(self.context_tokens)
        if len(self.questions) < 1:
            raise DataError("dialogue has no turns")
        if len(self.gold_spans) != len(self.questions):
            raise DataError("gold span count != question count")
        for i, (s, e) in enumerate(self.gold_spans):
            mm = len(self.turn_contexts[i]) if self.turn_contexts else m
            if not (0 <= s <= e < mm):
                raise DataError(f"turn {i}: span ({s},{e}) out of bounds for m={mm}")
        return self


@dataclass
class SpanPrediction:
    p_start: Tensor  # [t x m]
    p_end: Tensor  # [t x m]


@dataclass
class ModelConfig:
    model: str = "recurrent"  # recurrent | transformer
    variant: str = "delta"  # delta | skipdelta | doubledelta | hadamard | none
    embed_width: int = 16
    enc_hidden: int = 16
    flow_hidden: int = 8
    n_blocks: int = 2
    n_heads: int = 2
    d_ff: int = 64
    max_question_len: int = 12
    max_context_len: int = 64
    learning_rate: float = 0.5
    lr_decay: float = 0.9  # per-epoch multiplier on the learning rate
    epochs: int = 20
    seed: int = 42
    clip_norm: float = 5.0
    max_answer_len: int = 15
    mark_prev_answer: bool = False

    def flow_kind(self):
        if self.variant == "none":
            return None
        return FlowVariantKind(self.variant)

    def validate(self):
        if self.model not in ("recurrent", "transformer"):
            raise UsageError(f"unknown model {self.model!r}")
        if self.variant not in ("delta", "skipdelta", "doubledelta", "hadamard", "none"):
            raise UsageError(f"unknown variant {self.variant!r}")
        for name in ("embed_width", "enc_hidden", "flow_hidden", "n_blocks",
                     "n_heads", "epochs", "max_answer_len"):
            if getattr(self, name) <= 0:
                raise UsageError(f"config field {name} must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise UsageError("lr_decay must be in (0, 1]")
        return self


# SCONE per-domain hidden-size presets
SCONE_HIDDEN = {"scene": 50, "alchemy": 60, "tangrams": 70}


class Vocabulary:
    def __init__(self, tokens=()):
        self.token_to_id = {"<pad>": PAD, "<unk>": UNK}
        for tok in tokens:
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.token_to_id)
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    @classmethod
    def build(cls, dialogues):
        toks = []
        for d in dialogues:
            toks.extend(d.context_tokens)
            for ctx in d.turn_contexts or []:
                toks.extend(ctx)
            for q in d.questions:
                toks.extend(q)
        return cls(sorted(set(toks)))

    def __len__(self):
        return len(self.token_to_id)

    def encode(self, tokens):
        return [self.token_to_id.get(t, UNK) for t in tokens]


# ---------------------------------------------------------------------------
# recurrent model


class RecurrentModel:
    """FlowDeltaQA-style pipeline at toy scale."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, rng: Rng = None):
        self.config = config
        self.vocab = vocab
        rng = rng or Rng(config.seed)
        e, h, hf = config.embed_width, config.enc_hidden, config.flow_hidden
        kind = config.flow_kind()
        self.kind = kind
        extra = 1 if config.mark_prev_answer else 0
        self.embed = Tensor(rng.normal((len(vocab), e), scale=0.1), requires_grad=True)
        self.enc1_fwd = init_gru(rng, 2 * e + extra, h)
        self.enc1_bwd = init_gru(rng, 2 * e + extra, h)
        w1 = 2 * h  # stage-1 encoder output width
        if kind is not None:
            self.flow1 = init_gru(rng, w1 + variant_extra_width(kind, hf), hf)
            w1 += hf
        self.enc2_fwd = init_gru(rng, w1, h)
        self.enc2_bwd = init_gru(rng, w1, h)
        w2 = 2 * h
        if kind is not None:
            self.flow2 = init_gru(rng, w2 + variant_extra_width(kind, hf), hf)
            w2 += hf
        self.sa_q = glorot(rng, w2, w2)
        self.sa_k = glorot(rng, w2, w2)
        self.sa_v = glorot(rng, w2, w2)
        self.head_W = glorot(rng, 2 * w2, 2)
        self.head_b = T.zeros(2, requires_grad=True)

    def params(self):
        out = {"embed": self.embed}
        for name in ("enc1_fwd", "enc1_bwd", "enc2_fwd", "enc2_bwd"):
            gru = getattr(self, name)
            for f, t in zip(("W_z", "W_r", "W_n", "U_z", "U_r", "U_n", "b_z", "b_r", "b_n"),
                            gru.tensors()):
                out[f"{name}.{f}"] = t
        if self.kind is not None:
            for name in ("flow1", "flow2"):
                gru = getattr(self, name)
                for f, t in zip(("W_z", "W_r", "W_n", "U_z", "U_r", "U_n", "b_z", "b_r", "b_n"),
                                gru.tensors()):
                    out[f"{name}.{f}"] = t
        out.update({"sa_q": self.sa_q, "sa_k": self.sa_k, "sa_v": self.sa_v,
                    "head_W": self.head_W, "head_b": self.head_b})
        return out

    def _encode_stage(self, grid, params_fwd, params_bwd, flow_gru):
        t, m, _ = grid.shape
        xs = [T.select(grid, j, axis=1) for j in range(m)]  # m steps, batch = t turns
        enc = T.stack(bigru_encode(xs, params_fwd, params_bwd), axis=1)  # [t x m x 2h]
        if self.kind is None:
            return enc
        flow_out = flow_variant_forward(enc, flow_gru, self.kind)
        return T.concat([enc, flow_out], axis=-1)

    def forward(self, batch: DialogueBatch) -> SpanPrediction:
        cfg = self.config
        t = len(batch.questions)
        ctx_ids = self._check_ids(self.vocab.encode(batch.context_tokens))
        ctx_emb = T.gather_rows(self.embed, ctx_ids)  # [m x e]
        m = len(ctx_ids)
        fused = []
        for i in range(t):
            if batch.turn_contexts is not None:
                per_ctx = T.gather_rows(
                    self.embed, self._check_ids(self.vocab.encode(batch.turn_contexts[i])))
            else:
                per_ctx = ctx_emb
            q_ids = self._check_ids(self.vocab.encode(batch.questions[i]))
            q_emb = T.gather_rows(self.embed, q_ids)
            fi = word_attention(q_emb, per_ctx)  # [m x 2e]
            if cfg.mark_prev_answer:
                mark = np.zeros((m, 1))
                if i > 0:
                    s, e = batch.gold_spans[i - 1]
                    mark[s:e + 1, 0] = 1.0
                fi = T.concat([fi, Tensor(mark)], axis=-1)
            fused.append(fi)
        grid = T.stack(fused, axis=0)  # [t x m x 2e(+1)]
        cat1 = self._encode_stage(grid, self.enc1_fwd, self.enc1_bwd,
                                  getattr(self, "flow1", None))
        cat2 = self._encode_stage(cat1, self.enc2_fwd, self.enc2_bwd,
                                  getattr(self, "flow2", None))
        starts, ends = [], []
        for i in range(t):
            ci = T.select(cat2, i, axis=0)  # [m x w2]
            sa = self_attention_context(ci, self.sa_q, self.sa_k, self.sa_v)
            feats = T.concat([ci, sa], axis=-1)
            logits = feats @ self.head_W + self.head_b  # [m x 2]
            starts.append(T.softmax(T.select(logits, 0, axis=1), axis=-1))
            ends.append(T.softmax(T.select(logits, 1, axis=1), axis=-1))
        return SpanPrediction(T.stack(starts, axis=0), T.stack(ends, axis=0))

    def _check_ids(self, ids):
        if any(i >= len(self.vocab) for i in ids):
            raise DataError("token id outside vocabulary")
        return ids


# ---------------------------------------------------------------------------
# transformer model


class TransformerModel:
    """Per-turn transformer QA with in/ex flow insertions at the last block."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, rng: Rng = None):
        self.config = config
        self.vocab = vocab
        rng = rng or Rng(config.seed)
        d = config.embed_width
        kind = config.flow_kind()
        self.kind = kind
        self.embed = Tensor(rng.normal((len(vocab), d), scale=0.1), requires_grad=True)
        self.pos = Tensor(
            rng.normal((config.max_question_len + config.max_context_len, d), scale=0.1),
            requires_grad=True)
        self.blocks = [init_transformer_block(rng, d, config.d_ff, config.n_heads)
                       for _ in range(config.n_blocks)]
        hf = config.flow_hidden
        if kind is not None:
            # independent flow parameters for the in-block and head insertions
            self.inflow = FlowBranchParams(
                gru=init_gru(rng, d + variant_extra_width(kind, d), d),
                W_proj=glorot(rng, d, d), kind=kind)
            self.exflow = init_gru(rng, d + variant_extra_width(kind, hf), hf)
            self.head_Wf = glorot(rng, hf, 2)
        self.head_Wh = glorot(rng, d, 2)
        self.head_b = T.zeros(2, requires_grad=True)

    def params(self):
        out = {"embed": self.embed, "pos": self.pos}
        for bi, blk in enumerate(self.blocks):
            for name, t in zip(("W_q", "W_k", "W_v", "W_o", "W_ff1", "b_ff1", "W_ff2",
                                "b_ff2", "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"),
                               blk.tensors()):
                out[f"block{bi}.{name}"] = t
        if self.kind is not None:
            for f, t in zip(("W_z", "W_r", "W_n", "U_z", "U_r", "U_n", "b_z", "b_r", "b_n"),
                            self.inflow.gru.tensors()):
                out[f"inflow.{f}"] = t
            out["inflow.W_proj"] = self.inflow.W_proj
            for f, t in zip(("W_z", "W_r", "W_n", "U_z", "U_r", "U_n", "b_z", "b_r", "b_n"),
                            self.exflow.tensors()):
                out[f"exflow.{f}"] = t
            out["head_Wf"] = self.head_Wf
        out.update({"head_Wh": self.head_Wh, "head_b": self.head_b})
        return out

    def forward(self, batch: DialogueBatch) -> SpanPrediction:
        cfg = self.config
        t = len(batch.questions)
        n_max = cfg.max_question_len
        turn_seqs = []
        m = (len(batch.turn_contexts[0]) if batch.turn_contexts is not None
             else len(batch.context_tokens))
        for i in range(t):
            ctx_toks = (batch.turn_contexts[i] if batch.turn_contexts is not None
                        else batch.context_tokens)
            q_ids = self.vocab.encode(batch.questions[i])[:n_max]
            q_ids = q_ids + [PAD] * (n_max - len(q_ids))
            ids = q_ids + self.vocab.encode(ctx_toks)
            emb = T.gather_rows(self.embed, ids) + T.gather_rows(self.pos, range(len(ids)))
            turn_seqs.append(emb)
        # all but the last block run per turn with no cross-turn path
        for blk in self.blocks[:-1]:
            turn_seqs = [transformer_block(h, blk) for h in turn_seqs]
        grid = T.stack([_slice_rows(h, n_max, n_max + m) for h in turn_seqs], axis=0)
        last = self.blocks[-1]
        if self.kind is not None:
            h_last = transformer_block_inflow(grid, last, self.inflow)
            flow_out = flow_variant_forward(h_last, self.exflow, self.kind)
            flat_h = T.reshape(h_last, (t * m, h_last.shape[-1]))
            flat_f = T.reshape(flow_out, (t * m, flow_out.shape[-1]))
            logits = flat_h @ self.head_Wh + flat_f @ self.head_Wf + self.head_b
        else:
            h_last = T.stack([transformer_block(T.select(grid, i, axis=0), last)
                              for i in range(t)], axis=0)
            flat_h = T.reshape(h_last, (t * m, h_last.shape[-1]))
            logits = flat_h @ self.head_Wh + self.head_b
        logits = T.reshape(logits, (t, m, 2))
        p_start = T.softmax(T.select(logits, 0, axis=2), axis=-1)
        p_end = T.softmax(T.select(logits, 1, axis=2), axis=-1)
        return SpanPrediction(p_start, p_end)


def _slice_rows(x, lo, hi):
    """Differentiable row slice of a 2-d tensor."""
    rows = [T.select(x, i, axis=0) for i in range(lo, hi)]
    return T.stack(rows, axis=0)


def build_model(config: ModelConfig, vocab: Vocabulary, rng: Rng = None):
    cls = RecurrentModel if config.model == "recurrent" else TransformerModel
    return cls(config, vocab, rng)


# ---------------------------------------------------------------------------
# loss, decoding, training


def span_loss(pred: SpanPrediction, gold_spans) -> Tensor:
    """Mean over turns of -log p_start[s] - log p_end[e] (floored at 1e-12)."""
    t = pred.p_start.shape[0]
    terms = []
    for i, (s, e) in enumerate(gold_spans):
        ps = T.select(T.select(pred.p_start, i, axis=0), s, axis=0)
        pe = T.select(T.select(pred.p_end, i, axis=0), e, axis=0)
        terms.append(T.log(ps, floor=PROB_FLOOR) + T.log(pe, floor=PROB_FLOOR))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return T.scale(total, -1.0 / t)


def decode_span(pred: SpanPrediction, max_len: int):
    """Per turn, argmax of p_start[s] * p_end[e] over s <= e < s + max_len.

    Ties break toward the smallest start, then the smallest end.
    """
    out = []
    ps, pe = pred.p_start.data, pred.p_end.data
    t, m = ps.shape
    for i in range(t):
        best, best_p = (0, 0), -1.0
        for s in range(m):
            for e in range(s, min(s + max_len, m)):
                p = ps[i, s] * pe[i, e]
                if p > best_p:
                    best, best_p = (s, e), p
        out.append(best)
    return out


def global_norm_clip(params, clip_norm):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = total ** 0.5
    if norm > clip_norm:
        scale = clip_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def sgd_step(params, lr):
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad
            p.grad = None


def exact_span_accuracy(model, dialogues):
    """Fraction of turns where the decoded span equals the gold span."""
    correct = total = 0
    per_turn = []
    for d in dialogues:
        T.active_tape().reset()
        pred = model.forward(d)
        spans = decode_span(pred, model.config.max_answer_len)
        for got, want in zip(spans, d.gold_spans):
            hit = tuple(got) == tuple(want)
            per_turn.append(hit)
            correct += hit
            total += 1
        T.active_tape().reset()
    return (correct / total if total else 0.0), per_turn


def train(train_set, dev_set, config: ModelConfig, log=None):
    """SGD with global-norm clipping; deterministic given config.seed.

    Returns (model, metrics) where metrics is a list of per-epoch dicts;
    the returned model carries the best dev-accuracy parameters seen.
    """
    if not train_set:
        raise UsageError("empty training set")
    config.validate()
    rng = Rng(config.seed)
    vocab = Vocabulary.build(train_set)
    model = build_model(config, vocab, rng.split())
    params = list(model.params().values())
    order = list(range(len(train_set)))
    metrics = []
    best_acc, best_state = -1.0, None
    lr = config.learning_rate
    for epoch in range(config.epochs):
        rng.shuffle(order)
        total_loss = 0.0
        for step, idx in enumerate(order):
            batch = train_set[idx]
            T.active_tape().reset()
            pred = model.forward(batch)
            loss = span_loss(pred, batch.gold_spans)
            lv = loss.item()
            if not np.isfinite(lv):
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}")
            total_loss += lv
            T.backward(loss)
            global_norm_clip(params, config.clip_norm)
            sgd_step(params, lr)
        lr *= config.lr_decay
        dev_acc, _ = exact_span_accuracy(model, dev_set) if dev_set else (0.0, [])
        row = {"epoch": epoch, "train_loss": total_loss / len(order), "dev_acc": dev_acc}
        metrics.append(row)
        if log:
            log(row)
        if dev_set and dev_acc >= best_acc:
            best_acc = dev_acc
            best_state = {k: v.data.copy() for k, v in model.params().items()}
    if best_state is not None:
        for k, v in model.params().items():
            v.data[...] = best_state[k]
    return model, metrics


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model):
    blob = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab": model.vocab.token_to_id,
        "params": {k: {"shape": list(v.shape), "data": v.data.reshape(-1).tolist()}
                   for k, v in model.params().items()},
    }
    with open(path, "w") as f:
        json.dump(blob, f)


def load_checkpoint(path):
    with open(path) as f:
        blob = json.load(f)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {blob.get('version')!r}")
    config = ModelConfig(**blob["config"])
    vocab = Vocabulary()
    vocab.token_to_id = blob["vocab"]
    vocab.id_to_token = {i: t for t, i in vocab.token_to_id.items()}
    model = build_model(config, vocab, Rng(config.seed))
    for k, v in model.params().items():
        entry = blob["params"][k]
        v.data = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return model
