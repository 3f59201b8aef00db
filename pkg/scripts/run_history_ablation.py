#!/usr/bin/env python3
"""History ablation: delta flow vs. no flow, split by history dependence.

Trains paired models (identical data and seed, variant "delta" vs "none")
over several seeds and reports exact-span accuracy separately on turns that
require dialogue history and turns that do not.
"""
import argparse

from flowdelta.harness import generate_synthetic_qa
from flowdelta.model import ModelConfig, exact_span_accuracy, train
from flowdelta.tensor import Rng


def split_accuracy(model, dialogues):
    """(history-dependent accuracy, history-independent accuracy)."""
    _, per_turn = exact_span_accuracy(model, dialogues)
    flags = [f for d in dialogues for f in d.history_dependent]
    dep = [h for h, f in zip(per_turn, flags) if f]
    ind = [h for h, f in zip(per_turn, flags) if not f]
    return (sum(dep) / len(dep) if dep else 0.0,
            sum(ind) / len(ind) if ind else 0.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-count", type=int, default=300)
    ap.add_argument("--dev-count", type=int, default=80)
    ap.add_argument("--epochs", type=int, default=16)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    args = ap.parse_args()

    dep_gaps, ind_gaps = [], []
    for seed in args.seeds:
        rng = Rng(100 + seed)
        train_set = generate_synthetic_qa(rng, args.train_count, (3, 5), (2, 4))
        dev_set = generate_synthetic_qa(rng, args.dev_count, (3, 5), (2, 4))
        accs = {}
        for variant in ("delta", "none"):
            cfg = ModelConfig(model="recurrent", variant=variant,
                              epochs=args.epochs, seed=seed)
            model, _ = train(train_set, dev_set, cfg)
            accs[variant] = split_accuracy(model, dev_set)
            print(f"seed {seed} variant {variant:5s} "
                  f"history-dep {accs[variant][0]:.3f} "
                  f"history-ind {accs[variant][1]:.3f}", flush=True)
        dep_gaps.append(accs["delta"][0] - accs["none"][0])
        ind_gaps.append(accs["delta"][1] - accs["none"][1])

    n = len(args.seeds)
    print(f"\nmean gap (delta - none), history-dependent turns:   "
          f"{sum(dep_gaps) / n:+.3f}")
    print(f"mean gap (delta - none), history-independent turns: "
          f"{sum(ind_gaps) / n:+.3f}")


if __name__ == "__main__":
    main()
