"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Machine-readable results go to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict, fields

from . import gradsuite, harness, scone
from .model import (DataError, ModelConfig, load_checkpoint, save_checkpoint,
                    train)
from .tensor import NumericError, Rng, UsageError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def load_config(path):
    """key = value lines; keys must be ModelConfig fields."""
    cfg = ModelConfig()
    valid = {f.name: f.type for f in fields(ModelConfig)}
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"config line {line_no}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in valid:
                raise UsageError(f"config line {line_no}: unknown key {key!r}")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                setattr(cfg, key, value.lower() in ("1", "true", "yes"))
            elif isinstance(current, int):
                setattr(cfg, key, int(value))
            elif isinstance(current, float):
                setattr(cfg, key, float(value))
            else:
                setattr(cfg, key, value)
    return cfg


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "variant", None) is not None:
        cfg.variant = args.variant
    if getattr(args, "model", None) is not None:
        cfg.model = args.model
    return cfg.validate()


def cmd_train(args):
    cfg = load_config(args.config) if args.config else ModelConfig()
    _apply_overrides(cfg, args)
    dialogues = harness.load_dialogues(args.data)
    if not dialogues:
        raise DataError(f"no dialogues in {args.data}")
    n_dev = max(1, len(dialogues) // 10) if len(dialogues) > 1 else 0
    dev = dialogues[:n_dev]
    train_set = dialogues[n_dev:] or dialogues
    start = time.time()
    model, metrics = train(train_set, dev, cfg,
                           log=lambda row: print(
                               f"epoch={row['epoch']} loss={row['train_loss']:.6f} "
                               f"dev_acc={row['dev_acc']:.6f}", file=sys.stderr))
    save_checkpoint(args.out, model)
    for row in metrics:
        print(f"epoch = {row['epoch']} train_loss = {row['train_loss']:.12f} "
              f"dev_acc = {row['dev_acc']:.6f}")
    print(f"runtime_seconds = {time.time() - start:.1f}", file=sys.stderr)
    print(f"checkpoint = {args.out}")
    return EXIT_OK


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    dialogues = harness.load_dialogues(args.data)
    report = harness.evaluate(model, dialogues)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradsuite.run_suite()
    failed = False
    for name, err in results:
        status = "ok" if err < gradsuite.TOLERANCE else "FAIL"
        print(f"{name:28s} {err:.3e} {status}")
        failed = failed or err >= gradsuite.TOLERANCE
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_gen_qa(args):
    rng = Rng(args.seed if args.seed is not None else 0)
    dialogues = harness.generate_synthetic_qa(rng, args.count)
    harness.save_dialogues(args.out, dialogues)
    print(f"dialogues = {len(dialogues)}")
    print(f"path = {args.out}")
    return EXIT_OK


def cmd_scone_gen(args):
    rng = Rng(args.seed if args.seed is not None else 0)
    episodes = [scone.generate_episode(args.domain, rng, args.k)
                for _ in range(args.count)]
    scone.save_episodes(args.out, episodes)
    print(f"episodes = {len(episodes)}")
    print(f"path = {args.out}")
    return EXIT_OK


def cmd_scone_eval(args):
    episodes = scone.load_episodes(args.data)
    import json
    with open(args.predictions) as f:
        predicted = [json.loads(line) for line in f if line.strip()]
    acc = scone.dialogue_accuracy(predicted, episodes)
    print(f"dialogue_accuracy = {acc:.6f}")
    return EXIT_OK


def cmd_inspect(args):
    model = load_checkpoint(args.checkpoint)
    for key, value in asdict(model.config).items():
        print(f"config.{key} = {value}")
    print(f"vocab_size = {len(model.vocab)}")
    total = 0
    for name, t in model.params().items():
        print(f"param.{name} = shape {list(t.shape)}")
        total += t.data.size
    print(f"total_parameters = {total}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="flowdelta",
                                description="Dialogue-flow QA models, simulators and checks")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a dialogue file")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--variant", choices=["delta", "skipdelta", "doubledelta",
                                         "hadamard", "none"])
    t.add_argument("--model", choices=["recurrent", "transformer"])
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dialogue file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="run the full gradient-check suite")
    g.set_defaults(fn=cmd_gradcheck)

    q = sub.add_parser("gen-qa", help="emit a synthetic dialogue dataset")
    q.add_argument("--count", type=int, required=True)
    q.add_argument("--seed", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_gen_qa)

    s = sub.add_parser("scone-gen", help="emit synthetic instruction episodes")
    s.add_argument("--domain", choices=list(scone.DOMAINS), required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_scone_gen)

    v = sub.add_parser("scone-eval", help="score predicted action sequences")
    v.add_argument("--data", required=True)
    v.add_argument("--predictions", required=True)
    v.set_defaults(fn=cmd_scone_eval)

    i = sub.add_parser("inspect", help="summarize a checkpoint")
    i.add_argument("--checkpoint", required=True)
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, scone.DecodeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
