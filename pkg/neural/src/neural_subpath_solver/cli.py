"""Command line interface: train a model, serve it, or evaluate a checkpoint."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np
import torch

from .serving import serve_stdio, serve_tcp
from .training import TrainConfig, evaluate_greedy, load_checkpoint, sample_batch, train


def cmd_train(args) -> int:
    cfg = TrainConfig(
        graph_size=args.graph_size,
        instances_per_epoch=args.instances,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        embed_dim=args.embed_dim,
        n_heads=args.heads,
        n_layers=args.layers,
        ff_dim=args.ff_dim,
    )

    def progress(epoch, history):
        print(f"epoch {epoch + 1}/{cfg.epochs}: "
              f"eval {history['eval_mean'][-1]:.4f} "
              f"({history['epoch_seconds'][-1]:.1f}s)", file=sys.stderr)

    _, history = train(cfg, out_path=args.out, progress=progress)
    print(f"checkpoint written to {args.out}")
    print(f"greedy eval: {history['eval_mean'][0]:.4f} -> {history['eval_mean'][-1]:.4f}")
    return 0


def cmd_serve(args) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO)
    model, _ = load_checkpoint(args.checkpoint)
    torch.set_num_threads(args.threads)
    if args.transport == "stdio":
        serve_stdio(model)
    else:
        serve_tcp(model, args.host, args.port)
    return 0


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    k = args.graph_size or meta["train_config"]["graph_size"]
    rng = np.random.Generator(np.random.PCG64(args.seed))
    coords = sample_batch(rng, args.instances, k)
    mean_len = evaluate_greedy(model, coords)
    print(f"graph_size={k} instances={args.instances} greedy_mean={mean_len:.4f}")
    if k <= 10:
        import itertools
        batch = coords.double()
        opt_total = 0.0
        for row in batch:
            interior = list(range(1, k - 1))
            best = float("inf")
            pts = row.numpy()
            for perm in itertools.permutations(interior):
                order = [0, *perm, k - 1]
                d = sum(float(np.hypot(*(pts[order[i + 1]] - pts[order[i]])))
                        for i in range(k - 1))
                best = min(best, d)
            opt_total += best
        opt_mean = opt_total / len(batch)
        print(f"exhaustive_mean={opt_mean:.4f} gap={100 * (mean_len / opt_mean - 1):.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subpath-solver",
                                description="Neural open-path solver: train, serve, eval")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train a policy and write a checkpoint")
    sp.add_argument("--graph-size", type=int, default=10)
    sp.add_argument("--instances", type=int, default=1000, help="instances per epoch")
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--embed-dim", type=int, default=128)
    sp.add_argument("--heads", type=int, default=8)
    sp.add_argument("--layers", type=int, default=3)
    sp.add_argument("--ff-dim", type=int, default=512)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("serve", help="answer the JSON line protocol")
    sp.add_argument("checkpoint")
    sp.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=7392)
    sp.add_argument("--threads", type=int, default=1, help="torch intra-op threads")
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("eval", help="report greedy quality of a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--graph-size", type=int)
    sp.add_argument("--instances", type=int, default=256)
    sp.add_argument("--seed", type=int, default=123)
    sp.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
