"""Command line entry point: train / eval / ablate / plot."""

import argparse
import json
import sys

from .checkpoint import load_checkpoint
from .config import load_config
from .errors import TinyvogueError
from .evalkit import evaluate_suite
from .harness import plot_runs, resolve_out_dir, run_ablation, run_training
from .policy import PolicyConfig
from .rng import RngStream
from .tasks import load_suite


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="tinyvogue",
        description="Desk-scale dual-branch policy-gradient trainer on synthetic visual tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training run into a run directory")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE",
                   help="dotted config override, repeatable")
    p.add_argument("--out", default=None, help="run directory (default under $TINYVOGUE_RUNS_DIR)")
    p.add_argument("--quiet", action="store_true", help="suppress per-step progress lines")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a task suite")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--suite", required=True, help="task suite (JSONL)")
    p.add_argument("--n", type=int, default=8, help="samples per task")
    p.add_argument("--k", default="4", help="comma-separated k values for pass@k")
    p.add_argument("--seed", type=int, default=0, help="evaluation sampling seed")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-response-len", type=int, default=12)
    p.add_argument("--out", default=None, help="optional JSON report path")

    p = sub.add_parser("ablate", help="run a set of shaping/augmentation variants")
    p.add_argument("--config", required=True, help="JSON base run config")
    p.add_argument("--variants", required=True, help="comma-separated variant names")
    p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE")
    p.add_argument("--out", default=None)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("plot", help="render metric curves from run directories")
    p.add_argument("--runs", required=True, help="comma-separated run directories")
    p.add_argument("--keys", required=True, help="comma-separated metric keys")
    p.add_argument("--out", default=None, help="output directory for CSV/SVG")
    return parser


def _progress(total, quiet):
    if quiet:
        return None
    stride = max(1, total // 20)

    def show(record):
        s = record["step"]
        if s % stride == 0 or s + 1 == total:
            print(f"step {s:5d}  reward {record['reward_mean']:.3f}  "
                  f"acc {record['accuracy_reward_mean']:.3f}  p_noi {record['p_noi']:.3f}",
                  flush=True)

    return show


def cmd_train(args):
    cfg = load_config(args.config, args.set)
    out = resolve_out_dir(args.out, f"{cfg.algorithm}-seed{cfg.seed}")
    result = run_training(cfg, out, progress=_progress(cfg.steps, args.quiet))
    final = result["final_eval"]
    print(f"completed {cfg.steps} steps -> {out}")
    print(f"final eval: pass1 {final['pass1']:.4f}  "
          + "  ".join(f"pass@{k} {v:.4f}" for k, v in final["pass_at_k"].items()))
    return 0


def cmd_eval(args):
    ckpt = load_checkpoint(args.ckpt)
    pcfg = PolicyConfig(**ckpt.policy_config)
    arrs = ckpt.tensors["param"]
    suite = load_suite(args.suite)
    ks = tuple(int(k) for k in args.k.split(",") if k)
    report = evaluate_suite(arrs, pcfg, suite, n=args.n, ks=ks,
                            stream=RngStream(args.seed).derive("eval"),
                            temperature=args.temperature,
                            max_response_len=args.max_response_len)
    d = report.to_dict()
    print(f"suite size {d['size']}, {d['n']} samples per task")
    print(f"pass@1 (all samples):  {d['pass1']:.4f}")
    print(f"pass@1 (first sample): {d['pass1_first']:.4f}")
    for k, v in d["pass_at_k"].items():
        print(f"pass@{k}:               {v:.4f}")
    print(f"reward mean {d['reward_mean']:.4f}, format rate {d['format_rate']:.4f}")
    for fam, row in d["per_family"].items():
        print(f"  {fam}: pass1 {row['pass1']:.4f} over {row['count']} tasks")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"report written to {args.out}")
    return 0


def cmd_ablate(args):
    cfg = load_config(args.config, args.set)
    variants = [v for v in args.variants.split(",") if v]
    out = resolve_out_dir(args.out, "ablation")
    quiet = args.quiet

    def show(msg):
        if not quiet:
            print(msg, flush=True)

    run_ablation(cfg, variants, out, progress=show)
    print(f"ablation table -> {out}/table.md")
    return 0


def cmd_plot(args):
    run_dirs = [r for r in args.runs.split(",") if r]
    keys = [k for k in args.keys.split(",") if k]
    out = resolve_out_dir(args.out, "plots")
    written = plot_runs(run_dirs, keys, out)
    for path in written:
        print(path)
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handler = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "plot": cmd_plot}
    try:
        return handler[args.command](args)
    except TinyvogueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
