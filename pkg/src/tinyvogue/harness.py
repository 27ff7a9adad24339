"""Run orchestration: training runs, paired comparisons, ablations, plots.

Every run directory is self-contained: manifest.json (config, package
version, rng mixer, augmentation order, completion status), metrics.jsonl,
the frozen eval suite, scheduled eval reports, and checkpoints. Comparisons
and ablations are just sets of runs plus a merged report.
"""

import json
import os

import numpy as np

from . import __version__
from .augment import APPLY_ORDER
from .checkpoint import save_checkpoint
from .config import config_from_dict, config_to_dict
from .errors import ConfigError, ContractError, NumericError
from .evalkit import evaluate_suite
from .grpo import grpo_train_step
from .metrics import MetricsWriter, read_metrics, rows_to_columns
from .rng import MIXER_NAME
from .tasks import build_suite, save_suite
from .vogue import TrainStreams, init_state, vogue_train_step

RUNS_DIR_ENV = "TINYVOGUE_RUNS_DIR"

ABLATION_VARIANTS = (
    "no-uv",
    "no-entropy",
    "no-uv-no-entropy",
    "fixed-prob-0.5",
    "forward-kl",
    "sigma-0.2",
    "sigma-0.4",
    "sigma-0.8",
)


def resolve_out_dir(explicit, default_name):
    """--out wins; otherwise a named directory under $TINYVOGUE_RUNS_DIR."""
    if explicit:
        return explicit
    root = os.environ.get(RUNS_DIR_ENV)
    if not root:
        raise ConfigError(
            f"no output directory: pass --out or set ${RUNS_DIR_ENV} as the default root")
    return os.path.join(root, default_name)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(cfg, status, error=None):
    m = {
        "config": config_to_dict(cfg),
        "version": __version__,
        "rng_mixer": MIXER_NAME,
        "augment_order": list(APPLY_ORDER),
        "status": status,
    }
    if error is not None:
        m["error"] = error
    return m


def run_training(cfg, out_dir, *, progress=None):
    """Train per the config, leaving a complete run directory behind.

    A numeric abort (non-finite gradients, overflowing ratios) stops the run,
    marks the manifest status 'aborted' with the diagnostic, and re-raises;
    parameters never absorb a poisoned update, so the last checkpoint and all
    written metrics remain valid.
    """
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "manifest.json"), _manifest(cfg, "running"))

    streams = TrainStreams.from_seed(cfg.seed)
    state = init_state(cfg, streams)
    suite = build_suite(cfg.env, streams.root.derive("evalsuite"), cfg.eval.suite_size)
    save_suite(os.path.join(out_dir, "suite.jsonl"), suite, cfg.env)

    step_fn = vogue_train_step if cfg.algorithm == "vogue" else grpo_train_step
    eval_rows = []

    def run_eval(step_index):
        report = evaluate_suite(
            state.old, cfg.policy, suite, n=cfg.eval.n, ks=cfg.eval.ks,
            stream=streams.root.derive("eval").derive(f"s{step_index}"),
            temperature=cfg.eval.temperature, max_response_len=cfg.env.max_response_len)
        row = {"step": step_index}
        row.update(report.to_dict())
        eval_rows.append(row)
        return row

    try:
        with MetricsWriter(os.path.join(out_dir, "metrics.jsonl"),
                           flush_every=cfg.metrics_flush_every) as writer:
            for _ in range(cfg.steps):
                record = step_fn(state, cfg, streams)
                done = state.step
                if cfg.eval.every and done % cfg.eval.every == 0 and done < cfg.steps:
                    record["eval"] = run_eval(done)
                writer.write_step(record)
                if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.steps:
                    save_checkpoint(os.path.join(out_dir, f"ckpt_step{done:04d}.bin"),
                                    state, cfg.policy, extra={"out_dir_step": done})
                if progress is not None:
                    progress(record)
    except NumericError as exc:
        _write_json(os.path.join(out_dir, "manifest.json"),
                    _manifest(cfg, "aborted", error=str(exc)))
        raise

    final_eval = run_eval(cfg.steps)
    with open(os.path.join(out_dir, "evals.jsonl"), "w") as fh:
        for row in eval_rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    save_checkpoint(os.path.join(out_dir, "ckpt_final.bin"), state, cfg.policy)
    _write_json(os.path.join(out_dir, "manifest.json"), _manifest(cfg, "completed"))
    return {"out_dir": out_dir, "final_eval": final_eval, "state": state}


def _with_updates(cfg, updates):
    """A fresh validated config with dotted-path values replaced."""
    data = config_to_dict(cfg)
    for path, value in updates.items():
        node = data
        parts = path.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return config_from_dict(data)


def final_eval_of(run_dir):
    with open(os.path.join(run_dir, "evals.jsonl")) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    if not rows:
        raise ContractError(f"{run_dir} has no eval rows")
    return rows[-1]


# ------------------------------------------------------------- comparison


def compare_algorithms(cfg, seeds, out_dir, *, progress=None):
    """Paired runs per seed, identical configs except the algorithm field.

    Writes report.json / report.md and per-step accuracy-reward curves
    (CSV and SVG). The direction of the pass@k gap is recorded, not gated:
    at this scale seed noise can swamp it, and the honest artifact is the
    measured number.
    """
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    seeds = list(seeds)
    if not seeds:
        raise ContractError("compare_algorithms needs at least one seed")
    per_seed = {}
    for sd in seeds:
        pair = {}
        for algo in ("grpo", "vogue"):
            run_cfg = _with_updates(cfg, {"seed": int(sd), "algorithm": algo})
            rd = os.path.join(out_dir, f"seed{sd}", algo)
            if progress is not None:
                progress(f"run seed={sd} algorithm={algo}")
            run_training(run_cfg, rd)
            pair[algo] = {"run_dir": rd, "final_eval": final_eval_of(rd)}
        per_seed[str(sd)] = pair

    def mean_over_seeds(algo, getter):
        return float(np.mean([getter(per_seed[str(sd)][algo]["final_eval"]) for sd in seeds]))

    ks = sorted(int(k) for k in cfg.eval.ks)
    summary = {}
    for algo in ("grpo", "vogue"):
        summary[algo] = {
            "pass1": mean_over_seeds(algo, lambda e: e["pass1"]),
            "pass1_first": mean_over_seeds(algo, lambda e: e["pass1_first"]),
            "reward_mean": mean_over_seeds(algo, lambda e: e["reward_mean"]),
        }
        for k in ks:
            summary[algo][f"pass@{k}"] = mean_over_seeds(
                algo, lambda e, k=k: e["pass_at_k"][str(k)])

    primary_k = ks[0]
    gap = summary["vogue"][f"pass@{primary_k}"] - summary["grpo"][f"pass@{primary_k}"]
    report = {
        "seeds": [int(s) for s in seeds],
        "steps": cfg.steps,
        "per_seed": per_seed,
        "summary": summary,
        "direction": {
            f"pass@{primary_k}_vogue_minus_grpo": gap,
            "within_noise_floor": bool(gap >= -0.02),
        },
    }
    _write_json(os.path.join(out_dir, "report.json"), report)
    _write_report_md(os.path.join(out_dir, "report.md"), report, ks)
    curve_runs = {f"{algo}-seed{sd}": os.path.join(out_dir, f"seed{sd}", algo)
                  for sd in seeds for algo in ("grpo", "vogue")}
    write_curves(curve_runs, ("accuracy_reward_mean", "reward_mean"), out_dir)
    return report


def _fmt(x):
    return f"{x:.4f}"


def _write_report_md(path, report, ks):
    lines = ["# Paired comparison", ""]
    lines.append(f"Seeds: {report['seeds']}; {report['steps']} steps each; "
                 "identical configs and rng seeds per pair, only the algorithm differs.")
    lines.append("")
    cols = ["pass1", "pass1_first"] + [f"pass@{k}" for k in ks] + ["reward_mean"]
    lines.append("| algorithm | " + " | ".join(cols) + " |")
    lines.append("|---" * (len(cols) + 1) + "|")
    for algo in ("grpo", "vogue"):
        row = report["summary"][algo]
        lines.append(f"| {algo} | " + " | ".join(_fmt(row[c]) for c in cols) + " |")
    lines.append("")
    key, = [k for k in report["direction"] if k.startswith("pass@")]
    lines.append(f"Direction: {key} = {_fmt(report['direction'][key])} "
                 f"(recorded, not gated; noise floor 0.02).")
    lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


# ------------------------------------------------------------- ablation


def _variant_updates(name):
    table = {
        "no-uv": {"vogue.enable_uv": False},
        "no-entropy": {"vogue.enable_entropy": False},
        "no-uv-no-entropy": {"vogue.enable_uv": False, "vogue.enable_entropy": False},
        "fixed-prob-0.5": {"vogue.fixed_p": 0.5},
        "forward-kl": {"vogue.divergence": "forward-kl"},
        "sigma-0.2": {"augment.noise_sigma": 0.2},
        "sigma-0.4": {"augment.noise_sigma": 0.4},
        "sigma-0.8": {"augment.noise_sigma": 0.8},
    }
    if name not in table:
        raise ConfigError(f"unknown ablation variant {name!r}; expected one of {ABLATION_VARIANTS}")
    return dict(table[name])


def assert_grpo_equivalence(cfg, out_dir, probe_steps=4):
    """Degeneracy check: shaping fully disabled and the noisy branch closed
    must reproduce the plain-GRPO metrics byte for byte under a shared seed.

    Runs a short probe pair and compares metric lines literally. A mismatch
    means the two code paths have drifted apart and aborts the ablation.
    """
    base = {"steps": int(probe_steps), "checkpoint_every": 0, "eval.every": 0}
    degen = _with_updates(cfg, {**base, "algorithm": "vogue",
                                "vogue.enable_uv": False, "vogue.enable_entropy": False,
                                "vogue.p_start": 0.0, "vogue.p_end": 0.0,
                                "vogue.fixed_p": None, "vogue.lazy_noisy": True})
    plain = _with_updates(cfg, {**base, "algorithm": "grpo",
                                "vogue.enable_uv": False, "vogue.enable_entropy": False})
    dir_a = os.path.join(out_dir, "equivalence", "degenerate-vogue")
    dir_b = os.path.join(out_dir, "equivalence", "plain-grpo")
    run_training(degen, dir_a)
    run_training(plain, dir_b)
    rows_a = [json.dumps(r, separators=(",", ":")) for r in read_metrics(os.path.join(dir_a, "metrics.jsonl"))]
    rows_b = [json.dumps(r, separators=(",", ":")) for r in read_metrics(os.path.join(dir_b, "metrics.jsonl"))]
    if rows_a != rows_b:
        diffs = [i for i, (a, b) in enumerate(zip(rows_a, rows_b)) if a != b]
        raise ContractError(
            f"degenerate-shaping run diverged from plain GRPO at step rows {diffs[:3]} "
            f"(of {len(rows_a)} vs {len(rows_b)})")
    return {"probe_steps": probe_steps, "metric_rows_compared": len(rows_a),
            "result": "byte-identical"}


def run_ablation(cfg, variants, out_dir, *, progress=None):
    """Run each named variant from the same base config and seed, then merge
    final evals into one table. The no-uv-no-entropy variant additionally
    triggers the built-in GRPO-equivalence assertion."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    results = {}
    equivalence = None
    for name in variants:
        updates = _variant_updates(name)  # validates the name up front
        if progress is not None:
            progress(f"variant {name}")
        run_cfg = _with_updates(cfg, {**updates, "algorithm": "vogue"})
        rd = os.path.join(out_dir, name)
        run_training(run_cfg, rd)
        rows = read_metrics(os.path.join(rd, "metrics.jsonl"))
        tail = rows[-min(10, len(rows)):]
        results[name] = {
            "run_dir": rd,
            "final_eval": final_eval_of(rd),
            "tail_accuracy_reward_mean": float(np.mean([r["accuracy_reward_mean"] for r in tail])),
        }
        if name == "no-uv-no-entropy":
            equivalence = assert_grpo_equivalence(cfg, out_dir)

    ks = sorted(int(k) for k in cfg.eval.ks)
    table = {
        "base_config": config_to_dict(cfg),
        "variants": results,
        "grpo_equivalence": equivalence,
    }
    _write_json(os.path.join(out_dir, "table.json"), table)
    cols = ["pass1"] + [f"pass@{k}" for k in ks] + ["reward_mean", "tail_acc"]
    lines = ["# Ablation table", ""]
    lines.append("| variant | " + " | ".join(cols) + " |")
    lines.append("|---" * (len(cols) + 1) + "|")
    for name in variants:
        ev = results[name]["final_eval"]
        vals = [ev["pass1"]] + [ev["pass_at_k"][str(k)] for k in ks] \
            + [ev["reward_mean"], results[name]["tail_accuracy_reward_mean"]]
        lines.append(f"| {name} | " + " | ".join(_fmt(v) for v in vals) + " |")
    lines.append("")
    if equivalence is not None:
        lines.append(f"GRPO equivalence probe: {equivalence['result']} over "
                     f"{equivalence['metric_rows_compared']} metric rows.")
        lines.append("")
    with open(os.path.join(out_dir, "table.md"), "w") as fh:
        fh.write("\n".join(lines))
    return table


# ------------------------------------------------------------- plotting


def write_curves(runs, keys, out_dir):
    """One CSV and one SVG per key; a column per run, indexed by step.

    runs maps label -> run directory. Rendering uses the Agg backend so this
    works headless; import stays local so nothing else pays for matplotlib.
    """
    os.makedirs(out_dir, exist_ok=True)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = {}
    for label, rd in runs.items():
        rows = read_metrics(os.path.join(rd, "metrics.jsonl"))
        cols = rows_to_columns(rows, ("step",) + tuple(keys))
        series[label] = cols

    written = []
    for key in keys:
        csv_path = os.path.join(out_dir, f"curve_{key}.csv")
        labels = sorted(series)
        with open(csv_path, "w") as fh:
            fh.write("step," + ",".join(labels) + "\n")
            n = max(len(series[lb]["step"]) for lb in labels)
            for i in range(n):
                cells = [str(int(series[labels[0]]["step"][i])) if i < len(series[labels[0]]["step"]) else ""]
                for lb in labels:
                    col = series[lb][key]
                    cells.append(repr(float(col[i])) if i < len(col) else "")
                fh.write(",".join(cells) + "\n")

        fig, ax = plt.subplots(figsize=(7, 4))
        for lb in labels:
            ax.plot(series[lb]["step"], series[lb][key], label=lb, linewidth=1.2)
        ax.set_xlabel("step")
        ax.set_ylabel(key)
        ax.legend(fontsize=7)
        fig.tight_layout()
        svg_path = os.path.join(out_dir, f"curve_{key}.svg")
        fig.savefig(svg_path)
        plt.close(fig)
        written.extend([csv_path, svg_path])
    return written


def plot_runs(run_dirs, keys, out_dir):
    """CLI entry: labels are the run directory basenames (deduplicated)."""
    runs = {}
    for rd in run_dirs:
        label = os.path.basename(os.path.normpath(rd))
        if label in runs:
            label = os.path.normpath(rd).replace(os.sep, "_")
        runs[label] = rd
    return write_curves(runs, keys, out_dir)
