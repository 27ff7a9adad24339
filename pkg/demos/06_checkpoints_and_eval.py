# Checkpoint round-trips and the held-out evaluation suite.
#
# A checkpoint stores the live parameters, the old-policy snapshot, and the
# optimizer moments behind a sha256, so a restored run continues exactly
# where the original left off. "Exactly" is checkable: the restored policy
# must emit bit-identical samples.

import tempfile
from pathlib import Path

import numpy as np

from tinyvogue import RngStream, policy as pol
from tinyvogue.checkpoint import load_checkpoint, restore_train_state
from tinyvogue.config import config_from_dict
from tinyvogue.evalkit import evaluate_suite, pass_at_k
from tinyvogue.harness import run_training
from tinyvogue.tasks import EOS, EnvConfig, build_suite

CFG = {
    "seed": 4,
    "algorithm": "vogue",
    "steps": 8,
    "batch_inputs": 2,
    "policy": {"vocab_size": 26, "embed_dim": 16, "n_heads": 2, "mlp_hidden": 32, "k_img": 2},
    "env": {"family_mix": {"shape-count": 1.0}, "difficulty": 1, "max_response_len": 8},
    "grpo": {"group_size": 4},
    "eval": {"suite_size": 8, "n": 4, "ks": [2, 4]},
}

root = Path(tempfile.mkdtemp(prefix="tinyvogue-demo-"))
cfg = config_from_dict(CFG)
result = run_training(cfg, root / "run")
print(f"trained 8 steps under {root}/run")

# Reload from disk and compare against the live state that produced the file.
ckpt = load_checkpoint(root / "run" / "ckpt_final.bin", expected_dtype="float64")
print(f"checkpoint: step {ckpt.step}, dtype {ckpt.dtype}, "
      f"{sum(len(v) for v in ckpt.tensors.values())} tensors")
restored = restore_train_state(ckpt, cfg.optim)

live = result["state"]
suite_stream = RngStream(99)
probe = build_suite(EnvConfig(max_response_len=8), suite_stream.derive("tasks"), 1)[0]
a = pol.sample_response(pol.as_arrays(live.params), cfg.policy, probe.image,
                        probe.question_tokens, max_len=8, eos_id=EOS,
                        stream=RngStream(7).derive("probe"))
b = pol.sample_response(pol.as_arrays(restored.params), cfg.policy, probe.image,
                        probe.question_tokens, max_len=8, eos_id=EOS,
                        stream=RngStream(7).derive("probe"))
print("restored sample tokens match:", a.tokens == b.tokens)
print("restored sample logps bit-identical:", a.logps.tobytes() == b.logps.tobytes())

# The pass@k estimator, first on paper numbers, then on a real suite.
print(f"\npass@k with n=8, c=2: k=1 {pass_at_k(8, 2, 1):.4f}  k=4 {pass_at_k(8, 2, 4):.4f}")

suite = build_suite(EnvConfig(ambiguous_fraction=0.5, max_response_len=8),
                    suite_stream.derive("suite"), 24)
report = evaluate_suite(pol.as_arrays(restored.params), cfg.policy, suite,
                        n=4, ks=(1, 2, 4), stream=suite_stream.derive("eval"),
                        max_response_len=8)
print(f"suite of {report.size} tasks, {report.n} samples each")
print("  pass1 (all samples):", round(report.pass1, 4))
print("  pass@k:", {k: round(v, 4) for k, v in report.pass_k.items()})
print("  mean reward:", round(report.reward_mean, 4),
      " format rate:", round(report.format_rate, 4))
for fam, stats in report.per_family.items():
    print(f"  {fam}: {stats['count']} tasks, pass1 {stats['pass1']:.4f}")
