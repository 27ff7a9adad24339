"""Held-out evaluation: pass@k estimation over fixed task suites.

pass@k uses the unbiased combinatorial estimator: with c of n samples
correct, the chance a random size-k subset contains at least one correct
sample is 1 - C(n-c, k) / C(n, k). Evaluating once with n samples then
yields every k <= n from the same rollouts.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from . import policy as pol
from .errors import ContractError
from .tasks import EOS, verify


def pass_at_k(n, c, k):
    """Probability that at least one of k samples drawn without replacement
    from n total (c of them correct) is correct."""
    n, c, k = int(n), int(c), int(k)
    if not (0 <= c <= n):
        raise ContractError(f"pass_at_k needs 0 <= c <= n, got c={c} n={n}")
    if not (1 <= k <= n):
        raise ContractError(f"pass_at_k needs 1 <= k <= n, got k={k} n={n}")
    return 1.0 - comb(n - c, k) / comb(n, k)


@dataclass
class EvalReport:
    size: int
    n: int
    pass1: float  # mean per-sample accuracy over all n samples
    pass1_first: float  # accuracy of each task's first sample only
    pass_k: dict  # k -> unbiased pass@k estimate, averaged over tasks
    reward_mean: float
    format_rate: float
    per_family: dict

    def to_dict(self):
        return {
            "size": self.size,
            "n": self.n,
            "pass1": self.pass1,
            "pass1_first": self.pass1_first,
            "pass_at_k": {str(k): v for k, v in sorted(self.pass_k.items())},
            "reward_mean": self.reward_mean,
            "format_rate": self.format_rate,
            "per_family": self.per_family,
        }


def evaluate_suite(arrs, pcfg, instances, *, n, ks, stream, temperature=1.0,
                   max_response_len=12):
    """Sample n responses per task from the given weights and score them.

    Sampling streams are derived per (task, sample), so reordering tasks or
    changing n for one task cannot shift any other task's draws.
    """
    if not instances:
        raise ContractError("evaluate_suite needs at least one task")
    ks = tuple(int(k) for k in ks)
    if any(k < 1 or k > n for k in ks):
        raise ContractError(f"every k in {ks} must lie in [1, n={n}]")

    per_task = []
    for j, inst in enumerate(instances):
        tstream = stream.derive(f"i{j}")
        correct = []
        rewards = []
        formats = []
        for m in range(n):
            resp = pol.sample_response(arrs, pcfg, inst.image, inst.question_tokens,
                                       max_len=max_response_len, eos_id=EOS,
                                       stream=tstream.derive(f"n{m}"),
                                       temperature=temperature)
            br = verify(resp.tokens, inst)
            correct.append(int(br.accuracy > 0))
            rewards.append(br.total)
            formats.append(br.format)
        per_task.append({
            "family": inst.family,
            "c": sum(correct),
            "first": correct[0],
            "acc": float(np.mean(correct)),
            "reward": float(np.mean(rewards)),
            "format": float(np.mean(formats)),
        })

    def summarize(tasks):
        return {
            "count": len(tasks),
            "pass1": float(np.mean([t["acc"] for t in tasks])),
            "pass1_first": float(np.mean([t["first"] for t in tasks])),
            "pass_at_k": {str(k): float(np.mean([pass_at_k(n, t["c"], k) for t in tasks]))
                          for k in ks},
        }

    families = sorted({t["family"] for t in per_task})
    per_family = {fam: summarize([t for t in per_task if t["family"] == fam])
                  for fam in families}
    return EvalReport(
        size=len(instances),
        n=n,
        pass1=float(np.mean([t["acc"] for t in per_task])),
        pass1_first=float(np.mean([t["first"] for t in per_task])),
        pass_k={k: float(np.mean([pass_at_k(n, t["c"], k) for t in per_task])) for k in ks},
        reward_mean=float(np.mean([t["reward"] for t in per_task])),
        format_rate=float(np.mean([t["format"] for t in per_task])),
        per_family=per_family,
    )
