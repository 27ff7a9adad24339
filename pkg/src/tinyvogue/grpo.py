"""Group-relative advantages and the clipped surrogate objective.

The actual training step lives in the dual-branch trainer; the plain variant
here is the same machinery with the noisy branch disabled, so the two
algorithms coincide exactly when the branch probability is zero.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, NumericError

# exp overflows float64 near 710; anything close means the policies diverged
RATIO_LOG_LIMIT = 700.0


@dataclass
class RolloutGroup:
    """The G responses drawn for one input under one conditioning."""

    obs: np.ndarray  # the image the group was conditioned on
    responses: list
    advantages: np.ndarray


@dataclass
class SurrogateStats:
    objective: float
    clip_fraction: float
    mean_ratio: float


def normalize_advantages(rewards, std_mode="population"):
    """Group-normalize rewards: (r - mean) / std.

    A near-zero-variance group yields all-zero advantages rather than a
    blow-up; groups of fewer than two carry no relative signal and are
    rejected.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ContractError(f"advantage normalization needs a 1-D group of >= 2 rewards, got shape {r.shape}")
    if std_mode not in ("population", "sample"):
        raise ContractError(f"unknown std_mode {std_mode!r}")
    std = r.std(ddof=0 if std_mode == "population" else 1)
    if std < 1e-8:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def token_ratios(new_logps, old_logps):
    """Per-token importance ratios exp(new - old) with an explicit overflow
    guard that names the offending token."""
    new = np.asarray(new_logps, dtype=np.float64)
    old = np.asarray(old_logps, dtype=np.float64)
    if new.shape != old.shape or new.ndim != 1:
        raise ContractError(f"token_ratios: mismatched shapes {new.shape} vs {old.shape}")
    delta = new - old
    bad = np.flatnonzero(~np.isfinite(delta) | (np.abs(delta) > RATIO_LOG_LIMIT))
    if bad.size:
        t = int(bad[0])
        raise NumericError(f"token_ratios: log-ratio {delta[t]!r} at token index {t} is not representable")
    return np.exp(delta)


def clipped_surrogate(new_logps, old_logps, advantages, clip_eps):
    """Differentiable clipped objective over one flat token stream.

    new_logps is a graph tensor; old log-probs and shaped advantages enter as
    constants (no gradient flows through them). Returns the scalar objective
    tensor (to maximize) and detached summary stats.
    """
    old = np.asarray(old_logps, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    if not isinstance(new_logps, Tensor):
        raise ContractError("clipped_surrogate expects the new log-probs as a graph tensor")
    if new_logps.data.shape != old.shape or old.shape != adv.shape or old.ndim != 1:
        raise ContractError(
            f"clipped_surrogate: shapes differ: new {new_logps.data.shape}, old {old.shape}, adv {adv.shape}")
    if not (0.0 < clip_eps < 1.0):
        raise ContractError(f"clip_eps must lie in (0, 1), got {clip_eps}")

    ratios_np = token_ratios(new_logps.data, old)  # also runs the overflow guard

    rho = ad.exp(ad.sub(new_logps, ad.constant(old)))
    adv_t = ad.constant(adv)
    unclipped = ad.mul(rho, adv_t)
    clipped = ad.mul(ad.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps), adv_t)
    objective = ad.tmean(ad.minimum(unclipped, clipped))

    unclipped_np = ratios_np * adv
    clipped_np = np.clip(ratios_np, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    stats = SurrogateStats(
        objective=float(objective.data),
        clip_fraction=float(np.mean(clipped_np < unclipped_np)),
        mean_ratio=float(ratios_np.mean()),
    )
    return objective, stats


def grpo_train_step(state, cfg, streams):
    """One plain GRPO step: raw-branch rollouts only, shared engine."""
    from .vogue import train_step_core

    return train_step_core(state, cfg, streams, dual_branch=False)
