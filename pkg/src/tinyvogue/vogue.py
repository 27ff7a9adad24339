"""Dual-branch training with visual-uncertainty-guided advantage shaping.

One engine drives both algorithms. The plain variant never opens the noisy
branch; the full variant perturbs each image, rolls out both branches from
the old snapshot, measures per-token distribution shift between the two
conditionings, converts it into capped bonuses, and trains on a per-response
Bernoulli mix of the branches whose probability anneals over the run.

Bonuses are computed in plain numpy before the graph is built, so no gradient
can flow through the uncertainty or entropy signals by construction.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import policy as pol
from .augment import perturb
from .errors import ConfigError, ContractError
from .grpo import RolloutGroup, clipped_surrogate, normalize_advantages
from .optim import AdamW
from .rng import RngStream
from .tasks import EOS, sample_task, verify

DIVERGENCES = ("symmetric-kl", "forward-kl")
GRANULARITIES = ("per-token", "sequence-mean")


@dataclass
class ShapingConfig:
    alpha_v: float = 1.0
    beta_v: float = 2.0
    alpha_e: float = 0.4
    beta_e: float = 2.0
    p_start: float = 1.0
    p_end: float = 0.0
    fixed_p: float = None  # overrides annealing when set (ablation)
    divergence: str = "symmetric-kl"
    uncertainty_granularity: str = "per-token"
    enable_uv: bool = True
    enable_entropy: bool = True
    lazy_noisy: bool = True

    def validate(self):
        if self.beta_v <= 0 or self.beta_e <= 0 or self.alpha_v <= 0 or self.alpha_e <= 0:
            raise ConfigError("shaping coefficients alpha_v, beta_v, alpha_e, beta_e must be positive")
        for name in ("p_start", "p_end"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.fixed_p is not None and not (0.0 <= self.fixed_p <= 1.0):
            raise ConfigError(f"fixed_p must lie in [0, 1], got {self.fixed_p}")
        if self.divergence not in DIVERGENCES:
            raise ConfigError(f"divergence must be one of {DIVERGENCES}")
        if self.uncertainty_granularity not in GRANULARITIES:
            raise ConfigError(f"uncertainty_granularity must be one of {GRANULARITIES}")
        return self


@dataclass
class BranchPair:
    """Everything one input contributed before branch selection."""

    x: np.ndarray
    x_noisy: np.ndarray  # equals x when the noisy branch was not opened
    raw: RolloutGroup
    noisy: RolloutGroup  # None when not opened
    uv: list  # per noisy response: per-token U_v array


@dataclass
class ShapedAdvantages:
    raw: list  # per response: per-token shaped advantage array
    noisy: list
    be_raw: list  # applied entropy bonuses, kept for logging
    be_noisy: list
    bv: list  # applied uncertainty bonuses (noisy branch only)


# ------------------------------------------------------------- divergences


def _kl_rows(p, logp, q, logq):
    return (p * (logp - logq)).sum(axis=-1)


def symmetric_kl(P, Q):
    """Mean of forward and backward KL between two floored distributions."""
    f = float((P.probs * (P.logps - Q.logps)).sum())
    b = float((Q.probs * (Q.logps - P.logps)).sum())
    return 0.5 * (f + b)


def forward_kl(P, Q):
    return float((P.probs * (P.logps - Q.logps)).sum())


def visual_uncertainty(old_arrs, pcfg, x, x_noisy, question_tokens, response_tokens,
                       divergence="symmetric-kl"):
    """Token-level distribution shift between the two image conditionings.

    Teacher-forces the (noisy-branch) response under the old snapshot twice,
    once per image, and measures the divergence at every response position.
    Returns the per-token array and its mean.
    """
    if divergence not in DIVERGENCES:
        raise ContractError(f"divergence must be one of {DIVERGENCES}")
    p_probs, p_logps = pol.response_dists_np(
        old_arrs, pcfg, pol.encode_image_np(old_arrs, pcfg, x), question_tokens, response_tokens)
    q_probs, q_logps = pol.response_dists_np(
        old_arrs, pcfg, pol.encode_image_np(old_arrs, pcfg, x_noisy), question_tokens, response_tokens)
    fwd = _kl_rows(p_probs, p_logps, q_probs, q_logps)
    if divergence == "forward-kl":
        u = fwd
    else:
        u = 0.5 * (fwd + _kl_rows(q_probs, q_logps, p_probs, p_logps))
    return u, float(u.mean())


# ------------------------------------------------------------- shaping


def uncertainty_bonus(a_noi, u, alpha_v, beta_v):
    """min(|A|/beta_v, alpha_v * U); U is already a detached constant here."""
    if beta_v <= 0:
        raise ContractError("beta_v must be positive")
    return np.minimum(abs(float(a_noi)) / beta_v, alpha_v * np.asarray(u, dtype=np.float64))


def entropy_bonus(a, h, alpha_e, beta_e):
    """min(|A|/beta_e, alpha_e * H); H is already a detached constant here."""
    if beta_e <= 0:
        raise ContractError("beta_e must be positive")
    return np.minimum(abs(float(a)) / beta_e, alpha_e * np.asarray(h, dtype=np.float64))


def shape_advantages(pair, shaping):
    """Broadcast group advantages to tokens and add the enabled bonuses."""
    raw_shaped, be_raw = [], []
    for a, resp in zip(pair.raw.advantages, pair.raw.responses):
        n = len(resp.tokens)
        be = entropy_bonus(a, resp.entropies, shaping.alpha_e, shaping.beta_e) \
            if shaping.enable_entropy else np.zeros(n)
        raw_shaped.append(np.full(n, float(a)) + be)
        be_raw.append(be)
    noisy_shaped, be_noisy, bv_all = [], [], []
    if pair.noisy is not None:
        for a, resp, u in zip(pair.noisy.advantages, pair.noisy.responses, pair.uv):
            n = len(resp.tokens)
            be = entropy_bonus(a, resp.entropies, shaping.alpha_e, shaping.beta_e) \
                if shaping.enable_entropy else np.zeros(n)
            if shaping.enable_uv:
                u_used = np.full(n, float(np.mean(u))) \
                    if shaping.uncertainty_granularity == "sequence-mean" else u
                bv = uncertainty_bonus(a, u_used, shaping.alpha_v, shaping.beta_v)
            else:
                bv = np.zeros(n)
            noisy_shaped.append(np.full(n, float(a)) + be + bv)
            be_noisy.append(be)
            bv_all.append(bv)
    return ShapedAdvantages(raw=raw_shaped, noisy=noisy_shaped, be_raw=be_raw,
                            be_noisy=be_noisy, bv=bv_all)


def anneal_p(s, s_total, p_start, p_end):
    """Linear decay of the noisy-branch probability, clamped after s_total."""
    if s_total <= 0:
        raise ContractError("s_total must be positive")
    if s < 0:
        raise ContractError("step index must be >= 0")
    return p_end + (p_start - p_end) * max(0.0, 1.0 - s / s_total)


def select_branch(p_noi, stream):
    """Bernoulli branch pick. The endpoints never consume randomness, which
    keeps degenerate runs stream-aligned with single-branch runs."""
    if p_noi <= 0.0:
        return 0
    if p_noi >= 1.0:
        return 1
    return int(stream.bernoulli(p_noi))


# ------------------------------------------------------------- the step


@dataclass
class TrainStreams:
    """Fixed stream topology. Every consumer gets a stream derived from a
    per-purpose root keyed by step/input/group indices, so no branch's draws
    can shift another branch's, and skipped work never shifts anything."""

    root: RngStream
    env: RngStream
    raw: RngStream
    noisy: RngStream
    aug: RngStream
    branch: RngStream

    @classmethod
    def from_seed(cls, seed):
        root = RngStream(seed)
        return cls(root=root, env=root.derive("env"), raw=root.derive("rollout.raw"),
                   noisy=root.derive("rollout.noisy"), aug=root.derive("aug"),
                   branch=root.derive("branch"))


@dataclass
class TrainState:
    params: dict
    old: dict  # plain-array snapshot that generated the current rollouts
    opt: AdamW
    step: int = 0


def init_state(cfg, streams):
    params = pol.init_policy(cfg.policy, streams.root.derive("init"), dtype=np.float64)
    opt = AdamW(params, lr=cfg.optim.lr, betas=cfg.optim.betas, eps=cfg.optim.eps,
                weight_decay=cfg.optim.weight_decay)
    return TrainState(params=params, old=pol.snapshot(params), opt=opt, step=0)


@dataclass
class _Selected:
    image_key: tuple
    image: np.ndarray
    question: list
    tokens: list
    old_logps: np.ndarray
    shaped_adv: np.ndarray
    entropies: np.ndarray
    be: np.ndarray
    bv: np.ndarray
    branch: int


@dataclass
class StepPlan:
    """Everything a step needs with all stochastic and detached quantities
    frozen; the objective is then a pure function of the parameters."""

    step: int
    p_noi: float
    pairs: list
    selected: list
    metrics: dict


def _rollout_group(old_arrs, pcfg, env_cfg, image, instance, stream_root, group_size, std_mode):
    responses = []
    for i in range(group_size):
        resp = pol.sample_response(old_arrs, pcfg, image, instance.question_tokens,
                                   max_len=env_cfg.max_response_len, eos_id=EOS,
                                   stream=stream_root.derive(f"g{i}"),
                                   temperature=pcfg.temperature)
        resp.reward = verify(resp.tokens, instance)
        responses.append(resp)
    adv = normalize_advantages([r.reward.total for r in responses], std_mode)
    return RolloutGroup(obs=image, responses=responses, advantages=adv)


def prepare_step(state, cfg, streams, dual_branch):
    """Sample rollouts, score them, shape advantages, pick branches."""
    s = state.step
    shaping = cfg.vogue
    if dual_branch:
        p_noi = shaping.fixed_p if shaping.fixed_p is not None \
            else anneal_p(s, cfg.steps, shaping.p_start, shaping.p_end)
    else:
        p_noi = 0.0
    open_noisy = dual_branch and (p_noi > 0.0 or not shaping.lazy_noisy)

    old_arrs = state.old
    pairs, selected = [], []
    raw_rewards, noisy_rewards = [], []
    uv_tokens = []
    for j in range(cfg.batch_inputs):
        inst = sample_task(cfg.env, streams.env.derive(f"s{s}").derive(f"i{j}"))
        raw = _rollout_group(old_arrs, cfg.policy, cfg.env, inst.image, inst,
                             streams.raw.derive(f"s{s}").derive(f"i{j}"),
                             cfg.grpo.group_size, cfg.grpo.std_mode)
        raw_rewards.extend(r.reward for r in raw.responses)
        noisy, uv = None, []
        x_noisy = inst.image
        if open_noisy:
            x_noisy = perturb(inst.image, cfg.augment, inst.safe_transforms,
                              streams.aug.derive(f"s{s}").derive(f"i{j}"))
            noisy = _rollout_group(old_arrs, cfg.policy, cfg.env, x_noisy, inst,
                                   streams.noisy.derive(f"s{s}").derive(f"i{j}"),
                                   cfg.grpo.group_size, cfg.grpo.std_mode)
            noisy_rewards.extend(r.reward for r in noisy.responses)
            for resp in noisy.responses:
                u, _ = visual_uncertainty(old_arrs, cfg.policy, inst.image, x_noisy,
                                          inst.question_tokens, resp.tokens, shaping.divergence)
                uv.append(u)
                uv_tokens.append(u)
        pair = BranchPair(x=inst.image, x_noisy=x_noisy, raw=raw, noisy=noisy, uv=uv)
        pairs.append(pair)

        shaped = shape_advantages(pair, shaping)
        branch_stream = streams.branch.derive(f"s{s}").derive(f"i{j}")
        for i in range(cfg.grpo.group_size):
            z = select_branch(p_noi, branch_stream)
            if z and noisy is None:
                raise ContractError("branch selector asked for an unsampled noisy branch")
            if z:
                resp, adv = noisy.responses[i], shaped.noisy[i]
                be, bv = shaped.be_noisy[i], shaped.bv[i]
                image, key = x_noisy, (j, 1)
            else:
                resp, adv = raw.responses[i], shaped.raw[i]
                be, bv = shaped.be_raw[i], np.zeros(len(resp.tokens))
                image, key = inst.image, (j, 0)
            selected.append(_Selected(
                image_key=key, image=image, question=inst.question_tokens, tokens=resp.tokens,
                old_logps=resp.logps, shaped_adv=adv, entropies=resp.entropies,
                be=be, bv=bv, branch=z))

    sel_entropy = np.concatenate([r.entropies for r in selected])
    sel_be = np.concatenate([r.be for r in selected])
    noisy_bv = [r.bv for r in selected if r.branch == 1]
    metrics = {
        "reward_mean": float(np.mean([r.total for r in raw_rewards])),
        "accuracy_reward_mean": float(np.mean([r.accuracy for r in raw_rewards])),
        "format_reward_mean": float(np.mean([r.format for r in raw_rewards])),
        "reward_mean_noisy": float(np.mean([r.total for r in noisy_rewards])) if noisy_rewards else 0.0,
        "uv_mean": float(np.concatenate(uv_tokens).mean()) if uv_tokens else 0.0,
        "entropy_mean": float(sel_entropy.mean()),
        "p_noi": float(p_noi),
        "noisy_fraction": float(np.mean([r.branch for r in selected])),
        "bv_mean": float(np.concatenate(noisy_bv).mean()) if noisy_bv else 0.0,
        "be_mean": float(sel_be.mean()),
    }
    return StepPlan(step=s, p_noi=p_noi, pairs=pairs, selected=selected, metrics=metrics)


def compute_objective(params, plan, cfg):
    """Clipped surrogate over the selected token stream as a graph tensor.

    Pure in the parameters: everything else (responses, old log-probs, shaped
    advantages) is frozen inside the plan, which is what makes the
    finite-difference check of the full step objective meaningful.
    """
    prefixes = {}
    logp_parts = []
    for r in plan.selected:
        if r.image_key not in prefixes:
            prefixes[r.image_key] = pol.encode_image_graph(params, cfg.policy, r.image)
        logp_parts.append(pol.response_logp_graph(params, cfg.policy, prefixes[r.image_key],
                                                  r.question, r.tokens))
    new_logps = logp_parts[0] if len(logp_parts) == 1 else ad.concat(logp_parts)
    old = np.concatenate([r.old_logps for r in plan.selected])
    adv = np.concatenate([r.shaped_adv for r in plan.selected])
    return clipped_surrogate(new_logps, old, adv, cfg.grpo.clip_eps)


def train_step_core(state, cfg, streams, dual_branch):
    """One full step: plan, differentiate, update, refresh the snapshot.

    Any numeric failure surfaces before parameters or optimizer state mutate,
    so a raised step leaves the state exactly as it was.
    """
    plan = prepare_step(state, cfg, streams, dual_branch)
    try:
        with ad.Tape() as tape:
            objective, stats = compute_objective(state.params, plan, cfg)
            loss = ad.scale(objective, -1.0)
        ad.backward(loss, tape)
        state.opt.step()
    finally:
        ad.zero_grads(state.params.values())
    state.step += 1
    if state.step % cfg.grpo.old_update_period == 0:
        state.old = pol.snapshot(state.params)

    record = {"step": plan.step}
    record.update(plan.metrics)
    record["clip_fraction"] = stats.clip_fraction
    record["objective"] = stats.objective
    record["mean_ratio"] = stats.mean_ratio
    return record


def vogue_train_step(state, cfg, streams):
    """One dual-branch step with uncertainty-guided shaping."""
    return train_step_core(state, cfg, streams, dual_branch=True)
