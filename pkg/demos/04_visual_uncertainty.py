# The visual uncertainty signal and the capped advantage bonuses.
#
# U_v measures how much the policy's next-token distributions move when the
# conditioning image is perturbed: teacher-force the same response under x
# and T(x), take a symmetric KL per position. High U_v means the model's
# read of the image is unstable there, and those responses get a bonus that
# steers training toward visually uncertain cases.

import numpy as np

from tinyvogue import RngStream, policy as pol
from tinyvogue.augment import apply_named_transform
from tinyvogue.tasks import ANS_CLOSE, ANS_OPEN, generate_task
from tinyvogue.vogue import (
    ShapingConfig, entropy_bonus, forward_kl, symmetric_kl, uncertainty_bonus,
    visual_uncertainty,
)

# The divergences on a tiny hand-checkable pair.
P = pol.TokenDist(probs=np.array([0.5, 0.5]), logps=np.log([0.5, 0.5]))
Q = pol.TokenDist(probs=np.array([0.25, 0.75]), logps=np.log([0.25, 0.75]))
print(f"symmetric KL {symmetric_kl(P, Q):.4f}   forward KL {forward_kl(P, Q):.4f}")
print("identical dists:", symmetric_kl(P, P))

# A policy with random weights (so the image pathway matters), probed on one
# instance under growing noise. U_v grows with sigma; with x unchanged it is
# exactly zero. The same response tokens are scored every time.
pcfg = pol.PolicyConfig(vocab_size=26, embed_dim=16, n_heads=2, mlp_hidden=32, k_img=2)
params = pol.init_policy(pcfg, RngStream(0).derive("init"), dtype=np.float64)
rng = np.random.default_rng(5)
for t in params.values():
    t.data = rng.standard_normal(t.data.shape) * 0.4
arrs = pol.as_arrays(params)

st = RngStream(3)
inst = generate_task("shape-count", 1, st.derive("task"))
response = [ANS_OPEN] + list(inst.answer_tokens) + [ANS_CLOSE]
print("\nsigma  mean U_v over the answer span")
for sigma in (0.0, 0.2, 0.4, 0.8):
    x_noisy = inst.image if sigma == 0 else apply_named_transform(
        inst.image, "gaussian-noise", st.derive("noise"), noise_sigma=sigma)
    _, mean_u = visual_uncertainty(arrs, pcfg, inst.image, x_noisy,
                                   inst.question_tokens, response)
    print(f"{sigma:4.1f}   {mean_u:.6f}")

# Bonuses are capped by the advantage scale so exploration pressure cannot
# swamp the reward signal: B = min(|A|/beta, alpha * signal).
s = ShapingConfig()
print("\nA=0.6:  B_v at U=0.5 ->", uncertainty_bonus(0.6, 0.5, s.alpha_v, s.beta_v),
      " (|A|/beta_v caps)")
print("A=0.6:  B_v at U=0.1 ->", uncertainty_bonus(0.6, 0.1, s.alpha_v, s.beta_v),
      " (alpha_v*U binds)")
print("A=0.0:  B_v at U=9.0 ->", uncertainty_bonus(0.0, 9.0, s.alpha_v, s.beta_v),
      " (no advantage, no bonus)")
print("A=0.8:  B_e at H=2.0 ->", entropy_bonus(0.8, 2.0, s.alpha_e, s.beta_e))
