# Semantics-preserving image perturbations.
#
# The noisy branch trains on T(x) where T never changes the ground-truth
# answer. This script shows the transform inventory, the determinism of the
# pipeline under a fixed stream, and the invariance that makes the whole
# scheme sound.

import numpy as np

from tinyvogue import RngStream
from tinyvogue.augment import AugmentSpec, apply_named_transform, describe, perturb
from tinyvogue.tasks import EnvConfig, answer_from_labels, label_image, sample_task

st = RngStream(11)
cfg = EnvConfig(ambiguous_fraction=0.5)
inst = sample_task(cfg, st.derive("task"))

spec = AugmentSpec()  # flips/rotations at p=0.5, jitter 0.03, noise sigma 0.4
print("spec:", describe(spec))

# Same stream state, same output, bit for bit. A re-derived stream replays
# the identical draw sequence, which is what makes training runs repeatable.
trace = []
a = perturb(inst.image, spec, inst.safe_transforms, st.derive("p"), trace=trace)
b = perturb(inst.image, spec, inst.safe_transforms, st.derive("p"))
print("deterministic replay:", np.array_equal(a, b), "| applied:", trace)

# Every declared transform preserves the relabeled answer. This is checked
# exhaustively (1000 instances) in the acceptance suite; here are a few.
ok = 0
for i in range(25):
    t = sample_task(cfg, st.derive(f"t{i}"))
    for kind in t.safe_transforms:
        out = apply_named_transform(t.image, kind, st.derive(f"t{i}").derive(kind))
        labels = label_image(out, cfg.grid_n, cfg.cell_px)
        ok += answer_from_labels(t.family, t.question_tokens, labels) == t.answer_tokens
print(f"answers preserved: {ok}/{25 * len(inst.safe_transforms)}")

# Noise magnitude is the main ablation knob: pixel distortion grows with
# sigma while the label layer (and hence the answer) stays fixed.
for sigma in (0.0, 0.2, 0.4, 0.8):
    out = apply_named_transform(inst.image, "gaussian-noise", st.derive("n"), noise_sigma=sigma)
    dist = float(np.abs(out - inst.image).mean())
    same = answer_from_labels(
        inst.family, inst.question_tokens,
        label_image(out, cfg.grid_n, cfg.cell_px)) == inst.answer_tokens
    print(f"sigma={sigma:.1f}  mean pixel shift {dist:.3f}  answer preserved: {same}")
