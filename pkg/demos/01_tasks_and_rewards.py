# Synthetic visual tasks and the verifiable reward.
#
# Every task instance is a small color-grid image plus a tokenized question;
# the checker knows the unique answer and grades responses with no learned
# component. Run this to see what the policy is actually trained on.

import numpy as np

from tinyvogue import RngStream
from tinyvogue.tasks import (
    EnvConfig, TOKEN_NAMES, generate_task, label_image, sample_task, verify,
    ANS_OPEN, ANS_CLOSE, THINK_OPEN, THINK_CLOSE, BOS, EOS,
)


def words(tokens):
    return " ".join(TOKEN_NAMES[t] for t in tokens)


st = RngStream(7)

# One instance per family. The image is a grid_n x grid_n arrangement of
# colored cells; label_image recovers the symbolic layout from raw pixels,
# which is the same routine the transform-safety checks rely on.
for family in ("shape-count", "majority-color", "cell-parity", "bandit"):
    inst = generate_task(family, 2, st.derive(family))
    print(f"--- {family}")
    print("question:", words(inst.question_tokens))
    print("answer:  ", words(inst.answer_tokens))
    print("layout:\n", label_image(inst.image, 3, 5))

# Smudged (ambiguous) instances carry faint sub-threshold fills in empty
# cells. They do not change the layout labels, so the answer is untouched,
# but they make the pixels less trustworthy, which is what the uncertainty
# signal later keys on.
inst = generate_task("shape-count", 2, st.derive("amb"), ambiguous_fraction=1.0)
print("\nambiguous:", inst.ambiguous, "| smudges:", inst.meta["smudges"])
print("layout survives:\n", label_image(inst.image, 3, 5))

# The reward has two graded parts: a full-grammar format check
# (<bos>-free response: <think> ... </think> <answer> a </answer> <eos>)
# and answer accuracy read from the first well-formed answer span.
# total = 0.1 * format + 0.9 * accuracy.
ans = inst.answer_tokens[0]
cases = {
    "perfect":        [THINK_OPEN, THINK_CLOSE, ANS_OPEN, ans, ANS_CLOSE, EOS],
    "format only":    [THINK_OPEN, THINK_CLOSE, ANS_OPEN, (ans + 1) % 26 or 6, ANS_CLOSE, EOS],
    "answer only":    [ANS_OPEN, ans, ANS_CLOSE],
    "garbage":        [9, 9, 9],
}
print()
for name, tokens in cases.items():
    r = verify(tokens, inst)
    print(f"{name:12s} format={r.format:.0f} accuracy={r.accuracy:.0f} total={r.total:.2f}")

# sample_task draws family and difficulty per the env config's mix; this is
# the exact entry point the trainer uses every step.
cfg = EnvConfig(ambiguous_fraction=0.5)
fams = [sample_task(cfg, st.derive(f"mix{i}")).family for i in range(12)]
print("\nsampled mix:", fams)
