"""Synthetic verifiable tasks over tiny grid images.

Every instance carries its own ground truth: the image is rendered from an
explicit cell layout, the layout is recoverable from pixels by `label_image`,
and the expected answer is a pure function of the recovered labels. Generation
self-checks that round trip, so a scoring bug cannot hide behind rendering.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .augment import TRANSFORM_KINDS
from .errors import ConfigError, ContractError, OracleError

# token table: structure first, then content
BOS = 0
EOS = 1
THINK_OPEN = 2
THINK_CLOSE = 3
ANS_OPEN = 4
ANS_CLOSE = 5
DIGIT_TOKENS = tuple(range(6, 16))  # digit d -> token 6 + d
RED, GREEN, BLUE, YELLOW = 16, 17, 18, 19
EVEN, ODD = 20, 21
Q_COUNT, Q_MAJORITY, Q_PARITY, Q_BANDIT = 22, 23, 24, 25
VOCAB_SIZE = 26

COLOR_TOKENS = (RED, GREEN, BLUE, YELLOW)
COLOR_NAMES = ("red", "green", "blue", "yellow")
STRUCTURAL_TOKENS = frozenset({BOS, EOS, THINK_OPEN, THINK_CLOSE, ANS_OPEN, ANS_CLOSE})
ANSWER_TOKENS = frozenset(DIGIT_TOKENS) | set(COLOR_TOKENS) | {EVEN, ODD}

TOKEN_NAMES = {
    BOS: "<bos>", EOS: "<eos>",
    THINK_OPEN: "<think>", THINK_CLOSE: "</think>",
    ANS_OPEN: "<answer>", ANS_CLOSE: "</answer>",
    RED: "red", GREEN: "green", BLUE: "blue", YELLOW: "yellow",
    EVEN: "even", ODD: "odd",
    Q_COUNT: "count?", Q_MAJORITY: "majority?", Q_PARITY: "parity?", Q_BANDIT: "bandit?",
}
TOKEN_NAMES.update({DIGIT_TOKENS[d]: str(d) for d in range(10)})

# palette corners sit off the clamp boundary so additive jitter stays
# information-preserving; pairwise separation is 0.94 in every deciding channel
PALETTE = np.array([
    [0.97, 0.03, 0.03],
    [0.03, 0.97, 0.03],
    [0.03, 0.03, 0.97],
    [0.97, 0.97, 0.03],
])
BACKGROUND = np.array([0.03, 0.03, 0.03])
MIN_PALETTE_SEPARATION = 0.94
FILL_THRESHOLD = 0.48  # max-channel cell mean above this means "occupied"

# ambiguity device: faint non-answer-relevant fills whose peak channel sits
# only this far above background, i.e. below the fill threshold
SMUDGE_LEVEL = 0.2

FAMILIES = ("shape-count", "majority-color", "cell-parity", "bandit")

REWARD_FORMAT_WEIGHT = 0.1
REWARD_ACCURACY_WEIGHT = 0.9

# per-difficulty scene bounds
DIFFICULTY_TABLE = {
    1: dict(count_max=4, majority_win_max=4, distract_p=0.2, smudge_max=1),
    2: dict(count_max=9, majority_win_max=5, distract_p=0.4, smudge_max=3),
}


def token_name(tok):
    return TOKEN_NAMES.get(int(tok), f"?{int(tok)}")


def decode_tokens(tokens):
    return " ".join(token_name(t) for t in tokens)


@dataclass
class EnvConfig:
    family_mix: dict = field(default_factory=lambda: {"shape-count": 1.0, "majority-color": 1.0, "cell-parity": 1.0})
    difficulty: int = 2
    ambiguous_fraction: float = 0.3
    grid_n: int = 3
    cell_px: int = 5
    max_response_len: int = 12

    def validate(self):
        if not self.family_mix:
            raise ConfigError("family_mix must be a nonempty name->weight mapping")
        for name, w in self.family_mix.items():
            if name not in FAMILIES:
                raise ConfigError(f"unknown task family {name!r}; expected one of {FAMILIES}")
            if not (float(w) >= 0.0):
                raise ConfigError(f"family weight for {name!r} must be >= 0")
        if sum(float(w) for w in self.family_mix.values()) <= 0.0:
            raise ConfigError("family weights sum to zero")
        if self.difficulty not in DIFFICULTY_TABLE:
            raise ConfigError(f"difficulty must be one of {sorted(DIFFICULTY_TABLE)}")
        if not (0.0 <= self.ambiguous_fraction <= 1.0):
            raise ConfigError("ambiguous_fraction must lie in [0, 1]")
        if self.grid_n < 2 or self.cell_px < 3:
            raise ConfigError("grid_n >= 2 and cell_px >= 3 required")
        if self.grid_n * self.grid_n > 10:
            # count answers are single digit tokens
            raise ConfigError("grid_n too large: cell count must stay <= 10 for digit answers")
        if self.max_response_len < 6:
            raise ConfigError("max_response_len must admit the minimal well-formed response (6 tokens)")
        return self

    @property
    def image_hw(self):
        return self.grid_n * self.cell_px

    @property
    def n_cells(self):
        return self.grid_n * self.grid_n


@dataclass
class TaskInstance:
    family: str
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    question_tokens: list
    answer_tokens: list
    ambiguous: bool
    safe_transforms: tuple
    meta: dict


@dataclass
class RewardBreakdown:
    format: float
    accuracy: float

    @property
    def total(self):
        return REWARD_FORMAT_WEIGHT * self.format + REWARD_ACCURACY_WEIGHT * self.accuracy


def _cell_mask(cell_px):
    """Disc footprint inside one cell; also the labeling support."""
    c = (cell_px - 1) / 2.0
    yy, xx = np.mgrid[0:cell_px, 0:cell_px]
    r2 = (yy - c) ** 2 + (xx - c) ** 2
    return r2 <= (cell_px / 2.0) ** 2 + 0.5


def render_scene(layout, grid_n=3, cell_px=5, *, shapes=None, smudges=()):
    """Paint a (grid_n, grid_n) layout of palette indices (-1 = empty).

    shapes: optional per-cell "disc" | "square" (default square).
    smudges: iterable of (row, col, color_idx) faint fills at SMUDGE_LEVEL,
    painted only into empty cells.
    """
    layout = np.asarray(layout)
    if layout.shape != (grid_n, grid_n):
        raise ContractError(f"layout shape {layout.shape} does not match grid_n={grid_n}")
    hw = grid_n * cell_px
    img = np.tile(BACKGROUND, (hw, hw, 1)).astype(np.float64)
    disc = _cell_mask(cell_px)

    def paint(r, c, color, shape):
        y0, x0 = r * cell_px, c * cell_px
        cell = img[y0:y0 + cell_px, x0:x0 + cell_px]
        if shape == "square":
            cell[:, :] = color
        elif shape == "disc":
            cell[disc] = color
        else:
            raise ContractError(f"unknown cell shape {shape!r}")

    for r in range(grid_n):
        for c in range(grid_n):
            idx = int(layout[r, c])
            if idx < 0:
                continue
            shape = shapes[r][c] if shapes is not None else "square"
            paint(r, c, PALETTE[idx], shape)
    for r, c, idx in smudges:
        if layout[r, c] >= 0:
            raise ContractError("smudges may only occupy empty cells")
        faint = BACKGROUND + (PALETTE[idx] - BACKGROUND) * (SMUDGE_LEVEL / MIN_PALETTE_SEPARATION)
        paint(r, c, faint, "disc")
    return img


def label_image(image, grid_n=3, cell_px=5):
    """Recover the cell layout from pixels.

    Returns a (grid_n, grid_n) int array: palette index of each occupied cell,
    -1 where empty. Reads only the disc footprint of each cell so square and
    disc fills label identically; sub-threshold smudges read as empty.
    """
    image = np.asarray(image, dtype=np.float64)
    hw = grid_n * cell_px
    if image.shape != (hw, hw, 3):
        raise ContractError(f"image shape {image.shape} does not match ({hw}, {hw}, 3)")
    disc = _cell_mask(cell_px)
    labels = np.full((grid_n, grid_n), -1, dtype=np.int64)
    for r in range(grid_n):
        for c in range(grid_n):
            y0, x0 = r * cell_px, c * cell_px
            cell = image[y0:y0 + cell_px, x0:x0 + cell_px]
            mean = cell[disc].mean(axis=0)
            if mean.max() > FILL_THRESHOLD:
                dists = np.linalg.norm(PALETTE - mean, axis=1)
                labels[r, c] = int(np.argmin(dists))
    return labels


def answer_from_labels(family, question_tokens, labels):
    """The expected answer given a recovered layout. Shared by generation and
    transform-invariance checks so both sides agree by construction."""
    labels = np.asarray(labels)
    filled = labels[labels >= 0]
    if family == "shape-count":
        color_idx = COLOR_TOKENS.index(question_tokens[-1])
        n = int((filled == color_idx).sum())
        return [DIGIT_TOKENS[n]]
    if family == "majority-color":
        if filled.size == 0:
            raise OracleError("majority asked on an empty scene")
        counts = np.bincount(filled, minlength=len(COLOR_TOKENS))
        order = np.argsort(counts)
        if counts[order[-1]] == counts[order[-2]]:
            raise OracleError("majority is not unique")
        return [COLOR_TOKENS[int(order[-1])]]
    if family == "cell-parity":
        return [EVEN if filled.size % 2 == 0 else ODD]
    if family == "bandit":
        return [DIGIT_TOKENS[1]]
    raise ContractError(f"unknown family {family!r}")


def _place(counts, grid_n, stream):
    """Scatter per-color cell counts onto a random layout."""
    n_cells = grid_n * grid_n
    order = stream.permutation(n_cells)
    layout = np.full(n_cells, -1, dtype=np.int64)
    pos = 0
    for color_idx, n in enumerate(counts):
        for _ in range(int(n)):
            layout[order[pos]] = color_idx
            pos += 1
    return layout.reshape(grid_n, grid_n)


def _shapes_for(layout, grid_n, stream):
    shapes = [[None] * grid_n for _ in range(grid_n)]
    for r in range(grid_n):
        for c in range(grid_n):
            if layout[r, c] >= 0:
                shapes[r][c] = "disc" if stream.bernoulli(0.5) else "square"
    return shapes


def generate_task(family, difficulty, stream, *, grid_n=3, cell_px=5, ambiguous_fraction=0.0):
    """Draw one instance of the given family. Consumes only the given stream.

    Every instance is round-trip checked: relabeling the rendered pixels must
    reproduce the intended answer.
    """
    if family not in FAMILIES:
        raise ContractError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if difficulty not in DIFFICULTY_TABLE:
        raise ContractError(f"difficulty must be one of {sorted(DIFFICULTY_TABLE)}")
    bounds = DIFFICULTY_TABLE[difficulty]
    n_cells = grid_n * grid_n
    n_colors = len(COLOR_TOKENS)
    smudges = []

    if family == "bandit":
        # imageless exploration probe: a fixed arm pays, nothing is shown
        layout = np.full((grid_n, grid_n), -1, dtype=np.int64)
        question = [BOS, Q_BANDIT]
    elif family == "shape-count":
        color_idx = int(stream.integers(0, n_colors))
        n_target = int(stream.integers(0, min(bounds["count_max"], n_cells) + 1))
        counts = [0] * n_colors
        counts[color_idx] = n_target
        for _ in range(n_cells - n_target):
            if stream.bernoulli(bounds["distract_p"]):
                other = int(stream.integers(0, n_colors - 1))
                if other >= color_idx:
                    other += 1
                counts[other] += 1
        layout = _place(counts, grid_n, stream)
        question = [BOS, Q_COUNT, COLOR_TOKENS[color_idx]]
        if stream.bernoulli(ambiguous_fraction):
            # faint non-target smudges: visually unstable, answer-neutral
            empties = [(r, c) for r in range(grid_n) for c in range(grid_n) if layout[r, c] < 0]
            n_smudge = int(stream.integers(1, bounds["smudge_max"] + 1)) if empties else 0
            order = stream.permutation(len(empties))
            for pos in order[:n_smudge]:
                other = int(stream.integers(0, n_colors - 1))
                if other >= color_idx:
                    other += 1
                smudges.append((*empties[pos], other))
    elif family == "majority-color":
        winner = int(stream.integers(0, n_colors))
        n_win = int(stream.integers(3, min(bounds["majority_win_max"], n_cells) + 1))
        counts = [0] * n_colors
        counts[winner] = n_win
        free = n_cells - n_win
        for other in stream.permutation(n_colors):
            if other == winner or free <= 0:
                continue
            n_other = int(stream.integers(0, min(n_win - 2, free) + 1))
            counts[other] = n_other
            free -= n_other
        layout = _place(counts, grid_n, stream)
        question = [BOS, Q_MAJORITY]
    else:  # cell-parity
        layout = np.full((grid_n, grid_n), -1, dtype=np.int64)
        for r in range(grid_n):
            for c in range(grid_n):
                if stream.bernoulli(0.5):
                    layout[r, c] = int(stream.integers(0, n_colors))
        question = [BOS, Q_PARITY]

    shapes = _shapes_for(layout, grid_n, stream)
    image = render_scene(layout, grid_n, cell_px, shapes=shapes, smudges=smudges)

    answer = answer_from_labels(family, question, layout)
    if answer_from_labels(family, question, label_image(image, grid_n, cell_px)) != answer:
        raise OracleError(f"{family} instance failed its label round trip")

    meta = {
        "labels": layout.tolist(),
        "smudges": [list(s) for s in smudges],
        "total_filled": int((layout >= 0).sum()),
        "color_counts": [int((layout == i).sum()) for i in range(n_colors)],
    }
    return TaskInstance(family=family, image=image, question_tokens=question, answer_tokens=answer,
                        ambiguous=bool(smudges), safe_transforms=TRANSFORM_KINDS, meta=meta)


def sample_task(cfg, stream):
    """Draw one instance from the configured family mixture."""
    cfg.validate()
    names = sorted(cfg.family_mix)
    weights = np.array([float(cfg.family_mix[n]) for n in names])
    family = names[stream.categorical(weights)]
    return generate_task(family, cfg.difficulty, stream, grid_n=cfg.grid_n, cell_px=cfg.cell_px,
                         ambiguous_fraction=cfg.ambiguous_fraction)


def decode_answer(tokens):
    """Content of the first well-formed answer span, or None.

    A span opens at an answer-open marker, closes at the next answer-close
    marker, is nonempty, and contains only answer-content tokens.
    """
    tokens = list(tokens)
    for i, t in enumerate(tokens):
        if t != ANS_OPEN:
            continue
        try:
            j = tokens.index(ANS_CLOSE, i + 1)
        except ValueError:
            continue
        span = tokens[i + 1:j]
        if span and all(s in ANSWER_TOKENS for s in span):
            return span
    return None


def is_well_formed(tokens):
    """Strict whole-response grammar: think-open, free body (no structural
    markers), think-close, answer-open, answer tokens, answer-close,
    end-of-sequence, nothing after."""
    tokens = list(tokens)
    if len(tokens) < 6 or tokens[0] != THINK_OPEN or tokens[-1] != EOS:
        return False
    if tokens[-2] != ANS_CLOSE:
        return False
    try:
        close = tokens.index(THINK_CLOSE)
    except ValueError:
        return False
    if any(t in STRUCTURAL_TOKENS for t in tokens[1:close]):
        return False
    if close + 1 >= len(tokens) - 2 or tokens[close + 1] != ANS_OPEN:
        return False
    span = tokens[close + 2:-2]
    return bool(span) and all(t in ANSWER_TOKENS for t in span)


def verify(response_tokens, instance):
    """Score a response. Accuracy is granted from any well-formed answer span
    even when the overall format is broken; both components are 0/1."""
    fmt = 1.0 if is_well_formed(response_tokens) else 0.0
    acc = 1.0 if decode_answer(response_tokens) == list(instance.answer_tokens) else 0.0
    return RewardBreakdown(format=fmt, accuracy=acc)


def reference_response(instance):
    """A minimal full-reward response; used by scoring tests and demos."""
    return [THINK_OPEN, THINK_CLOSE, ANS_OPEN] + list(instance.answer_tokens) + [ANS_CLOSE, EOS]


def build_suite(cfg, stream, size):
    if size < 1:
        raise ContractError("suite size must be >= 1")
    return [sample_task(cfg, stream.derive(f"i{j}")) for j in range(size)]


def save_suite(path, instances, cfg):
    with open(path, "w") as fh:
        header = {"kind": "task-suite", "grid_n": cfg.grid_n, "cell_px": cfg.cell_px, "size": len(instances)}
        fh.write(json.dumps(header) + "\n")
        for inst in instances:
            row = {
                "family": inst.family,
                "question_tokens": list(inst.question_tokens),
                "answer_tokens": list(inst.answer_tokens),
                "ambiguous": inst.ambiguous,
                "safe_transforms": list(inst.safe_transforms),
                "image": inst.image.flatten().tolist(),
                "meta": inst.meta,
            }
            fh.write(json.dumps(row) + "\n")


def load_suite(path):
    try:
        fh = open(path)
    except OSError as exc:
        raise ContractError(f"cannot read task suite {path}: {exc}") from exc
    with fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "task-suite":
            raise ContractError(f"{path} is not a task suite file")
        hw = header["grid_n"] * header["cell_px"]
        out = []
        for line in fh:
            row = json.loads(line)
            image = np.array(row["image"], dtype=np.float64).reshape(hw, hw, 3)
            out.append(TaskInstance(
                family=row["family"], image=image, question_tokens=list(row["question_tokens"]),
                answer_tokens=list(row["answer_tokens"]), ambiguous=bool(row["ambiguous"]),
                safe_transforms=tuple(row["safe_transforms"]), meta=row["meta"]))
    if len(out) != header["size"]:
        raise ContractError(f"suite {path} declares {header['size']} instances, found {len(out)}")
    return out
