"""Task generation, rendering/labeling, the response grammar, and rewards."""

import numpy as np
import pytest

from tinyvogue.augment import TRANSFORM_KINDS
from tinyvogue.errors import ConfigError, ContractError, OracleError
from tinyvogue.rng import RngStream
from tinyvogue.tasks import (
    ANS_CLOSE,
    ANS_OPEN,
    BACKGROUND,
    BOS,
    COLOR_TOKENS,
    DIFFICULTY_TABLE,
    DIGIT_TOKENS,
    EOS,
    EVEN,
    FAMILIES,
    FILL_THRESHOLD,
    ODD,
    PALETTE,
    Q_BANDIT,
    Q_COUNT,
    Q_MAJORITY,
    Q_PARITY,
    THINK_CLOSE,
    THINK_OPEN,
    VOCAB_SIZE,
    EnvConfig,
    RewardBreakdown,
    answer_from_labels,
    build_suite,
    decode_answer,
    generate_task,
    is_well_formed,
    label_image,
    load_suite,
    reference_response,
    render_scene,
    sample_task,
    save_suite,
    verify,
)


def stream(label="t"):
    return RngStream(20240817).derive(label)


# ------------------------------------------------------------ tokens


def test_token_table_is_a_bijection_onto_the_vocab():
    toks = [BOS, EOS, THINK_OPEN, THINK_CLOSE, ANS_OPEN, ANS_CLOSE]
    toks += list(DIGIT_TOKENS) + list(COLOR_TOKENS) + [EVEN, ODD]
    toks += [Q_COUNT, Q_MAJORITY, Q_PARITY, Q_BANDIT]
    assert sorted(toks) == list(range(VOCAB_SIZE))


# ------------------------------------------------------------ env config


def test_env_config_default_validates():
    EnvConfig().validate()


@pytest.mark.parametrize("patch", [
    dict(family_mix={}),
    dict(family_mix={"nope": 1.0}),
    dict(family_mix={"bandit": -1.0}),
    dict(family_mix={"bandit": 0.0}),
    dict(difficulty=3),
    dict(ambiguous_fraction=1.5),
    dict(grid_n=1),
    dict(cell_px=2),
    dict(grid_n=4),  # 16 cells cannot be a single digit answer
    dict(max_response_len=5),
])
def test_env_config_rejects_bad_fields(patch):
    cfg = EnvConfig(**patch)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_env_config_derived_sizes():
    cfg = EnvConfig(grid_n=3, cell_px=5)
    assert cfg.image_hw == 15
    assert cfg.n_cells == 9


# ------------------------------------------------------------ render/label


def test_label_recovers_every_layout_and_shape():
    st = stream("roundtrip")
    for trial in range(50):
        layout = np.full(9, -1, dtype=np.int64)
        for i in range(9):
            if st.bernoulli(0.5):
                layout[i] = int(st.integers(0, 4))
        layout = layout.reshape(3, 3)
        shapes = [["disc" if st.bernoulli(0.5) else "square" for _ in range(3)] for _ in range(3)]
        img = render_scene(layout, 3, 5, shapes=shapes)
        assert img.shape == (15, 15, 3)
        assert np.array_equal(label_image(img, 3, 5), layout)


def test_label_reads_smudges_as_empty():
    layout = np.array([[0, -1, -1], [-1, -1, -1], [-1, -1, 2]])
    img = render_scene(layout, 3, 5, smudges=[(0, 1, 1), (2, 0, 3)])
    assert np.array_equal(label_image(img, 3, 5), layout)
    # the smudge really is painted: its cell is not pure background
    cell = img[0:5, 5:10]
    assert cell.max() > BACKGROUND.max()
    assert cell.max() < FILL_THRESHOLD


def test_smudge_on_occupied_cell_rejected():
    layout = np.array([[0, -1, -1], [-1, -1, -1], [-1, -1, -1]])
    with pytest.raises(ContractError):
        render_scene(layout, 3, 5, smudges=[(0, 0, 1)])


def test_render_rejects_wrong_layout_shape():
    with pytest.raises(ContractError):
        render_scene(np.zeros((2, 3)), 3, 5)
    with pytest.raises(ContractError):
        label_image(np.zeros((14, 15, 3)), 3, 5)


def test_palette_separation_matches_declared_constant():
    rows = list(PALETTE) + [BACKGROUND]
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            assert np.abs(rows[i] - rows[j]).max() >= 0.94 - 1e-12


# ------------------------------------------------------------ answers


def test_answer_count():
    labels = np.array([[0, 0, -1], [1, -1, -1], [-1, -1, 0]])
    q = [BOS, Q_COUNT, COLOR_TOKENS[0]]
    assert answer_from_labels("shape-count", q, labels) == [DIGIT_TOKENS[3]]
    q = [BOS, Q_COUNT, COLOR_TOKENS[2]]
    assert answer_from_labels("shape-count", q, labels) == [DIGIT_TOKENS[0]]


def test_answer_majority_unique_and_tie():
    labels = np.array([[0, 0, 1], [-1, -1, -1], [-1, -1, -1]])
    assert answer_from_labels("majority-color", [BOS, Q_MAJORITY], labels) == [COLOR_TOKENS[0]]
    tie = np.array([[0, 0, 1], [1, -1, -1], [-1, -1, -1]])
    with pytest.raises(OracleError):
        answer_from_labels("majority-color", [BOS, Q_MAJORITY], tie)
    with pytest.raises(OracleError):
        answer_from_labels("majority-color", [BOS, Q_MAJORITY], np.full((3, 3), -1))


def test_answer_parity_and_bandit():
    labels = np.array([[0, 1, -1], [-1, -1, -1], [-1, -1, -1]])
    assert answer_from_labels("cell-parity", [BOS, Q_PARITY], labels) == [EVEN]
    labels[0, 2] = 3
    assert answer_from_labels("cell-parity", [BOS, Q_PARITY], labels) == [ODD]
    assert answer_from_labels("bandit", [BOS, Q_BANDIT], np.full((3, 3), -1)) == [DIGIT_TOKENS[1]]
    with pytest.raises(ContractError):
        answer_from_labels("nope", [], labels)


# ------------------------------------------------------------ generation


def test_generate_rejects_unknown_family_and_difficulty():
    with pytest.raises(ContractError):
        generate_task("nope", 1, stream())
    with pytest.raises(ContractError):
        generate_task("shape-count", 99, stream())


def test_generate_is_deterministic_per_stream_path():
    a = generate_task("majority-color", 2, stream("gen"))
    b = generate_task("majority-color", 2, stream("gen"))
    assert a.answer_tokens == b.answer_tokens
    assert a.image.tobytes() == b.image.tobytes()


def test_bandit_is_a_constant_blank_scene():
    for i in range(5):
        inst = generate_task("bandit", 1, stream(f"b{i}"))
        assert inst.question_tokens == [BOS, Q_BANDIT]
        assert inst.answer_tokens == [DIGIT_TOKENS[1]]
        assert np.array_equal(inst.image, render_scene(np.full((3, 3), -1), 3, 5))


@pytest.mark.parametrize("family,difficulty", [(f, d) for f in FAMILIES for d in (1, 2)])
def test_generated_instances_relabel_to_their_answer(family, difficulty):
    for i in range(25):
        inst = generate_task(family, difficulty, stream(f"{family}-{difficulty}-{i}"),
                             ambiguous_fraction=0.5)
        labels = label_image(inst.image, 3, 5)
        assert answer_from_labels(family, inst.question_tokens, labels) == inst.answer_tokens
        assert inst.safe_transforms == TRANSFORM_KINDS
        assert inst.image.min() >= 0.0 and inst.image.max() <= 1.0


@pytest.mark.parametrize("family,difficulty", [(f, d) for f in FAMILIES for d in (1, 2)])
def test_generation_fits_the_smallest_grid(family, difficulty):
    # difficulty bounds exceed the 2x2 cell count; generation must clamp
    for i in range(25):
        inst = generate_task(family, difficulty, stream(f"small-{family}-{difficulty}-{i}"),
                             grid_n=2, cell_px=3, ambiguous_fraction=0.5)
        labels = label_image(inst.image, 2, 3)
        assert answer_from_labels(family, inst.question_tokens, labels) == inst.answer_tokens


def test_difficulty_bounds_respected_for_counting():
    for d, bounds in DIFFICULTY_TABLE.items():
        for i in range(30):
            inst = generate_task("shape-count", d, stream(f"cnt-{d}-{i}"))
            n = DIGIT_TOKENS.index(inst.answer_tokens[0])
            assert 0 <= n <= bounds["count_max"]


def test_ambiguous_instances_flag_and_smudge_placement():
    seen_ambiguous = 0
    for i in range(40):
        inst = generate_task("shape-count", 2, stream(f"amb{i}"), ambiguous_fraction=1.0)
        assert inst.ambiguous == bool(inst.meta["smudges"])
        seen_ambiguous += inst.ambiguous
        target = COLOR_TOKENS.index(inst.question_tokens[-1])
        for r, c, color in inst.meta["smudges"]:
            assert inst.meta["labels"][r][c] == -1
            assert color != target  # smudges never carry the asked-about color
    assert seen_ambiguous >= 30  # only a full grid leaves nowhere to smudge


def test_ambiguous_fraction_zero_never_smudges():
    for i in range(20):
        inst = generate_task("shape-count", 2, stream(f"clean{i}"), ambiguous_fraction=0.0)
        assert not inst.ambiguous


def test_sample_task_respects_single_family_mix():
    cfg = EnvConfig(family_mix={"cell-parity": 1.0})
    for i in range(10):
        assert sample_task(cfg, stream(f"mix{i}")).family == "cell-parity"


def test_sample_task_zero_weight_excludes_family():
    cfg = EnvConfig(family_mix={"cell-parity": 1.0, "bandit": 0.0})
    for i in range(20):
        assert sample_task(cfg, stream(f"z{i}")).family == "cell-parity"


# ------------------------------------------------------------ grammar


def good(answer):
    return [THINK_OPEN, THINK_CLOSE, ANS_OPEN] + list(answer) + [ANS_CLOSE, EOS]


def test_grammar_minimal_and_with_think_body():
    assert is_well_formed(good([DIGIT_TOKENS[4]]))
    body = [DIGIT_TOKENS[1], COLOR_TOKENS[0], Q_COUNT]  # content tokens allowed
    toks = [THINK_OPEN] + body + [THINK_CLOSE, ANS_OPEN, EVEN, ANS_CLOSE, EOS]
    assert is_well_formed(toks)


@pytest.mark.parametrize("tokens", [
    [],
    [THINK_OPEN, THINK_CLOSE, ANS_OPEN, ANS_CLOSE, EOS],  # empty span
    good([DIGIT_TOKENS[2]])[:-1],  # missing eos
    good([DIGIT_TOKENS[2]])[1:],  # missing think open
    [THINK_OPEN, ANS_OPEN, THINK_CLOSE, ANS_OPEN, EVEN, ANS_CLOSE, EOS],  # marker in body
    [THINK_OPEN, THINK_CLOSE, ANS_OPEN, Q_COUNT, ANS_CLOSE, EOS],  # non-answer in span
    good([EVEN]) + [EOS],  # trailing token
    [THINK_OPEN, THINK_CLOSE, EVEN, ANS_OPEN, EVEN, ANS_CLOSE, EOS],  # gap before span
])
def test_grammar_rejects(tokens):
    assert not is_well_formed(tokens)


def test_decode_answer_first_well_formed_span_wins():
    toks = [ANS_OPEN, ANS_CLOSE,  # empty: skipped
            ANS_OPEN, Q_COUNT, ANS_CLOSE,  # non-answer content: skipped
            ANS_OPEN, DIGIT_TOKENS[7], ANS_CLOSE,
            ANS_OPEN, DIGIT_TOKENS[1], ANS_CLOSE]
    assert decode_answer(toks) == [DIGIT_TOKENS[7]]
    assert decode_answer([ANS_OPEN, DIGIT_TOKENS[3]]) is None  # never closed
    assert decode_answer([DIGIT_TOKENS[3], ANS_CLOSE]) is None


# ------------------------------------------------------------ rewards


def test_verify_reward_table():
    inst = generate_task("cell-parity", 1, stream("vr"))
    full = verify(reference_response(inst), inst)
    assert (full.format, full.accuracy, full.total) == (1.0, 1.0, 1.0)

    wrong_answer = [EVEN] if inst.answer_tokens == [ODD] else [ODD]
    fmt_only = verify(good(wrong_answer), inst)
    assert (fmt_only.format, fmt_only.accuracy) == (1.0, 0.0)
    assert fmt_only.total == pytest.approx(0.1)

    # bare span, broken format, right answer: accuracy still granted
    acc_only = verify([ANS_OPEN] + list(inst.answer_tokens) + [ANS_CLOSE], inst)
    assert (acc_only.format, acc_only.accuracy) == (0.0, 1.0)
    assert acc_only.total == pytest.approx(0.9)

    nothing = verify([BOS, BOS], inst)
    assert (nothing.format, nothing.accuracy, nothing.total) == (0.0, 0.0, 0.0)


def test_reward_total_weighting():
    assert RewardBreakdown(1.0, 1.0).total == pytest.approx(1.0)
    assert RewardBreakdown(1.0, 0.0).total == pytest.approx(0.1)
    assert RewardBreakdown(0.0, 1.0).total == pytest.approx(0.9)


# ------------------------------------------------------------ suites


def test_suite_save_load_round_trip(tmp_path):
    cfg = EnvConfig(ambiguous_fraction=0.5)
    suite = build_suite(cfg, stream("suite"), 6)
    path = tmp_path / "suite.jsonl"
    save_suite(path, suite, cfg)
    back = load_suite(path)
    assert len(back) == 6
    for a, b in zip(suite, back):
        assert a.family == b.family
        assert a.question_tokens == b.question_tokens
        assert a.answer_tokens == b.answer_tokens
        assert a.ambiguous == b.ambiguous
        assert tuple(a.safe_transforms) == tuple(b.safe_transforms)
        assert a.image.tobytes() == b.image.tobytes()


def test_suite_rejects_bad_files(tmp_path):
    with pytest.raises(ContractError):
        build_suite(EnvConfig(), stream(), 0)
    p = tmp_path / "bad.jsonl"
    p.write_text('{"kind":"something-else"}\n')
    with pytest.raises(ContractError):
        load_suite(p)
    cfg = EnvConfig()
    suite = build_suite(cfg, stream("s2"), 2)
    p2 = tmp_path / "trunc.jsonl"
    save_suite(p2, suite, cfg)
    lines = p2.read_text().splitlines()
    p2.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ContractError):
        load_suite(p2)
