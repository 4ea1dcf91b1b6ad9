import pytest
from hypothesis import given
from hypothesis import strategies as st

from obr.table import (
    CAPITAL,
    DEFAULT_TABLE,
    NUMBER,
    BrailleTable,
    Decoder,
    TableError,
    bit,
    mask_from_dots,
    positions_from_mask,
    unicode_cell,
)


def decode_lines(lines, table=DEFAULT_TABLE):
    out = []
    for cells in lines:
        dec = Decoder(table)
        out.append("".join(dec.feed(m) for m in cells))
    return "\n".join(out)


def test_a_and_l_masks():
    assert DEFAULT_TABLE.mask("a") == bit(0, 0)
    assert DEFAULT_TABLE.mask("l") == bit(0, 0) | bit(0, 1) | bit(0, 2)


def test_dot_numbers_to_bits():
    assert mask_from_dots("14") == bit(0, 0) | bit(1, 0)
    assert mask_from_dots([6]) == bit(1, 2)


def test_unicode_cell_matches_standard_code_points():
    assert unicode_cell(mask_from_dots("1")) == "⠁"
    assert unicode_cell(mask_from_dots("123456")) == "⠿"


def test_table_injective_and_nonempty_masks():
    masks = list(DEFAULT_TABLE.symbols)
    assert len(set(DEFAULT_TABLE.symbols.values())) == len(masks)
    assert all(0 < m < 64 for m in masks)


def test_non_injective_table_rejected():
    with pytest.raises(TableError):
        BrailleTable({1: "a", 2: "a"})


def test_every_mask_has_a_class_label():
    labels = {DEFAULT_TABLE.cell_label(m) for m in range(1, 64)}
    assert len(labels) == 63
    for m in range(1, 64):
        assert DEFAULT_TABLE.mask_of_label(DEFAULT_TABLE.cell_label(m)) == m


def test_positions_round_trip():
    for m in range(64):
        assert sum(bit(x, y) for x, y in positions_from_mask(m)) == m


def test_encode_capital_and_number_signs():
    (cells,) = DEFAULT_TABLE.encode("Ab 12")
    cap, num = DEFAULT_TABLE.mask(CAPITAL), DEFAULT_TABLE.mask(NUMBER)
    assert cells == [cap, DEFAULT_TABLE.mask("a"), DEFAULT_TABLE.mask("b"), 0, num,
                     DEFAULT_TABLE.mask("a"), DEFAULT_TABLE.mask("b")]


def test_encode_rejects_digit_letter_ambiguity():
    with pytest.raises(TableError):
        DEFAULT_TABLE.encode("12a")


def test_encode_rejects_unknown_character():
    with pytest.raises(TableError):
        DEFAULT_TABLE.encode("a@b")


def test_number_mode_ends_at_space():
    dec = Decoder()
    got = [dec.feed(m) for m in DEFAULT_TABLE.encode("9 i")[0]]
    assert "".join(got) == "9 i"


def test_undefined_mask_decodes_to_unknown():
    undefined = next(m for m in range(1, 64) if DEFAULT_TABLE.label(m) is None)
    assert Decoder().feed(undefined) == "?"


words = st.text(alphabet="abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ,.;:!?'-", min_size=1, max_size=8)
numbers = st.integers(0, 10**6).map(str)


@given(st.lists(st.one_of(words, numbers), min_size=1, max_size=10))
def test_encode_decode_round_trip(tokens):
    text = " ".join(tokens)
    assert decode_lines(DEFAULT_TABLE.encode(text)) == text
