import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obr.cell_cluster import BrailleCell, LayoutParams
from obr.dot_detect import Dot
from obr.table import DEFAULT_TABLE, Decoder, mask_from_dots
from obr.transcribe import (
    Centroid,
    FeatureVector,
    MalformedCellError,
    Sample,
    UnresolvedCentroidError,
    centroid,
    choose_samples,
    correct_x,
    correct_y,
    decode_row,
    decode_table_lookup,
    detect_levels,
    encode,
    estimate_slope,
    extract_features,
    insert_spaces,
    line_gaps,
    order_cells,
)

P = 20.0  # intra-cell pitch used by the hand-built geometry below
LAYOUT = LayoutParams(hor_max=21, ver_max=21, hor_inter=27, ver_inter=50, hor_pitch=P, ver_pitch=P)
FULL = Sample((100.0, 120.0), (100.0, 120.0, 140.0))


def cell_at(positions, x0=100.0, y0=100.0, pitch=P, cid=0):
    dots = [Dot(x0 + x * pitch, y0 + y * pitch, 6, 30) for x, y in positions]
    return BrailleCell(cid, dots, list(range(len(dots))))


def cell_for(mask, **kw):
    return cell_at(FeatureVector.from_mask(mask).dot_code, **kw)


L_POS = [(0, 0), (0, 1), (0, 2)]
ALL_POS = [(x, y) for y in range(3) for x in range(2)]


# --- levels ----------------------------------------------------------------

def test_levels_full_cell():
    assert detect_levels(cell_at(ALL_POS), LAYOUT) == ({0, 1}, {0, 1, 2})


def test_levels_letter_l():
    assert detect_levels(cell_at(L_POS), LAYOUT) == (None, {0, 1, 2})


def test_levels_letter_a():
    assert detect_levels(cell_at([(0, 0)]), LAYOUT) == (None, None)


# --- centroid --------------------------------------------------------------

def test_full_cell_centroid_is_plain_mean():
    c = centroid(cell_at(ALL_POS), None, LAYOUT)
    assert (c.x, c.y) == (110, 120)
    assert not c.corrected_x and not c.corrected_y and not c.flags


def test_letter_a_centroid_with_synthetic_sample():
    cell = cell_at([(0, 0)])
    (sample,) = choose_samples([cell], LAYOUT)
    assert sample.synthetic
    c = centroid(cell, sample, LAYOUT)
    assert (c.x, c.y) == pytest.approx((110, 120))
    assert c.corrected_x and c.corrected_y and "synthetic sample" in c.flags


def test_letter_l_centroid_shifts_right_half_pitch():
    c = centroid(cell_at(L_POS), FULL, LAYOUT)
    assert (c.x, c.y) == pytest.approx((110, 120))
    assert c.corrected_x and not c.corrected_y


def test_correction_without_sample_fails():
    with pytest.raises(UnresolvedCentroidError):
        centroid(cell_at([(0, 0)]), None, LAYOUT)


def test_correct_x_right_column_assignment():
    # one column pitch right of the sample's left column: level 1, virtual dot to its left
    assert correct_x(cell_at([(1, 0)]), FULL, LAYOUT.hor_inter) == pytest.approx(110)


def test_correct_x_one_cell_away():
    # same column level, one full cell pitch (P + hor_inter) to the right
    cell = cell_at([(0, 1)], x0=100 + P + LAYOUT.hor_inter)
    assert correct_x(cell, FULL, LAYOUT.hor_inter) == pytest.approx(100 + P + LAYOUT.hor_inter + P / 2)


def test_correct_x_guard_for_two_columns():
    cell = cell_at([(0, 0), (1, 0)])
    assert correct_x(cell, FULL, LAYOUT.hor_inter, LAYOUT) == pytest.approx(110)


def test_correct_x_tie_goes_left_and_is_flagged():
    # halfway between the two sample columns modulo the period
    flags = []
    cell = cell_at([(0, 0)], x0=110)
    assert correct_x(cell, FULL, LAYOUT.hor_inter, LAYOUT, flags) == pytest.approx(120)
    assert "ambiguous x level" in flags


def test_correct_y_single_top_dot():
    assert correct_y(cell_at([(0, 0)]), FULL, LAYOUT.ver_inter, LAYOUT) == pytest.approx(120)


def test_correct_y_rows_zero_and_one():
    assert correct_y(cell_at([(0, 0), (0, 1)]), FULL, LAYOUT.ver_inter, LAYOUT) == pytest.approx(120)


def test_correct_y_bottom_rows_on_next_line():
    line = 2 * P + LAYOUT.ver_inter
    cell = cell_at([(1, 1), (1, 2)], y0=100 + line)
    assert correct_y(cell, FULL, LAYOUT.ver_inter, LAYOUT) == pytest.approx(120 + line)


def test_correct_y_guard_for_three_rows():
    assert correct_y(cell_at(L_POS), FULL, LAYOUT.ver_inter, LAYOUT) == pytest.approx(120)


# --- features --------------------------------------------------------------

def test_features_letter_l():
    cell = cell_at(L_POS)
    fv = extract_features(cell, centroid(cell, FULL, LAYOUT), LAYOUT)
    assert fv.n == 3 and fv.dot_code == {(0, 0), (0, 1), (0, 2)}
    assert encode(fv) == [3, 1, 0, 1, 0, 1, 0]


def test_features_letter_a():
    cell = cell_at([(0, 0)])
    fv = extract_features(cell, centroid(cell, FULL, LAYOUT), LAYOUT)
    assert fv.dot_code == {(0, 0)} and encode(fv) == [1, 1, 0, 0, 0, 0, 0]


def test_features_full_cell():
    cell = cell_at(ALL_POS)
    fv = extract_features(cell, centroid(cell, None, LAYOUT), LAYOUT)
    assert fv.n == 6 and encode(fv) == [6, 1, 1, 1, 1, 1, 1]


def test_duplicate_position_is_malformed():
    cell = BrailleCell(0, [Dot(100, 100, 6, 1), Dot(101, 101, 6, 1)], [0, 1])
    with pytest.raises(MalformedCellError):
        extract_features(cell, Centroid(110, 120), LAYOUT)


def test_feature_vector_size_check():
    with pytest.raises(MalformedCellError):
        FeatureVector(2, frozenset({(0, 0)}))


@pytest.mark.parametrize("mask", range(1, 64))
def test_every_pattern_recovers_its_mask(mask):
    cell = cell_for(mask)
    fv = extract_features(cell, centroid(cell, FULL, LAYOUT), LAYOUT)
    assert fv.mask == mask
    assert decode_row(encode(fv)) == fv


@settings(max_examples=60)
@given(st.integers(1, 63), st.floats(-500, 500), st.floats(-500, 500))
def test_translation_invariance(mask, dx, dy):
    base = cell_for(mask)
    moved = cell_for(mask, x0=100 + dx, y0=100 + dy)
    moved_sample = Sample(tuple(x + dx for x in FULL.x_levels), tuple(y + dy for y in FULL.y_levels))
    c0, c1 = centroid(base, FULL, LAYOUT), centroid(moved, moved_sample, LAYOUT)
    assert (c1.x - c0.x, c1.y - c0.y) == pytest.approx((dx, dy), abs=1e-6)
    assert extract_features(base, c0, LAYOUT) == extract_features(moved, c1, LAYOUT)


def test_virtual_dots_do_not_leak_into_features():
    cell = cell_at([(0, 0)])
    fv = extract_features(cell, centroid(cell, FULL, LAYOUT), LAYOUT)
    assert fv.n == len(cell.dots) == 1


# --- samples and slope -----------------------------------------------------

def test_choose_samples_prefers_same_line():
    near_other_line = cell_at(ALL_POS, x0=100, y0=100 + 90, cid=0)
    same_line_far = cell_at(ALL_POS, x0=600, y0=100, cid=1)
    target = cell_at([(0, 0)], x0=150, y0=100, cid=2)
    samples = choose_samples([near_other_line, same_line_far, target], LAYOUT)
    assert samples[2].x_levels[0] == pytest.approx(600)


def test_sample_carried_along_slope():
    s = FULL.carried(100, 0, 0.05)
    assert s.y_levels == pytest.approx((105, 125, 145)) and s.x_levels == FULL.x_levels


def test_estimate_slope_on_tilted_cells():
    slope = 0.03
    cells = []
    for k in range(20):
        x0 = 100 + k * 47
        c = cell_at(ALL_POS, x0=x0)
        c.dots = [Dot(d.cx, d.cy + slope * (d.cx - 100), d.r, d.votes) for d in c.dots]
        cells.append(c)
    assert estimate_slope(cells, LAYOUT) == pytest.approx(slope, abs=1e-9)


# --- table lookup ----------------------------------------------------------

def test_lookup_a_and_l():
    assert decode_table_lookup(FeatureVector.from_mask(mask_from_dots("1"))) == "a"
    assert decode_table_lookup(FeatureVector(3, frozenset({(0, 0), (0, 1), (0, 2)}))) == "l"


def test_lookup_blank_is_space():
    assert decode_table_lookup(None) == " "
    assert decode_table_lookup(FeatureVector(0, frozenset())) == " "


def test_lookup_number_context():
    dec = Decoder()
    num = FeatureVector.from_mask(DEFAULT_TABLE.mask("#"))
    assert decode_table_lookup(num, decoder=dec) == ""
    assert decode_table_lookup(FeatureVector.from_mask(DEFAULT_TABLE.mask("b")), decoder=dec) == "2"


# --- ordering and spacing --------------------------------------------------

def test_order_one_line():
    cents = [Centroid(60, 100), Centroid(10, 100)]
    assert order_cells(cents, LAYOUT) == [[1, 0]]


def test_order_two_lines():
    cents = [Centroid(10, 200), Centroid(10, 100)]
    assert order_cells(cents, LAYOUT) == [[1], [0]]


def test_order_tolerates_skew():
    cents = [Centroid(47 * k, 500 - 0.05 * 47 * k) for k in range(30)]
    cents += [Centroid(47 * k, 600 - 0.05 * 47 * k) for k in range(30)]
    assert order_cells(cents, LAYOUT) == [list(range(30)), list(range(30, 60))]


def test_gaps_uniform_pitch_no_spaces():
    cents = [Centroid(47 * k, 0) for k in range(5)]
    assert line_gaps([list(range(5))], cents) == [[0, 0, 0, 0]]


def test_gap_of_two_pitches_is_one_space():
    xs = [0, 47, 94, 188, 235]
    cents = [Centroid(x, 0) for x in xs]
    assert line_gaps([list(range(5))], cents) == [[0, 0, 1, 0]]


def test_insert_spaces():
    assert insert_spaces([["a", "b", "c"], ["d"]], [[0, 2], []]) == "ab  c\nd"
