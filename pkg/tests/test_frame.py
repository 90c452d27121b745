"""Frame layer: pivot, restrict, concat, canonical bytes, interchange."""

import struct

import numpy as np
import pytest

from tileflow.errors import (
    ColumnMismatch,
    DuplicateCell,
    GapOrOverlap,
    OutOfDomain,
    UnknownColumn,
)
from tileflow.frame import (
    ColumnKey,
    Interval,
    StreamFrame,
    TwoTileWindow,
    canonical_bytes,
    concat,
    frames_equal,
    from_canonical_bytes,
    merge_columns,
    pivot_long_to_wide,
    read_csv,
    read_tile,
    restrict,
    write_csv,
    write_tile,
)

ADA = ColumnKey(entity="ADA", feature="price")
AVAX = ColumnKey(entity="AVAX", feature="price")


class TestPivot:
    def test_two_assets_two_times(self):
        # worked example: four long records become a 2x2 wide frame
        frame = pivot_long_to_wide(
            [
                (1, "ADA", "price", 2.76),
                (1, "AVAX", "price", 39.5),
                (2, "ADA", "price", 2.78),
                (2, "AVAX", "price", 39.3),
            ]
        )
        assert frame.domain == Interval(1, 2)
        assert frame.columns == (ADA, AVAX)  # lexicographic (feature, entity)
        assert frame.at(1, ADA) == 2.76
        assert frame.at(1, AVAX) == 39.5
        assert frame.at(2, ADA) == 2.78
        assert frame.at(2, AVAX) == 39.3

    def test_missing_cells_are_nan(self):
        frame = pivot_long_to_wide([(0, "A", "x", 1.0), (2, "A", "x", 3.0)])
        assert frame.domain == Interval(0, 2)
        assert np.isnan(frame.at(1, ColumnKey("A", "x")))

    def test_duplicate_cell_rejected(self):
        with pytest.raises(DuplicateCell):
            pivot_long_to_wide([(0, "A", "x", 1.0), (0, "A", "x", 1.0)])

    def test_empty_records_give_empty_sentinel(self):
        frame = pivot_long_to_wide([])
        assert frame.domain is None
        assert frame.n_rows == 0 and frame.n_cols == 0


class TestRestrictConcat:
    def frame(self):
        return StreamFrame.from_columns(
            10, {ADA: [1.0, 2.0, 3.0, 4.0], AVAX: [5.0, 6.0, 7.0, 8.0]}
        )

    def test_restrict_then_concat_roundtrips(self):
        f = self.frame()
        left = restrict(f, Interval(10, 11))
        right = restrict(f, Interval(12, 13))
        assert frames_equal(concat(left, right), f)

    def test_restrict_out_of_domain(self):
        with pytest.raises(OutOfDomain):
            restrict(self.frame(), Interval(9, 11))

    def test_restrict_unknown_column(self):
        with pytest.raises(UnknownColumn):
            restrict(self.frame(), Interval(10, 11), [ColumnKey("BTC", "price")])

    def test_restrict_column_subset(self):
        sub = restrict(self.frame(), Interval(11, 12), [AVAX])
        assert sub.columns == (AVAX,)
        assert sub.at(11, AVAX) == 6.0

    def test_concat_gap_rejected(self):
        f = self.frame()
        with pytest.raises(GapOrOverlap):
            concat(restrict(f, Interval(10, 11)), restrict(f, Interval(13, 13)))

    def test_concat_overlap_rejected(self):
        f = self.frame()
        with pytest.raises(GapOrOverlap):
            concat(restrict(f, Interval(10, 11)), restrict(f, Interval(11, 12)))

    def test_concat_column_mismatch_rejected(self):
        f = self.frame()
        with pytest.raises(ColumnMismatch):
            concat(restrict(f, Interval(10, 11), [ADA]), restrict(f, Interval(12, 13)))


class TestCanonicalBytes:
    def test_construction_order_irrelevant(self):
        a = StreamFrame.from_columns(0, {ADA: [1.0, 2.0], AVAX: [3.0, 4.0]})
        b = StreamFrame.from_columns(0, {AVAX: [3.0, 4.0], ADA: [1.0, 2.0]})
        assert canonical_bytes(a) == canonical_bytes(b)

    def test_any_cell_difference_changes_bytes(self):
        a = StreamFrame.from_columns(0, {ADA: [1.0, 2.0]})
        b = StreamFrame.from_columns(0, {ADA: [1.0, 2.0 + 2**-40]})
        assert canonical_bytes(a) != canonical_bytes(b)

    def test_domain_shift_changes_bytes(self):
        a = StreamFrame.from_columns(0, {ADA: [1.0]})
        b = StreamFrame.from_columns(1, {ADA: [1.0]})
        assert canonical_bytes(a) != canonical_bytes(b)

    def test_nan_payloads_canonicalized(self):
        # two NaNs with different payload bits must encode identically
        weird_nan = struct.unpack("<d", struct.pack("<Q", 0x7FF8DEADBEEF0001))[0]
        assert np.isnan(weird_nan)
        a = StreamFrame.from_columns(0, {ADA: [float("nan"), 1.0]})
        b = StreamFrame.from_columns(0, {ADA: [weird_nan, 1.0]})
        assert canonical_bytes(a) == canonical_bytes(b)
        # and the canonical pattern is exactly 0x7FF8000000000000
        body = canonical_bytes(a)[-16:]
        assert struct.unpack("<Q", body[:8])[0] == 0x7FF8000000000000

    def test_roundtrip(self):
        f = StreamFrame.from_columns(5, {ADA: [1.5, np.nan], AVAX: [-0.0, 2.0]})
        g = from_canonical_bytes(canonical_bytes(f))
        assert frames_equal(f, g)
        assert g.domain == f.domain and g.columns == f.columns

    def test_negative_zero_distinct_from_zero(self):
        a = StreamFrame.from_columns(0, {ADA: [0.0]})
        b = StreamFrame.from_columns(0, {ADA: [-0.0]})
        assert canonical_bytes(a) != canonical_bytes(b)


class TestTwoTileWindow:
    def test_window_arithmetic(self):
        w = TwoTileWindow(right_endpoint=100, tile_length=8)
        assert w.window == Interval(85, 100)
        assert w.first_tile == Interval(85, 92)
        assert w.second_tile == Interval(93, 100)
        assert w.window.length == 16


class TestInterchange:
    def test_csv_roundtrip_bit_exact(self, tmp_path):
        f = StreamFrame.from_columns(
            3, {ADA: [1.1, np.nan, 0.30000000000000004], AVAX: [1e-300, 2.0, -5.5]}
        )
        p = tmp_path / "f.csv"
        write_csv(f, p)
        g = read_csv(p)
        assert frames_equal(f, g)
        header = p.read_text().splitlines()[0]
        assert header == "time,price:ADA,price:AVAX"

    def test_tile_store_layout(self, tmp_path):
        f = StreamFrame.from_columns(7, {ADA: [1.0, 2.0]})
        path = write_tile(f, tmp_path, "prices", "g0")
        assert path == tmp_path / "prices" / "g0" / "7_8.tile"
        assert frames_equal(read_tile(path), f)


class TestImmutability:
    def test_values_not_writeable(self):
        f = StreamFrame.from_columns(0, {ADA: [1.0]})
        with pytest.raises(ValueError):
            f.values[0, 0] = 9.0

    def test_attributes_frozen(self):
        f = StreamFrame.from_columns(0, {ADA: [1.0]})
        with pytest.raises(AttributeError):
            f.start = 5

    def test_source_array_detached(self):
        src = np.array([[1.0], [2.0]])
        f = StreamFrame(0, (ADA,), src)
        src[0, 0] = 99.0
        assert f.at(0, ADA) == 1.0


class TestMergeColumns:
    """Recombining disjoint column-group outputs into one frame."""

    def test_merge_restores_original(self):
        f = StreamFrame.from_columns(5, {ADA: [1.0, 2.0], AVAX: [3.0, 4.0]})
        a = restrict(f, f.domain, [ADA])
        b = restrict(f, f.domain, [AVAX])
        assert frames_equal(merge_columns([b, a]), f)

    def test_merge_sorts_columns(self):
        oi = ColumnKey(entity="ADA", feature="oi")
        a = StreamFrame.from_columns(0, {AVAX: [1.0]})
        b = StreamFrame.from_columns(0, {oi: [2.0]})
        merged = merge_columns([a, b])
        assert merged.columns == (oi, AVAX)

    def test_overlapping_columns_rejected(self):
        a = StreamFrame.from_columns(0, {ADA: [1.0]})
        b = StreamFrame.from_columns(0, {ADA: [2.0], AVAX: [3.0]})
        with pytest.raises(ColumnMismatch):
            merge_columns([a, b])

    def test_mismatched_domains_rejected(self):
        a = StreamFrame.from_columns(0, {ADA: [1.0]})
        b = StreamFrame.from_columns(1, {AVAX: [2.0]})
        with pytest.raises(ValueError):
            merge_columns([a, b])

    def test_zero_column_frames_ignored(self):
        a = StreamFrame.from_columns(0, {ADA: [1.0, 2.0]})
        empty = restrict(a, a.domain, [])
        assert frames_equal(merge_columns([empty, a]), a)

    def test_empty_list_gives_empty_frame(self):
        assert merge_columns([]).n_rows == 0
