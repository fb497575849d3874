import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventdart.errors import (InvalidBox, InvalidTimestamp, OrderViolation, OutOfBounds,
                              OverlapError, ParseError, TruncatedRecord)
from eventdart.events import (AnnotationInterval, AnnotationTrack, BoundingBox, Event,
                              EventStream, format_annotations, format_text_events,
                              parse_aer5, parse_annotations, parse_text_events, read_events,
                              serialize_aer5, write_events)

from conftest import random_stream


@pytest.mark.parametrize("raw, expected", [
    ([0x0A, 0x14, 0x80, 0x00, 0x64], Event(10, 20, 100, 1)),
    ([0x00, 0x00, 0x00, 0x00, 0x00], Event(0, 0, 0, 0)),
    ([0x21, 0x21, 0xFF, 0xFF, 0xFF], Event(33, 33, 8388607, 1)),
])
def test_aer_bit_layout(raw, expected):
    s = parse_aer5(bytes(raw))
    assert len(s) == 1 and s[0] == expected


def test_aer_truncated_and_bounds():
    with pytest.raises(TruncatedRecord):
        parse_aer5(bytes(7))
    with pytest.raises(OutOfBounds):
        parse_aer5(bytes([40, 0, 0, 0, 1]))


def test_aer_rejects_unsorted():
    data = bytes([1, 1, 0, 0, 9, 1, 1, 0, 0, 3])
    with pytest.raises(OrderViolation):
        parse_aer5(data)


@given(st.lists(st.tuples(st.integers(0, 33), st.integers(0, 33), st.integers(0, 2 ** 23 - 1),
                          st.integers(0, 1)), max_size=40))
def test_aer_round_trip(rows):
    rows = sorted(rows, key=lambda r: r[2])
    s = EventStream.from_events([Event(x, y, t, p) for x, y, t, p in rows], width=34, height=34)
    assert parse_aer5(serialize_aer5(s)) == s


@pytest.mark.parametrize("line, expected", [
    ("0.003811 96 133 0", Event(96, 133, 3811, 0)),
    ("0 0 0 1", Event(0, 0, 0, 1)),
    ("1.000000 239 179 1", Event(239, 179, 1_000_000, 1)),
])
def test_text_line(line, expected):
    assert parse_text_events(line)[0] == expected


def test_text_errors():
    with pytest.raises(ParseError):
        parse_text_events("0.1 2 3")
    with pytest.raises(ParseError):
        parse_text_events("0.1 2 3 5")
    with pytest.raises(OutOfBounds):
        parse_text_events("0.1 240 3 1")
    with pytest.raises(InvalidTimestamp):
        parse_text_events("-0.1 2 3 1")
    with pytest.raises(OrderViolation):
        parse_text_events("0.2 1 1 1\n0.1 1 1 1")


def test_text_comments_and_blank_lines():
    s = parse_text_events("# header\n\n0.5 1 2 1\n")
    assert list(s) == [Event(1, 2, 500_000, 1)]


def test_text_round_trip(rng):
    s = random_stream(rng, 500, 240, 180, 5_000_000)
    assert parse_text_events(format_text_events(s)) == s


def test_file_dispatch(tmp_path, rng):
    s = random_stream(rng, 200, 34, 34)
    for name in ("a.bin", "a.txt"):
        write_events(s, tmp_path / name)
        assert read_events(tmp_path / name, 34, 34) == s


def test_slice_examples():
    s = EventStream.from_arrays([0, 0, 0], [0, 0, 0], [1, 5, 9], width=4, height=4)
    assert s.slice(0, 6).t.tolist() == [1, 5]
    assert len(s.slice(5, 5)) == 0


@given(st.integers(0, 2000), st.integers(0, 2000), st.integers(0, 2000))
def test_slice_partition(a, b, c):
    a, b, c = sorted((a, b, c))
    rng = np.random.default_rng(a * 7 + b * 3 + c)
    s = random_stream(rng, 300, 8, 8, 2000)
    left, right, whole = s.slice(a, b), s.slice(b, c), s.slice(a, c)
    assert np.array_equal(np.concatenate([left.t, right.t]), whole.t)
    mask = (s.t >= a) & (s.t < c)
    assert np.array_equal(whole.t, s.t[mask]) and np.array_equal(whole.x, s.x[mask])


def test_stream_is_immutable(rng):
    x = np.array([1, 2])
    s = EventStream.from_arrays(x, [0, 0], [0, 1], width=4, height=4)
    with pytest.raises(ValueError):
        s.x[0] = 3
    x[0] = 3  # caller's buffer is untouched and detached
    assert s.x[0] == 1


def test_annotations_examples():
    tr = parse_annotations("0 10000 5 5 20 20")
    assert tr.intervals[0].box == BoundingBox(5, 5, 20, 20)
    tr = parse_annotations("0 10000 -")
    assert tr.intervals[0].box is None
    tr = parse_annotations("0 10000 1 1 2 2\n10000 20000 -")
    assert len(tr) == 2
    assert tr.box_at(9999) == BoundingBox(1, 1, 2, 2) and tr.box_at(10000) is None
    assert tr.box_at(20000) is None


def test_annotation_errors():
    with pytest.raises(OverlapError):
        parse_annotations("0 10000 -\n5000 15000 -")
    with pytest.raises(InvalidBox):
        parse_annotations("0 10000 5 5 4 20")
    with pytest.raises(ParseError):
        parse_annotations("0 10000 1 2")


def test_annotation_round_trip():
    tr = AnnotationTrack((AnnotationInterval(0, 10, BoundingBox(0, 1, 2, 3)),
                          AnnotationInterval(10, 20, None)))
    assert parse_annotations(format_annotations(tr)) == tr


def test_box_geometry():
    b = BoundingBox(2, 3, 5, 7)
    assert (b.width, b.height, b.area, b.center) == (4, 5, 20, (3.5, 5.0))
    assert b.padded(3, 3, 7, 9) == BoundingBox(0, 0, 6, 8)
    assert b.contains(np.array([2, 6]), np.array([7, 7])).tolist() == [True, False]
    assert BoundingBox.around([4, 1], [9, 2]) == BoundingBox(1, 2, 4, 9)
