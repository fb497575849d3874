import logging

import numpy as np

from eventdart.events import BoundingBox, EventStream
from eventdart.render import (BOX_COLOR, LINE_COLOR, OFF_COLOR, ON_COLOR, decode_ppm, encode_ppm,
                              line_pixels, rasterize, render_overlay)


def small_stream():
    return EventStream.from_arrays([1, 2, 2], [1, 3, 3], [0, 5, 9], [1, 0, 1], width=6, height=5)


def test_rasterize_colours_and_last_write():
    img = rasterize(small_stream(), 0, 10)
    assert img.shape == (5, 6, 3)
    assert tuple(img[1, 1]) == ON_COLOR
    assert tuple(img[3, 2]) == ON_COLOR  # the later ON event overwrote the OFF one
    assert tuple(rasterize(small_stream(), 0, 9)[3, 2]) == OFF_COLOR
    assert tuple(img[0, 0]) == (255, 255, 255)


def test_empty_window_warns(caplog):
    with caplog.at_level(logging.WARNING):
        img = rasterize(small_stream(), 100, 200)
    assert (img == 255).all() and "no events" in caplog.text


def test_line_pixels_examples():
    assert line_pixels(0, 0, 3, 0) == [(0, 0), (1, 0), (2, 0), (3, 0)]
    assert line_pixels(0, 0, 2, 2) == [(0, 0), (1, 1), (2, 2)]
    pts = line_pixels(5, 1, 0, 3)
    assert pts[0] == (5, 1) and pts[-1] == (0, 3) and len(pts) == 6


def test_ppm_round_trip():
    img = np.random.default_rng(0).integers(0, 256, (4, 7, 3)).astype(np.uint8)
    data = encode_ppm(img)
    assert data.startswith(b"P6\n7 4\n255\n")
    assert np.array_equal(decode_ppm(data), img)


def test_overlay(tmp_path):
    out = tmp_path / "f.ppm"
    img = render_overlay(small_stream(), 0, 10, out, [BoundingBox(0, 0, 5, 4)],
                         [((1, 1), (4, 1))])
    assert tuple(img[0, 3]) == BOX_COLOR and tuple(img[1, 2]) == LINE_COLOR
    assert np.array_equal(decode_ppm(out.read_bytes()), img)
