import subprocess
import sys

import numpy as np
import pytest

from eventdart.cli import benchmark_extract, main
from eventdart.config import PipelineConfig
from eventdart.events import read_events
from eventdart.render import decode_ppm
from helpers import run_every_subcommand


@pytest.fixture(scope="module")
def twice(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    return base, run_every_subcommand(base / "a"), run_every_subcommand(base / "b")


def test_every_subcommand_is_deterministic(twice):
    _, a, b = twice
    assert len(a) >= 24
    assert {k for k in a if a[k] != b[k]} == set()


def test_effective_config_reruns_identically(twice, tmp_path):
    base, _, _ = twice
    w = base / "a"
    out1, out2 = tmp_path / "k1.txt", tmp_path / "k2.txt"
    assert main(["filter", str(w / "scene.txt"), str(out1), "--config", str(w / "eff.cfg")]) == 0
    assert main(["filter", str(w / "scene.txt"), str(out2), "--emit-effective-config",
                 str(tmp_path / "e.cfg")]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_perfect_prediction_evaluates_to_one(twice, tmp_path, capsys):
    base, _, _ = twice
    w = base / "a"
    out = tmp_path / "m.csv"
    assert main(["eval-track", str(w / "scene.txt"), "--gt", str(w / "scene.gt"),
                 "--pred", str(w / "scene.gt"), "-o", str(out)]) == 0
    row = out.read_text().splitlines()[1].split(",")
    assert row[1] == "1.0000" and row[4] == "1.0000"


def test_render_output_is_ppm(twice):
    base, _, _ = twice
    img = decode_ppm((base / "a" / "frame.ppm").read_bytes())
    assert img.shape == (180, 240, 3)
    assert (img == [0, 160, 0]).all(axis=2).any()


def test_synth_scene_is_sorted_and_in_bounds(twice):
    base, _, _ = twice
    s = read_events(base / "a" / "scene.txt")
    assert np.all(np.diff(s.t) >= 0)
    assert s.x.max() < 240 and s.y.max() < 180


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["filter", str(tmp_path / "missing.txt"), str(tmp_path / "o.txt")]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["filter", str(tmp_path / "x.txt"), str(tmp_path / "o.txt"),
                 "--config", str(bad)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    assert "eventdart" in capsys.readouterr().err


def test_benchmark_reports_rate():
    n, rate = benchmark_extract(300_000, 0, PipelineConfig())
    assert n > 1000 and rate > 0


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "eventdart", "--help"], capture_output=True,
                         text=True, check=True)
    for name in ("convert", "filter", "extract", "track", "match", "eval-track", "synth"):
        assert name in out.stdout
