"""Scenario builders shared by the unit and acceptance suites."""

import numpy as np

from eventdart.dart import circular_shift
from eventdart.matching import FeatureSet, match_sets, slice_features
from eventdart.synth import SHAPES, ShapeTrack, SyntheticSceneConfig, rotate90, synth_generate

CX, CY = 120, 90


def rotated_slices(seed=3):
    """Slice A of a static scene and slice B of its 90-degree rotated copy.

    B's descriptors are shifted back by a quarter turn so that matching
    compares like with like; the rotation itself is known exactly.
    """
    distractors = (ShapeTrack(SHAPES["star"], ((0, 150, 60),)),
                   ShapeTrack(SHAPES["triangle"], ((0, 90, 120),)))
    cfg = SyntheticSceneConfig(ShapeTrack(SHAPES["lshape"], ((0, 80, 60),)),
                               distractors=distractors, duration_us=400_000, edge_rate=0.2)
    s, _, _ = synth_generate(cfg, seed)
    r = rotate90(s, CX, CY)
    A = slice_features(s, 100_000, 120_000)
    B = slice_features(r, 300_000, 320_000)
    n_w = 12
    B = FeatureSet(circular_shift(B.descriptors, n_w - n_w // 4, n_w), B.x, B.y, B.t)
    return A, B


def match_correctness(A, B, ratio):
    """(kept count, fraction of kept pairs landing within 1.5 px of the true location)."""
    pairs = match_sets(A, B, ratio)
    if not pairs:
        return 0, float("nan")
    ia = np.array([p.index_a for p in pairs])
    ib = np.array([p.index_b for p in pairs])
    # undo (x, y) -> (cx - (y - cy), cy + (x - cx))
    xb = CX + (B.y[ib] - CY)
    yb = CY - (B.x[ib] - CX)
    ok = np.hypot(A.x[ia] - xb, A.y[ia] - yb) <= 1.5
    return len(pairs), float(ok.mean())


# -- CLI determinism harness ---------------------------------------------------------

def _small_labelled_set(root, n_per=3, seed=0):
    from eventdart.events import write_events

    r = np.random.default_rng(seed)
    for lab, name in enumerate(["triangle", "square", "star"]):
        d = root / str(lab)
        d.mkdir(parents=True)
        for k in range(n_per):
            cx, cy = r.uniform(14, 20, 2)
            cfg = SyntheticSceneConfig(ShapeTrack(SHAPES[name], ((0, cx, cy),)), width=34,
                                       height=34, duration_us=200_000, edge_rate=0.05)
            s, _, _ = synth_generate(cfg, seed=int(r.integers(1 << 30)))
            write_events(s, d / f"{k:03d}.bin")


FAST = ["--set", "k_track=40", "--set", "kmeans_iters=10", "--set", "svm_epochs=5",
        "--set", "tau_d=0.01", "--set", "max_descriptors=5000"]


def run_every_subcommand(work, seed=7):
    """Run each subcommand once under ``work``; return {artifact: sha256}."""
    import contextlib
    import hashlib
    import io

    from eventdart.cli import main

    work.mkdir(parents=True, exist_ok=True)
    digests = {}

    def run(name, argv, outputs):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = main(argv)
        assert code == 0, f"{name} exited with {code}"
        digests[name + ":stdout"] = hashlib.sha256(buf.getvalue().replace(str(work), "").encode()).hexdigest()
        for o in outputs:
            digests[f"{name}:{o.name}"] = hashlib.sha256(o.read_bytes()).hexdigest()

    w = work
    s = ["--seed", str(seed)]
    run("synth", ["synth", "-o", str(w / "scene.txt"), "--duration-ms", "1500", *s],
        [w / "scene.txt", w / "scene.gt", w / "scene.roi"])
    run("convert", ["convert", str(w / "scene.txt"), str(w / "scene.bin"), "--width", "240",
                    "--height", "180"], [w / "scene.bin"])
    run("filter", ["filter", str(w / "scene.txt"), str(w / "kept.txt"), *s], [w / "kept.txt"])
    run("extract", ["extract", str(w / "scene.txt"), str(w / "d.drt"), *s], [w / "d.drt"])
    run("train-codebook", ["train-codebook", str(w / "scene.txt"), "-o", str(w / "c.cbk"),
                           "-k", "16", "--forest", *FAST, *s], [w / "c.cbk", w / "c.cbk.forest"])
    _small_labelled_set(w / "data", seed=seed)
    run("train-classifier", ["train-classifier", str(w / "data"), "-m", str(w / "clf"),
                             "-k", "16", "--width", "34", "--height", "34",
                             "--emit-effective-config", str(w / "eff.cfg"), *FAST, *s],
        [w / "clf.cbk", w / "clf.svm", w / "clf.cfg", w / "eff.cfg"])
    run("classify", ["classify", str(w / "data/0/000.bin"), "-m", str(w / "clf"),
                     "--width", "34", "--height", "34"], [])
    run("eval-classify", ["eval-classify", str(w / "data"), "-m", str(w / "clf"), "--width", "34",
                          "--height", "34", "--prefix-ms", "100", "-o", str(w / "acc.csv")],
        [w / "acc.csv"])
    run("track", ["track", str(w / "scene.txt"), "--roi", str(w / "scene.roi"),
                  "-o", str(w / "track.csv"), *FAST, *s], [w / "track.csv"])
    run("match", ["match", str(w / "scene.txt"), "--slice-a", "400000,420000",
                  "--slice-b", "900000,920000", "--ann", "-o", str(w / "m.csv"), *s],
        [w / "m.csv"])
    run("eval-track", ["eval-track", str(w / "scene.txt"), "--gt", str(w / "scene.gt"),
                       "--pred", str(w / "track.csv"), "-o", str(w / "metrics.csv"), *s],
        [w / "metrics.csv"])
    run("render", ["render", str(w / "scene.txt"), "--t0", "400000", "--t1", "420000",
                   "--boxes", str(w / "track.csv"), "--matches", str(w / "m.csv"),
                   "-o", str(w / "frame.ppm")], [w / "frame.ppm"])
    return digests


# -- digit recordings for a classification proxy ---------------------------------------

SACCADES = ((0, 0), (3, 3), (6, 0), (0, 0))


def digit_stream(img, seed, step_us=1000, threshold=0.15):
    """Events from sliding an 8x8 digit (upscaled to 24x24) along three saccades on 34x34.

    A pixel fires when the sub-pixel-shifted intensity differs from the value
    it last fired at by more than ``threshold``; polarity is the sign.
    """
    from eventdart.events import EventStream

    r = np.random.default_rng(seed)
    big = np.kron(np.asarray(img, float) / 16.0, np.ones((3, 3)))

    def frame(dx, dy):
        f = np.zeros((34, 34))
        f[2 + dy:26 + dy, 2 + dx:26 + dx] = big
        return f

    xs, ys, ts, ps = [], [], [], []
    t = 0
    ref = frame(0, 0)
    for (ax, ay), (bx, by) in zip(SACCADES, SACCADES[1:]):
        for k in range(1, 101):
            dx, dy = ax + (bx - ax) * k / 100, ay + (by - ay) * k / 100
            ix, iy = int(np.floor(dx)), int(np.floor(dy))
            fx, fy = dx - ix, dy - iy
            jx, jy = min(ix + 1, 8), min(iy + 1, 8)
            cur = ((1 - fx) * (1 - fy) * frame(ix, iy) + fx * (1 - fy) * frame(jx, iy)
                   + (1 - fx) * fy * frame(ix, jy) + fx * fy * frame(jx, jy))
            d = cur - ref
            fire = np.abs(d) > threshold
            yy, xx = np.nonzero(fire)
            if len(xx):
                xs.append(xx)
                ys.append(yy)
                ps.append((d[yy, xx] > 0).astype(int))
                ts.append(t + r.integers(0, step_us, len(xx)))
                ref = np.where(fire, cur, ref)
            t += step_us
    x, y, tt, p = map(np.concatenate, (xs, ys, ts, ps))
    o = np.argsort(tt, kind="stable")
    return EventStream.from_arrays(x[o], y[o], tt[o], p[o], width=34, height=34)
