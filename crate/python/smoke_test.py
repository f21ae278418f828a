"""Smoke test for the facetrace_py extension.

Build first:  maturin develop -m crates/python/Cargo.toml
Then run:     python -m pytest python/smoke_test.py
"""

import math

import pytest

ft = pytest.importorskip("facetrace_py")


def tiny_model(seed=0):
    return ft.Model.init(resolution=16, channels=[2, 2, 4, 4], id_dim=8, attr_dim=8, seed=seed)


def test_image_round_trip(tmp_path):
    img = ft.Image(2, 2, [0.0, 0.25, 0.5] * 4)
    assert (img.height, img.width) == (2, 2)
    path = tmp_path / "x.png"
    img.save(str(path))
    back = ft.Image.read(str(path))
    assert max(abs(a - b) for a, b in zip(back.pixels, img.pixels)) <= 0.5 / 255 + 1e-6


def test_bad_image_raises_value_error():
    with pytest.raises(ValueError):
        ft.Image(2, 2, [0.0] * 5)


def test_model_shapes():
    m = tiny_model()
    assert m.resolution == 16
    assert m.level_schedule() == [(8, 2), (4, 2), (2, 4), (2, 4)]
    originals, fakes = ft.synthetic_pairs(n_identities=2, frames_per_identity=1, resolution=16)
    rec, ident, attr = m.reconstruct(originals[0])
    assert (rec.height, rec.width) == (16, 16)
    assert len(ident) == 8 and len(attr) == 8
    traced, traced_id = m.trace(fakes[0])
    assert len(traced.pixels) == 16 * 16 * 3 and len(traced_id) == 8
    assert all(0.0 <= p <= 1.0 for p in traced.pixels)


def test_metrics():
    originals, fakes = ft.synthetic_pairs(n_identities=2, frames_per_identity=1, resolution=16)
    a = originals[0]
    assert ft.psnr(a, a) == 99.0
    assert ft.ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ft.psnr(a, fakes[0]) < 99.0
    bb = ft.Backbone.builtin(seed=2, output_dim=16, resolution=16)
    assert ft.facial_similarity(a, a, bb) == pytest.approx(100.0, abs=1e-4)
    assert len(ft.difference_mask(a, fakes[0])) == 16 * 16


def test_redundancy_modes():
    assert ft.redundancy([1.0, 0.0], [-1.0, 0.0], "raw") == pytest.approx(-1.0)
    assert ft.redundancy([1.0, 0.0], [-1.0, 0.0], "absolute") == pytest.approx(1.0)
    assert ft.cosine_similarity([1.0, 0.0], [0.0, 2.0]) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        ft.redundancy([1.0], [1.0], "signed")


def test_trainer_is_deterministic():
    originals, fakes = ft.synthetic_pairs(n_identities=2, frames_per_identity=2, resolution=16)
    sup = ft.Backbone.builtin(seed=1, output_dim=8, resolution=16, normalize_output=False)
    runs = []
    for _ in range(2):
        t = ft.Trainer(tiny_model(3), originals, fakes, sup, seed=4, batch_size=2)
        runs.append(t.epoch() + t.epoch())
    assert len(runs[0]) == 4
    assert runs[0] == runs[1]
    assert all(math.isfinite(v) for v in runs[0])
