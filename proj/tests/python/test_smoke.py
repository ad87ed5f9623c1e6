import numpy as np
import pytest

import iseg


def numpy_sgm(f, clicks, w_c, theta, phi, polarity=None):
    c, h, w = f.shape
    x = f.reshape(c, h * w)
    idx = [i for i, _ in clicks]
    keys_in = x[:, idx].copy()
    if polarity is not None:
        for j, (_, positive) in enumerate(clicks):
            keys_in[:, j] += polarity[:, 0 if positive else 1]
    logits = (theta @ x).T @ (phi @ keys_in)
    logits -= logits.max(axis=1, keepdims=True)
    attn = np.exp(logits)
    attn /= attn.sum(axis=1, keepdims=True)
    out = x + (w_c.T @ x[:, idx]) @ attn.T
    return out.reshape(c, h, w), attn


def random_params(rng, c):
    s = 1.0 / np.sqrt(c)
    return [rng.uniform(-s, s, (c, c)) for _ in range(3)]


def random_clicks(rng, n, m):
    idx = rng.choice(n, size=m, replace=False)
    return [(int(i), bool(rng.integers(2))) for i in idx]


def test_sgm_matches_numpy_reference():
    rng = np.random.default_rng(0)
    for _ in range(10):
        f = rng.normal(size=(4, 6, 5))
        w_c, theta, phi = random_params(rng, 4)
        pol = rng.uniform(-0.1, 0.1, (4, 2))
        clicks = random_clicks(rng, 30, 3)
        want, attn = numpy_sgm(f, clicks, w_c, theta, phi, pol)
        got = iseg.sgm_forward(f, clicks, w_c, theta, phi, pol)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
        a = iseg.sgm_attention(f, clicks, w_c, theta, phi, pol)
        np.testing.assert_allclose(a, attn, rtol=0, atol=1e-12)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_sparse_equals_restricted_dense():
    rng = np.random.default_rng(1)
    f = rng.normal(size=(4, 8, 8))
    w_c, theta, phi = random_params(rng, 4)
    clicks = random_clicks(rng, 64, 3)
    sparse = iseg.sgm_forward(f, clicks, w_c, theta, phi)
    dense = iseg.dense_nonlocal(f, w_c, theta, phi, restrict_cols=clicks)
    np.testing.assert_allclose(sparse, dense, rtol=0, atol=1e-9)
    assert np.array_equal(iseg.sgm_forward(f, [], w_c, theta, phi), f)


def test_scene_is_deterministic():
    a_img, a_gt, kind = iseg.generate_scene(5, 64, 96)
    b_img, b_gt, _ = iseg.generate_scene(5, 64, 96)
    assert a_img.shape == (3, 64, 96) and a_gt.shape == (64, 96)
    assert a_gt.dtype == np.uint8
    assert np.array_equal(a_img, b_img) and np.array_equal(a_gt, b_gt)
    assert kind in ("disk", "rect", "blob", "ring")
    assert 0.0 <= a_img.min() and a_img.max() <= 1.0
    _, ring_gt, ring_kind = iseg.generate_scene(6, 64, 96, kind="ring")
    assert ring_kind == "ring" and ring_gt.any()


def test_rle_round_trip_and_convention():
    rng = np.random.default_rng(2)
    mask = (rng.random((7, 9)) < 0.4).astype(np.uint8)
    counts = iseg.rle_encode(mask)
    assert sum(counts) == mask.size
    assert np.array_equal(iseg.rle_decode(counts, 7, 9), mask)
    assert iseg.rle_encode(np.array([[0, 0, 1, 1, 0]], dtype=np.uint8)) == [2, 2, 1]
    with pytest.raises(ValueError):
        iseg.rle_decode([3], 2, 2)


def test_iou_and_robot_click():
    gt = np.zeros((10, 10), dtype=np.uint8)
    gt[2:8, 2:8] = 1
    pred = np.zeros_like(gt)
    pred[2:8, 2:5] = 1
    assert iseg.iou(pred, gt) == pytest.approx(18 / 36, abs=1e-15)
    row, col, positive = iseg.simulate_next_click(pred, gt)
    assert positive and gt[row, col] == 1 and pred[row, col] == 0
    assert iseg.simulate_next_click(gt, gt) is None


def test_session_and_checkpoint(tmp_path):
    image, gt, _ = iseg.generate_scene(3, 64, 96)
    model = iseg.Model.init(c_low=4, c_high=6, fpm="sgm_hsgm", seed=1, with_fine=True)
    path = tmp_path / "m.ckpt"
    model.save(path)
    loaded = iseg.Model.load(path)
    assert loaded.fingerprint == model.fingerprint and loaded.has_fine and loaded.fpm == "sgm_hsgm"

    sessions = [iseg.Session(m, image) for m in (model, loaded)]
    ys, xs = np.nonzero(gt)
    r, c = int(ys[len(ys) // 2]), int(xs[len(xs) // 2])
    probs = [s.click(r, c) for s in sessions]
    assert probs[0].shape == (64, 96)
    assert np.array_equal(probs[0], probs[1])
    assert np.all((probs[0] > 0) & (probs[0] < 1))
    s = sessions[0]
    assert s.step == 1 and s.clicks == [(r, c, True)]
    assert np.array_equal(s.mask, (s.prob >= 0.5).astype(np.uint8))
    with pytest.raises(iseg.DuplicateClickError):
        s.click(r, c, False)
    with pytest.raises(iseg.OutOfBoundsError):
        s.click(64, 0)
    assert s.step == 1
    with pytest.raises(iseg.IoError):
        iseg.Model.load(tmp_path / "missing.ckpt")
    (tmp_path / "bad.ckpt").write_bytes(b"junk")
    (tmp_path / "bad.ckpt.json").write_text("{}")
    with pytest.raises(ValueError):
        iseg.Model.load(tmp_path / "bad.ckpt")
