import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ppgl_dispatch import stain
from ppgl_dispatch.cases import StainStats

skimage_color = pytest.importorskip("skimage.color")

rgb_images = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)),
                    elements=st.floats(0, 1))


def test_black_and_white():
    lab = stain.rgb_to_lab(np.array([[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]]))
    assert lab[0, 0, 0] == 0.0
    assert abs(lab[0, 1, 0] - 100.0) < 1e-9
    assert abs(lab[0, 1, 1]) < 1e-3 and abs(lab[0, 1, 2]) < 1e-3


def test_mid_gray_against_reference():
    lab = stain.rgb_to_lab(np.array([0.5, 0.5, 0.5]))
    ref = skimage_color.rgb2lab(np.array([[[0.5, 0.5, 0.5]]]), illuminant="D65")[0, 0]
    assert abs(lab[0] - ref[0]) < 1e-3
    assert abs(lab[0] - 53.389) < 1e-2
    assert abs(lab[1]) < 1e-3 and abs(lab[2]) < 1e-3


def test_matches_skimage_on_random_colors():
    rgb = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    ref = skimage_color.rgb2lab(rgb, illuminant="D65")
    # the two implementations differ only in white point rounding
    assert np.abs(stain.rgb_to_lab(rgb) - ref).max() < 0.05


@settings(max_examples=50)
@given(rgb_images)
def test_round_trip(img):
    assert np.abs(stain.lab_to_rgb(stain.rgb_to_lab(img)) - img).max() < 1e-6


def test_tissue_mask_rules():
    white = np.ones((4, 4, 3))
    black = np.zeros((4, 4, 3))
    assert not stain.tissue_mask(white, 90).any()
    assert stain.tissue_mask(black, 90).all()
    half = np.ones((4, 4, 3))
    half[:, :2] = 0.2
    expected = np.zeros((4, 4), bool)
    expected[:, :2] = True
    assert np.array_equal(stain.tissue_mask(half, 90), expected)
    with pytest.raises(ValueError):
        stain.tissue_mask(white, 100)


def test_constant_region_has_zero_std():
    lab = np.tile([50.0, 10.0, -5.0], (3, 3, 1))
    s = stain.compute_stain_stats(lab, np.ones((3, 3), bool))
    assert s.std == (0.0, 0.0, 0.0)
    assert s.mean == (50.0, 10.0, -5.0)


def test_two_point_std():
    lab = np.array([[[40.0, 0, 0], [60.0, 0, 0]]])
    s = stain.compute_stain_stats(lab, np.ones((1, 2), bool))
    assert s.mean_l == 50.0 and s.std_l == 10.0


def test_stats_against_two_pass_oracle():
    rng = np.random.default_rng(1)
    lab = stain.rgb_to_lab(rng.uniform(0, 1, (32, 32, 3)))
    mask = rng.random((32, 32)) < 0.6
    s = stain.compute_stain_stats(lab, mask)
    for ch in range(3):
        vals = [lab[i, j, ch] for i in range(32) for j in range(32) if mask[i, j]]
        m = sum(vals) / len(vals)
        sd = (sum((v - m) ** 2 for v in vals) / len(vals)) ** 0.5
        assert abs(s.mean[ch] - m) < 1e-10
        assert abs(s.std[ch] - sd) < 1e-10


def test_no_tissue_error():
    lab = stain.rgb_to_lab(np.ones((3, 3, 3)))
    mask = np.zeros((3, 3), bool)
    mask[0, 0] = True
    with pytest.raises(stain.NoTissueError):
        stain.compute_stain_stats(lab, mask)
    with pytest.raises(stain.NoTissueError):
        stain.normalize(np.ones((3, 3, 3)), StainStats(50, 0, 0, 1, 1, 1))


def test_scalar_substitution():
    lab = np.array([[[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]]])  # mean 0, std 1 per channel
    out = stain.align_lab(lab, np.ones((1, 2), bool), StainStats(5, 5, 5, 2, 2, 2), 0.0)
    assert np.allclose(out[0, 0], 7.0, atol=0, rtol=0)


def _tissue_image(seed):
    rng = np.random.default_rng(seed)
    lab = np.stack([rng.normal(55, 6, (20, 20)), rng.normal(15, 4, (20, 20)), rng.normal(-8, 4, (20, 20))], -1)
    lab[:4] = (97.0, 0.0, 0.0)
    return stain.lab_to_rgb(lab)


def test_identity_within_1e6():
    img = _tissue_image(2)
    lab = stain.rgb_to_lab(img)
    mask = lab[..., 0] < 85
    mu, sd = stain.masked_moments(lab, mask)
    out = stain.normalize(img, StainStats(*mu, *sd), epsilon=0.0)
    assert np.abs(out - img).max() < 1e-6


def test_idempotence():
    img = _tissue_image(3)
    target = StainStats(60, 12, -6, 7, 3.5, 3)
    once = stain.normalize(img, target, 0.0)
    twice = stain.normalize(once, target, 0.0)
    mask = stain.tissue_mask(img)
    s1 = stain.masked_moments(stain.rgb_to_lab(once), mask)
    s2 = stain.masked_moments(stain.rgb_to_lab(twice), mask)
    assert np.abs(s1[0] - s2[0]).max() < 1e-4 and np.abs(s1[1] - s2[1]).max() < 1e-4


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(0.5, 3), st.floats(-20, 20))
def test_affine_per_channel(seed, scale, shift):
    rng = np.random.default_rng(seed)
    lab = rng.normal(50, 10, (5, 5, 3))
    target = StainStats(50 + shift, shift, -shift, 10 * scale, 5 * scale, 5 * scale)
    out = stain.align_lab(lab, np.ones((5, 5), bool), target, 1e-6)
    p, q, r = lab[0, 0], lab[1, 1], lab[2, 2]
    op, oq, orr = out[0, 0], out[1, 1], out[2, 2]
    for ch in range(3):
        if abs(r[ch] - q[ch]) > 1e-9:
            assert abs((op[ch] - oq[ch]) / (orr[ch] - oq[ch]) - (p[ch] - q[ch]) / (r[ch] - q[ch])) < 1e-6


def test_preconditions():
    img = _tissue_image(4)
    with pytest.raises(ValueError):
        stain.normalize(img, StainStats(50, 0, 0, 1, 1, 1), epsilon=-1)
    with pytest.raises(ValueError):
        stain.normalize(img, StainStats(50, 0, 0, 0, 1, 1))
    with pytest.raises(ValueError):
        stain.rgb_to_lab(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        stain.normalize(img * 2, StainStats(50, 0, 0, 1, 1, 1))


def test_png_and_raw_io(tmp_path):
    img = _tissue_image(5)
    stain.write_image(img, tmp_path / "a.png")
    back = stain.read_image(tmp_path / "a.png")
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    stain.write_image(img, tmp_path / "a.json")
    assert np.array_equal(stain.read_image(tmp_path / "a.json"), img)
