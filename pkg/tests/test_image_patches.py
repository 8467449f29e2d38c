import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image as PILImage

from sparse3sd import Image, PatchGrid, aggregate_patches, extract_patches, load_image, save_image
from sparse3sd.image_patches import ImageFormatError


def _pgm_bytes(raster, maxval=255, comment=False):
    h, w = raster.shape
    head = b"P5\n" + (b"# made by hand\n" if comment else b"") + b"%d %d\n%d\n" % (w, h, maxval)
    return head + raster.astype(np.uint8).tobytes()


def test_pgm_read_known_bytes(tmp_path):
    raster = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    p = tmp_path / "a.pgm"
    p.write_bytes(_pgm_bytes(raster, comment=True))
    img = load_image(p)
    assert img.shape == (3, 4)
    assert img.pixels.dtype == np.float64
    np.testing.assert_array_equal(img.pixels, raster)


@pytest.mark.parametrize("ext", ["pgm", "png"])
def test_round_trip_is_exact(tmp_path, ext):
    rng = np.random.default_rng(1)
    raster = rng.integers(0, 256, size=(17, 23)).astype(np.float64)
    p = tmp_path / f"r.{ext}"
    save_image(Image(raster), p)
    np.testing.assert_array_equal(load_image(p).pixels, raster)


def test_pgm_writer_header(tmp_path):
    p = tmp_path / "h.pgm"
    save_image(Image(np.zeros((2, 3))), p)
    assert p.read_bytes() == b"P5\n3 2\n255\n" + bytes(6)


def test_sixteen_bit_pgm_rejected(tmp_path):
    p = tmp_path / "deep.pgm"
    p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(ImageFormatError, match="bit depth"):
        load_image(p)


def test_truncated_and_wrong_magic(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(ImageFormatError, match="truncated"):
        load_image(p)
    p.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ImageFormatError):
        load_image(p)


def test_png_color_and_16bit_rejected(tmp_path):
    rgb = tmp_path / "c.png"
    PILImage.fromarray(np.zeros((4, 4, 3), np.uint8), "RGB").save(rgb)
    with pytest.raises(ImageFormatError, match="color"):
        load_image(rgb)
    deep = tmp_path / "d.png"
    PILImage.fromarray(np.zeros((4, 4), np.uint16)).save(deep)
    with pytest.raises(ImageFormatError, match="bit depth"):
        load_image(deep)


def test_writer_clamps_and_rounds_half_up(tmp_path):
    p = tmp_path / "q.pgm"
    save_image(Image(np.array([[-3.0, 0.5, 1.49, 254.5, 300.0, 2.5]])), p)
    np.testing.assert_array_equal(load_image(p).pixels, [[0, 1, 1, 255, 255, 3]])


def test_image_rejects_bad_input():
    with pytest.raises(ValueError):
        Image(np.zeros((0, 4)))
    with pytest.raises(ValueError):
        Image(np.array([[1.0, np.nan]]))
    img = Image(np.ones((2, 2)))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 5.0


def test_patch_counts():
    grid = PatchGrid.for_shape((256, 256), 8, 1)
    assert grid.patch_count == 249 * 249
    # stride that does not tile: the last origin is appended
    g2 = PatchGrid.for_shape((20, 20), 8, 5)
    assert g2.origin_rows.tolist() == [0, 5, 10, 12]
    assert g2.patch_count == 16
    with pytest.raises(ValueError):
        PatchGrid.for_shape((4, 4), 8)
    with pytest.raises(ValueError):
        PatchGrid.for_shape((16, 16), 8, 0)
    with pytest.raises(ValueError, match="covered"):
        PatchGrid.for_shape((16, 16), 4, 5)


def test_patch_layout_row_major():
    px = np.arange(30, dtype=float).reshape(5, 6)
    pm = extract_patches(Image(px), patch_side=2, stride=1, remove_dc=False)
    assert pm.data.shape == (4, 4 * 5)
    np.testing.assert_array_equal(pm.data[:, 0], [0, 1, 6, 7])
    # second column is the next origin along the row
    np.testing.assert_array_equal(pm.data[:, 1], [1, 2, 7, 8])
    np.testing.assert_array_equal(pm.data[:, 5], [6, 7, 12, 13])


def test_dc_removal_round_trip():
    rng = np.random.default_rng(2)
    img = Image(rng.uniform(0, 255, (19, 21)))
    pm = extract_patches(img, 8, 3, remove_dc=True)
    np.testing.assert_allclose(pm.data.mean(axis=0), 0, atol=1e-12)
    out = aggregate_patches(pm.data, pm.grid, pm.dc_offsets)
    np.testing.assert_allclose(out.pixels, img.pixels, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(3, 24),
    w=st.integers(3, 24),
    n=st.integers(1, 3),
    stride=st.integers(1, 3),
    seed=st.integers(0, 2**32 - 1),
)
def test_extract_aggregate_identity(h, w, n, stride, seed):
    stride = min(stride, n)
    img = Image(np.random.default_rng(seed).uniform(-50, 300, (h, w)))
    pm = extract_patches(img, n, stride, remove_dc=bool(seed % 2))
    out = aggregate_patches(pm.data, pm.grid, pm.dc_offsets)
    np.testing.assert_allclose(out.pixels, img.pixels, rtol=0, atol=1e-9)


def _sequential_aggregate(recon, grid, dc):
    acc = np.zeros(grid.image_shape)
    cnt = np.zeros(grid.image_shape)
    n = grid.patch_side
    m = 0
    for r in grid.origin_rows:
        for c in grid.origin_cols:
            acc[r : r + n, c : c + n] += (recon[:, m] + dc[m]).reshape(n, n)
            cnt[r : r + n, c : c + n] += 1
            m += 1
    return acc / cnt


def test_aggregate_matches_sequential_bitwise():
    rng = np.random.default_rng(5)
    grid = PatchGrid.for_shape((23, 19), 4, 2)
    recon = rng.standard_normal((16, grid.patch_count)) * 1e3
    dc = rng.standard_normal(grid.patch_count)
    got = aggregate_patches(recon, grid, dc).pixels
    assert np.array_equal(got, _sequential_aggregate(recon, grid, dc))


def test_two_overlapping_estimates_average():
    grid = PatchGrid.for_shape((1, 3), 1, 1)
    # 1x1 patches: each pixel covered once
    out = aggregate_patches(np.array([[10.0, 20.0, 30.0]]), grid)
    np.testing.assert_array_equal(out.pixels, [[10, 20, 30]])
    grid = PatchGrid.for_shape((2, 3), 2, 1)
    out = aggregate_patches(np.array([[10.0, 20.0]] * 4), grid)
    np.testing.assert_array_equal(out.pixels[:, 1], [15.0, 15.0])


def test_aggregate_shape_mismatch():
    grid = PatchGrid.for_shape((8, 8), 4, 4)
    with pytest.raises(ValueError):
        aggregate_patches(np.zeros((16, 3)), grid)
    with pytest.raises(ValueError):
        aggregate_patches(np.zeros((16, 4)), grid, out_shape=(9, 8))
