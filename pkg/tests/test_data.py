import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from rrvq.data import (
    PALETTE, PPMError, decode_ppm, encode_ppm, gen_swatches, image_grid, intra_image_std, load_ppm_dir, read_ppm,
    train_eval_split, write_ppm,
)


def test_swatches_are_uniform_blocks():
    x = gen_swatches(200, 8, 0)
    assert x.shape == (200, 3, 8, 8) and x.dtype == np.uint8
    flat = x.reshape(200, 3, -1)
    assert (flat.max(axis=2) == flat.min(axis=2)).all()
    assert np.all(intra_image_std(x) == 0)


def test_exactly_nine_colours():
    colours = {tuple(c) for c in gen_swatches(500, 2, 1)[:, :, 0, 0]}
    assert len(PALETTE) == 9 and colours == {tuple(c) for c in PALETTE}


def test_colour_frequencies_uniform():
    n = 10_000
    _, labels = gen_swatches(n, 1, 3, return_labels=True)
    counts = np.bincount(labels, minlength=9)
    sd = np.sqrt(n * (1 / 9) * (8 / 9))
    assert np.all(np.abs(counts - n / 9) <= 3 * sd), counts


def test_swatches_reproducible_and_split_independent():
    np.testing.assert_array_equal(gen_swatches(10, 4, 7), gen_swatches(10, 4, 7))
    tr, ev = train_eval_split(50, 50, 4, 0)
    assert not np.array_equal(tr, ev)
    with pytest.raises(ValueError):
        gen_swatches(0)


def test_white_pixel_round_trip(tmp_path):
    img = np.full((3, 1, 1), 255, np.uint8)
    write_ppm(tmp_path / "w.ppm", img)
    assert (tmp_path / "w.ppm").read_bytes() == b"P6\n1 1\n255\n\xff\xff\xff"
    np.testing.assert_array_equal(read_ppm(tmp_path / "w.ppm"), img)


@given(hnp.arrays(np.uint8, st.tuples(st.just(3), st.integers(1, 6), st.integers(1, 6))))
def test_encode_decode_inverse(img):
    data = encode_ppm(img)
    np.testing.assert_array_equal(decode_ppm(data), img)
    assert encode_ppm(decode_ppm(data)) == data


def test_swatch_files_byte_identical(tmp_path):
    for i, im in enumerate(gen_swatches(5, 8, 0)):
        p = tmp_path / f"{i}.ppm"
        write_ppm(p, im)
        raw = p.read_bytes()
        write_ppm(p, read_ppm(p))
        assert p.read_bytes() == raw
    assert load_ppm_dir(tmp_path, 8).shape == (5, 3, 8, 8)


def test_header_comments_accepted():
    assert decode_ppm(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03")[:, 0, 0].tolist() == [1, 2, 3]


@pytest.mark.parametrize("raw", [
    b"P6\n1 1\n65535\n\0\0\0\0\0\0",
    b"P3\n1 1\n255\n1 2 3\n",
    b"P6\n2 2\n255\n\0\0\0",
    b"P6\n1 1\n255\n\0\0\0\0",
    b"",
])
def test_malformed_rejected(raw):
    with pytest.raises(PPMError):
        decode_ppm(raw)


def test_encode_guards():
    with pytest.raises(ValueError):
        encode_ppm(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        encode_ppm(np.full((3, 1, 1), 300.0))


def test_image_grid_layout():
    imgs = np.zeros((3, 3, 2, 2), np.uint8)
    g = image_grid(imgs, cols=2, pad=1)
    assert g.shape == (3, 2 * 3 + 1, 2 * 3 + 1)
    assert g[:, 1:3, 1:3].max() == 0 and g[:, 0, 0].tolist() == [255] * 3
    np.testing.assert_array_equal(image_grid(np.ones((1, 3, 2, 2)), pad=0), np.full((3, 2, 2), 255))


def test_intra_image_std_per_channel():
    img = np.zeros((1, 3, 2, 2))
    img[0, 0, 0, 0] = 4.0  # one channel varies
    assert intra_image_std(img)[0] == pytest.approx(np.std([4, 0, 0, 0]) / 3)
