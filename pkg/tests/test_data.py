import numpy as np
import pytest
from hypothesis import given, strategies as st

from mobileunetr.data import (
    SampleBatch, gen_synthetic, generate_dataset, load_image, load_mask, read_dataset, save_image, save_mask,
    synth_sample,
)
from mobileunetr.errors import DimensionError, ImageFormatError, UnsupportedFormatError


def test_generation_is_deterministic():
    a, b = gen_synthetic(4, 64, 11), gen_synthetic(4, 64, 11)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.masks.tobytes() == b.masks.tobytes()
    assert gen_synthetic(4, 64, 12).images.tobytes() != a.images.tobytes()


def test_samples_depend_only_on_seed_and_index():
    batch = gen_synthetic(5, 32, 3, hair_artifacts=True)
    img, mask = synth_sample(32, 3, 4, hair_artifacts=True)
    assert batch.images[4].tobytes() == img.tobytes()
    assert batch.masks[4].tobytes() == mask.tobytes()


@given(seed=st.integers(0, 2**31 - 1), hair=st.booleans())
def test_generator_constraints(seed, hair):
    batch = gen_synthetic(3, 32, seed, hair)
    area = batch.masks.mean(axis=(1, 2, 3))
    assert ((area >= 0.02) & (area <= 0.60)).all()
    mean = batch.images.mean(axis=(1, 2, 3))
    assert ((mean >= 0.2) & (mean <= 0.9)).all()
    assert set(np.unique(batch.masks)) <= {0.0, 1.0}
    assert batch.images.min() >= 0.0 and batch.images.max() <= 1.0


def test_lesion_is_darker_than_skin():
    batch = gen_synthetic(8, 64, 0)
    for img, mask in zip(batch.images, batch.masks):
        lum = img.mean(axis=0)
        assert lum[mask[0] == 1].mean() < lum[mask[0] == 0].mean()


def test_p5_direct_decode(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0]))
    np.testing.assert_array_equal(load_mask(path).data[0], [[0, 1], [1, 0]])


def test_mask_threshold_is_128(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P5\n# comment\n3 1\n255\n" + bytes([127, 128, 200]))
    np.testing.assert_array_equal(load_mask(path).data[0, 0], [0, 1, 1])


def test_mask_round_trip_is_byte_identical(tmp_path):
    src, dst = tmp_path / "a.pgm", tmp_path / "b.pgm"
    save_mask(np.array([[[0, 1, 1], [1, 0, 0]]], dtype=np.float32), src)
    save_mask(load_mask(src), dst)
    assert src.read_bytes() == dst.read_bytes()
    assert set(src.read_bytes()[-6:]) == {0, 255}


def test_image_round_trip(tmp_path):
    batch = gen_synthetic(1, 32, 5)
    save_image(batch.images[0], tmp_path / "x.ppm")
    assert load_image(tmp_path / "x.ppm").data.tobytes() == batch.images[0].tobytes()


def test_maxval_other_than_255_is_unsupported(tmp_path):
    path = tmp_path / "x.ppm"
    path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(UnsupportedFormatError):
        load_image(path)


@pytest.mark.parametrize("payload", [
    b"P3\n1 1\n255\n" + bytes(3),
    b"P6\n1 1\n",
    b"P6\nx 1\n255\n" + bytes(3),
    b"P6\n2 2\n255\n" + bytes(5),
])
def test_malformed_images_are_rejected(tmp_path, payload):
    path = tmp_path / "x.ppm"
    path.write_bytes(payload)
    with pytest.raises(ImageFormatError):
        load_image(path)


def test_dataset_directory_layout(tmp_path):
    out = generate_dataset(tmp_path / "ds", 3, 32, 9)
    assert sorted(p.name for p in (out / "images").iterdir()) == ["0000.ppm", "0001.ppm", "0002.ppm"]
    assert sorted(p.name for p in (out / "masks").iterdir()) == ["0000.pgm", "0001.pgm", "0002.pgm"]
    batch = read_dataset(out)
    ref = gen_synthetic(3, 32, 9)
    assert batch.images.tobytes() == ref.images.tobytes()
    assert batch.masks.tobytes() == ref.masks.tobytes()


def test_indivisible_size_warns_but_generates(tmp_path, caplog):
    out = generate_dataset(tmp_path / "ds", 1, 63, 0, model_stride=32)
    assert "63" in caplog.text
    assert (out / "images" / "0000.ppm").exists()


def test_sample_batch_rejects_non_binary_masks():
    with pytest.raises(ValueError):
        SampleBatch(np.zeros((1, 3, 4, 4), np.float32), np.full((1, 1, 4, 4), 0.5, np.float32))
    with pytest.raises(DimensionError):
        SampleBatch(np.zeros((1, 3, 4, 4), np.float32), np.zeros((1, 1, 4, 5), np.float32))
