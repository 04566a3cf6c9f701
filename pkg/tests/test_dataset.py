import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eyemod import dataset
from eyemod.dataset import DatasetContainer, DatasetPlan
from eyemod.errors import (CellTooSmall, Corrupt, EmptySplit, NotADataset,
                           UnsupportedVersion)
from eyemod.synth import ModulationScheme

DESK_SCHEMES = (ModulationScheme.BPSK, ModulationScheme.QPSK,
                ModulationScheme.QAM16, ModulationScheme.PAM4)


def tiny_plan(**overrides):
    kw = dict(schemes=DESK_SCHEMES, snr_grid_db=(10.0,),
              frames_per_class_per_snr=10, out_h=16, out_w=24,
              global_seed=5)
    kw.update(overrides)
    return DatasetPlan(**kw)


@pytest.fixture(scope="module")
def tiny_container():
    return dataset.build(tiny_plan(), workers=1)


def synthetic_container(per_cell, n_classes=1, n_snrs=1, h=4, w=4):
    """A container with deterministic junk pixels, for split/IO tests."""
    total = per_cell * n_classes * n_snrs
    class_ids = np.repeat(np.arange(n_classes, dtype=np.uint8),
                          n_snrs * per_cell)
    snr_indices = np.tile(np.repeat(np.arange(n_snrs, dtype=np.uint8),
                                    per_cell), n_classes)
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(total, h, w, 2), dtype=np.uint8)
    return DatasetContainer(height=h, width=w,
                            class_names=[f"c{i}" for i in range(n_classes)],
                            snr_table=[float(s) for s in range(n_snrs)],
                            class_ids=class_ids, snr_indices=snr_indices,
                            pixels=pixels)


def test_default_plan_total():
    assert DatasetPlan().total_records == 420_000


def test_desk_plan_total():
    plan = tiny_plan(frames_per_class_per_snr=50)
    assert plan.total_records == 200


def test_plan_validation():
    with pytest.raises(ValueError):
        tiny_plan(frames_per_class_per_snr=0)
    with pytest.raises(ValueError):
        tiny_plan(split_fractions=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        tiny_plan(schemes=())


def test_quantize_roundtrip_error():
    v = np.linspace(0.0, 1.0, 10_001)
    err = np.abs(dataset.dequantize(dataset.quantize(v)) - v)
    # Half an LSB, plus float32 representation slack on the dequantized value.
    assert err.max() <= 1.0 / 510.0 + 1e-7


def test_quantize_clips():
    assert dataset.quantize(np.array([-0.5, 1.5])).tolist() == [0, 255]


def test_build_shapes_and_order(tiny_container):
    c = tiny_container
    assert c.count == 40
    assert c.pixels.shape == (40, 16, 24, 2)
    # Lexicographic (class, snr, frame) order.
    assert np.array_equal(c.class_ids, np.repeat(np.arange(4), 10))
    assert set(c.manifest) == {"train", "val", "test"}


def test_build_worker_invariance(tiny_container):
    again = dataset.build(tiny_plan(), workers=2)
    assert again == tiny_container


def test_build_deterministic(tiny_container):
    again = dataset.build(tiny_plan(), workers=1)
    assert again == tiny_container


def test_split_reference_cell_sizes():
    container = synthetic_container(per_cell=5000)
    manifest = dataset.split_indices(container, (0.70, 0.20, 0.10), seed=0)
    assert len(manifest["train"]) == 3500
    assert len(manifest["val"]) == 1000
    assert len(manifest["test"]) == 500


def test_split_stratified_every_cell():
    container = synthetic_container(per_cell=20, n_classes=3, n_snrs=2)
    manifest = dataset.split_indices(container, (0.70, 0.20, 0.10), seed=1)
    for name in dataset.SPLIT_NAMES:
        idx = manifest[name]
        cells = set(zip(container.class_ids[idx].tolist(),
                        container.snr_indices[idx].tolist()))
        assert len(cells) == 6, name


def test_split_partitions_everything():
    container = synthetic_container(per_cell=33, n_classes=2, n_snrs=2)
    manifest = dataset.split_indices(container, (0.70, 0.20, 0.10), seed=2)
    joined = np.concatenate(list(manifest.values()))
    assert len(joined) == container.count
    assert len(np.unique(joined)) == container.count


def test_split_cell_too_small():
    container = synthetic_container(per_cell=3)
    with pytest.raises(CellTooSmall):
        dataset.split_indices(container, (0.70, 0.20, 0.10), seed=0)


@settings(max_examples=20, deadline=None)
@given(per_cell=st.integers(min_value=10, max_value=400))
def test_split_deviation_below_one_record(per_cell):
    container = synthetic_container(per_cell=per_cell)
    manifest = dataset.split_indices(container, (0.70, 0.20, 0.10), seed=3)
    for name, f in zip(dataset.SPLIT_NAMES, (0.70, 0.20, 0.10)):
        assert abs(len(manifest[name]) - per_cell * f) < 1.0


def test_write_read_roundtrip(tiny_container, tmp_path):
    path = tmp_path / "tiny.eyeamc"
    dataset.write(tiny_container, path)
    back = dataset.read(path)
    assert back == tiny_container


def test_read_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTADSET" + bytes(64))
    with pytest.raises(NotADataset):
        dataset.read(path)


def test_read_rejects_truncation(tiny_container, tmp_path):
    path = tmp_path / "tiny.eyeamc"
    dataset.write(tiny_container, path)
    data = path.read_bytes()
    path.write_bytes(data[:-100])  # cut into the final record
    with pytest.raises(Corrupt):
        dataset.read(path)


def test_read_rejects_count_mismatch(tiny_container, tmp_path):
    path = tmp_path / "tiny.eyeamc"
    dataset.write(tiny_container, path)
    data = bytearray(path.read_bytes())
    # Count field sits right after the magic and version (u32 each).
    import struct
    struct.pack_into("<I", data, len(dataset.MAGIC) + 4,
                     tiny_container.count + 1)
    path.write_bytes(bytes(data))
    with pytest.raises(Corrupt):
        dataset.read(path)


def test_read_rejects_future_version(tiny_container, tmp_path):
    path = tmp_path / "tiny.eyeamc"
    dataset.write(tiny_container, path)
    data = bytearray(path.read_bytes())
    import struct
    struct.pack_into("<I", data, len(dataset.MAGIC), 99)
    path.write_bytes(bytes(data))
    with pytest.raises(UnsupportedVersion):
        dataset.read(path)


def test_manifest_sidecar_roundtrip(tiny_container, tmp_path):
    path = tmp_path / "tiny.eyeamc"
    dataset.write(tiny_container, path)
    back = dataset.read(path)
    for name in dataset.SPLIT_NAMES:
        assert np.array_equal(back.manifest[name],
                              tiny_container.manifest[name])


def test_manifest_validation(tmp_path):
    path = tmp_path / "bad.manifest"
    path.write_text("train = 0 1 2\nval = 2\ntest = 3\n")
    with pytest.raises(Corrupt):
        dataset.read_manifest(path, count=5)


def test_iterate_batches(tiny_container):
    batches = list(dataset.iterate(tiny_container, "train", batch_size=8))
    n = len(tiny_container.manifest["train"])
    assert sum(len(b[1]) for b in batches) == n
    assert len(batches[-1][1]) == n - (n // 8) * 8 or n % 8 == 0
    x, labels, snr_idx = batches[0]
    assert x.dtype == np.float32
    assert x.min() >= 0.0 and x.max() <= 1.0
    assert labels.dtype == np.int64 and snr_idx.dtype == np.int64


def test_iterate_train_shuffles_val_fixed(tiny_container):
    def order(split, seed):
        return np.concatenate([b[1] for b in dataset.iterate(
            tiny_container, split, 8, shuffle_seed=seed)])

    assert not np.array_equal(order("train", 1), order("train", 2))
    assert np.array_equal(order("val", 1), order("val", 2))


def test_iterate_empty_split():
    container = synthetic_container(per_cell=4)
    with pytest.raises(EmptySplit):
        list(dataset.iterate(container, "train", 4))
