import numpy as np
import pytest

from nets import random_net
from relprune.metrics import ClassAccuracy, CurveRecord
from relprune.model_io import (
    FormatVersionError,
    LayoutError,
    MagicError,
    ModelIOError,
    TruncatedBlobError,
    class_columns,
    csv_header,
    load_dataset,
    load_model,
    read_trajectory_csv,
    save_dataset,
    save_model,
    write_trajectory_csv,
)
from relprune.nn import forward
from relprune.pruning import compact
from relprune.toylab import LabeledSet, SyntheticSpec, generate


def params_of(model):
    return [(type(l).__name__, k, v) for l in model.layers for k, v in l.params().items()]


def assert_models_identical(a, b):
    assert a.input_shape == b.input_shape
    assert [l.hyper() for l in a.layers] == [l.hyper() for l in b.layers]
    for (ka, na, va), (kb, nb, vb) in zip(params_of(a), params_of(b), strict=True):
        assert (ka, na) == (kb, nb)
        assert va.dtype == vb.dtype and va.shape == vb.shape and va.tobytes() == vb.tobytes()
    assert [m.tobytes() for m in a.masks] == [m.tobytes() for m in b.masks]


@pytest.mark.parametrize("bn", [False, True])
@pytest.mark.parametrize("head", ["gap", "flatten"])
def test_model_round_trip_is_bitwise(tmp_path, rng, bn, head):
    model = random_net(rng, filters=(3, 4), bn=bn, head=head)
    alive = model.alive()
    alive[1] = False
    model = model.with_alive(alive)
    save_model(model, tmp_path / "m")
    assert_models_identical(model, load_model(tmp_path / "m"))
    # any of the three file names resolves to the same model
    assert_models_identical(model, load_model(tmp_path / "m.manifest"))


def test_blob_header(tmp_path, small_net):
    save_model(small_net, tmp_path / "m")
    raw = (tmp_path / "m.blob").read_bytes()
    assert raw[:8] == b"RPRN1\x00\x00\x00"
    assert raw[8:16] == (0x0102030405060708).to_bytes(8, "little")
    assert len(raw) == 16 + 8 * sum(v.size for *_, v in params_of(small_net))


def test_truncated_blob(tmp_path, small_net):
    save_model(small_net, tmp_path / "m")
    blob = tmp_path / "m.blob"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(TruncatedBlobError):
        load_model(tmp_path / "m")


def test_manifest_longer_than_blob(tmp_path, small_net):
    save_model(small_net, tmp_path / "m")
    man = tmp_path / "m.manifest"
    text = man.read_text()
    n = int(next(l for l in text.splitlines() if l.startswith("blob_values")).split("=")[1])
    man.write_text(text.replace(f"blob_values = {n}", f"blob_values = {n + 5}"))
    with pytest.raises(TruncatedBlobError):
        load_model(tmp_path / "m")


def test_version_mismatch(tmp_path, small_net):
    save_model(small_net, tmp_path / "m")
    man = tmp_path / "m.manifest"
    man.write_text(man.read_text().replace("format_version = 1", "format_version = 2"))
    with pytest.raises(FormatVersionError):
        load_model(tmp_path / "m")


def test_bad_magic(tmp_path, small_net):
    save_model(small_net, tmp_path / "m")
    blob = tmp_path / "m.blob"
    blob.write_bytes(b"XXXXXXXX" + blob.read_bytes()[8:])
    with pytest.raises(MagicError):
        load_model(tmp_path / "m")


def test_shape_offset_inconsistency(tmp_path, small_net):
    save_model(small_net, tmp_path / "m")
    man = tmp_path / "m.manifest"
    lines = man.read_text().splitlines()
    i = next(k for k, l in enumerate(lines) if l.startswith("param 0 bias"))
    parts = lines[i].split()
    parts[5] = str(int(parts[5]) + 1)
    lines[i] = " ".join(parts)
    man.write_text("\n".join(lines) + "\n")
    with pytest.raises(LayoutError):
        load_model(tmp_path / "m")


def test_overlapping_spans(tmp_path, small_net):
    save_model(small_net, tmp_path / "m")
    man = tmp_path / "m.manifest"
    lines = man.read_text().splitlines()
    i = next(k for k, l in enumerate(lines) if l.startswith("param 0 bias"))
    parts = lines[i].split()
    parts[4] = "0"
    lines[i] = " ".join(parts)
    man.write_text("\n".join(lines) + "\n")
    with pytest.raises(LayoutError, match="overlap"):
        load_model(tmp_path / "m")


def test_errors_are_distinct_types():
    kinds = {FormatVersionError, MagicError, TruncatedBlobError, LayoutError}
    assert len(kinds) == 4 and all(issubclass(k, ModelIOError) for k in kinds)


def test_load_compact_save_load(tmp_path, rng):
    model = random_net(rng, filters=(4, 5), bn=True)
    alive = model.alive()
    alive[[0, 5, 6]] = False
    save_model(model.with_alive(alive), tmp_path / "masked")
    small = compact(load_model(tmp_path / "masked"))
    save_model(small, tmp_path / "small")
    again = load_model(tmp_path / "small")
    x = rng.normal(size=(3, 1, 6, 6))
    np.testing.assert_allclose(forward(again, x)[-1], forward(model.with_alive(alive), x)[-1], rtol=0, atol=1e-10)
    assert again.f_num == 6


# ------------------------------------------------------------------ datasets


def test_dataset_round_trip(tmp_path):
    splits = generate(SyntheticSpec(samples_per_class=20, train_per_class=10, ref_per_class=3, eval_per_class=5))
    for name in ("train", "refs", "eval"):
        save_dataset(getattr(splits, name), tmp_path / name)
    loaded = {name: load_dataset(tmp_path / name) for name in ("train", "refs", "eval")}
    for name, data in loaded.items():
        orig = getattr(splits, name)
        assert data.images.tobytes() == orig.images.tobytes()
        assert data.labels.tobytes() == orig.labels.tobytes()
    hashes = [d.sample_hashes() for d in loaded.values()]
    assert not (hashes[0] & hashes[1]) and not (hashes[0] & hashes[2]) and not (hashes[1] & hashes[2])


def test_empty_dataset_rejected(tmp_path):
    with pytest.raises(ModelIOError):
        save_dataset(LabeledSet(np.zeros((0, 1, 4, 4)), np.zeros(0)), tmp_path / "d")
    save_dataset(LabeledSet(np.zeros((2, 1, 4, 4)), [0, 1]), tmp_path / "d")
    man = tmp_path / "d.manifest"
    man.write_text(man.read_text().replace("count = 2", "count = 0").replace("shape = 2,", "shape = 0,"))
    with pytest.raises(LayoutError):
        load_dataset(tmp_path / "d")


def test_label_count_mismatch_rejected(tmp_path):
    save_dataset(LabeledSet(np.zeros((3, 1, 4, 4)), [0, 1, 0]), tmp_path / "d")
    labels = tmp_path / "d.labels"
    labels.write_bytes(labels.read_bytes()[:-8])
    with pytest.raises(LayoutError):
        load_dataset(tmp_path / "d")


def test_model_manifest_is_not_a_dataset(tmp_path, small_net):
    save_model(small_net, tmp_path / "m")
    with pytest.raises(LayoutError):
        load_dataset(tmp_path / "m")


# ------------------------------------------------------------------ CSV


def test_trajectory_csv_round_trip(tmp_path):
    recs = [
        CurveRecord.measure(0.05, ClassAccuracy({0: (9, 10), 1: (10, 10)}), 0.5, "sd-dpx", 3),
        CurveRecord.measure(0.1, ClassAccuracy({0: (5, 10), 1: (10, 10)}), 0.9, "sd-dpx", 3),
    ]
    path = write_trajectory_csv(tmp_path / "t.csv", recs, 2)
    assert path.read_text().splitlines()[0].split(",") == csv_header(2)
    assert csv_header(2) == [
        "strategy", "seed", "rate", "overall_acc", "harmonic_mean", "acc_class_0", "acc_class_1", "wall_time_s",
    ]
    rows = read_trajectory_csv(path)
    assert [r["rate"] for r in rows] == [0.05, 0.1]
    assert rows[1]["per_class"] == {0: 0.5, 1: 1.0}
    assert rows[1]["harmonic_mean"] == recs[1].harmonic_mean
    assert class_columns(path) == ("acc_class_0", "acc_class_1")
    write_trajectory_csv(path, recs[:1], 2, append=True)
    assert len(read_trajectory_csv(path)) == 3
