import hashlib
import io
import zipfile

import numpy as np
import pytest

from laminar.data.block import (CategoryBlock, DataBlock, FuncSplitter, GrandparentSplitter,
                                ImageBlock, IndexSplitter, MaskBlock, RandomSplitter, VectorBlock,
                                get_csv_records, get_image_files, parent_label, regex_label)
from laminar.data.external import (DatasetEntry, DatasetRegistry, default_cache_root,
                                   default_registry, fetch_dataset)
from laminar.data.image import LoadImage, LoadMask, read_pnm, write_pgm
from laminar.errors import (ChecksumMismatch, EmptyItems, EmptyTrainSplit, GetterError, NetworkError,
                            NoMatch, UnknownDataset)
from laminar.transforms import ColReader, Normalize


def blobs_block(**kw):
    return DataBlock(blocks=[VectorBlock(2), CategoryBlock()], get_items=get_csv_records,
                     splitter=RandomSplitter(0.2, seed=42),
                     getters=[ColReader(["x0", "x1"]), ColReader("label")],
                     batch_tfms=[Normalize()], **kw)


def test_blobs2_shape_and_balance():
    recs = get_csv_records(fetch_dataset("blobs2"))
    assert len(recs) == 200
    labels = [r["label"] for r in recs]
    assert labels.count("0") == labels.count("1") == 100


def test_fetch_is_cached(tmp_path):
    calls = []
    reg = DatasetRegistry(tmp_path)
    reg.register(DatasetEntry("toy", "synthetic", generator=lambda d: calls.append(d) or (d / "f").write_text("x")))
    p1, p2 = reg.fetch("toy"), reg.fetch("toy")
    assert p1 == p2 and len(calls) == 1 and (p1 / "f").read_text() == "x"


def test_failed_generation_leaves_no_partial_dataset(tmp_path):
    def broken(d):
        (d / "half").write_text("")
        raise RuntimeError("disk full")
    reg = DatasetRegistry(tmp_path)
    reg.register(DatasetEntry("bad", "synthetic", generator=broken))
    with pytest.raises(RuntimeError):
        reg.fetch("bad")
    assert not reg.path("bad").exists()
    assert [p.name for p in tmp_path.iterdir()] == []


def _zip_bytes():
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as z:
        z.writestr("data.csv", "x0,x1,label\n0,0,a\n")
    return buf.getvalue()


def test_remote_archive_checksum(tmp_path):
    blob = _zip_bytes()
    src = tmp_path / "src.zip"
    src.write_bytes(blob)
    good = hashlib.sha256(blob).hexdigest()
    reg = DatasetRegistry(tmp_path / "cache")
    reg.register(DatasetEntry("remote", "remote", url=src.as_uri(), sha256=good))
    reg.register(DatasetEntry("tampered", "remote", url=src.as_uri(), sha256="0" * 64))
    reg.register(DatasetEntry("offline", "remote", url=(tmp_path / "missing.zip").as_uri(), sha256=good))
    assert (reg.fetch("remote") / "data.csv").exists()
    with pytest.raises(ChecksumMismatch):
        reg.fetch("tampered")
    with pytest.raises(NetworkError):
        reg.fetch("offline")


def test_unknown_dataset():
    with pytest.raises(UnknownDataset):
        fetch_dataset("nope")


def test_cache_root_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv("LAMINAR_CACHE")
    monkeypatch.setenv("XDG_CACHE_HOME", str(tmp_path))
    assert default_cache_root() == tmp_path / "laminar"


def test_random_splitter_is_seeded_partition():
    a = RandomSplitter(0.2, seed=1)(list(range(50)))
    assert a == RandomSplitter(0.2, seed=1)(list(range(50)))
    assert len(a[1]) == 10 and sorted(a[0] + a[1]) == list(range(50))


def test_other_splitters(tmp_path):
    assert IndexSplitter([3, 1])(list("abcde")) == [[0, 2, 4], [1, 3]]
    assert FuncSplitter(lambda o: o > 2)([1, 2, 3, 4]) == [[0, 1], [2, 3]]
    items = [tmp_path / "train" / "a" / "1.pgm", tmp_path / "valid" / "b" / "2.pgm"]
    assert GrandparentSplitter()(items) == [[0], [1]]


def test_labellers():
    assert parent_label("/x/dog/1.pgm") == "dog"
    assert regex_label(r"/(\w+)_\d+\.pgm$", "/x/cat_12.pgm") == "cat"
    with pytest.raises(NoMatch):
        regex_label(r"(\d+)\.ppm$", "/x/cat.pgm")


def test_datablock_compiles_to_normalized_batches():
    dls = blobs_block().dataloaders(fetch_dataset("blobs2"), bs=16, seed=0)
    assert dls.loss_name == "cross_entropy" and dls.n_inp == 1
    assert len(dls.train.dataset) == 160 and len(dls.valid.dataset) == 40
    xs = np.concatenate([b[0].payload.data for b in dls.train.iterate(epoch=0)])
    # drop_last keeps 160 of 160 rows, so the batch statistics are the setup statistics
    np.testing.assert_allclose(xs.mean(0), 0, atol=1e-12)
    x, y = dls.valid.one_batch()
    assert x.semantic == "ContinuousVector" and y.semantic == "Category"
    rows = dls.valid.decode_batch((x, y), max_n=3)
    assert all(r[1].payload in ("0", "1") for r in rows)


def test_declaration_order_does_not_matter():
    a = blobs_block().datasets(fetch_dataset("blobs2"))
    b = DataBlock(getters=[ColReader(["x0", "x1"]), ColReader("label")], splitter=RandomSplitter(0.2, seed=42),
                  get_items=get_csv_records, blocks=[VectorBlock(2), CategoryBlock()]).datasets(fetch_dataset("blobs2"))
    assert a.splits == b.splits
    assert a.train[5][1] == b.train[5][1]


def test_empty_items_and_splits():
    block = DataBlock(blocks=[VectorBlock(2), CategoryBlock()],
                      getters=[ColReader(["x0", "x1"]), ColReader("label")])
    with pytest.raises(EmptyItems):
        block.datasets([{"x0": 1, "x1": 2, "label": "a"}])
    block = DataBlock(blocks=[VectorBlock(2), CategoryBlock()], splitter=lambda items: [[], [0, 1]],
                      getters=[ColReader(["x0", "x1"]), ColReader("label")])
    with pytest.raises(EmptyTrainSplit):
        block.datasets([{"x0": 1, "x1": 2, "label": "a"}] * 2)


def test_getter_error_names_index():
    block = DataBlock(blocks=[VectorBlock(2), CategoryBlock()], splitter=IndexSplitter([]),
                      getters=[ColReader(["x0", "x1"]), ColReader("label")])
    items = [{"x0": 1, "x1": 2, "label": "a"}, {"x0": 1, "label": "b"}]
    ds = block.datasets(items)
    with pytest.raises(GetterError) as e:
        ds.train[1]
    assert e.value.index == 1 and isinstance(e.value.cause, KeyError)


def test_tinygrid_images_and_masks(tmp_path):
    root = fetch_dataset("tinygrid")
    files = get_image_files(root, folders=["train", "valid"])
    assert len(files) == 64
    assert {parent_label(f) for f in files} == {"wide", "tall"}
    block = DataBlock(blocks=[ImageBlock(), MaskBlock()], splitter=GrandparentSplitter(),
                      get_items=lambda p: get_image_files(p, folders=["train", "valid"]),
                      get_y=lambda f: root / "masks" / f.name)
    dls = block.dataloaders(root, bs=4, seed=0)
    x, y = dls.train.one_batch()
    assert x.payload.shape == (4, 1, 8, 8) and y.payload.shape == (4, 8, 8)
    assert set(np.unique(y.payload.data)) <= {0.0, 1.0}
    out = io.StringIO()
    dls.show_batch(max_n=2, out=out, out_dir=tmp_path)
    assert out.getvalue().count("mask labels") == 2
    assert (tmp_path / "item_000_mask.pgm").exists()


def test_pgm_round_trip(tmp_path):
    a = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    write_pgm(tmp_path / "a.pgm", a)
    np.testing.assert_array_equal(read_pnm(tmp_path / "a.pgm"), a)
    img = LoadImage()(tmp_path / "a.pgm")
    assert img.semantic == "ImageArray" and img.payload.shape == (1, 3, 4)
    np.testing.assert_array_equal(img.payload.data[0], a / 255.0)


def test_raw_npy_images_and_masks(tmp_path):
    rgb = np.random.default_rng(0).random((3, 5, 4))
    np.save(tmp_path / "x.npy", rgb)
    np.save(tmp_path / "m.npy", np.array([[0, 2], [2, 0]]))
    assert LoadImage()(tmp_path / "x.npy").payload.data.tobytes() == rgb.tobytes()
    assert LoadMask()(tmp_path / "m.npy").payload.data.tolist() == [[0.0, 2.0], [2.0, 0.0]]


def test_show_batch_vector_table():
    dls = blobs_block().dataloaders(fetch_dataset("blobs2"), bs=16, seed=0)
    out = io.StringIO()
    dls.show_batch(max_n=4, out=out)
    lines = out.getvalue().strip().splitlines()
    assert lines[0].split() == ["x", "label"] and len(lines) == 5
    out = io.StringIO()
    dls.show_batch(max_n=0, out=out)
    assert out.getvalue() == ""
