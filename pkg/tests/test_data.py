"""Manifest IO and the target-label guard."""

import numpy as np
import pytest

from freqadapt import data
from freqadapt.volume import Volume, write_volume


def make_dataset(root, dims=(6, 6)):
    rng = np.random.default_rng(0)
    entries = []
    k = 0
    for domain in ("source", "target"):
        for split in ("train", "val", "test"):
            for label in (0, 1):
                rel = f"{domain}_{split}_{label}_{k}.volb"
                write_volume(Volume(rng.random(dims)), root / rel)
                entries.append(data.ManifestEntry(rel, label, domain, split))
                k += 1
    m = data.DatasetManifest(root=root, entries=entries)
    data.write_manifest(m)
    return m


def test_manifest_round_trip(tmp_path):
    m = make_dataset(tmp_path)
    got = data.read_manifest(tmp_path)
    assert got.root == tmp_path
    assert got.entries == m.entries


def test_read_manifest_accepts_file_path(tmp_path):
    make_dataset(tmp_path)
    got = data.read_manifest(tmp_path / "manifest.tsv")
    assert len(got.entries) == 12


def test_entry_validation():
    with pytest.raises(data.ManifestError):
        data.ManifestEntry("a.volb", 2, "source", "train")
    with pytest.raises(data.ManifestError):
        data.ManifestEntry("a.volb", 0, "middle", "train")
    with pytest.raises(data.ManifestError):
        data.ManifestEntry("a.volb", 0, "source", "holdout")


def test_missing_manifest(tmp_path):
    with pytest.raises(data.ManifestError, match="no manifest"):
        data.read_manifest(tmp_path)


def test_bad_header(tmp_path):
    (tmp_path / "manifest.tsv").write_text("path,label,domain,split\n")
    with pytest.raises(data.ManifestError, match="header"):
        data.read_manifest(tmp_path)


def test_bad_field_count(tmp_path):
    (tmp_path / "manifest.tsv").write_text("path\tlabel\tdomain\tsplit\na.volb\t0\tsource\n")
    with pytest.raises(data.ManifestError, match="4 tab-separated"):
        data.read_manifest(tmp_path)


def test_non_integer_label(tmp_path):
    (tmp_path / "manifest.tsv").write_text(
        "path\tlabel\tdomain\tsplit\na.volb\tx\tsource\ttrain\n"
    )
    with pytest.raises(data.ManifestError, match="not an integer"):
        data.read_manifest(tmp_path)


def test_blank_lines_skipped(tmp_path):
    make_dataset(tmp_path)
    p = tmp_path / "manifest.tsv"
    p.write_text(p.read_text() + "\n\n")
    assert len(data.read_manifest(tmp_path).entries) == 12


def test_filter_and_counts(tmp_path):
    m = make_dataset(tmp_path)
    assert len(m.filter(domain="source")) == 6
    assert len(m.filter(split="val")) == 4
    assert len(m.filter(domain="target", split="test")) == 2
    assert len(m.filter()) == 12
    c = m.counts()
    assert c[("source", "train", 0)] == 1
    assert sum(c.values()) == 12


def test_load_split_stacks_volumes(tmp_path):
    m = make_dataset(tmp_path, dims=(5, 7))
    ds = data.load_split(m, "source", "train")
    assert len(ds) == 2
    assert ds.dims == (5, 7)
    assert ds.volumes.shape == (2, 5, 7)
    np.testing.assert_array_equal(np.sort(ds.labels), [0, 1])


def test_load_split_missing_combo(tmp_path):
    m = make_dataset(tmp_path)
    m.entries = [e for e in m.entries if not (e.domain == "target" and e.split == "val")]
    with pytest.raises(data.ManifestError, match="no target/val"):
        data.load_split(m, "target", "val")


def test_load_split_rejects_mixed_dims(tmp_path):
    m = make_dataset(tmp_path)
    bad = m.entries[0]
    write_volume(Volume(np.zeros((3, 3))), tmp_path / bad.path)
    with pytest.raises(data.ManifestError, match="dims"):
        data.load_split(m, bad.domain, bad.split)


def test_guard_blocks_and_counts_label_reads(tmp_path):
    m = make_dataset(tmp_path)
    ds = data.load_split(m, "target", "train", allow_labels=False)
    with pytest.raises(data.TargetLabelError):
        _ = ds.labels
    assert ds.label_reads == 0
    open_ds = ds.unlocked()
    _ = open_ds.labels
    _ = open_ds.labels
    assert open_ds.label_reads == 2
    assert ds.label_reads == 0  # original guard still pristine
    with pytest.raises(data.TargetLabelError):
        _ = ds.labels


def test_unlocked_shares_arrays(tmp_path):
    m = make_dataset(tmp_path)
    ds = data.load_split(m, "source", "test", allow_labels=False)
    view = ds.unlocked()
    assert view.volumes is ds.volumes
    np.testing.assert_array_equal(view.labels, [e.label for e in m.filter("source", "test")])


def test_guard_length_mismatch():
    with pytest.raises(ValueError):
        data.GuardedDataset(np.zeros((3, 2, 2)), np.zeros(2, dtype=np.int64), True)


def test_relabel_split():
    e = data.ManifestEntry("a.volb", 1, "target", "train")
    moved = data.relabel_split(e, "val")
    assert moved.split == "val"
    assert moved.label == e.label and moved.path == e.path and moved.domain == e.domain
    assert e.split == "train"
    with pytest.raises(data.ManifestError):
        data.relabel_split(e, "nope")
