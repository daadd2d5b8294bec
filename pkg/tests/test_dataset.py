"""Partitioning, manifests, the label audit, and the synthetic corpus."""

import numpy as np
import pytest

from sclld.dataset import (
    DatasetSplit,
    Sample,
    generate_synthetic,
    label_access_count,
    label_audit,
    load_manifest,
    partition_dataset,
    save_manifest,
)
from sclld.imaging import read_pgm


def make_corpus(n, labelled=True):
    return [
        Sample(f"s{i:04d}", f"/img/{i}.pgm", (i % 2) if labelled else None)
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# samples and the audit counter
# ---------------------------------------------------------------------------


def test_sample_label_validation():
    with pytest.raises(ValueError, match="label"):
        Sample("a", "/x.pgm", 2)
    assert Sample("a", "/x.pgm", None)._label is None


def test_label_property_bumps_audit_counter():
    s = Sample("a", "/x.pgm", 1)
    with label_audit() as audit:
        assert s.label == 1
        assert s.has_label
    assert audit.count == 2


def test_nested_audit_windows_count_independently():
    s = Sample("a", "/x.pgm", 0)
    with label_audit() as outer:
        s.label
        with label_audit() as inner:
            s.label
            s.label
    assert inner.count == 2
    assert outer.count == 3


def test_label_access_count_is_monotonic():
    before = label_access_count()
    Sample("a", "/x.pgm", 1).label
    assert label_access_count() == before + 1


def test_private_label_reads_are_not_counted():
    s = Sample("a", "/x.pgm", 1)
    with label_audit() as audit:
        _ = s._label
    assert audit.count == 0


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------


def test_partition_pool_sizes_at_fraction_010():
    split = partition_dataset(make_corpus(2500), labelled_fraction=0.10, seed=0)
    assert len(split.test) == 500
    assert len(split.validation) == 40
    assert len(split.train_labelled) == 160
    assert len(split.train_unlabelled) == 1800


def test_partition_pool_sizes_at_fraction_001():
    split = partition_dataset(make_corpus(2500), labelled_fraction=0.01, seed=0)
    assert len(split.test) == 500
    assert len(split.validation) == 4
    assert len(split.train_labelled) == 16
    assert len(split.train_unlabelled) == 1980


def test_partition_rounds_half_up():
    # 30 samples: test 6, train 24; fraction 0.3 -> 7.2 labelled -> 7; val 1.4 -> 1
    split = partition_dataset(make_corpus(30), labelled_fraction=0.3, seed=1)
    assert len(split.test) == 6
    assert len(split.train_labelled) + len(split.validation) == 7
    assert len(split.validation) == 1


def test_partition_pools_are_disjoint_and_cover_corpus():
    corpus = make_corpus(200)
    split = partition_dataset(corpus, labelled_fraction=0.2, seed=3)
    ids = []
    for pool in split.pools().values():
        ids.extend(s.id for s in pool)
    assert len(ids) == 200
    assert len(set(ids)) == 200


def test_partition_is_stratified():
    split = partition_dataset(make_corpus(1000), labelled_fraction=0.1, seed=5)
    labelled = split.train_labelled + split.validation
    ones = sum(1 for s in labelled if s._label == 1)
    # quotas are proportional to the class mix of the 800-sample train pool
    train_ones = 500 - sum(1 for s in split.test if s._label == 1)
    expected = int(np.floor(len(labelled) * train_ones / 800 + 0.5))
    assert ones in (expected, expected - 1)


def test_partition_strips_labels_from_unlabelled_pool():
    split = partition_dataset(make_corpus(100), labelled_fraction=0.1, seed=0)
    assert all(s._label is None for s in split.train_unlabelled)
    assert all(s._label is not None for s in split.train_labelled)
    assert all(s._label is not None for s in split.validation)
    assert all(s._label is not None for s in split.test)


def test_partition_same_seed_reproduces_same_pools():
    a = partition_dataset(make_corpus(300), labelled_fraction=0.1, seed=7)
    b = partition_dataset(make_corpus(300), labelled_fraction=0.1, seed=7)
    for name in a.pools():
        assert [s.id for s in a.pools()[name]] == [s.id for s in b.pools()[name]]


def test_partition_seed_changes_the_shuffle():
    a = partition_dataset(make_corpus(300), labelled_fraction=0.1, seed=7)
    b = partition_dataset(make_corpus(300), labelled_fraction=0.1, seed=8)
    assert [s.id for s in a.test] != [s.id for s in b.test]


def test_partition_validation_errors():
    with pytest.raises(ValueError, match="empty"):
        partition_dataset([], 0.1, 0)
    with pytest.raises(ValueError, match="fraction"):
        partition_dataset(make_corpus(10), 0.0, 0)
    with pytest.raises(ValueError, match="fraction"):
        partition_dataset(make_corpus(10), 1.5, 0)
    corpus = make_corpus(10) + [Sample("s0001", "/dup.pgm", 0)]
    with pytest.raises(ValueError, match="duplicate"):
        partition_dataset(corpus, 0.5, 0)


def test_partition_requires_labels_for_test_pool():
    corpus = make_corpus(20, labelled=False)
    with pytest.raises(ValueError, match="missing its label"):
        partition_dataset(corpus, 0.5, 0)


def test_partition_needs_enough_labelled_candidates():
    corpus = make_corpus(20)
    # strip labels from most of the eventual training pool
    split_seedless = [
        Sample(s.id, s.image_path, s._label if i < 6 else None)
        for i, s in enumerate(corpus)
    ]
    with pytest.raises(ValueError):
        partition_dataset(split_seedless, 1.0, 0)


def test_partition_tiny_labelled_pool_rejected():
    # one labelled sample cannot fill validation and fine-tuning pools
    with pytest.raises(ValueError, match="cannot fill"):
        partition_dataset(make_corpus(10), 0.1, 0)


def test_dataset_split_rejects_overlapping_pools():
    s = make_corpus(4)
    with pytest.raises(ValueError, match="more than one pool"):
        DatasetSplit([s[0]], [s[0]], [s[1]], [s[2]], seed=0)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def test_manifest_roundtrip(tmp_path):
    img = tmp_path / "images"
    img.mkdir()
    paths = []
    for i in range(4):
        p = img / f"im{i}.pgm"
        p.write_bytes(b"P5\n1 1\n255\n\x00")
        paths.append(p)
    samples = [
        Sample("a", paths[0], 0),
        Sample("b", paths[1], 1),
        Sample("c", paths[2], None),
        Sample("d", paths[3], 0),
    ]
    manifest = tmp_path / "manifest.csv"
    save_manifest(samples, manifest)
    loaded = load_manifest(manifest)
    assert [s.id for s in loaded] == ["a", "b", "c", "d"]
    assert [s._label for s in loaded] == [0, 1, None, 0]
    assert all(s.image_path.is_absolute() for s in loaded)


def test_manifest_resolves_relative_paths(tmp_path):
    sub = tmp_path / "corpus"
    (sub / "images").mkdir(parents=True)
    (sub / "images" / "x.pgm").write_bytes(b"P5\n1 1\n255\n\x00")
    (sub / "manifest.csv").write_text("id,path,label\nx,images/x.pgm,1\n")
    loaded = load_manifest(sub / "manifest.csv")
    assert loaded[0].image_path == sub / "images" / "x.pgm"


def test_manifest_rejects_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("id,file,label\nx,/a.pgm,1\n")
    with pytest.raises(ValueError, match="header"):
        load_manifest(p)


def test_manifest_rejects_duplicate_ids(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P5\n1 1\n255\n\x00")
    p = tmp_path / "m.csv"
    p.write_text("id,path,label\na,x.pgm,1\na,x.pgm,0\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_manifest(p)


def test_manifest_rejects_missing_image(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("id,path,label\na,gone.pgm,1\n")
    with pytest.raises(ValueError, match="missing image file"):
        load_manifest(p)


def test_manifest_rejects_bad_label(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P5\n1 1\n255\n\x00")
    p = tmp_path / "m.csv"
    p.write_text("id,path,label\na,x.pgm,7\n")
    with pytest.raises(ValueError):
        load_manifest(p)


def test_save_manifest_rejects_duplicates(tmp_path):
    samples = [Sample("a", "/x.pgm", 0), Sample("a", "/y.pgm", 1)]
    with pytest.raises(ValueError, match="duplicate"):
        save_manifest(samples, tmp_path / "m.csv")


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


def test_generate_synthetic_writes_balanced_corpus(tmp_path):
    samples, manifest = generate_synthetic(10, 42, tmp_path)
    assert len(samples) == 10
    assert manifest.exists()
    assert sum(1 for s in samples if s._label == 1) == 5
    for s in samples:
        img = read_pgm(s.image_path.read_bytes())
        assert (img.height, img.width) == (100, 100)


def test_generate_synthetic_images_span_full_range(tmp_path):
    samples, _ = generate_synthetic(6, 0, tmp_path)
    for s in samples:
        img = read_pgm(s.image_path.read_bytes())
        assert img.pixels.min() == 0.0
        assert img.pixels.max() == 255.0


def test_generate_synthetic_is_deterministic(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    sa, ma = generate_synthetic(8, 9, a_dir)
    sb, mb = generate_synthetic(8, 9, b_dir)
    for x, y in zip(sa, sb):
        assert x.id == y.id
        assert x.image_path.read_bytes() == y.image_path.read_bytes()
    assert ma.read_text().replace(str(a_dir), "") == mb.read_text().replace(str(b_dir), "")


def test_generate_synthetic_seed_changes_content(tmp_path):
    sa, _ = generate_synthetic(4, 1, tmp_path / "a")
    sb, _ = generate_synthetic(4, 2, tmp_path / "b")
    assert sa[0].image_path.read_bytes() != sb[0].image_path.read_bytes()


def test_generate_synthetic_manifest_loads_back(tmp_path):
    samples, manifest = generate_synthetic(6, 3, tmp_path)
    loaded = load_manifest(manifest)
    assert [s.id for s in loaded] == [s.id for s in samples]
    assert [s._label for s in loaded] == [s._label for s in samples]


def test_generate_synthetic_rejects_odd_or_nonpositive_counts(tmp_path):
    with pytest.raises(ValueError, match="even"):
        generate_synthetic(7, 0, tmp_path)
    with pytest.raises(ValueError, match="even"):
        generate_synthetic(0, 0, tmp_path)


def test_generate_synthetic_classes_differ_in_edge_density(tmp_path):
    from sclld.imaging import sobel_magnitude

    samples, _ = generate_synthetic(60, 5, tmp_path)
    means = {0: [], 1: []}
    for s in samples:
        img = read_pgm(s.image_path.read_bytes())
        means[s._label].append(sobel_magnitude(img).pixels.mean())
    assert np.mean(means[1]) > np.mean(means[0])
