"""Corpus handling: manifests, deterministic partitioning, synthetic images.

Labels live behind a counting property so the unsupervised training phase can
prove it never reads one: wrap any code in :func:`label_audit` and assert the
reported count is zero. Both ``Sample.label`` and ``Sample.has_label`` bump
the counter; only code that legitimately consumes labels (partitioning,
fine-tuning, evaluation) should touch either.
"""

from __future__ import annotations

import csv
import math
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import GrayImage, write_pgm

TEST_SHARE = 0.2
VALIDATION_SHARE = 0.2

_MANIFEST_HEADER = ["id", "path", "label"]

_SALT_SPLIT = 11
_SALT_SYNTH = 13


class _LabelAuditCounter:
    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0


_AUDIT = _LabelAuditCounter()


@contextmanager
def label_audit():
    """Track label dereferences inside the block.

    Yields a counter object whose ``count`` holds the number of accesses made
    since entering the block.
    """
    start = _AUDIT.count
    window = _LabelAuditCounter()
    try:
        yield window
    finally:
        window.count = _AUDIT.count - start


def label_access_count() -> int:
    return _AUDIT.count


class Sample:
    """One corpus entry: stable id, image path, optional class label."""

    __slots__ = ("id", "image_path", "_label")

    def __init__(self, id: str, image_path: Path, label: int | None = None) -> None:
        if label is not None and label not in (0, 1):
            raise ValueError(f"label must be 0, 1 or None, got {label!r}")
        self.id = id
        self.image_path = Path(image_path)
        self._label = label

    @property
    def label(self) -> int | None:
        _AUDIT.count += 1
        return self._label

    @property
    def has_label(self) -> bool:
        _AUDIT.count += 1
        return self._label is not None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.image_path == other.image_path
            and self._label == other._label
        )

    def __repr__(self) -> str:
        state = "labelled" if self._label is not None else "unlabelled"
        return f"Sample({self.id!r}, {state})"


class DatasetSplit:
    """Disjoint pools produced by :func:`partition_dataset`."""

    __slots__ = ("train_unlabelled", "train_labelled", "validation", "test", "seed")

    def __init__(
        self,
        train_unlabelled: list[Sample],
        train_labelled: list[Sample],
        validation: list[Sample],
        test: list[Sample],
        seed: int,
    ) -> None:
        self.train_unlabelled = train_unlabelled
        self.train_labelled = train_labelled
        self.validation = validation
        self.test = test
        self.seed = seed
        seen: set[str] = set()
        for pool_name, pool in self.pools().items():
            for sample in pool:
                if sample.id in seen:
                    raise ValueError(
                        f"sample '{sample.id}' appears in more than one pool ({pool_name})"
                    )
                seen.add(sample.id)

    def pools(self) -> dict[str, list[Sample]]:
        return {
            "train_unlabelled": self.train_unlabelled,
            "train_labelled": self.train_labelled,
            "validation": self.validation,
            "test": self.test,
        }


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _stratified_take(candidates: list[Sample], total: int) -> list[Sample]:
    """Pick ``total`` samples keeping class proportions, preserving order.

    Per-class quotas use round-half-up on the proportional share; any
    remainder from rounding is repaired by walking the leftover candidates in
    order.
    """
    by_class: dict[int, list[Sample]] = {0: [], 1: []}
    for s in candidates:
        by_class[s._label].append(s)
    n = len(candidates)
    quotas = {
        c: min(_round_half_up(total * len(pool) / n), len(pool))
        for c, pool in by_class.items()
    }
    while sum(quotas.values()) > total:
        # trim the larger quota first so proportions stay close
        c = max(quotas, key=lambda k: (quotas[k], k))
        quotas[c] -= 1
    chosen_ids: set[str] = set()
    picked: list[Sample] = []
    taken = {c: 0 for c in by_class}
    for s in candidates:
        if taken[s._label] < quotas[s._label]:
            taken[s._label] += 1
            picked.append(s)
            chosen_ids.add(s.id)
    if len(picked) < total:
        for s in candidates:
            if len(picked) == total:
                break
            if s.id not in chosen_ids:
                picked.append(s)
                chosen_ids.add(s.id)
    return picked


def partition_dataset(samples: list[Sample], labelled_fraction: float, seed: int) -> DatasetSplit:
    """Split a corpus into test / labelled / validation / unlabelled pools.

    The test pool takes 20% of the corpus. Of the remaining training pool,
    ``labelled_fraction`` keeps its labels (stratified by class) and 20% of
    those labelled samples are held out as the validation pool. All counts
    round half up; the shuffle is a deterministic function of ``seed``.
    """
    if not 0.0 < labelled_fraction <= 1.0:
        raise ValueError(
            f"labelled fraction must lie in (0, 1], got {labelled_fraction}"
        )
    n = len(samples)
    if n == 0:
        raise ValueError("cannot partition an empty corpus")
    ids = [s.id for s in samples]
    if len(set(ids)) != n:
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate sample id '{dupes[0]}' in corpus")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SALT_SPLIT]))
    order = rng.permutation(n)
    shuffled = [samples[i] for i in order]

    n_test = _round_half_up(TEST_SHARE * n)
    n_train = n - n_test
    n_labelled = _round_half_up(labelled_fraction * n_train)
    if n_test == 0 or n_train == 0:
        raise ValueError(f"corpus of {n} samples cannot fill both test and train pools")
    if n_labelled == 0:
        raise ValueError(
            f"labelled fraction {labelled_fraction} leaves no labelled samples"
        )

    test = shuffled[:n_test]
    train = shuffled[n_test:]
    for s in test:
        if s._label is None:
            raise ValueError(f"test sample '{s.id}' is missing its label")

    labelled_candidates = [s for s in train if s._label is not None]
    if len(labelled_candidates) < n_labelled:
        raise ValueError(
            f"need {n_labelled} labelled training samples but only "
            f"{len(labelled_candidates)} carry labels"
        )
    labelled_all = _stratified_take(labelled_candidates, n_labelled)
    n_val = _round_half_up(VALIDATION_SHARE * n_labelled)
    if n_val == 0 or n_val == n_labelled:
        raise ValueError(
            f"{n_labelled} labelled samples cannot fill both validation and "
            "fine-tuning pools"
        )
    validation = _stratified_take(labelled_all, n_val)
    val_ids = {s.id for s in validation}
    train_labelled = [s for s in labelled_all if s.id not in val_ids]

    labelled_ids = {s.id for s in labelled_all}
    train_unlabelled = [
        Sample(s.id, s.image_path, None) for s in train if s.id not in labelled_ids
    ]
    return DatasetSplit(train_unlabelled, train_labelled, validation, test, seed)


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------


def load_manifest(path: Path) -> list[Sample]:
    """Read a ``id,path,label`` CSV; relative image paths resolve against it.

    Samples come back sorted by id. Empty label cells mean unlabelled.
    """
    path = Path(path)
    base = path.parent
    samples: list[Sample] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _MANIFEST_HEADER:
            raise ValueError(
                f"manifest header must be {','.join(_MANIFEST_HEADER)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValueError(f"manifest line {lineno} has {len(row)} fields, expected 3")
            sid, raw_path, raw_label = row
            if not sid:
                raise ValueError(f"manifest line {lineno} has an empty id")
            if sid in seen:
                raise ValueError(f"duplicate sample id '{sid}' in manifest")
            seen.add(sid)
            if raw_label == "":
                label: int | None = None
            elif raw_label in ("0", "1"):
                label = int(raw_label)
            else:
                raise ValueError(
                    f"manifest line {lineno}: label must be 0, 1 or empty, got {raw_label!r}"
                )
            image_path = Path(raw_path)
            if not image_path.is_absolute():
                image_path = base / image_path
            if not image_path.exists():
                raise ValueError(f"manifest references missing image file {image_path}")
            samples.append(Sample(sid, image_path, label))
    if not samples:
        raise ValueError(f"manifest {path} lists no samples")
    samples.sort(key=lambda s: s.id)
    return samples


def save_manifest(samples: list[Sample], path: Path) -> None:
    path = Path(path)
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate sample id '{dupes[0]}' cannot be written")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_MANIFEST_HEADER)
        for s in sorted(samples, key=lambda x: x.id):
            label = "" if s._label is None else str(s._label)
            writer.writerow([s.id, str(s.image_path), label])


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

SYNTH_IMAGE_SIZE = 100


def _synth_image(rng: np.random.Generator, class_id: int) -> GrayImage:
    """One synthetic frame: lit background, soft blob, speckle patch, marker.

    Both classes carry a bounded speckle patch at a random position; the
    classes differ in the grain scale of the speckle (coarse for class 0,
    fine for class 1) and in overlapping amplitude ranges whose means are
    offset. The amplitude offset leaves a coarse separable cue while the
    grain scale carries the rest of the signal, so plentiful examples reward
    texture-sensitive features over a bare local-contrast detector. Every
    random parameter is drawn for both classes so the rng stream advances
    identically regardless of the label. The marker tag in the corner is
    constant across the corpus: its hard 0/255 edges pin both the intensity
    span and the Sobel maximum to class-independent values, so the finer
    grain strictly raises the rescaled edge-map mean of positive frames.
    """
    size = SYNTH_IMAGE_SIZE
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    bg = rng.uniform(70.0, 110.0)
    tilt = rng.uniform(-0.08, 0.08, size=2)
    amp = rng.uniform(60.0, 110.0)
    cx, cy = rng.uniform(25.0, 75.0, size=2)
    sig = rng.uniform(6.0, 11.0)
    tex_amp = rng.uniform(1.5, 4.0)
    sigma_coarse = rng.uniform(2.2, 3.2)
    patch_x, patch_y = rng.uniform(22.0, 78.0, size=2)
    patch_r = rng.uniform(8.0, 14.0)
    amp_lo = rng.uniform(20.0, 33.0)
    amp_hi = rng.uniform(25.0, 38.0)
    grain_fine = rng.uniform(0.65, 0.9)
    grain_coarse = rng.uniform(1.7, 2.3)
    noise = rng.standard_normal((size, size))
    patch_noise = rng.standard_normal((size, size))

    base = bg + tilt[0] * (yy - size / 2) + tilt[1] * (xx - size / 2)
    base = base + amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sig**2))
    texture = gaussian_filter(noise, sigma_coarse)
    pixels = base + tex_amp * texture / texture.std()
    grain = grain_fine if class_id == 1 else grain_coarse
    patch_amp = amp_hi if class_id == 1 else amp_lo
    r = np.sqrt((xx - patch_x) ** 2 + (yy - patch_y) ** 2)
    mask = 1.0 / (1.0 + np.exp((r - patch_r) / 1.5))
    speckle = gaussian_filter(patch_noise, grain)
    speckle = np.tanh(1.2 * speckle / speckle.std())  # bounded, dense grain
    pixels = pixels + patch_amp * mask * speckle
    pixels = np.clip(pixels, 1.0, 254.0)
    # marker tag: dark 8x8 plate with a bright 4x4 core, constant position
    pixels[4:12, 4:12] = 0.0
    pixels[6:10, 6:10] = 255.0
    return GrayImage(pixels)


def generate_synthetic(count: int, seed: int, out_dir: Path) -> tuple[list[Sample], Path]:
    """Write a balanced two-class PGM corpus and its manifest.

    ``count`` must be even so the classes split evenly. Identical arguments
    reproduce byte-identical files.
    """
    if count <= 0 or count % 2 != 0:
        raise ValueError(f"count must be a positive even number, got {count}")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SALT_SYNTH]))
    width = max(4, len(str(count - 1)))
    samples: list[Sample] = []
    rel_rows: list[tuple[str, str, int]] = []
    for i in range(count):
        class_id = i % 2
        image = _synth_image(rng, class_id)
        sid = f"s{i:0{width}d}"
        rel = f"images/{sid}.pgm"
        file_path = out_dir / rel
        file_path.write_bytes(write_pgm(image))
        samples.append(Sample(sid, file_path, class_id))
        rel_rows.append((sid, rel, class_id))
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_MANIFEST_HEADER)
        for sid, rel, label in rel_rows:
            writer.writerow([sid, rel, str(label)])
    return samples, manifest_path
