"""Dataset manifests and guarded in-memory datasets.

A dataset on disk is a directory of VOLB volumes plus a ``manifest.tsv``
with one row per volume: relative path, integer label, domain tag, split.
Target-domain training labels must never be read during adaptation, so
loaded splits are wrapped in a guard that raises on label access unless
explicitly unlocked, and counts every successful read.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .volume import Volume, read_volume

DOMAINS = ("source", "target")
SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.tsv"


class ManifestError(ValueError):
    pass


class TargetLabelError(RuntimeError):
    """Raised when a locked dataset's labels are read."""


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest directory, posix separators
    label: int
    domain: str
    split: str

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ManifestError(f"label must be 0 or 1, got {self.label}")
        if self.domain not in DOMAINS:
            raise ManifestError(f"unknown domain {self.domain!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]

    def filter(self, domain: str | None = None, split: str | None = None) -> list[ManifestEntry]:
        out = []
        for e in self.entries:
            if domain is not None and e.domain != domain:
                continue
            if split is not None and e.split != split:
                continue
            out.append(e)
        return out

    def counts(self) -> dict[tuple[str, str, int], int]:
        c: dict[tuple[str, str, int], int] = {}
        for e in self.entries:
            key = (e.domain, e.split, e.label)
            c[key] = c.get(key, 0) + 1
        return c


def write_manifest(manifest: DatasetManifest, path: str | Path | None = None) -> Path:
    path = Path(path) if path is not None else manifest.root / MANIFEST_NAME
    lines = ["path\tlabel\tdomain\tsplit"]
    for e in manifest.entries:
        lines.append(f"{e.path}\t{e.label}\t{e.domain}\t{e.split}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no manifest at {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].split("\t") != ["path", "label", "domain", "split"]:
        raise ManifestError(f"{path} is missing the manifest header row")
    entries = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ManifestError(f"{path}:{i}: expected 4 tab-separated fields")
        try:
            label = int(parts[1])
        except ValueError as exc:
            raise ManifestError(f"{path}:{i}: label {parts[1]!r} is not an integer") from exc
        entries.append(ManifestEntry(parts[0], label, parts[2], parts[3]))
    return DatasetManifest(root=path.parent, entries=entries)


class GuardedDataset:
    """Volumes with labels behind an access guard.

    ``labels`` raises TargetLabelError while locked; every successful read
    increments ``label_reads``. ``unlocked()`` returns an unlocked view of
    the same arrays and is the only sanctioned way past the guard (used by
    the supervised target-domain reference run and by test-time scoring).
    """

    def __init__(self, volumes: np.ndarray, labels: np.ndarray, allow_labels: bool, name: str = ""):
        if len(volumes) != len(labels):
            raise ValueError(f"{len(volumes)} volumes vs {len(labels)} labels")
        self.volumes = volumes
        self._labels = labels
        self._allow = allow_labels
        self.name = name
        self.label_reads = 0

    def __len__(self) -> int:
        return len(self.volumes)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.volumes.shape[1:])

    @property
    def labels(self) -> np.ndarray:
        if not self._allow:
            raise TargetLabelError(
                f"labels of {self.name or 'dataset'} are locked; the adaptation "
                "protocol never reads target training labels"
            )
        self.label_reads += 1
        return self._labels

    def unlocked(self) -> "GuardedDataset":
        view = GuardedDataset(self.volumes, self._labels, True, self.name)
        return view


def load_split(
    manifest: DatasetManifest,
    domain: str,
    split: str,
    allow_labels: bool = True,
) -> GuardedDataset:
    entries = manifest.filter(domain=domain, split=split)
    if not entries:
        raise ManifestError(f"manifest has no {domain}/{split} samples")
    vols = []
    dims = None
    for e in entries:
        v = read_volume(manifest.root / e.path)
        if dims is None:
            dims = v.dims
        elif v.dims != dims:
            raise ManifestError(
                f"{e.path} has dims {v.dims} but earlier volumes have {dims}"
            )
        vols.append(v.values)
    labels = np.array([e.label for e in entries], dtype=np.int64)
    return GuardedDataset(
        np.stack(vols), labels, allow_labels, name=f"{domain}/{split}"
    )


def relabel_split(entry: ManifestEntry, split: str) -> ManifestEntry:
    return replace(entry, split=split)
