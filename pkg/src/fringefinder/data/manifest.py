"""Line-delimited dataset manifests.

Format (UTF-8): first line ``#insar-manifest v1``, then one record per line,
``<relative_path>\\t<label>\\t<split>`` with label one of ``0``, ``1`` or ``-``
(unlabeled) and split ``train`` or ``test``. Paths are resolved relative to
the manifest file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ValidationError

MANIFEST_HEADER = "#insar-manifest v1"
SPLITS = ("train", "test")


@dataclass
class ManifestEntry:
    path: str
    label: int | None
    split: str

    def __post_init__(self) -> None:
        if self.label is not None and self.label not in (0, 1):
            raise ValidationError(f"label must be 0, 1 or None, got {self.label!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.path or "\t" in self.path or "\n" in self.path:
            raise ValidationError(f"invalid manifest path {self.path!r}")


@dataclass(frozen=True)
class ManifestStats:
    n_positive: int
    n_negative: int
    n_unlabeled: int


@dataclass
class DatasetManifest:
    """Ordered manifest entries plus the directory they resolve against."""

    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        self.root = Path(self.root)
        seen: set[str] = set()
        for entry in self.entries:
            if entry.path in seen:
                raise ValidationError(f"duplicate manifest path {entry.path!r}")
            seen.add(entry.path)

    @property
    def stats(self) -> ManifestStats:
        """Counts recomputed from the entries (always consistent by construction)."""
        pos = sum(1 for e in self.entries if e.label == 1)
        neg = sum(1 for e in self.entries if e.label == 0)
        unl = sum(1 for e in self.entries if e.label is None)
        return ManifestStats(pos, neg, unl)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
        return [e for e in self.entries if e.split == split]

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path


def _parse_label(token: str, lineno: int) -> int | None:
    if token == "-":
        return None
    if token in ("0", "1"):
        return int(token)
    raise ValidationError(f"manifest line {lineno}: label must be 0, 1 or '-', got {token!r}")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a manifest file; raises OSError if missing, ValidationError if malformed."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ValidationError(f"{path}: first line must be {MANIFEST_HEADER!r}")
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValidationError(f"{path} line {lineno}: expected 3 tab-separated fields")
        rel, label_token, split = parts
        if split not in SPLITS:
            raise ValidationError(f"{path} line {lineno}: bad split {split!r}")
        entries.append(ManifestEntry(rel, _parse_label(label_token, lineno), split))
    return DatasetManifest(entries=entries, root=path.parent)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [MANIFEST_HEADER]
    for entry in manifest.entries:
        label = "-" if entry.label is None else str(entry.label)
        lines.append(f"{entry.path}\t{label}\t{entry.split}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
