"""On-disk synthetic datasets: ``.mvol`` triples plus ``manifest.json``."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from micformer.contracts.error import DataError
from micformer.io.atomic import atomic_write_text
from micformer.io.mvol import read_mvol, write_mvol

from .split import DatasetSplit, make_split
from .synth import synth_cases
from .volumes import CasePair, LabelMap, Modality, Volume

logger = logging.getLogger("micformer")

MANIFEST_SCHEMA = "micformer.manifest.v1"
MANIFEST_NAME = "manifest.json"
FILE_ROLES: tuple[tuple[str, Modality | None], ...] = (
    ("ct", Modality.CT),
    ("mri", Modality.MRI),
    ("label", None),
)


@dataclass(frozen=True)
class Dataset:
    root: Path
    cases: dict[str, CasePair]
    split: DatasetSplit
    manifest: dict[str, Any]

    @classmethod
    def from_cases(cls, cases: list[CasePair], split: DatasetSplit, classes: int) -> Dataset:
        """In-memory dataset with no backing directory."""

        by_id = {c.case_id: c for c in cases}
        unknown = [i for i in (*split.train, *split.test) if i not in by_id]
        if unknown:
            raise DataError(f"split names unknown cases: {unknown[:5]}")
        return cls(Path("."), by_id, split, {"schema": MANIFEST_SCHEMA, "classes": classes})

    def select(self, ids: tuple[str, ...]) -> list[CasePair]:
        return [self.cases[i] for i in ids]

    @property
    def train_cases(self) -> list[CasePair]:
        return self.select(self.split.train)

    @property
    def test_cases(self) -> list[CasePair]:
        return self.select(self.split.test)

    @property
    def num_classes(self) -> int:
        return int(self.manifest["classes"])


def case_files(case_id: str) -> dict[str, str]:
    return {role: f"{case_id}_{role}.mvol" for role, _ in FILE_ROLES}


def build_manifest(
    cases: list[CasePair],
    split: DatasetSplit,
    *,
    seed: int,
    edge: int,
    classes: int,
    misalignment: float,
    train_fraction: float,
) -> dict[str, Any]:
    return {
        "schema": MANIFEST_SCHEMA,
        "seed": seed,
        "edge": edge,
        "classes": classes,
        "misalignment": misalignment,
        "train_fraction": train_fraction,
        "cases": [
            {
                "id": case.case_id,
                "files": case_files(case.case_id),
                "modalities": {"ct": Modality.CT.value, "mri": Modality.MRI.value},
                "spacing": list(case.spacing),
            }
            for case in cases
        ],
        "split": split.to_dict(),
    }


def write_dataset(
    out_dir: str | Path,
    *,
    seed: int,
    cases: int,
    edge: int,
    classes: int,
    train_fraction: float = 0.8,
    misalignment: float = 2.0,
) -> dict[str, Any]:
    """Generate ``cases`` synthetic pairs under ``out_dir`` and write the manifest."""

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    generated = synth_cases(seed, cases, edge, classes, misalignment=misalignment)
    split = make_split([c.case_id for c in generated], train_fraction, seed)
    for case in generated:
        files = case_files(case.case_id)
        write_mvol(case.ct, root / files["ct"])
        write_mvol(case.mri, root / files["mri"])
        write_mvol(case.labels, root / files["label"])
    manifest = build_manifest(
        generated,
        split,
        seed=seed,
        edge=edge,
        classes=classes,
        misalignment=misalignment,
        train_fraction=train_fraction,
    )
    atomic_write_text(root / MANIFEST_NAME, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    logger.info(
        "Wrote %d cases to %s (%d train / %d test)",
        cases,
        root,
        len(split.train),
        len(split.test),
    )
    return manifest


def _require(doc: Mapping[str, Any], key: str, kind: type | tuple[type, ...]) -> Any:
    value = doc.get(key)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise DataError(f"manifest field {key!r} is missing or has the wrong type")
    return value


def read_manifest(root: str | Path) -> dict[str, Any]:
    path = Path(root) / MANIFEST_NAME
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != MANIFEST_SCHEMA:
        raise DataError(f"{path} is not a {MANIFEST_SCHEMA} manifest")
    _require(doc, "classes", int)
    _require(doc, "edge", int)
    _require(doc, "cases", list)
    split = _require(doc, "split", dict)
    if not isinstance(split.get("train"), list) or not isinstance(split.get("test"), list):
        raise DataError("manifest split must list train and test ids")
    return doc


def load_dataset(root: str | Path) -> Dataset:
    """Load every case listed in ``root/manifest.json``."""

    base = Path(root)
    manifest = read_manifest(base)
    classes = int(manifest["classes"])
    edge = int(manifest["edge"])
    cases: dict[str, CasePair] = {}
    for entry in manifest["cases"]:
        case_id = str(entry["id"])
        files = entry.get("files") or case_files(case_id)
        ct = read_mvol(base / files["ct"], Modality.CT)
        mri = read_mvol(base / files["mri"], Modality.MRI)
        labels = read_mvol(base / files["label"])
        if not isinstance(ct, Volume) or not isinstance(mri, Volume):
            raise DataError(f"case {case_id}: CT/MRI files must hold intensity volumes")
        if not isinstance(labels, LabelMap):
            raise DataError(f"case {case_id}: label file must hold a label map")
        case = CasePair(case_id, ct, mri, labels)
        if case.extents != (edge, edge, edge):
            raise DataError(
                f"case {case_id}: extents {case.extents} do not match manifest edge {edge}"
            )
        if int(labels.data.max()) >= classes:
            raise DataError(f"case {case_id}: label index exceeds {classes} classes")
        cases[case_id] = case
    split = DatasetSplit(
        train=tuple(manifest["split"]["train"]), test=tuple(manifest["split"]["test"])
    )
    unknown = [i for i in (*split.train, *split.test) if i not in cases]
    if unknown or set(split.train) & set(split.test):
        raise DataError(f"manifest split is inconsistent (unknown ids {unknown[:3]})")
    logger.info("Loaded %d cases from %s", len(cases), base)
    return Dataset(root=base, cases=cases, split=split, manifest=manifest)


__all__ = [
    "Dataset",
    "MANIFEST_NAME",
    "MANIFEST_SCHEMA",
    "build_manifest",
    "case_files",
    "load_dataset",
    "read_manifest",
    "write_dataset",
]
