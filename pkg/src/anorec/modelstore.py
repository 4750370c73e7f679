"""On-disk model persistence.

A model directory holds a manifest.json plus one raw .npy blob per
array. The manifest records a sha256 per blob and a model hash over the
canonical manifest content, so identical training runs produce
byte-identical stores and any corruption is caught at load time.
Loading reconstructs detectors from their fitted state; nothing is
refit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import numpy as np

from .errors import ValidationError
from .grid import GridBank, GridSpec
from .novelty import (
    DetectorConfig,
    KernelDensityDetector,
    NearestNeighborDetector,
    OneClassSvm,
)
from .pack import ConceptTaskSpec
from .recounting import RecountModel, ScoreDensity
from .reduction import PcaModel, PqCodebook

STORE_VERSION = "1.0"
MANIFEST_NAME = "manifest.json"


def _canonical(manifest: dict) -> bytes:
    stripped = {k: v for k, v in manifest.items() if k != "model_hash"}
    return json.dumps(stripped, sort_keys=True, separators=(",", ":")).encode()


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Writer:
    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        self.blobs: dict[str, str] = {}

    def prepare(self) -> None:
        os.makedirs(self.path, exist_ok=True)
        for name in os.listdir(self.path):
            if name == MANIFEST_NAME or name.endswith(".npy"):
                os.remove(os.path.join(self.path, name))

    def blob(self, name: str, arr: np.ndarray) -> str:
        full = os.path.join(self.path, name)
        np.save(full, np.ascontiguousarray(arr))
        self.blobs[name] = _sha256_file(full)
        return name

    def finish(self, manifest: dict) -> None:
        manifest = dict(manifest)
        manifest["store_version"] = STORE_VERSION
        manifest["blobs"] = dict(sorted(self.blobs.items()))
        manifest["model_hash"] = hashlib.sha256(_canonical(manifest)).hexdigest()
        with open(os.path.join(self.path, MANIFEST_NAME), "w") as f:
            json.dump(manifest, f, sort_keys=True, indent=1)
            f.write("\n")


class _Reader:
    def __init__(self, path: str | os.PathLike, kind: str):
        self.path = os.fspath(path)
        mpath = os.path.join(self.path, MANIFEST_NAME)
        if not os.path.isfile(mpath):
            raise ValidationError(f"no {MANIFEST_NAME} in {self.path}")
        with open(mpath) as f:
            self.manifest = json.load(f)
        version = str(self.manifest.get("store_version", ""))
        major = version.split(".", 1)[0]
        if major != STORE_VERSION.split(".", 1)[0]:
            raise ValidationError(
                f"model store version {version!r} is incompatible with "
                f"{STORE_VERSION!r}"
            )
        if self.manifest.get("kind") != kind:
            raise ValidationError(
                f"expected a {kind!r} store, found {self.manifest.get('kind')!r}"
            )
        stored = self.manifest.get("model_hash")
        if stored != hashlib.sha256(_canonical(self.manifest)).hexdigest():
            raise ValidationError("model hash does not match manifest content")

    def blob(self, name: str) -> np.ndarray:
        digest = self.manifest["blobs"].get(name)
        if digest is None:
            raise ValidationError(f"manifest lists no blob named {name!r}")
        full = os.path.join(self.path, name)
        if not os.path.isfile(full):
            raise ValidationError(f"missing blob file {name!r}")
        if _sha256_file(full) != digest:
            raise ValidationError(f"blob {name!r} does not match its recorded hash")
        return np.load(full, allow_pickle=False)


def _cell_key(rc: tuple[int, int]) -> str:
    return f"{rc[0]},{rc[1]}"


def _parse_cell_key(key: str) -> tuple[int, int]:
    r, c = key.split(",")
    return int(r), int(c)


def save_grid_bank(path: str | os.PathLike, bank: GridBank) -> None:
    """Write a fitted grid bank to a model directory."""
    w = _Writer(path)
    w.prepare()
    entry: dict = {
        "feature_dim": int(bank.feature_dim),
        "spec": dataclasses.asdict(bank.spec),
        "config": dataclasses.asdict(bank.config),
        "cell_counts": {
            _cell_key(rc): int(n) for rc, n in sorted(bank.cell_counts.items())
        },
        "pca": None,
        "codebook": None,
        "cells": {},
    }
    if bank.pca is not None:
        entry["pca"] = {
            "mean": w.blob("pca_mean.npy", bank.pca.mean),
            "components": w.blob("pca_components.npy", bank.pca.components),
            "explained_variance": w.blob(
                "pca_explained_variance.npy", bank.pca.explained_variance
            ),
        }
    if bank.codebook is not None:
        entry["codebook"] = {
            "bits": int(bank.codebook.bits),
            "centroids": w.blob("pq_centroids.npy", bank.codebook.centroids),
        }
    for rc in sorted(bank.cells):
        det = bank.cells[rc]
        key = _cell_key(rc)
        if det is None:
            entry["cells"][key] = None
            continue
        stem = f"cell_{rc[0]}_{rc[1]}"
        if isinstance(det, NearestNeighborDetector):
            if det.codebook is not None:
                cell = {"kind": "nn", "codes": w.blob(f"{stem}_codes.npy", det.codes)}
            else:
                cell = {"kind": "nn", "train": w.blob(f"{stem}_train.npy", det.train)}
        elif isinstance(det, OneClassSvm):
            cell = {
                "kind": "ocsvm",
                "train": w.blob(f"{stem}_train.npy", det.train),
                "alpha": w.blob(f"{stem}_alpha.npy", det.alpha),
                "rho": float(det.rho),
                "gamma": float(det.gamma),
                "nu": float(det.nu),
                "tol": float(det.tol),
                "max_iter": int(det.max_iter),
                "n_iter": int(det.n_iter),
            }
        elif isinstance(det, KernelDensityDetector):
            cell = {
                "kind": "kde",
                "train": w.blob(f"{stem}_train.npy", det.train),
                "bandwidth": w.blob(f"{stem}_bandwidth.npy", det.bandwidth),
            }
        else:
            raise ValidationError(
                f"cannot persist detector of type {type(det).__name__}"
            )
        entry["cells"][key] = cell
    w.finish({"kind": "grid_bank", "bank": entry})


def load_grid_bank(path: str | os.PathLike) -> GridBank:
    """Reconstruct a grid bank saved by save_grid_bank."""
    r = _Reader(path, "grid_bank")
    entry = r.manifest["bank"]
    spec = GridSpec(**entry["spec"])
    config = DetectorConfig(**entry["config"])
    config.validate()

    pca = None
    if entry["pca"] is not None:
        pca = PcaModel(
            mean=r.blob(entry["pca"]["mean"]),
            components=r.blob(entry["pca"]["components"]),
            explained_variance=r.blob(entry["pca"]["explained_variance"]),
        )
    codebook = None
    if entry["codebook"] is not None:
        codebook = PqCodebook(
            centroids=r.blob(entry["codebook"]["centroids"]),
            bits=int(entry["codebook"]["bits"]),
        )

    cells: dict[tuple[int, int], object] = {}
    for key, cell in entry["cells"].items():
        rc = _parse_cell_key(key)
        if cell is None:
            cells[rc] = None
            continue
        kind = cell["kind"]
        if kind == "nn":
            det = NearestNeighborDetector(
                codebook=codebook if "codes" in cell else None
            )
            if "codes" in cell:
                if codebook is None:
                    raise ValidationError(
                        f"cell {key} stores codes but the manifest has no codebook"
                    )
                det.codes = r.blob(cell["codes"])
            else:
                det.train = r.blob(cell["train"])
        elif kind == "ocsvm":
            det = OneClassSvm(
                gamma=cell["gamma"],
                nu=cell["nu"],
                tol=cell["tol"],
                max_iter=cell["max_iter"],
            )
            det.train = r.blob(cell["train"])
            det.alpha = r.blob(cell["alpha"])
            det.rho = float(cell["rho"])
            det.n_iter = int(cell["n_iter"])
        elif kind == "kde":
            det = KernelDensityDetector()
            det.train = r.blob(cell["train"])
            det.bandwidth = r.blob(cell["bandwidth"])
        else:
            raise ValidationError(f"cell {key}: unknown detector kind {kind!r}")
        cells[rc] = det

    counts = {
        _parse_cell_key(k): int(v) for k, v in entry["cell_counts"].items()
    }
    return GridBank(
        spec=spec,
        config=config,
        feature_dim=int(entry["feature_dim"]),
        cells=cells,
        pca=pca,
        codebook=codebook,
        cell_counts=counts,
    )


def save_recount_model(path: str | os.PathLike, model: RecountModel) -> None:
    """Write a fitted recounting model to a model directory."""
    w = _Writer(path)
    w.prepare()
    entry: dict = {
        "cls_threshold": float(model.cls_threshold),
        "density_floor": float(model.density_floor),
        "tasks": [
            {"name": t.name, "categories": list(t.categories)} for t in model.tasks
        ],
        "densities": {},
    }
    for t in model.tasks:
        rows = []
        for k, dens in enumerate(model.densities[t.name]):
            samples = dens.samples if dens.samples is not None else np.empty(0)
            rows.append(
                {
                    "samples": w.blob(f"density_{t.name}_{k}.npy", samples),
                    "bandwidth": None
                    if dens.bandwidth is None
                    else float(dens.bandwidth),
                    "degenerate": bool(dens.degenerate),
                }
            )
        entry["densities"][t.name] = rows
    w.finish({"kind": "recount", "recount": entry})


def load_recount_model(path: str | os.PathLike) -> RecountModel:
    """Reconstruct a recounting model without refitting its densities."""
    r = _Reader(path, "recount")
    entry = r.manifest["recount"]
    tasks = [
        ConceptTaskSpec(t["name"], tuple(t["categories"])) for t in entry["tasks"]
    ]
    densities: dict[str, list[ScoreDensity]] = {}
    for t in tasks:
        rows = entry["densities"][t.name]
        if len(rows) != len(t.categories):
            raise ValidationError(
                f"task {t.name!r}: {len(rows)} densities for "
                f"{len(t.categories)} categories"
            )
        restored = []
        for row in rows:
            dens = ScoreDensity()
            dens.samples = r.blob(row["samples"])
            dens.bandwidth = (
                None if row["bandwidth"] is None else float(row["bandwidth"])
            )
            dens.degenerate = bool(row["degenerate"])
            restored.append(dens)
        densities[t.name] = restored
    return RecountModel(
        tasks=tasks,
        densities=densities,
        cls_threshold=float(entry["cls_threshold"]),
        density_floor=float(entry["density_floor"]),
    )


def read_model_hash(path: str | os.PathLike) -> str:
    """The stored model hash, after verifying manifest integrity."""
    mpath = os.path.join(os.fspath(path), MANIFEST_NAME)
    if not os.path.isfile(mpath):
        raise ValidationError(f"no {MANIFEST_NAME} in {os.fspath(path)}")
    with open(mpath) as f:
        manifest = json.load(f)
    stored = manifest.get("model_hash")
    if stored != hashlib.sha256(_canonical(manifest)).hexdigest():
        raise ValidationError("model hash does not match manifest content")
    return stored


# ---------------------------------------------------------------------------
# combined model directory: one grid bank plus one recounting model

BANK_SUBDIR = "bank"
RECOUNT_SUBDIR = "recount"


def save_model_dir(
    path: str | os.PathLike, bank: GridBank, recount: RecountModel
) -> str:
    """Write bank + recounting model under one directory; returns its hash."""
    path = os.fspath(path)
    save_grid_bank(os.path.join(path, BANK_SUBDIR), bank)
    save_recount_model(os.path.join(path, RECOUNT_SUBDIR), recount)
    manifest = {
        "store_version": STORE_VERSION,
        "kind": "model_dir",
        "bank_hash": read_model_hash(os.path.join(path, BANK_SUBDIR)),
        "recount_hash": read_model_hash(os.path.join(path, RECOUNT_SUBDIR)),
    }
    manifest["model_hash"] = hashlib.sha256(_canonical(manifest)).hexdigest()
    with open(os.path.join(path, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")
    return manifest["model_hash"]


def load_model_dir(path: str | os.PathLike) -> tuple[GridBank, RecountModel]:
    """Load a directory written by save_model_dir, verifying all hashes."""
    path = os.fspath(path)
    mpath = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(mpath):
        raise ValidationError(f"no {MANIFEST_NAME} in {path}")
    with open(mpath) as f:
        manifest = json.load(f)
    version = str(manifest.get("store_version", ""))
    if version.split(".", 1)[0] != STORE_VERSION.split(".", 1)[0]:
        raise ValidationError(
            f"model store version {version!r} is incompatible with "
            f"{STORE_VERSION!r}"
        )
    if manifest.get("kind") != "model_dir":
        raise ValidationError(
            f"expected a model directory, found {manifest.get('kind')!r}"
        )
    if manifest.get("model_hash") != hashlib.sha256(
        _canonical(manifest)
    ).hexdigest():
        raise ValidationError("model hash does not match manifest content")
    for key, subdir in (("bank_hash", BANK_SUBDIR), ("recount_hash", RECOUNT_SUBDIR)):
        if manifest[key] != read_model_hash(os.path.join(path, subdir)):
            raise ValidationError(f"{subdir} hash does not match the directory")
    bank = load_grid_bank(os.path.join(path, BANK_SUBDIR))
    recount = load_recount_model(os.path.join(path, RECOUNT_SUBDIR))
    return bank, recount
