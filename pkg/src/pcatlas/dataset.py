"""Corpus construction: meshes in, paired clean/corrupted clouds and atlases out.

Every accepted mesh becomes one sample. Its randomness comes from a seed
derived from the global seed and the mesh id, so adding or removing meshes
never changes the other samples, and the output does not depend on how many
workers process the corpus.

Layout of the output directory::

    manifest.json
    lattice_n<N>_p<phase>.aflt
    <id>.clean.ply  <id>.corrupted.ply  <id>.clean.af  <id>.corrupted.af
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__
from .assignment import pair_cost
from .atlas import (Assignment, build_sphere_lattice, decode_atlas, encode_atlas, encode_cloud, lattice_filename,
                    load_atlas, load_lattice, save_atlas, save_lattice)
from .corruption import CorruptionSpec, Strategy, corrupt, removal_count
from .errors import DataError, EmptyInputError, PcAtlasError
from .fileio import atomic_write, load_mesh, load_point_cloud, write_point_cloud
from .geometry import farthest_point_sample, filter_by_face_count, normalize_to_unit_sphere, sample_surface
from .metrics import SpatialIndex
from .seeding import derive_seed, make_rng

log = logging.getLogger(__name__)

MESH_SUFFIXES = (".obj", ".ply")
OVERSAMPLE = 4
TEST_FRACTION = 0.1
ROUNDTRIP_TOL = 1e-5
MANIFEST_NAME = "manifest.json"
ARTIFACTS = ("clean_cloud", "corrupted_cloud", "clean_atlas", "corrupted_atlas")


@dataclass
class DatasetManifest:
    entries: list
    n_sites: int
    seed: int
    lattice_file: str
    corruption_defaults: dict
    rejected: list = field(default_factory=list)
    corrupted_encoding: str = "independent"
    tool_version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "n_sites": self.n_sites,
            "seed": self.seed,
            "lattice_file": self.lattice_file,
            "corruption_defaults": self.corruption_defaults,
            "corrupted_encoding": self.corrupted_encoding,
            "entries": self.entries,
            "rejected": self.rejected,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d) -> "DatasetManifest":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported manifest schema_version {d.get('schema_version')!r}")
        return cls(
            entries=list(d["entries"]),
            n_sites=int(d["n_sites"]),
            seed=int(d["seed"]),
            lattice_file=d["lattice_file"],
            corruption_defaults=d["corruption_defaults"],
            rejected=list(d.get("rejected", [])),
            corrupted_encoding=d.get("corrupted_encoding", "independent"),
            tool_version=d["tool_version"],
            schema_version=d["schema_version"],
        )

    def split_counts(self) -> dict:
        out = {"train": 0, "test": 0}
        for e in self.entries:
            out[e["split"]] += 1
        return out


def list_meshes(input_dir) -> list:
    """Mesh files directly inside ``input_dir``, sorted by name."""
    root = Path(input_dir)
    if not root.is_dir():
        raise DataError(f"input directory {root} does not exist")
    return sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in MESH_SUFFIXES)


def mesh_seed(seed: int, mesh_id: str) -> int:
    return derive_seed(seed, f"mesh:{mesh_id}")


def strategy_for(seed: int, mesh_id: str) -> Strategy:
    """Random and center crops alternate by the parity of the per-mesh seed."""
    return Strategy.RANDOM if mesh_seed(seed, mesh_id) % 2 == 0 else Strategy.CENTER


def split_test_count(n: int) -> int:
    """Size of the test split: 10% of ``n`` rounded half up."""
    return int(math.floor(TEST_FRACTION * n + 0.5))


def assign_splits(ids, seed: int) -> dict:
    """Map id -> "train" | "test" via a seeded shuffle of the sorted ids."""
    ids = sorted(ids)
    order = make_rng(derive_seed(seed, "split")).permutation(len(ids))
    test = {ids[k] for k in order[:split_test_count(len(ids))]}
    return {i: ("test" if i in test else "train") for i in ids}


def _shared_assignment_atlas(corrupted, keep, clean_assignment, lattice):
    """Encode survivors on the sites they occupied in the clean atlas."""
    site_map = clean_assignment.map[keep]
    cost = pair_cost(corrupted.positions, lattice.sites, site_map)
    return encode_atlas(corrupted, lattice, Assignment(site_map, cost, clean_assignment.solver))


def _process_mesh(path: Path, out_dir: Path, lattice_path: Path, n_sites: int, seed: int, defaults: dict,
                  shared: bool = False):
    """Build one sample. Returns ("ok", entry) or ("rejected", record)."""
    mesh_id = path.stem
    try:
        mesh = load_mesh(path)
    except (PcAtlasError, OSError, UnicodeDecodeError) as exc:
        return "rejected", {"source": path.name, "reason": "unreadable", "detail": str(exc)}
    if not filter_by_face_count(mesh):
        return "rejected", {"source": path.name, "reason": "face_count", "detail": f"{mesh.n_faces} faces"}
    s = mesh_seed(seed, mesh_id)
    try:
        mesh, _ = normalize_to_unit_sphere(mesh)
        dense = sample_surface(mesh, OVERSAMPLE * n_sites, derive_seed(s, "sample"))
    except PcAtlasError as exc:
        return "rejected", {"source": path.name, "reason": "degenerate", "detail": str(exc)}
    clean = farthest_point_sample(dense, n_sites, seed=derive_seed(s, "fps"))
    spec = CorruptionSpec(strategy_for(seed, mesh_id), defaults["crop_fraction"], defaults["sigma"],
                          derive_seed(s, "corrupt"))
    corrupted, keep = corrupt(clean, spec, return_indices=True)
    lattice = load_lattice(lattice_path)
    clean_atlas, clean_assignment = encode_cloud(clean, lattice)
    if shared:
        corrupted_atlas = _shared_assignment_atlas(corrupted, keep, clean_assignment, lattice)
    else:
        corrupted_atlas, _ = encode_cloud(corrupted, lattice)
    names = {k: f"{mesh_id}.{k.replace('_cloud', '.ply').replace('_atlas', '.af')}" for k in ARTIFACTS}
    atomic_write(out_dir / names["clean_cloud"], write_point_cloud(clean))
    atomic_write(out_dir / names["corrupted_cloud"], write_point_cloud(corrupted))
    save_atlas(clean_atlas, out_dir / names["clean_atlas"])
    save_atlas(corrupted_atlas, out_dir / names["corrupted_atlas"])
    entry = {"id": mesh_id, "source": path.name, "corruption": spec.to_dict(), **names}
    return "ok", entry


def build_dataset(input_dir, output_dir, n_sites: int = 16384, seed: int = 0,
                  spec_defaults: CorruptionSpec = None, workers: int = 1,
                  shared_assignment: bool = False) -> DatasetManifest:
    """Process every mesh in ``input_dir`` and write the corpus to ``output_dir``.

    ``spec_defaults`` supplies crop fraction and noise sigma; its strategy and
    seed are replaced per mesh. Unreadable, oversized and degenerate meshes
    are logged and listed under ``rejected``.

    By default a corrupted cloud gets its own assignment, as any partial
    input would at inference time. With ``shared_assignment`` its surviving
    points keep the sites they had in the clean atlas instead, so the two
    atlases differ only at the cropped pixels (and by the noise).

    Raises:
        EmptyInputError: no mesh was accepted.
    """
    spec_defaults = spec_defaults or CorruptionSpec()
    defaults = {"crop_fraction": spec_defaults.crop_fraction, "sigma": spec_defaults.sigma}
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = list_meshes(input_dir)
    ids = [p.stem for p in paths]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise DataError(f"mesh ids must be unique; duplicated: {', '.join(dup)}")

    lattice = build_sphere_lattice(n_sites, seed=seed)
    lattice_name = lattice_filename(n_sites, lattice.phase)
    save_lattice(lattice, out / lattice_name)

    jobs = [(p, out, out / lattice_name, n_sites, seed, defaults, shared_assignment) for p in paths]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_process_mesh, *zip(*jobs)))
    else:
        results = [_process_mesh(*job) for job in jobs]

    entries, rejected = [], []
    for status, rec in results:
        if status == "ok":
            entries.append(rec)
        else:
            log.warning("rejected %s: %s (%s)", rec["source"], rec["reason"], rec["detail"])
            rejected.append(rec)
    if not entries:
        raise EmptyInputError(f"no mesh in {input_dir} was accepted ({len(rejected)} rejected)")
    splits = assign_splits([e["id"] for e in entries], seed)
    for e in entries:
        e["split"] = splits[e["id"]]
    entries.sort(key=lambda e: e["id"])
    rejected.sort(key=lambda r: r["source"])
    encoding = "shared" if shared_assignment else "independent"
    manifest = DatasetManifest(entries, n_sites, seed, lattice_name, defaults, rejected, encoding)
    atomic_write(out / MANIFEST_NAME, manifest.to_json().encode())
    log.info("built %d samples (%d train, %d test), rejected %d", len(entries),
             manifest.split_counts()["train"], manifest.split_counts()["test"], len(rejected))
    return manifest


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest {path} not found")
    try:
        return DatasetManifest.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc


def _matches(decoded, cloud, tol) -> bool:
    """True when ``decoded`` is ``cloud`` reordered, to within ``tol`` per coordinate."""
    if len(decoded) != len(cloud):
        return False
    if len(cloud) == 0:
        return True
    _, idx = SpatialIndex(cloud.positions).nearest(decoded.positions)
    if len(np.unique(idx)) != len(idx):
        return False
    pos_err = np.abs(decoded.positions - cloud.positions[idx]).max()
    nrm_err = np.abs(decoded.normals - cloud.normals[idx]).max()
    return bool(pos_err < tol and nrm_err < tol)


def verify_entry(entry: dict, root: Path, lattice) -> list:
    """Failure reasons for one manifest entry; empty when it passes."""
    paths = {k: root / entry[k] for k in ARTIFACTS}
    missing = [k for k, p in paths.items() if not p.is_file()]
    if missing:
        return ["missing_file"]
    try:
        clean = load_point_cloud(paths["clean_cloud"])
        corrupted = load_point_cloud(paths["corrupted_cloud"])
        clean_atlas = load_atlas(paths["clean_atlas"])
        corrupted_atlas = load_atlas(paths["corrupted_atlas"])
    except (PcAtlasError, OSError) as exc:
        log.debug("entry %s unreadable: %s", entry["id"], exc)
        return ["unreadable"]
    failures = []
    if clean_atlas.invariant_violations() or corrupted_atlas.invariant_violations():
        failures.append("atlas_invariant")
    spec = CorruptionSpec.from_dict(entry["corruption"])
    n = lattice.n_sites
    want = n - removal_count(n, spec.crop_fraction)
    if (len(clean) != n or corrupted.n_valid != want or int(clean_atlas.mask.sum()) != n
            or int(corrupted_atlas.mask.sum()) != want):
        failures.append("size_mismatch")
    if clean_atlas.side != lattice.side or not _matches(decode_atlas(clean_atlas, lattice), clean, ROUNDTRIP_TOL):
        failures.append("roundtrip")
    return failures


def verify_dataset(manifest_path) -> dict:
    """Re-check every entry of a built dataset.

    Returns ``{"ok": bool, "n_entries": k, "n_failed": j, "entries": [{"id",
    "ok", "failures"}]}`` with failure reasons among missing_file,
    unreadable, atlas_invariant, size_mismatch and roundtrip.
    """
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    root = manifest_path.parent
    lattice = load_lattice(root / manifest.lattice_file)
    report = []
    for entry in manifest.entries:
        failures = verify_entry(entry, root, lattice)
        report.append({"id": entry["id"], "ok": not failures, "failures": failures})
    n_failed = sum(not r["ok"] for r in report)
    return {"ok": n_failed == 0, "n_entries": len(report), "n_failed": n_failed, "entries": report}
