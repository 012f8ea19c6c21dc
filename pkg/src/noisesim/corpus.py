"""On-disk corpus format: a manifest plus one JSON document per scenario and map.

Layout::

    <corpus>/manifest.json
    <corpus>/maps/<map_id>.json
    <corpus>/scenarios/<scenario_id>.json[.gz]

Floats are written with Python's shortest round-trip representation, so a
write/read cycle reproduces every 64-bit value bit for bit.
"""

from __future__ import annotations

import gzip
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import SPLITS, AgentTrack, Polyline, RoadMap, Scenario, validate_scenario
from .errors import NoiseSimError
from .seeding import derive_rng

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"


@dataclass
class ManifestEntry:
    scenario_id: str
    file: str
    split: str
    provenance: str
    map_id: str


@dataclass
class CorpusManifest:
    schema_version: int = SCHEMA_VERSION
    maps: list[str] = field(default_factory=list)
    scenarios: list[ManifestEntry] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "maps": list(self.maps),
            "scenarios": [vars(e) for e in self.scenarios],
            "counts": dict(self.counts),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CorpusManifest":
        return cls(
            schema_version=int(doc["schema_version"]),
            maps=list(doc.get("maps", [])),
            scenarios=[ManifestEntry(**e) for e in doc.get("scenarios", [])],
            counts={k: int(v) for k, v in doc.get("counts", {}).items()},
        )

    def ids(self, split: str | None = None) -> list[str]:
        return [e.scenario_id for e in self.scenarios if split is None or e.split == split]


def scenario_to_json(scenario: Scenario) -> dict:
    tracks = []
    for t in scenario.tracks:
        states = [[float(s[0]), float(s[1]), float(s[2]), float(s[3]), bool(s[4] > 0.5)] for s in t.states]
        tracks.append({"agent_id": t.agent_id, "length": t.length, "width": t.width, "states": states})
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario_id": scenario.scenario_id,
        "map_id": scenario.map_id,
        "split": scenario.split,
        "provenance": scenario.provenance,
        "tracks": tracks,
    }


def scenario_from_json(doc: dict) -> Scenario:
    tracks = []
    for t in doc["tracks"]:
        states = np.array([[s[0], s[1], s[2], s[3], 1.0 if s[4] else 0.0] for s in t["states"]], dtype=float)
        tracks.append(AgentTrack(t["agent_id"], t["length"], t["width"], states.reshape(-1, 5)))
    return Scenario(doc["scenario_id"], tuple(tracks), doc["map_id"], doc["split"], doc["provenance"])


def map_to_json(rmap: RoadMap) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "map_id": rmap.map_id,
        "nominal_lane_width": rmap.nominal_lane_width,
        "polylines": [{"kind": p.kind, "points": p.points.tolist()} for p in rmap.polylines],
    }


def map_from_json(doc: dict) -> RoadMap:
    polylines = tuple(Polyline(p["kind"], np.asarray(p["points"], dtype=float)) for p in doc["polylines"])
    return RoadMap(doc["map_id"], polylines, float(doc["nominal_lane_width"]))


def dumps(doc) -> bytes:
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


def write_json(path: Path, doc) -> None:
    data = dumps(doc)
    if path.suffix == ".gz":
        buf = io.BytesIO()
        # mtime=0 keeps the gzip header byte-stable
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
            gz.write(data)
        data = buf.getvalue()
    path.write_bytes(data)


def read_json(path: Path):
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return json.loads(raw.decode("utf-8"))


def write_corpus(
    scenarios: Iterable[Scenario],
    maps: Iterable[RoadMap] | Mapping[str, RoadMap],
    directory,
    compress: bool = False,
) -> CorpusManifest:
    """Validate and write a corpus; nothing is written if any scenario is invalid."""
    scenarios = list(scenarios)
    map_list = list(maps.values()) if isinstance(maps, Mapping) else list(maps)
    by_id = {m.map_id: m for m in map_list}

    problems = []
    seen = set()
    for sc in scenarios:
        if sc.scenario_id in seen:
            problems.append(f"{sc.scenario_id}: duplicate scenario_id")
        seen.add(sc.scenario_id)
        rmap = by_id.get(sc.map_id)
        if rmap is None:
            problems.append(f"{sc.scenario_id}: unknown map {sc.map_id!r}")
            continue
        report = validate_scenario(sc, rmap)
        if not report.ok:
            first = report.violations[0]
            problems.append(f"{sc.scenario_id}: {first.kind} (agent {first.agent_id}, frame {first.frame})")
    if problems:
        raise NoiseSimError("validation-failed", "; ".join(problems[:5]))

    root = Path(directory)
    ext = ".json.gz" if compress else ".json"
    manifest = CorpusManifest()
    try:
        (root / "maps").mkdir(parents=True, exist_ok=True)
        (root / "scenarios").mkdir(parents=True, exist_ok=True)
        for rmap in sorted(map_list, key=lambda m: m.map_id):
            rel = f"maps/{rmap.map_id}.json"
            write_json(root / rel, map_to_json(rmap))
            manifest.maps.append(rel)
        for sc in scenarios:
            rel = f"scenarios/{sc.scenario_id}{ext}"
            write_json(root / rel, scenario_to_json(sc))
            manifest.scenarios.append(ManifestEntry(sc.scenario_id, rel, sc.split, sc.provenance, sc.map_id))
        manifest.counts = {s: sum(e.split == s for e in manifest.scenarios) for s in SPLITS}
        write_json(root / MANIFEST, manifest.to_json())
    except OSError as exc:
        raise NoiseSimError("io", str(exc)) from exc
    return manifest


def load_manifest(directory) -> CorpusManifest:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise NoiseSimError("corrupt-corpus", f"no {MANIFEST} in {directory}")
    doc = read_json(path)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise NoiseSimError("unsupported-schema", f"schema_version={doc.get('schema_version')!r}")
    return CorpusManifest.from_json(doc)


def load_maps(directory, manifest: CorpusManifest | None = None) -> dict[str, RoadMap]:
    root = Path(directory)
    manifest = manifest or load_manifest(directory)
    maps = {}
    for rel in manifest.maps:
        path = root / rel
        if not path.exists():
            raise NoiseSimError("corrupt-corpus", f"missing map file {rel}")
        rmap = map_from_json(read_json(path))
        maps[rmap.map_id] = rmap
    return maps


def read_corpus(directory, split_filter: str | None = None) -> Iterator[tuple[Scenario, RoadMap]]:
    """Yield ``(scenario, map)`` pairs in manifest order, optionally for one split."""
    root = Path(directory)
    manifest = load_manifest(directory)
    maps = load_maps(directory, manifest)
    for entry in manifest.scenarios:
        if split_filter is not None and entry.split != split_filter:
            continue
        path = root / entry.file
        if not path.exists():
            raise NoiseSimError("corrupt-corpus", f"missing scenario file {entry.file}")
        sc = scenario_from_json(read_json(path))
        if sc.map_id not in maps:
            raise NoiseSimError("corrupt-corpus", f"scenario {sc.scenario_id} references unknown map {sc.map_id}")
        yield sc, maps[sc.map_id]


def assign_splits(
    scenario_ids: Sequence[str],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> dict[str, str]:
    """Seeded shuffle of ids into train/val/test with largest-remainder rounding."""
    ids = list(scenario_ids)
    if not ids:
        raise NoiseSimError("empty-corpus", "no scenario ids")
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(ids)
    exact = ratios * n
    counts = np.floor(exact).astype(int)
    remainder = n - counts.sum()
    # ties go to the earlier split
    order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    perm = derive_rng(seed, "assign_splits").permutation(n)
    tags = np.repeat(np.array(SPLITS), counts)
    out = {}
    for rank, idx in enumerate(perm):
        out[ids[idx]] = str(tags[rank])
    return {i: out[i] for i in ids}
