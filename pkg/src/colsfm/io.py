"""JSON file formats: scenes, measurements, recovered cameras, reports.

All matrices are row-major float64 lists; files are UTF-8 with sorted keys so
identical runs produce byte-identical output.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ValidationError
from .geometry import BifocalTensor, CameraModel
from .metrics import EvalReport
from .nview import NViewBifocal
from .synthetic import Scene, TrackSet


def _dump(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def save_scene(scene: Scene, path) -> None:
    doc = {
        "layout": scene.layout,
        "seed": scene.seed,
        "cameras": [
            {
                "K": [float(v) for v in c.intrinsics.ravel()],
                "R": [float(v) for v in c.rotation.ravel()],
                "t": [float(v) for v in c.center],
            }
            for c in scene.cameras
        ],
        "points": [[float(v) for v in p] for p in scene.points],
    }
    _dump(doc, path)


def load_scene(path) -> Scene:
    doc = _load(path)
    try:
        cams = [
            CameraModel(
                np.array(c["K"], dtype=float).reshape(3, 3),
                np.array(c["R"], dtype=float).reshape(3, 3),
                np.array(c["t"], dtype=float),
            )
            for c in doc["cameras"]
        ]
        points = np.array(doc["points"], dtype=float).reshape(-1, 3)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed scene file: {exc}") from exc
    return Scene(cams, points, doc.get("layout", "unknown"), int(doc.get("seed", 0)))


def save_measurements(nview: NViewBifocal, tracks: TrackSet | None, path) -> None:
    doc = {
        "n": nview.n,
        "kind": nview.kind,
        "edges": [
            {"i": i, "j": j, "tensor": [float(v) for v in nview.blocks[(i, j)].matrix.ravel()]}
            for (i, j) in nview.edges()
        ],
        "tracks": [],
    }
    if tracks is not None:
        for obs in tracks.observations:
            views = sorted(obs.keys())
            doc["tracks"].append(
                {
                    "view_ids": views,
                    "points": [[float(v) for v in obs[i]] for i in views],
                }
            )
    _dump(doc, path)


def load_measurements(path):
    doc = _load(path)
    try:
        n = int(doc["n"])
        kind = doc["kind"]
        blocks = {}
        for e in doc["edges"]:
            M = np.array(e["tensor"], dtype=float).reshape(3, 3)
            blocks[(int(e["i"]), int(e["j"]))] = BifocalTensor(M, kind, scale_fixed=True)
        nview = NViewBifocal.assemble(n, blocks, kind=kind, strict=False)
        observations, depths = [], []
        for tr in doc.get("tracks", []):
            obs = {}
            for v, p in zip(tr["view_ids"], tr["points"]):
                obs[int(v)] = np.array(p, dtype=float)
            observations.append(obs)
            depths.append({})
        return nview, TrackSet(observations, depths)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed measurements file: {exc}") from exc


def save_cameras(cameras, frame: str, path) -> None:
    doc = {
        "frame": frame,
        "cameras": [
            {
                "camera_id": i,
                "P": None if P is None else [float(v) for v in np.asarray(P).ravel()],
            }
            for i, P in enumerate(cameras)
        ],
    }
    _dump(doc, path)


def load_cameras(path):
    doc = _load(path)
    cams = []
    for c in doc["cameras"]:
        cams.append(None if c["P"] is None else np.array(c["P"], dtype=float).reshape(3, 4))
    return cams, doc.get("frame", "euclidean")


def save_report(report: EvalReport, path, include_runtime: bool = False) -> None:
    _dump(report.to_dict(include_runtime=include_runtime), path)


def write_convergence_log(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
