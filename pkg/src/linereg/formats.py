"""On-disk formats: line-set text files, scene and result JSON documents.

Line sets are plain text::

    PLUECKER_LINES v1 2
    PLK 1 0 0 0 0 -1
    SEG 0 0 0 0 2 0

``PLK`` records carry ``vx vy vz mx my mz``; ``SEG`` records carry two
endpoints and are converted on load.  Blank lines and ``#`` comments are
ignored.  Floats are written with 17 significant digits so files round-trip
bit-exactly.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .errors import DegenerateSegment, LineRegError, NonLineInput, ParseError, ZeroDirection
from .plucker import RigidTransform, canonicalize_many, lines_from_endpoints
from .pose import RegistrationResult
from .synth import NoiseConfig, ScenePair

HEADER = "PLUECKER_LINES"
VERSION = "v1"
SCENE_FORMAT = "linereg.scene/1"
RESULT_FORMAT = "linereg.result/1"


def dumps_json(obj, indent: int = 1) -> str:
    """JSON with one key per line and scalar lists kept on one line."""
    return _dump(obj, 0, indent) + "\n"


def _dump(obj, level, indent):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_dump(v, level + 1, indent)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if any(isinstance(v, (dict, list, tuple)) for v in obj) and not _is_pair_list(obj):
            return "[\n" + ",\n".join(pad + _dump(v, level + 1, indent) for v in obj) + "\n" + end + "]"
        if obj and all(isinstance(v, str) for v in obj):
            return "[\n" + ",\n".join(pad + json.dumps(v) for v in obj) + "\n" + end + "]"
        return json.dumps(obj, allow_nan=False)
    return json.dumps(obj, allow_nan=False)


def _is_pair_list(obj) -> bool:
    # short numeric rows such as match index pairs stay compact
    return all(isinstance(v, (list, tuple)) and len(v) <= 3 and all(isinstance(x, (int, float)) for x in v) for v in obj)


def _fmt(x) -> str:
    return "%.17g" % float(x)


def format_lineset(lines) -> list[str]:
    """Header plus one ``PLK`` record per row of ``(n, 6)`` lines."""
    L = np.atleast_2d(np.asarray(lines, dtype=float)).reshape(-1, 6)
    out = [f"{HEADER} {VERSION} {len(L)}"]
    out += ["PLK " + " ".join(_fmt(x) for x in row) for row in L]
    return out


def dumps_lineset(lines) -> str:
    return "\n".join(format_lineset(lines)) + "\n"


def parse_lineset(records, path=None, first_lineno: int = 1) -> np.ndarray:
    """Parse line-set records into canonical ``(n, 6)`` lines.

    ``records`` is an iterable of strings; errors carry ``path`` and the
    1-based line number.
    """
    header = None
    rows = []
    lineno = first_lineno - 1
    for lineno, raw in enumerate(records, start=first_lineno):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        tok = text.split()
        if header is None:
            if len(tok) != 3 or tok[0] != HEADER:
                raise ParseError(f"expected '{HEADER} {VERSION} <count>' header", path, lineno)
            if tok[1] != VERSION:
                raise ParseError(f"unsupported version {tok[1]!r}", path, lineno)
            try:
                header = int(tok[2])
            except ValueError:
                raise ParseError(f"bad line count {tok[2]!r}", path, lineno) from None
            if header < 0:
                raise ParseError("negative line count", path, lineno)
            continue
        kind = tok[0]
        if kind not in ("PLK", "SEG") or len(tok) != 7:
            raise ParseError(f"expected 'PLK' or 'SEG' followed by 6 numbers, got {text!r}", path, lineno)
        try:
            vals = np.array([float(x) for x in tok[1:]])
        except ValueError:
            raise ParseError(f"non-numeric field in {text!r}", path, lineno) from None
        if not np.all(np.isfinite(vals)):
            raise ParseError("non-finite value", path, lineno)
        try:
            if kind == "PLK":
                V, M = canonicalize_many(vals[None, :3], vals[None, 3:])
                rows.append(np.hstack([V, M])[0])
            else:
                rows.append(lines_from_endpoints(vals[None, :3], vals[None, 3:])[0])
        except (ZeroDirection, NonLineInput, DegenerateSegment) as exc:
            raise ParseError(f"{type(exc).__name__}: {exc}", path, lineno) from None
    if header is None:
        raise ParseError("missing header", path, lineno)
    if len(rows) != header:
        raise ParseError(f"header announces {header} lines, found {len(rows)}", path, lineno)
    return np.array(rows, dtype=float).reshape(-1, 6)


def loads_lineset(text: str, path=None) -> np.ndarray:
    return parse_lineset(text.splitlines(), path)


def save_lineset(path, lines) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_lineset(lines))


def load_lineset(path) -> np.ndarray:
    with open(path) as fh:
        return loads_lineset(fh.read(), os.fspath(path))


# scene pairs ---------------------------------------------------------------

def _pose_dict(pose: RigidTransform) -> dict:
    return {"R": [float(x) for x in pose.R.reshape(-1)], "t": [float(x) for x in pose.t]}


def _pose_from(d, path) -> RigidTransform:
    try:
        return RigidTransform(np.array(d["R"], dtype=float).reshape(3, 3), np.array(d["t"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad pose record: {exc}", path) from None


def scene_to_dict(scene: ScenePair) -> dict:
    return {
        "format": SCENE_FORMAT,
        "seed": scene.seed,
        "overlap_ratio": float(scene.overlap_ratio),
        "noise_params": {k: float(v) for k, v in vars(scene.noise_params).items()},
        "gt_pose": _pose_dict(scene.gt_pose),
        "gt_matches": [[int(i), int(j)] for i, j in scene.gt_matches],
        "source": format_lineset(scene.source),
        "target": format_lineset(scene.target),
    }


def dumps_scene(scene: ScenePair) -> str:
    return dumps_json(scene_to_dict(scene))


def _load_json(text: str, path):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None


def loads_scene(text: str, path=None) -> ScenePair:
    d = _load_json(text, path)
    if not isinstance(d, dict) or d.get("format") != SCENE_FORMAT:
        raise ParseError(f"not a {SCENE_FORMAT} document", path, 1)
    try:
        src = parse_lineset(d["source"], f"{path}[source]" if path else "[source]")
        tgt = parse_lineset(d["target"], f"{path}[target]" if path else "[target]")
        matches = np.array(d["gt_matches"], dtype=int).reshape(-1, 2)
        noise = NoiseConfig(**d["noise_params"])
        overlap = float(d["overlap_ratio"])
        seed = d["seed"]
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad scene record: {exc}", path) from None
    if len(matches) and (
        matches.min() < 0 or matches[:, 0].max() >= len(src) or matches[:, 1].max() >= len(tgt)
    ):
        raise ParseError("gt match index out of range", path)
    return ScenePair(src, tgt, _pose_from(d.get("gt_pose", {}), path), matches, seed, noise, overlap)


def save_scene(path, scene: ScenePair) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_scene(scene))


def load_scene(path) -> ScenePair:
    with open(path) as fh:
        return loads_scene(fh.read(), os.fspath(path))


# registration results ------------------------------------------------------

def result_to_dict(result: RegistrationResult, method: str, gt_pose: RigidTransform | None = None) -> dict:
    from .plucker import rotation_error, translation_error

    pose = result.pose
    d = {
        "format": RESULT_FORMAT,
        "method": method,
        "R": [float(x) for x in pose.R.reshape(-1)],
        "t": [float(x) for x in pose.t],
        "quaternion": [float(x) for x in pose.quaternion()],
        "inlier_pairs": [[int(i), int(j)] for i, j in np.asarray(result.inlier_pairs).reshape(-1, 2)],
        "score_sum": float(result.score_sum),
        "hypothesis_count": int(result.hypothesis_count),
    }
    if gt_pose is not None:
        d["rotation_error_deg"] = rotation_error(gt_pose.R, pose.R)
        d["translation_error_m"] = translation_error(gt_pose.t, pose.t)
    return d


def dumps_result(result: RegistrationResult, method: str, gt_pose: RigidTransform | None = None) -> str:
    return dumps_json(result_to_dict(result, method, gt_pose))


def loads_result(text: str, path=None) -> RegistrationResult:
    d = _load_json(text, path)
    if not isinstance(d, dict) or d.get("format") != RESULT_FORMAT:
        raise ParseError(f"not a {RESULT_FORMAT} document", path, 1)
    try:
        return RegistrationResult(
            pose=_pose_from(d, path),
            inlier_pairs=np.array(d["inlier_pairs"], dtype=int).reshape(-1, 2),
            score_sum=float(d["score_sum"]),
            hypothesis_count=int(d["hypothesis_count"]),
        )
    except (KeyError, TypeError, ValueError, LineRegError) as exc:
        raise ParseError(f"bad result record: {exc}", path) from None
