"""Point cloud files, run configuration and JSON reports.

Supported point formats are ASCII PLY (the ``x``, ``y``, ``z`` properties of
the ``vertex`` element; everything else is skipped) and plain XYZ text
(three numbers per line, ``#`` starts a comment). Binary PLY is rejected.

A PLY written by :func:`save_ply` may carry a ground-truth motion in a
header comment of the form ``comment cemreg_truth e1 e2 e3 t1 t2 t3``
(radians, then translation); :func:`read_truth` recovers it.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from cemreg.cem import CemConfig
from cemreg.se3 import PointCloud, RigidMotion, euler_to_matrix
from cemreg.solver import IcpConfig

TRUTH_TAG = "cemreg_truth"
PLY_SCALARS = {"char", "uchar", "short", "ushort", "int", "uint", "float", "double",
               "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64"}
MATRIX_TOL = 1e-9


class CloudParseError(ValueError):
    """A point file could not be read; ``line`` is 1-based (0 when not tied to a line)."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line else self.path
        super().__init__(f"{where}: {message}")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- point files


def _format_for(path: Path, fmt: Optional[str]) -> str:
    if fmt is not None:
        if fmt not in ("ply_ascii", "xyz"):
            raise ValueError(f"unknown point format {fmt!r}; expected 'ply_ascii' or 'xyz'")
        return fmt
    return "ply_ascii" if path.suffix.lower() == ".ply" else "xyz"


def load_cloud(path: Union[str, Path], format: Optional[str] = None) -> PointCloud:
    """Read a point cloud, keeping the file's point order.

    ``format`` is ``"ply_ascii"`` or ``"xyz"``; by default it follows the
    file suffix (``.ply`` means PLY, anything else XYZ).

    Raises
    ------
    CloudParseError
        On a malformed header, a non-numeric token, or a file without points.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8", errors="replace")
    lines = text.splitlines()
    if _format_for(path, format) == "ply_ascii":
        pts, _ = _parse_ply(path, lines)
    else:
        pts = _parse_xyz(path, lines)
    return PointCloud(pts)


def _parse_xyz(path: Path, lines: list[str]) -> np.ndarray:
    rows = []
    for no, raw in enumerate(lines, 1):
        body = raw.split("#", 1)[0].split()
        if not body:
            continue
        if len(body) < 3:
            raise CloudParseError(path, no, f"expected 3 coordinates, found {len(body)}")
        rows.append([_number(path, no, tok) for tok in body[:3]])
    if not rows:
        raise CloudParseError(path, max(1, len(lines)), "no points found")
    return np.array(rows, dtype=np.float64)


def _number(path: Path, no: int, tok: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise CloudParseError(path, no, f"non-numeric token {tok!r}") from None
    if not math.isfinite(v):
        raise CloudParseError(path, no, f"non-finite coordinate {tok!r}")
    return v


def _parse_ply(path: Path, lines: list[str]) -> tuple[np.ndarray, list[str]]:
    if not lines or lines[0].strip() != "ply":
        raise CloudParseError(path, 1, "missing 'ply' magic line")
    elements: list[list] = []  # [name, count, [property names]]
    comments: list[str] = []
    fmt_seen = False
    end = None
    for no in range(2, len(lines) + 1):
        words = lines[no - 1].split()
        if not words:
            continue
        key = words[0]
        if key == "format":
            if len(words) < 3:
                raise CloudParseError(path, no, "malformed format line")
            if words[1] != "ascii":
                raise CloudParseError(path, no, f"unsupported PLY format {words[1]!r}; only ascii is read")
            fmt_seen = True
        elif key in ("comment", "obj_info"):
            comments.append(lines[no - 1].strip()[len(key):].strip())
        elif key == "element":
            if len(words) != 3:
                raise CloudParseError(path, no, "malformed element line")
            try:
                count = int(words[2])
            except ValueError:
                raise CloudParseError(path, no, f"non-integer element count {words[2]!r}") from None
            if count < 0:
                raise CloudParseError(path, no, "negative element count")
            elements.append([words[1], count, []])
        elif key == "property":
            if not elements:
                raise CloudParseError(path, no, "property before any element")
            if len(words) == 3 and words[1] in PLY_SCALARS:
                elements[-1][2].append(words[2])
            elif len(words) == 5 and words[1] == "list":
                elements[-1][2].append(None)
            else:
                raise CloudParseError(path, no, "malformed property line")
        elif key == "end_header":
            end = no
            break
        else:
            raise CloudParseError(path, no, f"unexpected header keyword {key!r}")
    if end is None:
        raise CloudParseError(path, len(lines), "header has no end_header line")
    if not fmt_seen:
        raise CloudParseError(path, end, "header has no format line")
    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise CloudParseError(path, end, "no vertex element")
    props = vertex[2]
    for axis in ("x", "y", "z"):
        if axis not in props:
            raise CloudParseError(path, end, f"vertex element has no '{axis}' property")
    if vertex[1] == 0:
        raise CloudParseError(path, end, "vertex element has zero vertices")
    if None in props:
        raise CloudParseError(path, end, "list properties on vertices are not supported")
    cols = [props.index(a) for a in ("x", "y", "z")]

    # body lines, skipping blanks; elements are stored in header order
    body = [(no, lines[no - 1].split()) for no in range(end + 1, len(lines) + 1)]
    body = [(no, w) for no, w in body if w]
    pos = 0
    for name, count, eprops in elements:
        if name != "vertex":
            pos += count
            continue
        if pos + count > len(body):
            raise CloudParseError(path, len(lines), f"expected {count} vertices, file ends after {max(0, len(body) - pos)}")
        pts = np.empty((count, 3))
        for r in range(count):
            no, words = body[pos + r]
            if len(words) != len(eprops):
                raise CloudParseError(path, no, f"expected {len(eprops)} values, found {len(words)}")
            for k, c in enumerate(cols):
                pts[r, k] = _number(path, no, words[c])
            for w in words:
                try:
                    float(w)
                except ValueError:
                    raise CloudParseError(path, no, f"non-numeric token {w!r}") from None
        return pts, comments
    raise AssertionError("unreachable")


def read_truth(path: Union[str, Path]) -> Optional[RigidMotion]:
    """The ground-truth motion embedded in a PLY header, or None."""
    path = Path(path)
    if path.suffix.lower() != ".ply":
        return None
    _, comments = _parse_ply(path, path.read_text(encoding="utf-8", errors="replace").splitlines())
    for c in comments:
        words = c.split()
        if words and words[0] == TRUTH_TAG:
            if len(words) != 7:
                raise CloudParseError(path, 0, "truth comment needs 6 numbers")
            return RigidMotion.from_vector([float(w) for w in words[1:]])
    return None


def save_ply(cloud, path: Union[str, Path], truth: Optional[RigidMotion] = None) -> None:
    """Write an ASCII PLY with float ``x y z`` vertices, optionally tagging the ground truth."""
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64).reshape(-1, 3)
    head = ["ply", "format ascii 1.0"]
    if truth is not None:
        head.append("comment " + TRUTH_TAG + " " + " ".join(repr(float(v)) for v in truth.as_vector()))
    head += [f"element vertex {len(pts)}", "property float x", "property float y", "property float z", "end_header"]
    body = [" ".join(repr(float(v)) for v in p) for p in pts]
    Path(path).write_text("\n".join(head + body) + "\n", encoding="utf-8")


def save_xyz(cloud, path: Union[str, Path]) -> None:
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64).reshape(-1, 3)
    Path(path).write_text("".join(" ".join(repr(float(v)) for v in p) + "\n" for p in pts), encoding="utf-8")


# ---------------------------------------------------------------- configuration


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CemSection(_Section):
    iterations: int = Field(15, ge=1)
    population: int = Field(1000, ge=1)
    future_iterations: int = Field(3, ge=0)
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    epsilon: float = Field(0.1, gt=0.0)
    elite_count: Optional[int] = Field(None, ge=1)
    update_mode: Literal["sparsemax", "hard_topk"] = "sparsemax"
    beta: Union[Literal["auto"], float] = "auto"
    sigma_floor: float = Field(1e-4, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _cross(self) -> CemSection:
        if self.future_iterations > self.iterations:
            raise ValueError("future_iterations must not exceed iterations")
        if self.elite_count is not None and self.elite_count > self.population:
            raise ValueError("elite_count must not exceed population")
        if self.beta != "auto" and not self.beta > 0:
            raise ValueError("beta must be positive or 'auto'")
        return self


class IcpSection(_Section):
    max_iterations: int = Field(10, ge=1)
    mse_tolerance: float = Field(1e-9, ge=0.0)


class PriorSection(_Section):
    kind: Literal["fixed_gaussian", "correspondence_svd"] = "correspondence_svd"
    mu0: tuple[float, float, float, float, float, float] = (0.0,) * 6
    sigma0: tuple[float, float, float, float, float, float] = (1.0,) * 6
    sigma_scale: tuple[float, float] = (1.5, 1.5)
    neighbors: int = Field(16, ge=3)
    sharpness: float = Field(200.0, gt=0.0)

    @model_validator(mode="after")
    def _nonneg(self) -> PriorSection:
        if min(self.sigma0) < 0:
            raise ValueError("sigma0 must be non-negative")
        if min(self.sigma_scale) <= 0:
            raise ValueError("sigma_scale must be positive")
        return self


class CaseSection(_Section):
    """Synthetic case generation for ``bench``; ``keep_fraction`` and the noise
    apply only when ``--partial`` / ``--noise`` are given."""

    num_points: int = Field(1024, ge=3)
    rotation_range_deg: tuple[float, float] = (0.0, 45.0)
    translation_range: tuple[float, float] = (-0.5, 0.5)
    keep_fraction: float = Field(0.75, gt=0.0, le=1.0)
    noise_sigma: float = Field(0.01, ge=0.0)
    noise_clip: float = Field(0.05, ge=0.0)
    shape: str = "random_blob"


class PathsSection(_Section):
    source: Optional[str] = None
    target: Optional[str] = None
    out: Optional[str] = None


class RunConfig(_Section):
    """Everything a run needs; absent keys take their defaults."""

    cem: CemSection = CemSection()
    icp: IcpSection = IcpSection()
    prior: PriorSection = PriorSection()
    case: CaseSection = CaseSection()
    paths: PathsSection = PathsSection()
    normalize: bool = True
    final_icp: bool = False
    robust_mu: float = Field(0.01, gt=0.0)

    def cem_config(self) -> CemConfig:
        c = self.cem
        return CemConfig(
            iterations=c.iterations,
            population=c.population,
            future_iterations=c.future_iterations,
            alpha=c.alpha,
            epsilon=c.epsilon,
            elite_count=c.elite_count,
            update_mode=c.update_mode,
            beta=c.beta,
            sigma_floor=c.sigma_floor,
            seed=c.seed,
            icp=self.icp_config(),
        )

    def icp_config(self) -> IcpConfig:
        return IcpConfig(self.icp.max_iterations, self.icp.mse_tolerance)

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def _describe(err: dict) -> str:
    loc = ".".join(str(p) for p in err["loc"]) or "<root>"
    if err["type"] == "extra_forbidden":
        return f"unknown key '{loc}'"
    msg = err["msg"]
    if msg.startswith("Value error, "):
        msg = msg[len("Value error, "):]
    return f"{loc}: {msg}"


def parse_config(data: Any) -> RunConfig:
    """Validate a decoded JSON object into a :class:`RunConfig`.

    Raises
    ------
    ConfigError
        Listing every problem with its dotted key path.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("invalid config: " + "; ".join(_describe(e) for e in exc.errors())) from None


def load_config(path: Union[str, Path, None]) -> RunConfig:
    """Read a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(data)


# ---------------------------------------------------------------- reports


class MotionRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    euler_rad: list[float]
    euler_deg: list[float]
    translation: list[float]
    matrix: list[float]

    @classmethod
    def of(cls, m: RigidMotion) -> MotionRecord:
        return cls(
            euler_rad=m.euler.tolist(),
            euler_deg=np.degrees(m.euler).tolist(),
            translation=m.translation.tolist(),
            matrix=m.rotation.reshape(-1).tolist(),
        )

    @model_validator(mode="after")
    def _consistent(self) -> MotionRecord:
        if len(self.euler_rad) != 3 or len(self.euler_deg) != 3 or len(self.translation) != 3 or len(self.matrix) != 9:
            raise ValueError("motion needs 3 Euler angles, 3 translations and 9 matrix entries")
        R = euler_to_matrix(self.euler_rad)
        if np.max(np.abs(R.reshape(-1) - np.array(self.matrix))) > MATRIX_TOL:
            raise ValueError("matrix does not match the Euler angles")
        if np.max(np.abs(np.radians(self.euler_deg) - np.array(self.euler_rad))) > MATRIX_TOL:
            raise ValueError("euler_deg does not match euler_rad")
        return self

    def motion(self) -> RigidMotion:
        return RigidMotion(self.euler_rad, self.translation)


class RegistrationReport(BaseModel):
    """Outcome of one registration (``kind`` is ``"register"`` or ``"icp"``).

    Distances and the motion are in input units; ``alignment`` is measured
    after applying ``motion`` to the source.
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["register", "icp"]
    version: str
    inputs: dict
    motion: MotionRecord
    alignment: dict
    normalization: Optional[dict] = None
    prior: Optional[dict] = None
    trace: Optional[dict] = None
    truth_error: Optional[dict] = None
    timings: dict
    config: dict
    seeds: dict


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, two-space indent, shortest round-trip floats."""
    if isinstance(obj, BaseModel):
        obj = obj.model_dump(mode="json")
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def save_report(report: Any, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(report), encoding="utf-8")


def load_report(path: Union[str, Path]) -> Union[RegistrationReport, dict]:
    """Re-read a report; registration reports are validated, bench reports checked for shape."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("kind") in ("register", "icp"):
        return RegistrationReport.model_validate(data)
    if data.get("kind") == "bench":
        for key in ("cases", "aggregate", "config", "seeds", "version"):
            if key not in data:
                raise ValueError(f"bench report lacks '{key}'")
        from cemreg.bench import CaseRecord

        TypeAdapter(list[CaseRecord]).validate_python(data["cases"])
        return data
    raise ValueError(f"{path}: unknown report kind {data.get('kind')!r}")
