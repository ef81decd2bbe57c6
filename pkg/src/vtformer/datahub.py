"""Trajectory ingestion, down-sampling, scene windowing and synthetic scenes."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FEET_TO_METERS = 0.3048
UNITS = ("meters", "pixels")
FORMATS = ("ngsim", "chd", "canonical")
SCENARIOS = ("constant_velocity", "constant_acceleration", "lane_change", "curve", "car_following")
CANONICAL_HEADER = ["scene_id", "vehicle_id", "frame", "x", "y", "unit"]

DEFAULT_COLUMNS = {
    "ngsim": {"vehicle_id": "Vehicle_ID", "frame": "Frame_ID", "x": "Local_X", "y": "Local_Y"},
    "chd": {"vehicle_id": "track_id", "frame": "frame", "x": "center_x", "y": "center_y"},
    "canonical": {"scene_id": "scene_id", "vehicle_id": "vehicle_id", "frame": "frame",
                  "x": "x", "y": "y", "unit": "unit"},
}
LANE_WIDTH = 3.7


class DataError(Exception):
    """Raised for unreadable or inconsistent trajectory data."""


class ParseError(DataError):
    pass


class FormatError(DataError):
    pass


class ConfigError(DataError, ValueError):
    pass


@dataclass(frozen=True, order=True)
class TrackPoint:
    vehicle_id: int
    frame: int
    x: float
    y: float
    scene_id: str = "0"


@dataclass
class SceneWindow:
    """All vehicles co-present for one observation + prediction span.

    ``observed`` is ``(N, T_OH, 2)`` and ``future`` is ``(N, T_PH, 2)``.
    """

    scene_id: str
    t0: int
    unit: str
    rate_hz: int
    vehicle_ids: list[int]
    observed: np.ndarray
    future: np.ndarray

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=np.float64)
        self.future = np.asarray(self.future, dtype=np.float64)
        n = len(self.vehicle_ids)
        if n < 1:
            raise DataError(f"scene {self.scene_id}: a window needs at least one vehicle")
        if self.observed.ndim != 3 or self.observed.shape[0] != n or self.observed.shape[2] != 2:
            raise DataError(f"scene {self.scene_id}: observed shape {self.observed.shape} for {n} vehicles")
        if self.future.ndim != 3 or self.future.shape[0] != n or self.future.shape[2] != 2:
            raise DataError(f"scene {self.scene_id}: future shape {self.future.shape} for {n} vehicles")
        if self.unit not in UNITS:
            raise FormatError(f"unknown unit {self.unit!r}")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicle_ids)

    @property
    def T_OH(self) -> int:
        return self.observed.shape[1]

    @property
    def T_PH(self) -> int:
        return self.future.shape[1]

    @property
    def last_observed(self) -> np.ndarray:
        return self.observed[:, -1, :]


@dataclass
class DatasetConfig:
    source_format: str = "canonical"
    native_rate_hz: int = 5
    target_rate_hz: int = 5
    T_OH: int = 15
    T_PH: int = 25
    stride: int | None = None
    split_fraction: float = 0.8
    seed: int = 0
    columns: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.source_format not in FORMATS:
            raise ConfigError(f"unknown source format {self.source_format!r}; expected one of {FORMATS}")
        if self.target_rate_hz <= 0 or self.native_rate_hz <= 0:
            raise ConfigError("sampling rates must be positive")
        if self.native_rate_hz % self.target_rate_hz:
            raise ConfigError(
                f"native rate {self.native_rate_hz} Hz is not divisible by target rate {self.target_rate_hz} Hz")
        if self.T_OH < 1 or self.T_PH < 1:
            raise ConfigError("T_OH and T_PH must be positive")
        if self.stride is None:
            self.stride = self.T_PH
        if self.stride < 1:
            raise ConfigError("stride must be positive")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie in (0, 1)")

    @property
    def downsample_stride(self) -> int:
        return self.native_rate_hz // self.target_rate_hz

    @property
    def is_canonical(self) -> bool:
        return self.T_OH in (5, 10, 15) and self.T_PH == 25

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_tracks(path, fmt: str = "canonical", columns: dict[str, str] | None = None
                ) -> tuple[list[TrackPoint], str]:
    """Read a trajectory table and return ``(points, unit)``.

    NGSIM coordinates are converted from feet to meters, CHD stays in pixels.
    Points come back sorted by ``(vehicle_id, frame)`` within each scene.
    """
    if fmt not in FORMATS:
        raise FormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    cols = dict(DEFAULT_COLUMNS[fmt])
    cols.update(columns or {})
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")

    points: list[TrackPoint] = []
    seen: set[tuple[str, int, int]] = set()
    unit = {"ngsim": "meters", "chd": "pixels"}.get(fmt)
    scale = FEET_TO_METERS if fmt == "ngsim" else 1.0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, skipinitialspace=True)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        required = [cols[k] for k in ("vehicle_id", "frame", "x", "y")]
        if fmt == "canonical":
            required.append(cols["unit"])
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")
        scene_col = cols.get("scene_id")
        for row in reader:
            line = reader.line_num
            try:
                vid = int(float(row[cols["vehicle_id"]]))
                frame = int(float(row[cols["frame"]]))
                x = float(row[cols["x"]]) * scale
                y = float(row[cols["y"]]) * scale
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{line}: malformed row ({exc})") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ParseError(f"{path}:{line}: non-finite coordinate")
            scene = str(row[scene_col]) if scene_col and scene_col in row else "0"
            if fmt == "canonical":
                row_unit = row[cols["unit"]]
                if row_unit not in UNITS:
                    raise FormatError(f"{path}:{line}: unknown unit {row_unit!r}")
                if unit is None:
                    unit = row_unit
                elif row_unit != unit:
                    raise FormatError(f"{path}:{line}: mixed units {unit!r} and {row_unit!r}")
            key = (scene, vid, frame)
            if key in seen:
                raise ParseError(f"{path}:{line}: duplicate (vehicle_id={vid}, frame={frame})")
            seen.add(key)
            points.append(TrackPoint(vid, frame, x, y, scene))
    if unit is None:
        unit = "meters"
    points.sort(key=_sort_key)
    return points, unit


def _sort_key(p: TrackPoint):
    return (_scene_order(p.scene_id), p.vehicle_id, p.frame)


def _scene_order(scene_id: str):
    # numeric scene ids sort numerically, everything else lexically after them
    try:
        return (0, int(scene_id), "")
    except ValueError:
        return (1, 0, scene_id)


def write_canonical(path, points: Iterable[TrackPoint], unit: str) -> None:
    if unit not in UNITS:
        raise FormatError(f"unknown unit {unit!r}")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_HEADER)
        for p in points:
            w.writerow([p.scene_id, p.vehicle_id, p.frame, repr(float(p.x)), repr(float(p.y)), unit])


# ---------------------------------------------------------------------------
# down-sampling and windowing
# ---------------------------------------------------------------------------

def downsample(tracks: Sequence[TrackPoint], native_rate_hz: int, target_rate_hz: int) -> list[TrackPoint]:
    """Keep every ``native/target``-th frame and renumber frames consecutively.

    The phase is anchored at the first frame of each scene (recording) so that
    vehicles in the same scene stay time-aligned after renumbering.
    """
    if target_rate_hz <= 0 or native_rate_hz % target_rate_hz:
        raise ConfigError(f"cannot downsample {native_rate_hz} Hz to {target_rate_hz} Hz")
    step = native_rate_hz // target_rate_hz
    if step == 1:
        return list(tracks)
    first: dict[str, int] = {}
    for p in tracks:
        first[p.scene_id] = min(first.get(p.scene_id, p.frame), p.frame)
    out = [
        TrackPoint(p.vehicle_id, (p.frame - first[p.scene_id]) // step, p.x, p.y, p.scene_id)
        for p in tracks
        if (p.frame - first[p.scene_id]) % step == 0
    ]
    out.sort(key=_sort_key)
    return out


def window_scenes(tracks: Sequence[TrackPoint], cfg: DatasetConfig, unit: str = "meters") -> list[SceneWindow]:
    """Slide a ``T_OH + T_PH`` window over each scene.

    A vehicle joins a window only if it is present at every step of it.
    """
    span = cfg.T_OH + cfg.T_PH
    by_scene: dict[str, dict[int, dict[int, tuple[float, float]]]] = defaultdict(lambda: defaultdict(dict))
    for p in tracks:
        by_scene[p.scene_id][p.vehicle_id][p.frame] = (p.x, p.y)

    windows: list[SceneWindow] = []
    for scene in sorted(by_scene, key=_scene_order):
        vehicles = by_scene[scene]
        lo = min(min(f) for f in vehicles.values())
        hi = max(max(f) for f in vehicles.values())
        t0 = lo
        while t0 + span - 1 <= hi:
            ids, coords = [], []
            for vid in sorted(vehicles):
                frames = vehicles[vid]
                if all((t0 + k) in frames for k in range(span)):
                    ids.append(vid)
                    coords.append([frames[t0 + k] for k in range(span)])
            if ids:
                arr = np.asarray(coords, dtype=np.float64)
                windows.append(SceneWindow(
                    scene_id=f"{scene}:{t0}", t0=t0, unit=unit, rate_hz=cfg.target_rate_hz,
                    vehicle_ids=ids, observed=arr[:, :cfg.T_OH], future=arr[:, cfg.T_OH:]))
            t0 += cfg.stride
    return windows


def windows_to_tracks(windows: Sequence[SceneWindow]) -> list[TrackPoint]:
    """Flatten windows back into canonical track points (one scene per window)."""
    points = []
    for w in windows:
        full = np.concatenate([w.observed, w.future], axis=1)
        for vid, traj in zip(w.vehicle_ids, full):
            for k, (x, y) in enumerate(traj):
                points.append(TrackPoint(vid, w.t0 + k, float(x), float(y), w.scene_id))
    return points


def split(windows: Sequence[SceneWindow], fraction: float, seed: int
          ) -> tuple[list[SceneWindow], list[SceneWindow]]:
    """Seeded shuffle of whole windows; the train side gets the ceiling."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError("split fraction must lie in (0, 1)")
    n = len(windows)
    n_train = min(n, math.ceil(round(fraction * n, 9)))
    order = np.random.default_rng(seed).permutation(n)
    train = [windows[i] for i in order[:n_train]]
    held = [windows[i] for i in order[n_train:]]
    return train, held


def prepare_windows(path, cfg: DatasetConfig) -> tuple[list[SceneWindow], str]:
    points, unit = load_tracks(path, cfg.source_format, cfg.columns or None)
    points = downsample(points, cfg.native_rate_hz, cfg.target_rate_hz)
    return window_scenes(points, cfg, unit), unit


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def constant_velocity(x0, v, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)[:, None]
    return np.asarray(x0, dtype=np.float64) + np.asarray(v, dtype=np.float64) * t


def constant_acceleration(x0, v0, a, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)[:, None]
    return (np.asarray(x0, dtype=np.float64) + np.asarray(v0, dtype=np.float64) * t
            + 0.5 * np.asarray(a, dtype=np.float64) * t * t)


def lane_change(x0, v, offset: float, t_mid: float, tau: float, t) -> np.ndarray:
    """Constant velocity plus a logistic lateral shift of ``offset``."""
    t = np.asarray(t, dtype=np.float64)
    pos = constant_velocity(x0, v, t)
    pos[:, 1] += offset / (1.0 + np.exp(-(t - t_mid) / tau))
    return pos


def circular_arc(x0, speed: float, radius: float, t) -> np.ndarray:
    """Left-turning arc starting at ``x0`` heading along +x."""
    theta = speed * np.asarray(t, dtype=np.float64) / radius
    x0 = np.asarray(x0, dtype=np.float64)
    return np.stack([x0[0] + radius * np.sin(theta), x0[1] + radius * (1.0 - np.cos(theta))], axis=1)


def simulate_scenes(scenario: str, n_scenes: int, vehicles_per_scene: int, rate_hz: int = 5,
                    seed: int = 0, noise_std: float = 0.0, n_steps: int = 40
                    ) -> tuple[np.ndarray, list[list[dict]]]:
    """Return positions ``(n_scenes, K, n_steps, 2)`` and per-vehicle parameters."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if n_scenes < 1 or vehicles_per_scene < 1 or n_steps < 1:
        raise ConfigError("n_scenes, vehicles_per_scene and n_steps must be positive")
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps) / rate_hz
    duration = t[-1] if n_steps > 1 else 1.0
    out = np.empty((n_scenes, vehicles_per_scene, n_steps, 2))
    meta: list[list[dict]] = []
    for s in range(n_scenes):
        scene_meta = []
        if scenario == "car_following":
            speed = rng.uniform(20.0, 30.0)
            x_lead = rng.uniform(60.0, 100.0)
        for k in range(vehicles_per_scene):
            lane_y = LANE_WIDTH * k
            if scenario == "constant_velocity":
                p = {"x0": [rng.uniform(0.0, 60.0), lane_y], "v": [rng.uniform(20.0, 35.0), 0.0]}
                pos = constant_velocity(p["x0"], p["v"], t)
            elif scenario == "constant_acceleration":
                p = {"x0": [rng.uniform(0.0, 60.0), lane_y], "v0": [rng.uniform(15.0, 30.0), 0.0],
                     "a": [rng.uniform(-1.5, 1.5), 0.0]}
                pos = constant_acceleration(p["x0"], p["v0"], p["a"], t)
            elif scenario == "lane_change":
                p = {"x0": [rng.uniform(0.0, 60.0), lane_y], "v": [rng.uniform(20.0, 30.0), 0.0],
                     "offset": float(rng.choice([-LANE_WIDTH, LANE_WIDTH])),
                     "t_mid": rng.uniform(0.3, 0.7) * duration, "tau": rng.uniform(0.3, 0.8)}
                pos = lane_change(p["x0"], p["v"], p["offset"], p["t_mid"], p["tau"], t)
            elif scenario == "curve":
                p = {"x0": [rng.uniform(0.0, 60.0), lane_y], "speed": rng.uniform(15.0, 25.0),
                     "radius": rng.uniform(150.0, 400.0)}
                pos = circular_arc(p["x0"], p["speed"], p["radius"], t)
            else:
                # followers share the leader's speed, so every gap stays constant and positive
                headway = rng.uniform(1.0, 2.0)
                standstill = rng.uniform(2.0, 5.0)
                gap = standstill + speed * headway + 5.0
                if k > 0:
                    x_lead -= gap
                p = {"x0": [x_lead, 0.0], "v": [speed, 0.0], "gap": gap if k > 0 else 0.0}
                pos = constant_velocity(p["x0"], p["v"], t)
            if noise_std > 0:
                pos = pos + rng.normal(0.0, noise_std, size=pos.shape)
            out[s, k] = pos
            scene_meta.append({key: (float(v) if np.isscalar(v) else [float(c) for c in v])
                               for key, v in p.items()})
        meta.append(scene_meta)
    return out, meta


def generate_synthetic(scenario: str, n_scenes: int, vehicles_per_scene: int, rate_hz: int = 5,
                       seed: int = 0, noise_std: float = 0.0, T_OH: int = 15, T_PH: int = 25
                       ) -> list[SceneWindow]:
    """Synthetic highway scenes, one full window per scene (units: meters)."""
    pos, _ = simulate_scenes(scenario, n_scenes, vehicles_per_scene, rate_hz, seed, noise_std, T_OH + T_PH)
    ids = list(range(vehicles_per_scene))
    return [
        SceneWindow(scene_id=str(s), t0=0, unit="meters", rate_hz=rate_hz, vehicle_ids=ids,
                    observed=pos[s, :, :T_OH], future=pos[s, :, T_OH:])
        for s in range(n_scenes)
    ]


# ---------------------------------------------------------------------------
# prepared dataset directories
# ---------------------------------------------------------------------------

def write_prepared(out_dir, points: Sequence[TrackPoint], unit: str, windows: Sequence[SceneWindow],
                   train: Sequence[SceneWindow], held: Sequence[SceneWindow], cfg: DatasetConfig,
                   source: str | None = None) -> dict:
    """Write ``tracks.csv``, ``windows.json`` and ``manifest.json``; return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_canonical(out / "tracks.csv", points, unit)
    index = [{"scene_id": w.scene_id, "t0": w.t0, "vehicle_ids": list(w.vehicle_ids)} for w in windows]
    manifest = {
        "source": source,
        "source_format": cfg.source_format,
        "unit": unit,
        "native_rate_hz": cfg.native_rate_hz,
        "target_rate_hz": cfg.target_rate_hz,
        "downsample_stride": cfg.downsample_stride,
        "T_OH": cfg.T_OH,
        "T_PH": cfg.T_PH,
        "window_stride": cfg.stride,
        "canonical_horizons": cfg.is_canonical,
        "split_fraction": cfg.split_fraction,
        "seed": cfg.seed,
        "n_windows": len(windows),
        "train": [w.scene_id for w in train],
        "eval": [w.scene_id for w in held],
    }
    (out / "windows.json").write_text(json.dumps(index, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_prepared(out_dir) -> tuple[dict, list[SceneWindow], list[SceneWindow]]:
    """Read a prepared directory back as ``(manifest, train, eval)``."""
    out = Path(out_dir)
    try:
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{out}: no manifest.json") from None
    points, unit = load_tracks(out / "tracks.csv", "canonical")
    cfg = DatasetConfig(native_rate_hz=manifest["target_rate_hz"], target_rate_hz=manifest["target_rate_hz"],
                        T_OH=manifest["T_OH"], T_PH=manifest["T_PH"], stride=manifest["window_stride"])
    by_id = {w.scene_id: w for w in window_scenes(points, cfg, unit)}
    try:
        train = [by_id[i] for i in manifest["train"]]
        held = [by_id[i] for i in manifest["eval"]]
    except KeyError as exc:
        raise DataError(f"{out}: manifest names unknown window {exc}") from None
    return manifest, train, held


def write_synthetic(path, scenario: str, n_scenes: int, vehicles_per_scene: int, rate_hz: int = 5,
                    seed: int = 0, noise_std: float = 0.0, n_steps: int = 40) -> dict:
    """Canonical CSV of synthetic scenes plus a JSON sidecar with the parameters."""
    pos, meta = simulate_scenes(scenario, n_scenes, vehicles_per_scene, rate_hz, seed, noise_std, n_steps)
    points = [
        TrackPoint(k, f, float(pos[s, k, f, 0]), float(pos[s, k, f, 1]), str(s))
        for s in range(n_scenes) for k in range(vehicles_per_scene) for f in range(n_steps)
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_canonical(path, points, "meters")
    sidecar = {
        "scenario": scenario, "n_scenes": n_scenes, "vehicles_per_scene": vehicles_per_scene,
        "rate_hz": rate_hz, "seed": seed, "noise_std": noise_std, "n_steps": n_steps, "unit": "meters",
        "vehicles": meta,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return sidecar
