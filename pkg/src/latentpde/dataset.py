"""Dataset generation, on-disk layout, normalization, and image export.

A dataset is a directory holding ``manifest.json`` plus one binary blob
per trajectory (``traj_00000.bin``, ...).  Blobs are raw little-endian
float64, frames first, row-major within a frame, no header; the manifest
records every shape needed to read them back and the full generation
config needed to regenerate them bit for bit.  All writes go through a
temp file and an atomic rename so readers never see partial data.
"""

from dataclasses import dataclass, field, asdict
import datetime
import json
import os

import numpy as np

from .errors import DataFormatError, ParameterError
from .lattice_ops import GridSpec, build_modified_laplacian, build_wave_generator
from .random_fields import GrfParams, build_conductivity, sample_matern_field
from .solvers import Trajectory, simulate_kse1d, simulate_kse2d, simulate_linear
from .tokenizer import tokenize_trajectory

FORMAT_VERSION = 1


@dataclass
class DatasetManifest:
    """Everything needed to read a dataset back and to regenerate it."""

    equation: str
    kind: str                  # "fields" or "tokens"
    grid_size: int
    trajectories: int
    frames: int                # stored frames per trajectory
    dt: float                  # time between stored frames
    skip: int
    burn_in: int
    frame_shape: list          # e.g. [32, 32], [2, 32, 32], [200] or [64] (tokens)
    init_seeds: list
    config: dict               # fully-resolved generation config
    patch: int | None = None   # set on token datasets
    normalization: dict | None = None
    created: str = ""
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"manifest is not valid JSON: {exc}") from exc
        try:
            if raw.get("format_version") != FORMAT_VERSION:
                raise DataFormatError(
                    f"unsupported manifest version {raw.get('format_version')}")
            return cls(**raw)
        except TypeError as exc:
            raise DataFormatError(f"manifest fields do not match schema: {exc}") from exc


def _atomic_write(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _blob_name(index: int) -> str:
    return f"traj_{index:05d}.bin"


def write_dataset(frame_arrays, manifest: DatasetManifest, out_dir: str) -> None:
    """Write blobs plus manifest; every file lands atomically."""
    frame_arrays = list(frame_arrays)
    if len(frame_arrays) != manifest.trajectories:
        raise ParameterError(
            f"{len(frame_arrays)} trajectories but manifest says {manifest.trajectories}")
    os.makedirs(out_dir, exist_ok=True)
    shape = tuple(manifest.frame_shape)
    for idx, frames in enumerate(frame_arrays):
        frames = np.asarray(frames, dtype=float)
        if frames.shape != (manifest.frames,) + shape:
            raise ParameterError(
                f"trajectory {idx} shape {frames.shape} != {(manifest.frames,) + shape}")
        _atomic_write(os.path.join(out_dir, _blob_name(idx)), frames.astype("<f8").tobytes())
    _atomic_write(os.path.join(out_dir, "manifest.json"), manifest.to_json().encode())


def load_manifest(data_dir: str) -> DatasetManifest:
    path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(path):
        raise DataFormatError(f"{data_dir}: no manifest.json")
    with open(path, "rb") as fh:
        return DatasetManifest.from_json(fh.read().decode())


def load_trajectory(data_dir: str, manifest: DatasetManifest, index: int) -> np.ndarray:
    """Read one blob, validating its size against the manifest."""
    if not 0 <= index < manifest.trajectories:
        raise ParameterError(f"trajectory index {index} outside 0..{manifest.trajectories - 1}")
    path = os.path.join(data_dir, _blob_name(index))
    if not os.path.exists(path):
        raise DataFormatError(f"missing blob {path}")
    shape = (manifest.frames,) + tuple(manifest.frame_shape)
    expected = int(np.prod(shape)) * 8
    actual = os.path.getsize(path)
    if actual != expected:
        raise DataFormatError(
            f"{path}: {actual} bytes but manifest implies {expected} "
            f"({manifest.frames} frames of shape {tuple(manifest.frame_shape)})")
    return np.fromfile(path, dtype="<f8").reshape(shape)


def load_all(data_dir: str):
    manifest = load_manifest(data_dir)
    frames = [load_trajectory(data_dir, manifest, i) for i in range(manifest.trajectories)]
    return frames, manifest


# ---------------------------------------------------------------------------
# normalization

def compute_normalization(frame_arrays) -> dict:
    """Global min/max over the given (training) trajectories."""
    lo = min(float(np.min(fr)) for fr in frame_arrays)
    hi = max(float(np.max(fr)) for fr in frame_arrays)
    return {"lo": lo, "hi": hi, "constant": lo == hi}


def apply_normalization(x: np.ndarray, stats: dict) -> np.ndarray:
    """Affine map of [lo, hi] onto [-1, 1]; constant data goes to 0."""
    x = np.asarray(x, dtype=float)
    if stats["constant"]:
        return x - stats["lo"]
    return 2.0 * (x - stats["lo"]) / (stats["hi"] - stats["lo"]) - 1.0


def invert_normalization(y: np.ndarray, stats: dict) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if stats["constant"]:
        return y + stats["lo"]
    return (y + 1.0) * (stats["hi"] - stats["lo"]) / 2.0 + stats["lo"]


# ---------------------------------------------------------------------------
# image export

def export_frame_image(frame: np.ndarray, path: str, vmin: float = -1.0,
                       vmax: float = 1.0, colormap: str = "gray") -> None:
    """Write one field as a binary PGM (gray) or PPM (diverging colormap).

    Values map linearly from [vmin, vmax] to 0..255 (clipped, rounded
    half to even), so a zero field on the normalized [-1, 1] range lands
    on mid-gray 128.  The diverging map runs blue -> white -> red.
    """
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise ParameterError(f"image export needs a 2-d field, got shape {frame.shape}")
    if vmax <= vmin:
        raise ParameterError(f"vmax {vmax} must exceed vmin {vmin}")
    t = np.clip((frame - vmin) / (vmax - vmin), 0.0, 1.0)
    h, w = frame.shape
    if colormap == "gray":
        payload = np.rint(t * 255).astype(np.uint8)
        data = b"P5\n%d %d\n255\n" % (w, h) + payload.tobytes()
    elif colormap == "diverging":
        r = np.rint(np.clip(2 * t, 0, 1) * 255).astype(np.uint8)
        g = np.rint((1 - np.abs(2 * t - 1)) * 255).astype(np.uint8)
        b = np.rint(np.clip(2 - 2 * t, 0, 1) * 255).astype(np.uint8)
        payload = np.stack([r, g, b], axis=-1)
        data = b"P6\n%d %d\n255\n" % (w, h) + payload.tobytes()
    else:
        raise ParameterError(f"colormap must be 'gray' or 'diverging', got {colormap!r}")
    _atomic_write(path, data)


# ---------------------------------------------------------------------------
# generation

PRESETS = {
    # desk-scale linear lattice runs; coefficient scale keeps forward Euler
    # inside its stability region (dt * 8 * max(a) < 2)
    "heat32": {
        "equation": "heat", "grid_size": 32, "dx": 1.0, "dt": 0.4,
        "trajectories": 100, "frames": 220, "skip": 1, "burn_in": 0,
        "init": {"sigma": 10.0, "m": 0.1, "nu": 1.0}, "init_seed": 1000,
        "conductivity": {"sigma": 0.5, "m": 0.1, "nu": 1.0, "seed": 77, "scale": 0.2},
        "patch": 4,
    },
    "heat32-const": {
        "equation": "heat", "grid_size": 32, "dx": 1.0, "dt": 0.4,
        "trajectories": 100, "frames": 220, "skip": 1, "burn_in": 0,
        "init": {"sigma": 10.0, "m": 0.1, "nu": 1.0}, "init_seed": 1000,
        "conductivity": {"constant": 0.2},
        "patch": 4,
    },
    "wave32": {
        "equation": "wave", "grid_size": 32, "dx": 1.0, "dt": 0.05,
        "trajectories": 75, "frames": 400, "skip": 1, "burn_in": 0,
        "init": {"sigma": 10.0, "m": 0.1, "nu": 1.0}, "init_seed": 2000,
        "conductivity": {"sigma": 0.5, "m": 0.1, "nu": 1.0, "seed": 77, "scale": 0.2},
        "patch": 4,
    },
    "kse2d64": {
        "equation": "kse2d", "grid_size": 64, "domain_length": 64.0,
        "dt": 0.01, "trajectories": 33, "frames": 400, "skip": 10, "burn_in": 100,
        "init": {"sigma": 1.0, "m": 0.5, "nu": 2.0}, "init_seed": 3000,
        "patch": 4,
    },
    # line trajectory for the local-rank diagnostic
    "kse1d-diag": {
        "equation": "kse1d", "sites": 200, "domain_length": 80.0,
        "dt": 0.01, "steps": 10000, "trajectories": 1,
        "init": {"kind": "sine", "waves": 7}, "init_seed": 0,
        "patch": 5,
    },
}


def _conductivity_field(config: dict) -> np.ndarray:
    n = config["grid_size"]
    cond = config["conductivity"]
    if "constant" in cond:
        value = float(cond["constant"])
        if value <= 0:
            raise ParameterError(f"constant conductivity must be > 0, got {value}")
        return np.full((n, n), value)
    params = GrfParams(grid_size=n, sigma=cond["sigma"], m=cond["m"],
                       nu=cond["nu"], seed=cond["seed"])
    return cond.get("scale", 1.0) * build_conductivity(params)


def generate_trajectory(config: dict, index: int) -> Trajectory:
    """Simulate trajectory ``index`` of a dataset config (self-seeded)."""
    equation = config["equation"]
    seed = config["init_seed"] + index
    if equation in ("heat", "wave"):
        n = config["grid_size"]
        grid = GridSpec(n=n, dx=config.get("dx", 1.0))
        cond = _conductivity_field(config)
        init = config["init"]
        u0 = sample_matern_field(GrfParams(grid_size=n, sigma=init["sigma"],
                                           m=init["m"], nu=init["nu"], seed=seed))
        frames, skip = config["frames"], config.get("skip", 1)
        steps = (frames - 1) * skip + 1
        if equation == "heat":
            op = build_modified_laplacian(cond, grid)
            x0 = u0
        else:
            op = build_wave_generator(cond, grid)
            x0 = np.stack([u0, np.zeros_like(u0)])  # released from rest
        return simulate_linear(op, x0, config["dt"], steps, skip=skip,
                               equation=equation, seed=seed)
    if equation == "kse2d":
        n = config["grid_size"]
        init = config["init"]
        u0 = sample_matern_field(GrfParams(grid_size=n, sigma=init["sigma"],
                                           m=init["m"], nu=init["nu"], seed=seed))
        skip, burn = config.get("skip", 1), config.get("burn_in", 0)
        steps = (config["frames"] + burn) * skip
        return simulate_kse2d(u0, config["domain_length"], config["dt"], steps,
                              skip=skip, burn_in=burn, seed=seed)
    if equation == "kse1d":
        sites = config["sites"]
        length = config["domain_length"]
        init = config["init"]
        if init.get("kind", "sine") != "sine":
            raise ParameterError(f"unsupported line init {init!r}")
        x = np.arange(sites) * length / sites
        u0 = np.sin(init["waves"] * np.pi * x / length)
        return simulate_kse1d(u0, length, config["dt"], config["steps"], seed=seed)
    raise ParameterError(f"unknown equation {equation!r}")


def generate_dataset(config: dict, workers: int = 1):
    """All trajectories of a config; returns (frame arrays, manifest)."""
    count = config["trajectories"]
    if count < 1:
        raise ParameterError(f"trajectories must be >= 1, got {count}")
    indices = list(range(count))
    if workers > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            trajs = pool.starmap(generate_trajectory, [(config, i) for i in indices])
    else:
        trajs = [generate_trajectory(config, i) for i in indices]
    first = trajs[0]
    manifest = DatasetManifest(
        equation=config["equation"],
        kind="fields",
        grid_size=config.get("grid_size", config.get("sites")),
        trajectories=count,
        frames=first.n_frames,
        dt=first.dt,
        skip=first.skip,
        burn_in=first.burn_in,
        frame_shape=list(first.frames.shape[1:]),
        init_seeds=[config["init_seed"] + i for i in indices],
        config=dict(config),
        patch=None,
        created=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )
    return [t.frames for t in trajs], manifest


def tokenize_dataset(data_dir: str, patch: int, out_dir: str) -> DatasetManifest:
    """Patch-average every trajectory of a field dataset into a token one."""
    frames, manifest = load_all(data_dir)
    tokens = [tokenize_trajectory(fr, patch) for fr in frames]
    token_manifest = DatasetManifest(
        equation=manifest.equation,
        kind="tokens",
        grid_size=manifest.grid_size,
        trajectories=manifest.trajectories,
        frames=manifest.frames,
        dt=manifest.dt,
        skip=manifest.skip,
        burn_in=manifest.burn_in,
        frame_shape=[tokens[0].shape[1]],
        init_seeds=manifest.init_seeds,
        config=manifest.config,
        patch=patch,
        created=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        extra={"source": os.path.abspath(data_dir)},
    )
    write_dataset(tokens, token_manifest, out_dir)
    return token_manifest


def write_csv(path: str, header: list, rows, comment: str = "") -> None:
    """CSV with one optional leading '#' provenance line."""
    import csv
    import io

    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    _atomic_write(path, buf.getvalue().encode())


def read_csv(path: str):
    """Inverse of :func:`write_csv`: returns (header, list of string rows)."""
    import csv

    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataFormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]
