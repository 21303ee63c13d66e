"""Config files, energy logs, binary snapshots, CSV exports and run manifests.

Every writer goes through :func:`atomic_write`, so a reader never sees a
partially written file.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .energy import EnergyReport
from .experiments import PRESET_FACTORIES, ExperimentConfig
from .fields import NEUMANN, ScalarField, State, VectorField2, make_grid
from .potential import min_stabilizer, resolve_stabilizer

MAGIC = b"SMAF0001"
HEADER = struct.Struct("<8sqqdddd")
SNAPSHOT_FIELDS = ("phi", "d1", "d2", "u", "v", "p")


class ConfigError(ValueError):
    pass


class SnapshotError(ValueError):
    pass


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# --- config -----------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    text = text.strip().strip("()[]")
    if not text:
        return ()
    return tuple(float(p) for p in text.replace(";", ",").split(","))


def _parse_optional_float(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _parse_optional_str(text: str):
    return None if text.strip().lower() in ("", "none") else text.strip()


# key -> (section, attribute, parser); section None means ExperimentConfig itself
CONFIG_KEYS = {
    "preset": (None, "preset", str.strip),
    "initial": (None, "initial", str.strip),
    "nx": (None, "nx", int),
    "ny": (None, "ny", int),
    "lx": (None, "lx", float),
    "y0": (None, "y0", float),
    "y1": (None, "y1", float),
    "t_final": (None, "t_final", float),
    "seed": (None, "seed", int),
    "noise_amplitude": (None, "noise_amplitude", float),
    "flow": (None, "flow", _parse_bool),
    "shear_speed": (None, "shear_speed", float),
    "snapshot_times": (None, "snapshot_times", _parse_floats),
    "snapshot_every": (None, "snapshot_every", int),
    "out_dir": (None, "out_dir", _parse_optional_str),
    "allow_unstable": (None, "allow_unstable", _parse_bool),
    "strict_energy": (None, "strict_energy", _parse_bool),
    "energy_tol": (None, "energy_tol", float),
    "lam": ("phys", "lam", float),
    "eta": ("phys", "eta", float),
    "eps": ("phys", "eps", float),
    "tau": ("phys", "tau", float),
    "m1": ("phys", "m1", float),
    "m2": ("phys", "m2", float),
    "mu4": ("phys", "mu4", float),
    "h": ("phys", "h", _parse_floats),
    "dt": ("scheme", "dt", float),
    "stab_s": ("scheme", "stab_s", _parse_optional_float),
    "krylov_tol": ("scheme", "krylov_tol", float),
    "krylov_maxit": ("scheme", "krylov_maxit", int),
}


def read_config_file(path) -> dict[str, tuple[str, str]]:
    """Raw ``key = value`` pairs of a config file, each with its ``path:line`` location."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, tuple[str, str]] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set at {out[key][1]})")
        out[key] = (value, where)
    return out


def apply_settings(cfg: ExperimentConfig, settings: dict[str, tuple[object, str]]) -> ExperimentConfig:
    """Apply ``{key: (value, location)}``; string values are parsed, others used as given."""
    top: dict[str, object] = {}
    sections: dict[str, dict[str, object]] = {"phys": {}, "scheme": {}}
    for key, (value, where) in settings.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        section, attr, parse = CONFIG_KEYS[key]
        if isinstance(value, str):
            try:
                value = parse(value)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
        (top if section is None else sections[section])[attr] = value
    try:
        phys = replace(cfg.phys, **sections["phys"])
        scheme = replace(cfg.scheme, **sections["scheme"])
        return replace(cfg, phys=phys, scheme=scheme, **top)
    except (TypeError, ValueError) as exc:
        keys = ", ".join(sorted(settings)) or "preset defaults"
        raise ConfigError(f"invalid configuration ({keys}): {exc}") from None


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    s = resolve_stabilizer(cfg.scheme.stab_s, cfg.phys.lam, cfg.phys.eps)
    s_min = min_stabilizer(cfg.phys.lam, 2.0 / cfg.phys.eps**2)
    if s < s_min and not cfg.allow_unstable:
        raise ConfigError(
            f"stab_s = {s:g} violates the energy-stability condition S >= lambda*L/2 = {s_min:g}; "
            "pass --allow-unstable to run anyway")
    try:
        cfg.n_steps
        for t in cfg.snapshot_times:
            if t <= cfg.t_final:
                round(t / cfg.scheme.dt)
    except ValueError as exc:
        raise ConfigError(f"t_final/dt: {exc}") from None
    return cfg


def parse_config(path=None, flags: dict | None = None, preset: str | None = None) -> ExperimentConfig:
    """Build a config with precedence preset defaults < config file < flags.

    ``flags`` maps config keys to values (``None`` values are ignored).  The
    preset is taken from ``preset``, else from the file's or the flags'
    ``preset`` key, else ``custom``.
    """
    file_settings = read_config_file(path) if path is not None else {}
    flag_settings = {k: (v, f"flag --{k.replace('_', '-')}") for k, v in (flags or {}).items() if v is not None}
    name = preset
    for source in (file_settings, flag_settings):
        if name is None and "preset" in source:
            name = str(source["preset"][0]).strip()
    name = name or "custom"
    if name not in PRESET_FACTORIES:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESET_FACTORIES)}")
    cfg = PRESET_FACTORIES[name]()
    file_settings.pop("preset", None)
    flag_settings.pop("preset", None)
    cfg = apply_settings(cfg, file_settings)
    cfg = apply_settings(cfg, flag_settings)
    return validate_config(cfg)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for key, (section, attr, _) in CONFIG_KEYS.items():
        obj = cfg if section is None else getattr(cfg, section)
        value = getattr(obj, attr)
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def format_config(cfg: ExperimentConfig) -> str:
    """Config file text that :func:`parse_config` maps back to ``cfg``."""
    lines = []
    for key, value in config_to_dict(cfg).items():
        if isinstance(value, list):
            text = ", ".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        elif value is None:
            text = "none"
        else:
            text = str(value).lower() if isinstance(value, bool) else str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


# --- energy log --------------------------------------------------------------------

ENERGY_COLUMNS = EnergyReport.COLUMNS


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def format_energy_log(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ENERGY_COLUMNS)
    for r in reports:
        w.writerow([_fmt(getattr(r, c)) for c in ENERGY_COLUMNS])
    return buf.getvalue()


def write_energy_log(reports, path) -> Path:
    return atomic_write(path, format_energy_log(reports))


def read_energy_log(path) -> list[EnergyReport]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ENERGY_COLUMNS:
        raise ValueError(f"{path}: unexpected energy log header")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(ENERGY_COLUMNS):
            raise ValueError(f"{path}:{lineno}: expected {len(ENERGY_COLUMNS)} columns")
        values = dict(zip(ENERGY_COLUMNS, row))
        try:
            kw = {c: float(values[c]) for c in ENERGY_COLUMNS[1:-1]}
            kw["step"] = int(values["step"])
            kw["monotone_ok"] = _parse_bool(values["monotone_ok"])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        out.append(EnergyReport(**kw))
    return out


def recheck_energy_log(reports, tol: float = 1e-8) -> list[int]:
    """Steps at which ``e_modified`` grew beyond the tolerance."""
    bad = []
    for prev, curr in zip(reports, reports[1:]):
        if curr.e_modified - prev.e_modified > tol * max(1.0, abs(prev.e_modified)):
            bad.append(curr.step)
    return bad


# --- snapshots ---------------------------------------------------------------------

def snapshot_bytes(state: State) -> bytes:
    g = state.grid
    head = HEADER.pack(MAGIC, g.nx, g.ny, g.lx, g.y0, g.y1, float(state.time))
    arrays = [state.phi.values, state.d.x.values, state.d.y.values,
              state.u.x.values, state.u.y.values, state.p.values]
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes(order="C") for a in arrays)
    return head + body


def write_snapshot(state: State, path) -> Path:
    return atomic_write(path, snapshot_bytes(state))


def snapshot_size(nx: int, ny: int) -> int:
    return HEADER.size + 8 * 6 * nx * ny


def read_snapshot(path, like: State | None = None) -> State:
    """Read a snapshot.  Boundary conditions come from ``like`` when given, else
    every field is tagged Neumann (the file stores values only)."""
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise SnapshotError(f"{path}: file too short for a snapshot header")
    magic, nx, ny, lx, y0, y1, time = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    if nx <= 0 or ny <= 0 or len(data) != snapshot_size(nx, ny):
        raise SnapshotError(f"{path}: size {len(data)} does not match a {nx}x{ny} snapshot")
    grid = make_grid(nx, ny, lx, y0, y1)
    if like is not None and like.grid != grid:
        raise SnapshotError(f"{path}: grid {grid} differs from the template grid {like.grid}")
    arrs = np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(6, nx, ny).astype(float)
    if like is None:
        bc_phi = bc_p = NEUMANN
        bc_d = bc_u = (NEUMANN, NEUMANN)
    else:
        bc_phi, bc_p, bc_d, bc_u = like.phi.bc, like.p.bc, like.d.bcs, like.u.bcs
    return State(
        u=VectorField2.from_arrays(grid, arrs[3:5], bc_u),
        p=ScalarField(grid, arrs[5], bc_p),
        phi=ScalarField(grid, arrs[0], bc_phi),
        d=VectorField2.from_arrays(grid, arrs[1:3], bc_d),
        time=time,
        step=like.step if like is not None else 0,
    )


def export_csv(state: State, directory, prefix: str = "") -> list[Path]:
    """One ``x,y,value`` CSV per field, for plotting tools."""
    directory = Path(directory)
    X, Y = state.grid.mesh()
    arrays = dict(zip(SNAPSHOT_FIELDS, [state.phi.values, state.d.x.values, state.d.y.values,
                                         state.u.x.values, state.u.y.values, state.p.values]))
    paths = []
    for name, a in arrays.items():
        buf = io.StringIO()
        buf.write("x,y,value\n")
        for x, y, v in zip(X.ravel(), Y.ravel(), a.ravel()):
            buf.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
        paths.append(atomic_write(directory / f"{prefix}{name}.csv", buf.getvalue()))
    return paths


def read_csv_field(path, grid) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return data[:, 2].reshape(grid.shape)


# --- manifest ----------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    version: str
    seed: int
    start_time: float
    end_time: float
    steps: int
    solver_stats: dict
    violations: int
    status: str = "ok"
    files: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        raw = json.loads(text)
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown manifest keys {sorted(unknown)}")
        return cls(**raw)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def solver_summary(stats) -> dict:
    """Per-solve mean/max iteration counts and the worst projection/definiteness values."""
    out: dict = {}
    names = sorted({k for s in stats for k in s.iterations})
    for name in names:
        its = [s.iterations[name] for s in stats if name in s.iterations]
        out[name] = {"mean_iterations": float(np.mean(its)), "max_iterations": int(np.max(its))}
    if stats:
        out["max_div_rel"] = float(max(s.div_rel for s in stats))
        finite = [s.p_min_eig for s in stats if math.isfinite(s.p_min_eig)]
        out["min_director_eig"] = float(min(finite)) if finite else None
    return out


def write_manifest(manifest: RunManifest, path) -> Path:
    return atomic_write(path, manifest.to_json() + "\n")


def read_manifest(path) -> RunManifest:
    return RunManifest.from_json(Path(path).read_text())


__all__ = [
    "CONFIG_KEYS",
    "ConfigError",
    "ENERGY_COLUMNS",
    "MAGIC",
    "RunManifest",
    "SnapshotError",
    "atomic_write",
    "config_to_dict",
    "export_csv",
    "format_config",
    "parse_config",
    "read_config_file",
    "read_csv_field",
    "read_energy_log",
    "read_manifest",
    "read_snapshot",
    "recheck_energy_log",
    "snapshot_size",
    "solver_summary",
    "write_energy_log",
    "write_manifest",
    "write_snapshot",
]
