"""Run configuration, calibration bars, output writers and manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .errors import ParameterError

OUT_DIR_ENV = "SLOWSTART_OUT_DIR"


class ConfigError(ParameterError):
    """Invalid configuration; the message names the offending key."""


# ---------------------------------------------------------------------------
# flat key=value files


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value, got {raw.strip()!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{n}: empty key")
        out[k] = v
    return out


def _as_bool(key, v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def _as_list(key, v, conv=float):
    if isinstance(v, (list, tuple)):
        items = v
    else:
        items = [s for s in str(v).replace(";", ",").split(",") if s.strip()]
    try:
        return [conv(x) for x in items]
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a comma-separated list of numbers, got {v!r}") from None


@dataclass
class Config:
    lam: float = 1.0
    window_lo: float = -10.0
    window_hi: float = 10.0
    horizon: float = 10.0
    palm: bool = False
    seed: int = 0
    replicas: int = 100
    times: list = field(default_factory=list)
    scales_L: list = field(default_factory=list)
    grid_step: float = 0.02
    dt: float = 1e-4
    extent_lo: float | None = None
    extent_hi: float | None = None
    out_dir: str = "."
    threads: int = 1
    pair: list = field(default_factory=lambda: [0, 3])

    # config-file key -> attribute
    KEYS = {"lambda": "lam"}

    @classmethod
    def keys(cls) -> list[str]:
        inv = {v: k for k, v in cls.KEYS.items()}
        return [inv.get(f.name, f.name) for f in fields(cls)]

    @classmethod
    def resolve(cls, file_values: dict | None = None, overrides: dict | None = None) -> Config:
        """File values, then flag overrides (flags win), then validation."""
        merged = {}
        for src in (file_values or {}, overrides or {}):
            for k, v in src.items():
                if v is not None:
                    merged[k] = v
        known = set(cls.keys())
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}; valid keys: {', '.join(sorted(known))}")
        if "out_dir" not in merged and os.environ.get(OUT_DIR_ENV):
            merged["out_dir"] = os.environ[OUT_DIR_ENV]
        cfg = cls()
        for k, v in merged.items():
            attr = cls.KEYS.get(k, k)
            setattr(cfg, attr, cls._convert(k, attr, v))
        cfg.validate()
        return cfg

    @staticmethod
    def _convert(key, attr, v):
        try:
            if attr in ("lam", "window_lo", "window_hi", "horizon", "grid_step", "dt", "extent_lo", "extent_hi"):
                return float(v)
            if attr in ("seed", "replicas", "threads"):
                return int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {v!r}") from None
        if attr == "palm":
            return _as_bool(key, v)
        if attr in ("times", "scales_L"):
            return _as_list(key, v)
        if attr == "pair":
            return _as_list(key, v, int)
        return str(v)

    def validate(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda: must be positive, got {self.lam}")
        if not self.window_lo < self.window_hi:
            raise ConfigError(f"window_lo/window_hi: need window_lo < window_hi, got {self.window_lo} >= {self.window_hi}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon: must be positive, got {self.horizon}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed: must be a 64-bit unsigned integer, got {self.seed}")
        if self.replicas < 0:
            raise ConfigError(f"replicas: must be >= 0, got {self.replicas}")
        if self.threads < 1:
            raise ConfigError(f"threads: must be >= 1, got {self.threads}")
        if any(not t > 0 for t in self.times):
            raise ConfigError("times: all entries must be positive")
        if any(not x > 0 for x in self.scales_L):
            raise ConfigError("scales_L: all entries must be positive")
        if not (self.grid_step > 0 and self.dt > 0):
            raise ConfigError("grid_step/dt: must be positive")
        if self.dt > self.grid_step ** 2 * (1 + 1e-12):
            raise ConfigError(f"dt: resolution rule needs dt <= grid_step^2 = {self.grid_step ** 2}, got {self.dt}")
        lo = self.window_lo if self.extent_lo is None else self.extent_lo
        hi = self.window_hi + self.horizon if self.extent_hi is None else self.extent_hi
        if lo > self.window_lo:
            raise ConfigError("extent_lo: must not exceed window_lo")
        if hi < self.window_hi + self.horizon:
            raise ConfigError(f"extent_hi: window rule needs extent_hi >= window_hi + horizon = "
                              f"{self.window_hi + self.horizon}")
        if len(self.pair) != 2 or not 0 <= self.pair[0] < self.pair[1]:
            raise ConfigError(f"pair: need two labels 0 <= i < j, got {self.pair}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return dict(sorted(d.items()))


def load_config_file(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"config: cannot read {p}: {e}") from None
    return parse_flat(text, str(p))


# ---------------------------------------------------------------------------
# calibration bars


def calibration_text() -> str:
    return resources.files("slowstart").joinpath("calibration.cfg").read_text()


def load_calibration() -> dict[str, float]:
    raw = parse_flat(calibration_text(), "calibration.cfg")
    return {k: float(v) for k, v in raw.items()}


def calibration_hash() -> str:
    return hashlib.sha256(calibration_text().encode()).hexdigest()


# ---------------------------------------------------------------------------
# writers


def fmt(x) -> str:
    """Round-trip text for numbers: 17 significant digits for floats."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return format(x, ".17g")
    try:
        import numpy as np
        if isinstance(x, np.integer):
            return str(int(x))
        if isinstance(x, np.floating):
            return format(float(x), ".17g")
    except ImportError:  # pragma: no cover
        pass
    return str(x)


def atomic_write(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    return atomic_write(path, buf.getvalue().encode())


def _jsonable(x):
    import numpy as np
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, float) and x != x:
        return None
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_json(path, obj) -> Path:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"
    return atomic_write(path, text.encode())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    tool_version: str
    seed: int
    config: dict
    checksums: dict
    wall_clock_seconds: float
    command: str = ""

    def write(self, out_dir) -> Path:
        return write_json(Path(out_dir) / "manifest.json", asdict(self))

    @classmethod
    def read(cls, path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text()))

    def verify(self, out_dir) -> list[str]:
        """Names of listed files whose checksum no longer matches."""
        return [name for name, digest in self.checksums.items()
                if not (Path(out_dir) / name).exists() or sha256_file(Path(out_dir) / name) != digest]
