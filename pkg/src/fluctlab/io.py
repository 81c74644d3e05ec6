"""Experiment configs, atomic artifact directories and report emission.

Configs are JSON documents with a schema version.  Every section has a
fixed set of keys; anything else is rejected so that a typo can never
silently fall back to a default.
"""

import copy
import csv
import hashlib
import json
import os
import shutil
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np

from .stats import StatSeries, _json_default, fmt

SCHEMA_VERSION = "1"

KINDS = ("simulate", "diffusion-coefficient", "fluctuations", "clt-variances", "bg-residual",
         "sphere-checks", "spectral-gap", "ensemble-gap")

MODEL_DEFAULTS = {"n_sites": 32, "y": 1.0, "topology": "periodic",
                  "coupling": {"kind": "constant", "a0": 1.0}}
INTEGRATOR_DEFAULTS = {"dt_macro": None, "sweep": "even_odd", "accelerate": True,
                       "stability": 0.1}

# per-experiment parameters and their defaults
PARAM_DEFAULTS = {
    "simulate": {"T": 1.0, "sample_every": None, "start": "equilibrium"},
    "diffusion-coefficient": {"degree": 8, "k": 1, "parity": "even"},
    "fluctuations": {"modes": [1, 2], "n_samples": 2000, "stride": 10, "max_lag": 200,
                     "a_hat": None},
    "clt-variances": {"N": 8, "targets": ["AB", "BB", "AA"], "simulate": True, "t": 200.0,
                      "windows": 2, "dt_micro": 0.05, "stride": 2},
    "bg-residual": {"t": 0.1, "stride": 4, "n_times": 4, "mode": 1, "degree": 8, "k": 1,
                    "scan_step": 0.05, "scan_halfwidth": 0.5},
    "sphere-checks": {"max_degree": 4, "n": 6, "samples": 200_000},
    "spectral-gap": {"ns": [4, 8, 16, 32], "dt": 0.025},
    "ensemble-gap": {"ns": [8, 16, 32, 64, 128, 256],
                     "observables": ["p0^4", "p0^2 p1^2"]},
}

TOP_KEYS = {"schema_version", "kind", "model", "integrator", "replicas", "seed", "out",
            "threads", "params"}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def _merge_checked(defaults, given, where):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


@dataclass
class ExperimentConfig:
    kind: str
    model: dict
    integrator: dict
    params: dict
    replicas: int = 64
    seed: int = 0
    out: str = "fluctlab-out"
    threads: int = 1
    schema_version: str = SCHEMA_VERSION
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(d) - TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level keys {unknown}")
        if "schema_version" not in d:
            raise ConfigError("missing schema_version")
        if str(d["schema_version"]) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {d['schema_version']!r}")
        kind = d.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
        model = _merge_checked(MODEL_DEFAULTS, d.get("model"), "model")
        integ = _merge_checked(INTEGRATOR_DEFAULTS, d.get("integrator"), "integrator")
        params = _merge_checked(PARAM_DEFAULTS[kind], d.get("params"), f"params[{kind}]")
        replicas = d.get("replicas", 64)
        seed = d.get("seed", 0)
        threads = d.get("threads", 1)
        for name, v, lo in (("replicas", replicas, 2), ("seed", seed, 0), ("threads", threads, 1)):
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}")
        cfg = cls(kind, model, integ, params, replicas, seed, str(d.get("out", "fluctlab-out")),
                  threads, SCHEMA_VERSION, copy.deepcopy(d))
        cfg.build_model()
        cfg.build_integrator()
        return cfg

    def build_model(self):
        from .model import ModelParams
        try:
            return ModelParams.from_config(self.model)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"model: {e}") from e

    def build_integrator(self):
        from .dynamics import IntegratorConfig
        try:
            return IntegratorConfig(seed=self.seed, **self.integrator)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"integrator: {e}") from e

    def echo(self):
        """Fully resolved config (defaults filled in), as stored in the manifest."""
        return {"schema_version": self.schema_version, "kind": self.kind, "model": self.model,
                "integrator": self.integrator, "params": self.params, "replicas": self.replicas,
                "seed": self.seed}


def load_config(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from e
    return ExperimentConfig.from_dict(d)


def code_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def manifest_hash(echo, version):
    """SHA-256 of the canonical config echo plus code version.

    Wall time is excluded on purpose: two runs of the same config must
    produce byte-identical artifacts.
    """
    blob = json.dumps({"config": echo, "version": version}, sort_keys=True,
                      default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()


@contextmanager
def atomic_dir(out):
    """Yield a temporary directory that replaces ``out`` only on success."""
    out = os.path.abspath(out)
    parent = os.path.dirname(out)
    os.makedirs(parent, exist_ok=True)
    if not os.access(parent, os.W_OK):
        raise PermissionError(f"output directory {parent} is not writable")
    tmp = tempfile.mkdtemp(prefix=".fluctlab-", dir=parent)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if os.path.exists(out):
        old = tempfile.mkdtemp(prefix=".fluctlab-old-", dir=parent)
        os.rmdir(old)
        os.rename(out, old)
    os.rename(tmp, out)
    if old:
        shutil.rmtree(old, ignore_errors=True)


# --- emission ---------------------------------------------------------------

def _clean(obj):
    """Recursively convert numpy scalars/arrays and round floats to 17 digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float):
        return float(fmt(obj)) if np.isfinite(obj) else str(obj)
    return obj


def write_json(path, record, mhash):
    rec = {"manifest_hash": mhash, **_clean(record)}
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_series_csv(path, series, mhash):
    """CSV with a ``# manifest_hash`` comment line, then header and rows."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest_hash: {mhash}\n")
        w = csv.writer(fh)
        w.writerow(series.header())
        for row in series.rows():
            w.writerow([fmt(v) if isinstance(v, float) else v for v in row])


def read_series_csv(path):
    """Inverse of :func:`write_series_csv`; returns ``(series, manifest_hash)``."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# manifest_hash:"):
            raise ValueError(f"{path}: missing manifest hash line")
        mhash = first.split(":", 1)[1].strip()
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = list(zip(*body)) if body else [()] * len(header)
    get = {h: np.array([float(v) for v in c]) for h, c in zip(header, cols)}
    extra = {h: get[h] for h in header[3:-1]}
    reps = int(float(body[0][-1])) if body else 0
    return StatSeries(get["grid"], get["estimate"], get["stderr"], reps, extra=extra), mhash


def emit_report(results, out_dir, mhash, fmt_="both"):
    """Write every result: StatSeries to CSV (and JSON), dicts to JSON.

    Returns the sorted list of written file names.
    """
    names = []
    for name in sorted(results):
        obj = results[name]
        if isinstance(obj, StatSeries):
            if fmt_ in ("csv", "both"):
                write_series_csv(os.path.join(out_dir, f"{name}.csv"), obj, mhash)
                names.append(f"{name}.csv")
            if fmt_ in ("json", "both"):
                write_json(os.path.join(out_dir, f"{name}.json"), obj.to_record(), mhash)
                names.append(f"{name}.json")
        else:
            write_json(os.path.join(out_dir, f"{name}.json"), obj, mhash)
            names.append(f"{name}.json")
    return sorted(names)


def write_manifest(out_dir, cfg, mhash, version, wall_time, files, threads):
    man = {"manifest_hash": mhash, "config": cfg.echo(), "seed": cfg.seed,
           "code_version": version, "threads": threads, "wall_time_s": wall_time,
           "files": files, "written": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(_clean(man), fh, indent=2)
        fh.write("\n")
