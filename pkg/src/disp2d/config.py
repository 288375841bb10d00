"""Run configuration: JSON file, environment overrides, validation and hashing.

Precedence is file < environment < command-line flags.  An environment
variable ``DISP2D_SECTION__KEY=value`` sets ``config[section][key]``; the value
is parsed as JSON when possible and kept as a string otherwise.  ``DISP2D_SEED``
and ``DISP2D_OUTPUT_DIR`` set the top-level keys.
"""
from dataclasses import dataclass, field
import copy
import hashlib
import json
import os
from importlib import resources
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "DISP2D_"
SECTIONS = ("potential", "grid", "lowenergy", "evolution", "lattice", "born", "lemma2",
            "born_chain")
TOP_LEVEL = ("seed", "output_dir", "name")
REQUIRED = {
    "classify": ("potential", "grid"),
    "expand": ("potential", "grid"),
    "evolve": ("potential", "grid", "evolution"),
    "decay": ("potential", "grid", "evolution"),
    "born": ("potential", "grid", "evolution"),
    "lemma2": ("lemma2",),
    "born-chain": ("born_chain",),
}
# keys accepted per section; potential and evolution validate their own
SECTION_KEYS = {
    "grid": {"scheme", "n_r", "n_theta", "r_max", "r_scale", "n", "L"},
    "lowenergy": {"tau", "lambda_lo", "lambda_hi", "fit_lo", "fit_hi", "per_decade", "scan"},
    "lattice": {"h", "L", "cap", "enabled"},
    "born": {"lam", "N_max", "sign"},
    "lemma2": {"families", "t_values", "x_max", "n_points", "refine"},
    "born_chain": {"t_values", "L_values", "n_samples", "m_max", "d_min", "d_max", "sign"},
}
BUNDLED = ("gaussian-well", "deep-well-scan", "two-well-zero-mass", "free")


@dataclass
class RunConfig:
    data: dict
    source: str = "<dict>"
    seed: int = 0
    output_dir: str = "out"

    def section(self, name, required=False):
        sec = self.data.get(name)
        if sec is None:
            if required:
                raise ConfigError("missing section", name)
            return {}
        if not isinstance(sec, dict):
            raise ConfigError("must be an object", name)
        return sec

    def require(self, command):
        for name in REQUIRED[command]:
            self.section(name, required=True)

    def canonical(self):
        d = copy.deepcopy(self.data)
        d["seed"] = self.seed
        d.pop("output_dir", None)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _parse_env_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_env(data, environ=None):
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(data)
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX) or key == ENV_PREFIX + "THREADS":
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        value = _parse_env_value(environ[key])
        if len(path) == 1:
            if path[0] not in TOP_LEVEL:
                raise ConfigError(f"unknown top-level override {key}", path[0])
            out[path[0]] = value
            continue
        if path[0] not in SECTIONS:
            raise ConfigError(f"unknown section in override {key}", path[0])
        node = out.setdefault(path[0], {})
        for p in path[1:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = value
    return out


def bundled_path(name):
    return resources.files("disp2d") / "configs" / f"{name}.json"


def read_config_file(path):
    """Load a JSON config from a path or a bundled config name."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        text = bundled_path(str(path)).read_text()
        source = f"bundled:{path}"
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", "config") from exc
        source = str(p)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "config") from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", "config")
    return data, source


def load_config(path=None, data=None, environ=None, seed=None, output_dir=None) -> RunConfig:
    if data is None:
        if path is None:
            raise ConfigError("no configuration given (use --config)", "config")
        data, source = read_config_file(path)
    else:
        source = "<dict>"
    data = apply_env(data, environ)
    unknown = set(data) - set(SECTIONS) - set(TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "config")
    for name, allowed in SECTION_KEYS.items():
        sec = data.get(name)
        if isinstance(sec, dict) and set(sec) - allowed:
            raise ConfigError(f"unknown keys {sorted(set(sec) - allowed)}", name)
    s = data.get("seed", 0) if seed is None else seed
    if isinstance(s, bool) or not isinstance(s, int):
        raise ConfigError("must be an integer", "seed")
    out = data.get("output_dir", "out") if output_dir is None else output_dir
    return RunConfig(data=data, source=source, seed=int(s), output_dir=str(out))
