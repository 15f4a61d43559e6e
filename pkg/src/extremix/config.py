"""Run configuration: INI sections covering every tunable constant.

load_config() resolves, in order, the built-in defaults, the scale preset
(desk or paper; the two differ only in conditioning-set size and surrogate
training rows), and the optional config file. Unknown sections or keys raise
rather than silently falling through, and every value is parsed against the
type of its default. The resolved configuration hashes canonically so run
manifests can prove two runs saw the same settings.
"""

import configparser
import hashlib
import io
import json

from .mcmc import ChainConfig, PriorSpec
from .network import NetSpec
from .splines import SplineBasis
from .surrogate import DesignSpec

DEFAULTS = {
    "model": {
        "rho_ratio": 0.19,
        "alpha": 1.0,
        "r_synthetic": 0.9,
    },
    "surrogate": {
        "m": 10,
        "n_rows": 200000,
        "n_basis": 15,
        "degree": 3,
        "hidden": (30, 20),
        "learning_rate": 0.01,
        "epochs": 100,
        "batch_size": 1000,
        "optimizer": "adam",
        "design_rho": ("uniform", 0.0, 1.0),
        "design_delta1": ("uniform", 0.0, 1.0),
        "design_delta2": ("uniform", 0.0, 1.0),
        "design_r": ("uniform", 0.0, 1.0),
    },
    "mcmc": {
        "iterations": 11000,
        "burnin": 1000,
        "thin": 10,
        "target_accept": 0.4,
        "adapt_decay": 0.6,
        "localized": True,
        "scale_theta1": 0.05,
        "scale_beta": 0.1,
        "scale_logit": 0.3,
        "scale_lrange": 0.3,
        "prior_mode": "iid",
        "mu_sd": 10.0,
        "xi_sd": 0.25,
        "beta_sd": 1.0,
        "field_mean_sd": 10.0,
        "ig_shape": 0.1,
        "ig_rate": 0.1,
        "lrange_loc": -2.0,
        "lrange_sd": 1.0,
    },
    "projection": {
        "levels": (0.90, 0.99),
        "n_draws": 1000,
        "hist_years": 34,
        "future_years": 30,
        "joint_u": (0.90, 0.99),
        "joint_replicates": 20000,
        "chi_u": 0.9999,
        "chi_replicates": 100000,
    },
}

# the only constants that separate a laptop run from the full-size one
SCALES = {
    "desk": {},
    "paper": {("surrogate", "m"): 15, ("surrogate", "n_rows"): 2000000},
}

_DESIGN_KEYS = ("design_rho", "design_delta1", "design_delta2", "design_r")


class ConfigError(ValueError):
    pass


def _parse_design(raw, where):
    parts = raw.replace(",", " ").split()
    if not parts:
        raise ConfigError(f"{where}: empty design component")
    kind = parts[0]
    try:
        args = [float(p) for p in parts[1:]]
    except ValueError:
        raise ConfigError(f"{where}: non-numeric design bound in {raw!r}")
    if kind == "uniform" and len(args) == 2:
        return ("uniform", args[0], args[1])
    if kind == "fixed" and len(args) == 1:
        return ("fixed", args[0])
    raise ConfigError(f"{where}: expected 'uniform LO HI' or 'fixed V', "
                      f"got {raw!r}")


def _parse_int(raw, where):
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        v = float(raw)  # accept 2e6 spellings for counts
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {raw!r}")
    if not v.is_integer():
        raise ConfigError(f"{where}: expected an integer, got {raw!r}")
    return int(v)


def _parse_like(default, raw, where):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return _parse_int(raw, where)
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {raw!r}")
    if isinstance(default, tuple):
        if default and isinstance(default[0], str):
            return _parse_design(raw, where)
        elem = int if all(isinstance(v, int) for v in default) else float
        parts = [p for p in raw.replace(",", " ").split() if p]
        try:
            return tuple(elem(p) for p in parts)
        except ValueError:
            raise ConfigError(f"{where}: expected a list of numbers, "
                              f"got {raw!r}")
    return raw


class RunConfig:
    """Resolved settings, one dict per section, plus typed builders."""

    def __init__(self, sections):
        self.sections = sections
        self.model = sections["model"]
        self.surrogate = sections["surrogate"]
        self.mcmc = sections["mcmc"]
        self.projection = sections["projection"]

    def as_flat_dict(self):
        return {f"{sec}.{key}": val
                for sec in sorted(self.sections)
                for key, val in sorted(self.sections[sec].items())}

    def config_hash(self):
        blob = json.dumps(self.as_flat_dict(), sort_keys=True,
                          default=list).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_text(self):
        """Render back to INI text (the form manifests embed)."""
        out = io.StringIO()
        for sec in ("model", "surrogate", "mcmc", "projection"):
            out.write(f"[{sec}]\n")
            for key, val in self.sections[sec].items():
                if isinstance(val, tuple):
                    val = " ".join(str(v) for v in val)
                out.write(f"{key} = {val}\n")
            out.write("\n")
        return out.getvalue()

    # -- builders for the module-level objects ------------------------------

    def chain_config(self):
        m = self.mcmc
        return ChainConfig(
            iterations=m["iterations"], burnin=m["burnin"], thin=m["thin"],
            target_accept=m["target_accept"], adapt_decay=m["adapt_decay"],
            localized=m["localized"], scale_theta1=m["scale_theta1"],
            scale_beta=m["scale_beta"], scale_logit=m["scale_logit"],
            scale_lrange=m["scale_lrange"])

    def prior_spec(self):
        m = self.mcmc
        return PriorSpec(
            mode=m["prior_mode"], mu_sd=m["mu_sd"], xi_sd=m["xi_sd"],
            beta_sd=m["beta_sd"], field_mean_sd=m["field_mean_sd"],
            ig_shape=m["ig_shape"], ig_rate=m["ig_rate"],
            lrange_loc=m["lrange_loc"], lrange_sd=m["lrange_sd"])

    def basis(self):
        s = self.surrogate
        return SplineBasis(n_basis=s["n_basis"], degree=s["degree"])

    def netspec(self):
        s = self.surrogate
        return NetSpec(input_dim=s["m"] + 4, hidden=tuple(s["hidden"]),
                       output_dim=s["n_basis"],
                       learning_rate=s["learning_rate"], epochs=s["epochs"],
                       batch_size=s["batch_size"])

    def design(self):
        s = self.surrogate
        return DesignSpec(**{k[len("design_"):]: s[k] for k in _DESIGN_KEYS})


def load_config(path=None, scale="desk"):
    """Defaults -> scale preset -> file overrides (most specific wins)."""
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; choose from "
                          f"{sorted(SCALES)}")
    sections = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    for (sec, key), val in SCALES[scale].items():
        sections[sec][key] = val
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for sec in parser.sections():
            if sec not in sections:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in DEFAULTS[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                sections[sec][key] = _parse_like(DEFAULTS[sec][key], raw,
                                                 f"[{sec}] {key}")
    return RunConfig(sections)
