"""TOML configuration for the command line tools."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .harness import ExperimentConfig
from .solver import InitialCondition

NOISE_KEYS = {"beta", "gamma", "rho", "c1h", "c2h", "cv", "jmax", "eta"}
SIM_KEYS = {"kmax", "dt", "horizon", "record_every", "initial"}
INITIAL_KEYS = {"kind", "seed", "k0", "mean_amplitude", "fluct_amplitude", "mode", "vector"}
EXPERIMENT_KEYS = {"ns", "realizations", "theta1", "theta2", "delta", "seed", "workers", "noise_on"}
OUTPUT_KEYS = {"dir", "formats"}
SECTIONS = {"noise": NOISE_KEYS, "sim": SIM_KEYS, "experiment": EXPERIMENT_KEYS, "output": OUTPUT_KEYS}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AppConfig:
    experiment: ExperimentConfig
    output_dir: str = "out"
    formats: tuple = ("json", "csv")
    raw: dict = field(default_factory=dict)

    def sim_config(self, N=None):
        return self.experiment.sim_config(self.experiment.Ns[0] if N is None else N)

    def spec(self, N=None):
        return self.experiment.spec(self.experiment.Ns[0] if N is None else N)


def _unknown(section, got, allowed):
    extra = set(got) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")


def parse_config(data):
    """Build an AppConfig from a parsed TOML mapping."""
    _unknown("top level", data, set(SECTIONS))
    for name, keys in SECTIONS.items():
        _unknown(name, data.get(name, {}), keys)
    noise = dict(data["noise"]) if "noise" in data else ExperimentConfig().noise
    sim = dict(data.get("sim", {}))
    exp = dict(data.get("experiment", {}))
    out = dict(data.get("output", {}))
    init = dict(sim.pop("initial", {}))
    _unknown("sim.initial", init, INITIAL_KEYS)
    for key in ("mode", "vector"):
        if key in init:
            init[key] = tuple(init[key])
    kmax = sim.get("kmax", "auto")
    if kmax == "auto":
        kmax = None
    elif not isinstance(kmax, int):
        raise ConfigError("sim.kmax must be an integer or \"auto\"")
    try:
        ic = InitialCondition(**init)
        ec = ExperimentConfig(
            Ns=tuple(int(n) for n in exp.get("ns", (4, 8, 16))),
            realizations=int(exp.get("realizations", 64)),
            theta1=float(exp.get("theta1", 1.0)),
            theta2=float(exp.get("theta2", 0.5)),
            delta=float(exp.get("delta", 0.25)),
            seed=int(exp.get("seed", 0)),
            workers=int(exp.get("workers", 1)),
            noise_on=bool(exp.get("noise_on", True)),
            noise=noise,
            dt=float(sim.get("dt", 1e-3)),
            T=float(sim.get("horizon", 0.25)),
            Kmax=kmax,
            record_every=int(sim.get("record_every", 10)),
            initial=ic,
        )
        for N in ec.Ns:
            ec.sim_config(N)  # validates the noise and sim sections
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    formats = tuple(out.get("formats", ("json", "csv")))
    bad = set(formats) - {"json", "csv"}
    if bad:
        raise ConfigError(f"unknown output format(s): {', '.join(sorted(bad))}")
    return AppConfig(ec, str(out.get("dir", "out")), formats, data)


def load_config(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)
