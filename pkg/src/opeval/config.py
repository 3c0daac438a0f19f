"""Experiment configuration: INI-style sections of flat ``key = value`` pairs.

Every accepted key is declared in :data:`SCHEMA`; ``schema.ini`` shipped next
to this module is the same table rendered with its documentation.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

MODES = ("simulate", "evaluate", "diagnose", "sweep", "compare")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(" ", "").split(",") if x]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _paths(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


PARSERS = {"int": int, "float": float, "bool": _bool, "str": str.strip,
           "floats": _floats, "ints": _ints, "paths": _paths}

# section -> key -> (type, default, doc)
SCHEMA: dict[str, dict[str, tuple[str, str, str]]] = {
    "experiment": {
        "mode": ("str", "evaluate", "one of simulate, evaluate, diagnose, sweep, compare"),
        "master_seed": ("int", "0", "root seed; every random stream is derived from it"),
        "workers": ("int", "1", "threads used for independent runs (results do not depend on it)"),
    },
    "environment": {
        "kind": ("str", "random", "random | gridworld | chain | file"),
        "path": ("str", "", "MDP JSON file, used when kind = file"),
        "num_states": ("int", "20", "states for random and chain MDPs"),
        "num_actions": ("int", "4", "actions for random and chain MDPs"),
        "gamma": ("float", "0.95", "discount factor"),
        "reward_noise_std": ("float", "0.5", "std of the Gaussian reward noise (0 = deterministic)"),
        "concentration": ("float", "0.3", "Dirichlet concentration of random transition rows"),
        "move_prob": ("float", "0.7", "chain: probability that the chosen move succeeds"),
        "room_height": ("int", "5", "gridworld: room height"),
        "room_width": ("int", "4", "gridworld: width of each room"),
        "slip": ("float", "0.1", "gridworld: probability of a random move"),
        "target_policy": ("str", "optimal", "'optimal' (greedy in Q*) or a policy JSON file"),
    },
    "features": {
        "kind": ("str", "spectral", "onehot | spectral | rff"),
        "dim": ("int", "8", "feature dimension for spectral and rff"),
        "include_value": ("bool", "true", "spectral: put Q^pi in the span (realizable, not complete)"),
        "rff_scale": ("float", "1.0", "rff: constant C in gamma_rff = C / D_median"),
        "rff_normalize": ("bool", "true", "rff: divide by sqrt(dim) so that ||phi|| <= 1"),
        "rff_median_pairs": ("int", "10000", "rff: number of pairs for the median heuristic"),
    },
    "dataset": {
        "n_target": ("int", "100000", "samples collected with the target policy"),
        "horizon": ("int", "100", "episode length during collection (restart from mu_init)"),
        "mix_ratios": ("floats", "0,0.5,1,2", "random-data ratios relative to n_target"),
        "lower_epsilons": ("floats", "0.1,0.2,0.4,0.6", "epsilon-greedy corruptions used as lower-performance policies"),
        "lower_policy_files": ("paths", "", "policy JSON files used instead of lower_epsilons"),
        "lower_ratio": ("float", "1.0", "lower-policy data ratio relative to n_target"),
    },
    "estimator": {
        "lambdas": ("floats", "1e-1,1e-2,1e-3,1e-4,1e-8", "ridge values swept for FQI"),
        "num_rounds": ("int", "100", "FQI rounds"),
        "record_every": ("int", "10", "record RMSE every this many rounds"),
        "lstd": ("bool", "false", "also run LSTD for every mixture and lambda"),
        "diagnose_lambda": ("float", "1e-4", "ridge used for amplification diagnostics"),
    },
    "evaluation": {
        "num_eval_states": ("int", "100", "evaluation states, one per target trajectory"),
        "eval_max_step": ("int", "100", "evaluation states come from the first this-many steps"),
        "num_value_trajectories": ("int", "100", "rollouts for policy values when exact_values = false"),
        "exact_values": ("bool", "true", "use exact tabular policy values for comparisons"),
    },
    "simulation": {
        "n_samples": ("ints", "100,200", "dataset sizes; one curve file per value"),
        "dim": ("int", "100", "feature dimension"),
        "gamma": ("float", "0.99", "discount factor"),
        "lambda_reg": ("float", "1e-4", "ridge parameter"),
        "num_rounds": ("int", "100", "FQI rounds"),
        "repetitions": ("int", "100", "independent repetitions"),
        "fast_repetitions": ("int", "20", "repetitions under --fast"),
    },
}


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]]
    source: str = "<defaults>"
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @property
    def mode(self) -> str:
        return self.values["experiment"]["mode"]

    @property
    def master_seed(self) -> int:
        return self.values["experiment"]["master_seed"]

    def resolve_path(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def hash(self) -> str:
        """Short digest of the resolved values (the seed is reported separately)."""
        body = {s: dict(v) for s, v in self.values.items()}
        body["experiment"] = {k: v for k, v in body["experiment"].items() if k != "master_seed"}
        text = json.dumps(body, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def with_overrides(self, seed: int | None = None, mode: str | None = None) -> "ExperimentConfig":
        values = {s: dict(v) for s, v in self.values.items()}
        if seed is not None:
            values["experiment"]["master_seed"] = int(seed)
        if mode is not None:
            values["experiment"]["mode"] = mode
        return ExperimentConfig(values, self.source, self.base_dir)


def default_values() -> dict[str, dict[str, object]]:
    return {s: {k: PARSERS[t](d) for k, (t, d, _) in keys.items()} for s, keys in SCHEMA.items()}


def _line_index(text: str) -> dict[tuple[str, str], int]:
    where, section = {}, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, ""), lineno)
            continue
        m = re.match(r"\s*([^#;=\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            where[(section, m.group(1).strip().lower())] = lineno
    return where


def parse_config(text: str, source: str = "<string>", base_dir: Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = _line_index(text)
    values = default_values()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{lines.get((section, ''), '?')}: unknown section [{section}]")
        for key, raw in parser.items(section, raw=True):
            lineno = lines.get((section, key), "?")
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}:{lineno}: unknown key '{key}' in [{section}]")
            kind = SCHEMA[section][key][0]
            try:
                values[section][key] = PARSERS[kind](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad {kind} value for {section}.{key}: {raw!r} ({exc})") from exc
    cfg = ExperimentConfig(values, source, base_dir or Path.cwd())
    validate(cfg, lines)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path), path.parent)


def validate(cfg: ExperimentConfig, lines: dict | None = None) -> None:
    lines = lines or {}

    def fail(section, key, message):
        raise ConfigError(f"{cfg.source}:{lines.get((section, key), '?')}: {section}.{key}: {message}")

    v = cfg.values
    if v["experiment"]["mode"] not in MODES:
        fail("experiment", "mode", f"must be one of {', '.join(MODES)}")
    env = v["environment"]
    if env["kind"] not in ("random", "gridworld", "chain", "file"):
        fail("environment", "kind", "must be random, gridworld, chain or file")
    if env["kind"] == "file" and not cfg.resolve_path(env["path"]).is_file():
        fail("environment", "path", f"file not found: {env['path']!r}")
    if not 0 <= env["gamma"] < 1:
        fail("environment", "gamma", "must lie in [0, 1)")
    if env["reward_noise_std"] < 0:
        fail("environment", "reward_noise_std", "must be non-negative")
    if env["target_policy"] != "optimal" and not cfg.resolve_path(env["target_policy"]).is_file():
        fail("environment", "target_policy", f"file not found: {env['target_policy']!r}")
    if v["features"]["kind"] not in ("onehot", "spectral", "rff"):
        fail("features", "kind", "must be onehot, spectral or rff")
    if v["features"]["dim"] < 1:
        fail("features", "dim", "must be positive")
    ds = v["dataset"]
    if ds["n_target"] < 1:
        fail("dataset", "n_target", "must be positive")
    if ds["horizon"] < 1:
        fail("dataset", "horizon", "must be positive")
    if not ds["mix_ratios"] or any(r < 0 for r in ds["mix_ratios"]):
        fail("dataset", "mix_ratios", "must be a non-empty list of non-negative ratios")
    if any(not 0 <= e <= 1 for e in ds["lower_epsilons"]):
        fail("dataset", "lower_epsilons", "entries must lie in [0, 1]")
    for p in ds["lower_policy_files"]:
        if not cfg.resolve_path(p).is_file():
            fail("dataset", "lower_policy_files", f"file not found: {p!r}")
    if ds["lower_ratio"] < 0:
        fail("dataset", "lower_ratio", "must be non-negative")
    est = v["estimator"]
    if not est["lambdas"] or any(not lam > 0 for lam in est["lambdas"]):
        fail("estimator", "lambdas", "must be a non-empty list of positive values")
    if est["num_rounds"] < 1:
        fail("estimator", "num_rounds", "must be positive")
    if est["record_every"] < 1:
        fail("estimator", "record_every", "must be positive")
    if not est["diagnose_lambda"] > 0:
        fail("estimator", "diagnose_lambda", "must be positive")
    ev = v["evaluation"]
    for key in ("num_eval_states", "eval_max_step", "num_value_trajectories"):
        if ev[key] < 1:
            fail("evaluation", key, "must be positive")
    sim = v["simulation"]
    if not sim["n_samples"] or any(n < 1 for n in sim["n_samples"]):
        fail("simulation", "n_samples", "must be positive integers")
    if not 0 <= sim["gamma"] < 1:
        fail("simulation", "gamma", "must lie in [0, 1)")
    if not sim["lambda_reg"] > 0:
        fail("simulation", "lambda_reg", "must be positive")
    for key in ("dim", "num_rounds", "repetitions", "fast_repetitions"):
        if sim[key] < 1:
            fail("simulation", key, "must be positive")


def render_schema() -> str:
    """The documented schema as an INI file with every default filled in."""
    out = ["# opeval experiment configuration schema.",
           "# Every accepted key is listed with its type and default value.", ""]
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, (kind, default, doc) in keys.items():
            out.append(f"# {doc} ({kind})")
            out.append(f"{key} = {default}")
        out.append("")
    return "\n".join(out)
