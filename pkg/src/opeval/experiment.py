"""Config-driven orchestration of the dataset-mixing experiments.

A run decides on a target policy and features, collects target data plus
shifted data, runs the estimators, and writes CSV files, a JSON summary and
plot scripts into an output directory. Every random stream is derived from
the master seed and a fixed stream name, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import benchmarks
from .config import ExperimentConfig
from .data import (
    RANDOM, TransitionDataset, build_covariance_bundle, lower_perf_tag, mix_datasets,
    sample_offline_dataset,
)
from .diagnostics import (
    amplification_spectrum, completeness_residual, shift_constants, write_summary_csv,
)
from .errors import ConfigError, SingularSystemError
from .estimators import (
    EvalSet, FqiConfig, SweepResult, hyperparameter_sweep, lstd_from_bundle, make_eval_set,
    select_eval_states,
)
from .features import (
    FeatureMap, one_hot_features, random_fourier_features, spectral_features,
    state_action_encoding,
)
from .mdp import (
    DiscountedMDP, Policy, epsilon_greedy_probs, exact_q_value, greedy_policy, load_mdp,
    load_policy, monte_carlo_value, optimal_q, stochastic_state_values,
)
from .plots import emit_plot_script
from .synthetic import SimConfig, log_slope, run_simulation

log = logging.getLogger(__name__)


def stream_seed(master_seed: int, name: str) -> int:
    """Independent 63-bit seed for the named random stream."""
    ss = np.random.SeedSequence([master_seed, zlib.crc32(name.encode())])
    return int(ss.generate_state(2, np.uint64)[0] >> np.uint64(1))


def mixture_label(ratio: float) -> str:
    return "dstar" if ratio == 0 else f"dstar_plus_{ratio:g}x"


def mixture_legend(ratio: float) -> str:
    return "D★" if ratio == 0 else f"D★ + {ratio:g}x random"


@dataclass(frozen=True)
class ComparisonVerdict:
    rmse: float
    value_gap: float

    @property
    def verdict(self) -> str:
        return "distinguishable" if self.rmse < self.value_gap else "indistinguishable"


def compare_policies(rmse: float, value_gap: float) -> ComparisonVerdict:
    """FQI tells two policies apart only when its RMSE is below their value gap."""
    return ComparisonVerdict(float(rmse), float(value_gap))


# ---------------------------------------------------------------------------
# Experiment context


@dataclass(eq=False)
class Context:
    config: ExperimentConfig
    mdp: DiscountedMDP
    policy: Policy
    features: FeatureMap
    eval_set: EvalSet
    fast: bool = False

    def seed(self, name: str) -> int:
        return stream_seed(self.config.master_seed, name)

    @property
    def n_target(self) -> int:
        n = self.config["dataset"]["n_target"]
        return min(n, 20_000) if self.fast else n

    def provenance(self) -> str:
        return f"seed={self.config.master_seed}, config_hash={self.config.hash()}"

    def target_dataset(self) -> TransitionDataset:
        return sample_offline_dataset(self.mdp, self.policy, self.n_target, self.seed("target_data"),
                                      horizon=self.config["dataset"]["horizon"])

    def random_dataset(self, n: int) -> TransitionDataset:
        return sample_offline_dataset(self.mdp, None, n, self.seed("random_data"),
                                      horizon=self.config["dataset"]["horizon"], source_tag=RANDOM)

    def fqi_config(self) -> FqiConfig:
        est = self.config["estimator"]
        return FqiConfig(est["lambdas"][0], est["num_rounds"], est["record_every"])

    def sweep(self, dataset: TransitionDataset) -> SweepResult:
        return hyperparameter_sweep(dataset, self.features, self.policy, self.mdp.gamma,
                                    self.config["estimator"]["lambdas"], self.fqi_config(), self.eval_set)


def build_environment(cfg: ExperimentConfig) -> DiscountedMDP:
    env = cfg["environment"]
    seed = stream_seed(cfg.master_seed, "environment")
    kind = env["kind"]
    if kind == "file":
        try:
            return load_mdp(cfg.resolve_path(env["path"]))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load MDP from {env['path']!r}: {exc}") from exc
    if kind == "random":
        return benchmarks.random_mdp(env["num_states"], env["num_actions"], env["gamma"], seed,
                                     env["concentration"], env["reward_noise_std"])
    if kind == "chain":
        return benchmarks.ergodic_chain(env["num_states"], env["gamma"], seed, env["num_actions"],
                                        env["move_prob"], env["reward_noise_std"])
    return benchmarks.two_room_gridworld(env["room_height"], env["room_width"], env["gamma"],
                                         env["slip"], env["reward_noise_std"])


def build_target_policy(cfg: ExperimentConfig, mdp: DiscountedMDP) -> Policy:
    source = cfg["environment"]["target_policy"]
    if source == "optimal":
        return greedy_policy(optimal_q(mdp))
    policy = load_policy(cfg.resolve_path(source))
    try:
        policy.check(mdp)
    except ValueError as exc:
        raise ConfigError(f"target policy {source!r}: {exc}") from exc
    return policy


def build_features(cfg: ExperimentConfig, mdp: DiscountedMDP, policy: Policy) -> FeatureMap:
    f = cfg["features"]
    if f["kind"] == "onehot":
        return one_hot_features(mdp)
    if f["kind"] == "spectral":
        if f["dim"] > mdp.num_pairs:
            raise ConfigError(f"features.dim = {f['dim']} exceeds |S||A| = {mdp.num_pairs}")
        return spectral_features(mdp, policy, f["dim"], f["include_value"])
    # The bandwidth sample uses uniformly random actions: target-policy data
    # can sit on a few pairs, which drives the median distance to zero.
    sample = sample_offline_dataset(mdp, None, 2_000, stream_seed(cfg.master_seed, "rff_sample"))
    enc = state_action_encoding(mdp.num_states, mdp.num_actions)[sample.s, sample.a]
    try:
        return random_fourier_features(enc, mdp.num_states, mdp.num_actions, f["dim"], f["rff_scale"],
                                       stream_seed(cfg.master_seed, "features"), f["rff_normalize"],
                                       f["rff_median_pairs"])
    except ValueError as exc:
        raise ConfigError(f"cannot build random Fourier features: {exc}") from exc


def build_context(cfg: ExperimentConfig, fast: bool = False) -> Context:
    mdp = build_environment(cfg)
    policy = build_target_policy(cfg, mdp)
    features = build_features(cfg, mdp, policy)
    ev = cfg["evaluation"]
    states = select_eval_states(mdp, policy, ev["num_eval_states"], ev["eval_max_step"],
                                stream_seed(cfg.master_seed, "eval_states"))
    for msg in mdp.theory_mode_violations():
        log.info("theory-mode note: %s", msg)
    return Context(cfg, mdp, policy, features, make_eval_set(mdp, policy, states), fast)


def _map(fn, items, workers: int):
    items = list(items)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _write_rows(path: Path, header, rows, comment: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Modes


def run_mixtures(ctx: Context, out: Path, write_all_lambdas: bool) -> dict:
    """Evaluate and sweep modes: FQI on ``D* + ratio x random`` for every configured ratio."""
    ratios = ctx.config["dataset"]["mix_ratios"]
    base = ctx.target_dataset()
    extra = ctx.random_dataset(max(1, int(np.ceil(max(ratios) * len(base)))))
    sweeps = _map(lambda r: ctx.sweep(mix_datasets(base, extra, r)), ratios,
                  ctx.config["experiment"]["workers"])
    prov = ctx.provenance()
    summary_rows, curves, best = [], [], {}
    for ratio, sw in zip(ratios, sweeps):
        label = mixture_label(ratio)
        path = out / f"rmse_{label}.csv"
        sw.best_report.write_csv(path, prov)
        curves.append((path, mixture_legend(ratio)))
        best[label] = {"ratio": ratio, "best_lambda": sw.best_lambda,
                       "final_rmse": sw.best_report.final_rmse}
        for i, (lam, rep) in enumerate(zip(sw.lambdas, sw.reports)):
            summary_rows.append([label, _fmt(ratio), _fmt(lam), _fmt(rep.final_rmse),
                                 int(i == sw.best_index)])
            if write_all_lambdas:
                rep.write_csv(out / f"rmse_{label}_lambda{lam:g}.csv", prov)
    _write_rows(out / "sweep_summary.csv", ["mixture", "ratio", "lambda", "final_rmse", "best"],
                summary_rows, prov)
    emit_plot_script([c[0] for c in curves], out / "plot_rmse.py", "single", [c[1] for c in curves])
    if ctx.config["estimator"]["lstd"]:
        _run_lstd(ctx, base, extra, ratios, out)
    return {"mixtures": best}


def _run_lstd(ctx: Context, base, extra, ratios, out: Path) -> None:
    rows = []
    feats = ctx.eval_set.features(ctx.features, ctx.policy)
    for ratio in ratios:
        ds = mix_datasets(base, extra, ratio)
        for lam in ctx.config["estimator"]["lambdas"]:
            bundle = build_covariance_bundle(ds, ctx.features, ctx.policy, lam)
            try:
                theta, cond = lstd_from_bundle(bundle, ctx.mdp.gamma)
                rmse = float(np.sqrt(np.mean((feats @ theta - ctx.eval_set.values) ** 2)))
            except SingularSystemError as exc:
                cond, rmse = exc.condition_number, float("inf")
            rows.append([mixture_label(ratio), _fmt(ratio), _fmt(lam), _fmt(rmse), _fmt(cond)])
    _write_rows(out / "lstd_summary.csv", ["mixture", "ratio", "lambda", "rmse", "condition_number"],
                rows, ctx.provenance())


def run_diagnose(ctx: Context, out: Path) -> dict:
    ratios = ctx.config["dataset"]["mix_ratios"]
    base = ctx.target_dataset()
    extra = ctx.random_dataset(max(1, int(np.ceil(max(ratios) * len(base)))))
    lam = ctx.config["estimator"]["diagnose_lambda"]
    T = ctx.config["estimator"]["num_rounds"]
    completeness = completeness_residual(ctx.mdp, ctx.features, ctx.policy)
    rows, curves, result = [], [], {}
    for ratio in ratios:
        ds = mix_datasets(base, extra, ratio)
        label = mixture_label(ratio)
        mu = ds.pair_frequencies(ctx.mdp.num_states, ctx.mdp.num_actions)
        shift = shift_constants(ctx.mdp, ctx.features, ctx.policy, mu)
        amp = amplification_spectrum(build_covariance_bundle(ds, ctx.features, ctx.policy, lam),
                                      ctx.mdp.gamma, T)
        path = out / f"amplification_{label}.csv"
        amp.write_csv(path, ctx.provenance())
        curves.append((path, mixture_legend(ratio)))
        rows.append((label, shift, amp.spectral_radius, completeness))
        result[label] = {"c_policy": shift.c_policy, "c_init": shift.c_init,
                         "spectral_radius": amp.spectral_radius,
                         "assumption3_ok": shift.assumption3_satisfied}
    write_summary_csv(out / "diagnostics_summary.csv", rows, ctx.provenance())
    emit_plot_script([c[0] for c in curves], out / "plot_amplification.py", "single",
                     [c[1] for c in curves])
    return {"diagnostics": result, "worst_completeness_residual": completeness.worst_residual}


def lower_policies(ctx: Context) -> list[tuple[str, np.ndarray, Policy | None, float]]:
    """``(name, action_probs, base_policy, epsilon)`` for each lower-performance policy, best first."""
    ds = ctx.config["dataset"]
    A = ctx.mdp.num_actions
    out = []
    if ds["lower_policy_files"]:
        for p in ds["lower_policy_files"]:
            pol = load_policy(ctx.config.resolve_path(p))
            pol.check(ctx.mdp)
            out.append((Path(p).stem, epsilon_greedy_probs(pol, 0.0, A), pol, 0.0))
    else:
        for eps in ds["lower_epsilons"]:
            out.append((f"eps{eps:g}", epsilon_greedy_probs(ctx.policy, eps, A), ctx.policy, eps))
    values = [ctx.mdp.init_dist @ stochastic_state_values(ctx.mdp, probs) for _, probs, _, _ in out]
    order = np.argsort(-np.array(values), kind="stable")
    return [out[i] for i in order]


def run_compare(ctx: Context, out: Path) -> dict:
    cfg = ctx.config
    base = ctx.target_dataset()
    ev = cfg["evaluation"]
    n_extra = int(np.ceil(cfg["dataset"]["lower_ratio"] * len(base)))
    if ev["exact_values"]:
        target_value = exact_q_value(ctx.mdp, ctx.policy).scalar_value
    else:
        target_value = monte_carlo_value(ctx.mdp, ctx.policy, ev["num_value_trajectories"],
                                         rng_seed=ctx.seed("value_target")).mean
    rows, result = [], {}
    for i, (name, probs, pol, eps) in enumerate(lower_policies(ctx), start=1):
        if ev["exact_values"]:
            value = float(ctx.mdp.init_dist @ stochastic_state_values(ctx.mdp, probs))
        else:
            value = monte_carlo_value(ctx.mdp, pol, ev["num_value_trajectories"],
                                      rng_seed=ctx.seed(f"value_lower_{i}"), epsilon=eps).mean
        extra = sample_offline_dataset(ctx.mdp, pol, max(n_extra, 1), ctx.seed(f"lower_data_{i}"),
                                       horizon=cfg["dataset"]["horizon"], epsilon=eps,
                                       source_tag=lower_perf_tag(i))
        sw = ctx.sweep(mix_datasets(base, extra, cfg["dataset"]["lower_ratio"]))
        v = compare_policies(sw.best_report.final_rmse, target_value - value)
        rows.append([f"sub{i}", name, _fmt(sw.best_lambda), _fmt(v.rmse), _fmt(v.value_gap), v.verdict])
        result[f"sub{i}"] = {"policy": name, "rmse": v.rmse, "value_gap": v.value_gap,
                             "verdict": v.verdict}
    _write_rows(out / "comparison.csv",
                ["lower_policy", "name", "best_lambda", "rmse", "value_gap", "verdict"],
                rows, ctx.provenance())
    return {"target_value": target_value, "comparisons": result}


def run_simulate(cfg: ExperimentConfig, out: Path, fast: bool = False) -> dict:
    sim = cfg["simulation"]
    reps = sim["fast_repetitions"] if fast else sim["repetitions"]
    prov = f"seed={cfg.master_seed}, config_hash={cfg.hash()}"
    paths, labels, result = [], [], {}
    for n in sim["n_samples"]:
        sc = SimConfig(n, sim["dim"], sim["gamma"], sim["lambda_reg"], sim["num_rounds"], reps,
                       stream_seed(cfg.master_seed, f"simulation_{n}"))
        curves = run_simulation(sc, cfg["experiment"]["workers"])
        path = out / f"simulation_N{n}.csv"
        curves.write_csv(path, prov)
        paths.append(path)
        labels.append(f"N = {n}")
        ok = ~curves.saturated
        result[f"N{n}"] = {"frobenius_log10_slope": log_slope(curves.mean_frobenius[ok]),
                           "error_log10_slope": log_slope(curves.mean_estimation_error[ok]),
                           "saturated_rounds": int(curves.saturated.sum())}
    emit_plot_script(paths, out / "plot_simulation.py", "two_panel", labels)
    return {"simulation": result}


def run_experiment(cfg: ExperimentConfig, out_dir, fast: bool = False) -> dict:
    """Run the configured mode, write its artifacts into ``out_dir`` and return the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = cfg.mode
    if mode == "simulate":
        summary = run_simulate(cfg, out, fast)
    else:
        ctx = build_context(cfg, fast)
        if mode == "evaluate":
            summary = run_mixtures(ctx, out, write_all_lambdas=False)
        elif mode == "sweep":
            summary = run_mixtures(ctx, out, write_all_lambdas=True)
        elif mode == "diagnose":
            summary = run_diagnose(ctx, out)
        elif mode == "compare":
            summary = run_compare(ctx, out)
        else:  # validated earlier
            raise ConfigError(f"unknown mode {mode!r}")
    summary = {"mode": mode, "seed": cfg.master_seed, "config_hash": cfg.hash(), **summary}
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=1, sort_keys=True) + "\n")
    return summary


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


__all__ = [
    "ComparisonVerdict", "Context", "build_context", "compare_policies", "run_experiment",
    "stream_seed",
]
