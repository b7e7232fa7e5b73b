"""Command-line front end: train, sweep, fit, report.

Configuration is a JSON file with per-command sections; ``--preset desk``
shrinks particle counts and trial budgets so the whole pipeline finishes on a
workstation, ``--preset paper`` runs the full protocol (N up to 100,
K = 10 N^2).  Every emitted file embeds the configuration hash and master seed
so any artifact can be regenerated from its own provenance line.

Exit codes: 0 success, 2 configuration error, 3 missing inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from aqem.engine import (
    MissingPolicyError,
    RunRecord,
    append_results,
    default_trials,
    read_results,
    sweep_curve,
)
from aqem.noise import NoiseSpec
from aqem.policies import MarkovPolicy
from aqem.regress import (
    LogSeries,
    FAMILIES,
    PiecewiseFit,
    fit_all_families,
    fit_report,
    predict,
    select_model,
)
from aqem.trainer import TrainConfig, train_policy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3

# Robustness-test noise grid: V in {1,2,3} for the symmetric models,
# V in {1,3,5,7} at gamma = 0.8509 for the asymmetric ones.
GAMMA_ASYMMETRIC = 0.8509
SYMMETRIC_V = (1.0, 2.0, 3.0)
ASYMMETRIC_V = (1.0, 3.0, 5.0, 7.0)


def default_noise_grid() -> list[NoiseSpec]:
    grid = [NoiseSpec("none")]
    for v in SYMMETRIC_V:
        grid.append(NoiseSpec("normal", v))
        grid.append(NoiseSpec("random_telegraph", v))
    for v in ASYMMETRIC_V:
        grid.append(NoiseSpec("skew_normal", v, GAMMA_ASYMMETRIC))
        grid.append(NoiseSpec("log_normal", v, GAMMA_ASYMMETRIC))
    return grid


class ConfigError(Exception):
    pass


def desk_trials(n: int) -> int:
    return min(max(10**4, 10 * n * n), 10**5)


PRESETS = {
    "desk": {"max_n_bayes": 50, "max_n_train": 20, "trials_fn": desk_trials},
    "paper": {"max_n_bayes": 100, "max_n_train": 100, "trials_fn": default_trials},
}


def config_hash(cfg: dict) -> str:
    """Hash of the science-relevant configuration (execution knobs excluded)."""
    scrubbed = {k: v for k, v in cfg.items() if k not in ("workers",)}
    blob = json.dumps(scrubbed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str, overrides: argparse.Namespace) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if overrides.seed is not None:
        cfg["seed"] = overrides.seed
    if overrides.workers is not None:
        cfg["workers"] = overrides.workers
    if overrides.trials is not None:
        cfg["trials"] = overrides.trials
    if overrides.preset is not None:
        cfg["preset"] = overrides.preset
    cfg.setdefault("seed", 0)
    cfg.setdefault("workers", 1)
    cfg.setdefault("preset", "desk")
    if cfg["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {cfg['preset']!r}")
    return cfg


def _noise_from(cfg_section, default=None):
    if cfg_section is None:
        return default if default is not None else NoiseSpec("none")
    try:
        return NoiseSpec.from_dict(cfg_section)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad noise spec {cfg_section!r}: {exc}") from exc


def _grid_from(section) -> list[NoiseSpec]:
    if section in (None, "default"):
        return default_noise_grid()
    try:
        return [NoiseSpec.from_dict(d) for d in section]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad noise grid: {exc}") from exc


def _n_range(section, key, cap) -> list[int]:
    lo, hi = section.get(key, [4, cap])
    lo, hi = int(lo), int(hi)
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad {key}: [{lo}, {hi}]")
    return list(range(lo, min(hi, cap) + 1))


def policy_path(policy_dir: Path, n: int) -> Path:
    return policy_dir / f"markov_n{n:03d}.json"


def cmd_train(cfg: dict) -> int:
    section = cfg.get("train", {})
    preset = PRESETS[cfg["preset"]]
    ns = _n_range(section, "n_range", preset["max_n_train"])
    noise = _noise_from(section.get("noise"))
    policy_dir = Path(section.get("policy_dir", "policies"))
    policy_dir.mkdir(parents=True, exist_ok=True)
    root_boost = int(section.get("root_boost", 4))
    chash = config_hash(cfg)
    warm = None
    for n in ns:
        gens = int(section.get("generations", 50))
        if n == ns[0] and warm is None:
            gens *= root_boost
        tc = TrainConfig(
            n=n,
            noise=noise,
            population=int(section.get("population", 40)),
            generations=gens,
            diff_weight=float(section.get("diff_weight", 0.7)),
            crossover=float(section.get("crossover", 0.9)),
            samples_per_eval=section.get("samples_per_eval"),
            validation_samples=int(section.get("validation_samples", 2000)),
            seed=int(cfg["seed"]) + n,
        )
        log_rows: list = []
        policy = train_policy(tc, warm_start=warm, log_sink=log_rows)
        meta = dict(policy.metadata)
        meta["config_hash"] = chash
        meta["master_seed"] = cfg["seed"]
        policy = MarkovPolicy(policy.n_particles, policy.deltas, meta)
        policy.save(policy_path(policy_dir, n))
        log_path = policy_dir / f"train_log_n{n:03d}.csv"
        lines = [f"# config={chash} seed={cfg['seed']}", "generation,best,mean"]
        lines += [
            f"{r['generation']},{r['best']!r},{r['mean']!r}" for r in log_rows
        ]
        log_path.write_text("\n".join(lines) + "\n")
        warm = policy
        print(f"trained N={n}: objective={policy.metadata['objective']:.4f}")
    return EXIT_OK


def _load_policies(policy_dir: Path, ns) -> dict:
    out = {}
    for n in ns:
        p = policy_path(policy_dir, n)
        if p.exists():
            out[n] = MarkovPolicy.load(p)
    return out


def _reference_records(ns, trials_fn, seed, workers) -> list[RunRecord]:
    """Simulated SQL curve plus the synthetic HL curve tied to its intercept."""
    curve, records = sweep_curve(
        "sql", ns, NoiseSpec("none"), seed, trials_fn=trials_fn, workers=workers
    )
    series = LogSeries.from_curve(curve.ns(), curve.holevos())
    design = np.stack([np.ones(series.v), series.log_n], axis=1)
    beta, *_ = np.linalg.lstsq(design, series.log_v, rcond=None)
    intercept = float(beta[0])
    for n in ns:
        vh = float(np.exp(intercept) / n**2)
        records.append(
            RunRecord(
                n=n,
                policy="hl",
                noise=NoiseSpec("none"),
                trials=0,
                sharpness=(vh + 1.0) ** -0.5,
                holevo=vh,
                master_seed=seed,
            )
        )
    return records


def cmd_sweep(cfg: dict) -> int:
    section = cfg.get("sweep", {})
    preset = PRESETS[cfg["preset"]]
    ns = _n_range(section, "n_range", preset["max_n_bayes"])
    families = section.get("families", ["bayes", "rl"])
    grid = _grid_from(section.get("noise_grid"))
    results_path = Path(section.get("results", "results.csv"))
    results_path.parent.mkdir(parents=True, exist_ok=True)
    workers = int(cfg["workers"])
    seed = int(cfg["seed"])
    if "trials" in cfg:
        k_fixed = int(cfg["trials"])
        trials_fn = lambda n: k_fixed
    else:
        trials_fn = preset["trials_fn"]
    # noise draws are wrapped mod 2*pi (not re-drawn); recorded with every sweep
    provenance = f"config={config_hash(cfg)} seed={seed} noise_wrap=mod-2pi"

    records = []
    if section.get("reference", True):
        records.extend(_reference_records(ns, trials_fn, seed, workers))
    for family in families:
        policies = None
        if family == "rl":
            policy_dir = Path(section.get("policy_dir", "policies"))
            if "n_range_rl" in section:
                ns_rl = _n_range(section, "n_range_rl", preset["max_n_train"])
            else:
                ns_rl = [n for n in ns if n <= preset["max_n_train"]]
            policies = _load_policies(policy_dir, ns_rl)
            missing = [n for n in ns_rl if n not in policies]
            if missing:
                print(f"missing trained policies for N in {missing}", file=sys.stderr)
                return EXIT_MISSING
        for noise in grid:
            use_ns = ns if family != "rl" else ns_rl
            try:
                _, recs = sweep_curve(
                    family, use_ns, noise, seed,
                    policies=policies, trials_fn=trials_fn, workers=workers,
                )
            except MissingPolicyError as exc:
                print(str(exc), file=sys.stderr)
                return EXIT_MISSING
            records.extend(recs)
            print(f"swept {family} {noise.model} V={noise.variance}: {len(recs)} points")
    append_results(results_path, records, provenance=provenance)
    print(f"appended {len(records)} records to {results_path}")
    return EXIT_OK


def curve_key(rec: RunRecord) -> tuple:
    return (rec.policy, rec.noise.model, rec.noise.variance, rec.noise.skewness)


def _fit_one_curve(recs: list, meta: dict):
    recs = sorted(recs, key=lambda r: r.n)
    series = LogSeries.from_curve([r.n for r in recs], [r.holevo for r in recs])
    fits = fit_all_families(series)
    skipped = [f for f in FAMILIES if f not in fits]
    selection = select_model(fits)
    doc = fit_report(series, fits, selection, meta)
    doc["skipped_families"] = skipped
    return series, fits, selection, doc


def cmd_fit(cfg: dict) -> int:
    section = cfg.get("fit", {})
    results_path = Path(section.get("results", "results.csv"))
    if not results_path.exists():
        print(f"results file not found: {results_path}", file=sys.stderr)
        return EXIT_MISSING
    reports_dir = Path(section.get("reports_dir", "fits"))
    reports_dir.mkdir(parents=True, exist_ok=True)
    min_points = int(section.get("min_points", 4))
    chash = config_hash(cfg)
    groups: dict = {}
    for rec in read_results(results_path):
        if rec.policy == "hl":
            continue
        groups.setdefault(curve_key(rec), []).append(rec)
    summary = [
        "# config=%s" % chash,
        "policy,model,variance,skewness,points,family,two_wp,adj_r2",
    ]
    wrote = 0
    for key, recs in sorted(groups.items()):
        policy, model, variance, skew = key
        if len(recs) < min_points:
            print(f"skipping {key}: only {len(recs)} points")
            continue
        meta = {
            "policy": policy,
            "noise": {"model": model, "variance": variance, "skewness": skew},
            "config_hash": chash,
            "master_seed": cfg["seed"],
        }
        series, fits, selection, doc = _fit_one_curve(recs, meta)
        name = f"fit_{policy}_{model}_V{variance:g}.json"
        (reports_dir / name).write_text(json.dumps(doc, indent=2) + "\n")
        adjr2 = fits[selection.chosen].criteria.get("adjr2")
        summary.append(
            f"{policy},{model},{variance!r},{skew!r},{len(recs)},"
            f"{selection.chosen},{selection.two_wp!r},"
            f"{'' if adjr2 is None else repr(adjr2)}"
        )
        wrote += 1
        print(f"fit {key}: chose {selection.chosen}, 2wp={selection.two_wp:.4f}")
    (reports_dir / "summary.csv").write_text("\n".join(summary) + "\n")
    print(f"wrote {wrote} fit reports to {reports_dir}")
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    section = cfg.get("report", {})
    reports_dir = Path(section.get("reports_dir", "fits"))
    if not reports_dir.exists():
        print(f"fit reports not found in {reports_dir}", file=sys.stderr)
        return EXIT_MISSING
    out_dir = Path(section.get("out", "report"))
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    docs = []
    for path in sorted(reports_dir.glob("fit_*.json")):
        docs.append(json.loads(path.read_text()))
    if not docs:
        print(f"no fit reports in {reports_dir}", file=sys.stderr)
        return EXIT_MISSING

    # plot-ready data: points plus the chosen fit's prediction
    plot_lines = [f"# config={chash}", "policy,model,variance,n,log_n,log_vh,fit_log_vh"]
    verdicts: dict = {}
    for doc in docs:
        policy = doc["policy"]
        noise = doc["noise"]
        series = LogSeries.from_curve(
            doc["points"]["n"], np.exp(doc["points"]["log_vh"])
        )
        chosen = doc["selection"]["chosen"]
        fam = doc["families"][chosen]
        fit = PiecewiseFit(
            family=chosen,
            b=fam["b"],
            sse=fam["sse"],
            breakpoints=fam["breakpoint_indices"],
            slopes=fam["slopes"],
            intercepts=fam["intercepts"],
            interp_stop=fam["interp_stop"],
        )
        pred = predict(series, fit)
        for n, ln, lv, fv in zip(
            doc["points"]["n"], doc["points"]["log_n"], doc["points"]["log_vh"], pred
        ):
            plot_lines.append(
                f"{policy},{noise['model']},{noise['variance']!r},"
                f"{n:g},{ln!r},{lv!r},{float(fv)!r}"
            )
        two_wp = doc["selection"]["two_wp"]
        if noise["model"] != "none" and policy in ("bayes", "rl"):
            slot = verdicts.setdefault(policy, {})
            best = slot.setdefault(noise["model"], None)
            if two_wp > 1.0 and (best is None or noise["variance"] > best):
                slot[noise["model"]] = noise["variance"]
    (out_dir / "plot_data.csv").write_text("\n".join(plot_lines) + "\n")

    verdict_doc = {"config_hash": chash, "master_seed": cfg["seed"], "policies": {}}
    for policy, per_model in verdicts.items():
        passing = {m: v for m, v in per_model.items() if v is not None}
        threshold = min(passing.values()) if len(passing) == len(per_model) and passing else None
        verdict_doc["policies"][policy] = {
            "per_model_max_v": per_model,
            "robust_threshold_v": threshold,
        }
    (out_dir / "robustness.json").write_text(json.dumps(verdict_doc, indent=2) + "\n")
    print(f"wrote plot data and robustness verdict to {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aqem",
        description="Adaptive phase-estimation robustness benchmark",
    )
    parser.add_argument("command", choices=["train", "sweep", "fit", "report"])
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--preset", choices=["desk", "paper"], default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--trials", type=int, default=None, help="override trial count K")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {
        "train": cmd_train,
        "sweep": cmd_sweep,
        "fit": cmd_fit,
        "report": cmd_report,
    }[args.command]
    try:
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
