"""Experiment harness: generate -> train -> evaluate -> report.

One declarative INI config (overridable by flags) drives the full protocol:
datasets per (budget, seed), model training for both algorithms, evaluation
of optimal actions against the reference posterior on recorded
observations, and summary tables/plots. Every command rewrites the resolved
config next to its outputs, and the whole pipeline is reproducible
byte-for-byte from (config, seeds).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import AbdmError, Dataset, TaskId, read_dataset, split_seed, write_dataset
from .costs import CostSpec, incurred_cost
from .inference import (
    RESAMPLE,
    ActionSpace,
    CostRegressor,
    PosteriorEstimator,
    TrainConfig,
    action_distribution_for,
    argmin_on_grid,
    npe_mc_expected_cost_curve,
    train_bam,
    train_npe,
)
from .oracles import (
    expected_cost_curve,
    load_posterior,
    reference_posterior,
    save_posterior,
)
from .report import read_csv, svg_line_plot, write_csv
from .simulators import Zone, classify_zone, generate_dataset, simulation_calls

DESK_BUDGETS = (500, 1000, 5000, 10000)
LARGE_BUDGETS = (50000, 100000)
ALGORITHMS = ("npe-mc", "bam")
ABLATION_ACTION_MODES = (1, 5, 10, 100, RESAMPLE)
ABLATION_MC_SAMPLES = (10, 100, 1000)

RESULT_COLUMNS = [
    "task",
    "algo",
    "budget",
    "seed",
    "obs_id",
    "action",
    "expected_cost",
    "incurred_cost",
    "gap",
]


@dataclass
class ExperimentConfig:
    task: TaskId = TaskId.TOY
    algorithms: tuple = ALGORITHMS
    budgets: tuple = DESK_BUDGETS
    seeds: tuple = (0,)
    eval_observations: int = 0  # 0 means the task default (10; 1000 for bvep)
    eval_seed: int = 9001
    out: Path = Path("runs/out")
    jobs: int = 1
    include_large_budgets: bool = False
    lv_marginals: tuple = (0, 1, 2, 3)
    ablation: bool = False
    ablation_budget: int = 5000
    learning_rate: float = 0.0  # 0 means the task default
    batch_size: int = 500
    max_epochs: int = 500
    patience: int = 20
    mdn_components: int = 5
    actions_per_pair: object = RESAMPLE
    mc_samples: int = 1000

    def __post_init__(self):
        self.budgets = tuple(sorted(int(b) for b in self.budgets))
        allowed = DESK_BUDGETS + LARGE_BUDGETS if self.include_large_budgets else DESK_BUDGETS
        for b in self.budgets:
            if b not in allowed:
                raise ValueError(
                    f"budget {b} not allowed (large budgets need include_large_budgets)"
                )
        if not self.seeds:
            raise ValueError("need at least one seed")
        for algo in self.algorithms:
            if algo not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {algo!r}")
        self.out = Path(self.out)

    @property
    def n_eval(self) -> int:
        if self.eval_observations > 0:
            return self.eval_observations
        return 1000 if self.task is TaskId.BVEP else 10

    def train_config(self, **overrides) -> TrainConfig:
        base = dict(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            mdn_components=self.mdn_components,
            actions_per_pair=self.actions_per_pair,
            mc_samples=self.mc_samples,
        )
        if self.learning_rate > 0:
            base["learning_rate"] = self.learning_rate
        base.update(overrides)
        return TrainConfig.for_task(self.task, **base)

    def cost_specs(self) -> list[tuple[str, CostSpec]]:
        """Decision tasks for this simulator: LV carries four marginal costs."""
        if self.task is TaskId.LOTKA_VOLTERRA:
            return [
                (f"{self.task.key}_m{i}", CostSpec(self.task, marginal_index=i))
                for i in self.lv_marginals
            ]
        return [(self.task.key, CostSpec(self.task))]


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------


def _parse_actions_per_pair(text: str):
    text = text.strip()
    return text if text == RESAMPLE else int(text)


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise AbdmError(f"cannot read config file {path}")
    kw: dict = {}
    if parser.has_section("experiment"):
        sec = parser["experiment"]
        if "task" in sec:
            kw["task"] = TaskId.from_key(sec["task"])
        if "algorithms" in sec:
            raw = sec["algorithms"].replace(",", " ").split()
            kw["algorithms"] = tuple(ALGORITHMS) if raw == ["both"] else tuple(raw)
        for name, cast in [
            ("budgets", int),
            ("seeds", int),
            ("lv_marginals", int),
        ]:
            if name in sec:
                kw[name] = tuple(cast(v) for v in sec[name].replace(",", " ").split())
        for name in ("eval_observations", "eval_seed", "jobs"):
            if name in sec:
                kw[name] = sec.getint(name)
        if "include_large_budgets" in sec:
            kw["include_large_budgets"] = sec.getboolean("include_large_budgets")
        if "out" in sec:
            kw["out"] = Path(sec["out"])
    if parser.has_section("train"):
        sec = parser["train"]
        for name in ("batch_size", "max_epochs", "patience", "mdn_components", "mc_samples"):
            if name in sec:
                kw[name] = sec.getint(name)
        if "learning_rate" in sec:
            kw["learning_rate"] = sec.getfloat("learning_rate")
        if "actions_per_pair" in sec:
            kw["actions_per_pair"] = _parse_actions_per_pair(sec["actions_per_pair"])
    if parser.has_section("ablation"):
        sec = parser["ablation"]
        if "enabled" in sec:
            kw["ablation"] = sec.getboolean("enabled")
        if "budget" in sec:
            kw["ablation_budget"] = sec.getint("budget")
    return ExperimentConfig(**kw)


def write_resolved_config(cfg: ExperimentConfig, path: Path) -> None:
    lines = ["[experiment]"]
    lines.append(f"task = {cfg.task.key}")
    lines.append(f"algorithms = {' '.join(cfg.algorithms)}")
    lines.append(f"budgets = {' '.join(str(b) for b in cfg.budgets)}")
    lines.append(f"seeds = {' '.join(str(s) for s in cfg.seeds)}")
    lines.append(f"eval_observations = {cfg.n_eval}")
    lines.append(f"eval_seed = {cfg.eval_seed}")
    lines.append(f"out = {cfg.out}")
    lines.append(f"jobs = {cfg.jobs}")
    lines.append(f"include_large_budgets = {cfg.include_large_budgets}")
    lines.append(f"lv_marginals = {' '.join(str(i) for i in cfg.lv_marginals)}")
    lines.append("")
    lines.append("[train]")
    lines.append(f"learning_rate = {cfg.train_config().learning_rate}")
    lines.append(f"batch_size = {cfg.batch_size}")
    lines.append(f"max_epochs = {cfg.max_epochs}")
    lines.append(f"patience = {cfg.patience}")
    lines.append(f"mdn_components = {cfg.mdn_components}")
    lines.append(f"actions_per_pair = {cfg.actions_per_pair}")
    lines.append(f"mc_samples = {cfg.mc_samples}")
    lines.append("")
    lines.append("[ablation]")
    lines.append(f"enabled = {cfg.ablation}")
    lines.append(f"budget = {cfg.ablation_budget}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Run layout
# ---------------------------------------------------------------------------


class RunPaths:
    def __init__(self, out: Path, task: TaskId):
        self.out = Path(out)
        self.task = task

    def _dir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def dataset(self, budget: int, seed: int) -> Path:
        return self._dir("datasets") / f"{self.task.key}_n{budget}_s{seed}.abdm"

    def eval_dataset(self, cfg: ExperimentConfig) -> Path:
        return self._dir("eval") / f"{self.task.key}_eval_s{cfg.eval_seed}_n{cfg.n_eval}.abdm"

    def model(self, algo: str, budget: int, seed: int, marginal=None, variant="") -> Path:
        tag = f"_m{marginal}" if marginal is not None else ""
        var = f"_{variant}" if variant else ""
        name = f"{self.task.key}_{algo}{tag}{var}_n{budget}_s{seed}.net"
        return self._dir("models") / name

    def curve(self, model_path: Path) -> Path:
        return self._dir("curves") / (model_path.stem + "_curve.csv")

    def oracle_cache(self, obs_id: int, key: str) -> Path:
        return self._dir("oracle_cache") / f"{self.task.key}_obs{obs_id}_{key}.orc"

    def results_dir(self) -> Path:
        return self._dir("results")

    def profiles_dir(self) -> Path:
        return self._dir("results/profiles")

    def report_dir(self) -> Path:
        return self._dir("report")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig) -> int:
    paths = RunPaths(cfg.out, cfg.task)
    write_resolved_config(cfg, cfg.out / "resolved_config.ini")
    for seed in cfg.seeds:
        for budget in cfg.budgets:
            ds = generate_dataset(cfg.task, budget, master_seed=seed)
            write_dataset(ds, paths.dataset(budget, seed))
            print(f"generated {paths.dataset(budget, seed)} ({budget} pairs)")
    eval_ds = generate_dataset(cfg.task, cfg.n_eval, master_seed=cfg.eval_seed)
    write_dataset(eval_ds, paths.eval_dataset(cfg))
    print(f"generated {paths.eval_dataset(cfg)} ({cfg.n_eval} observations)")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _write_curve(path: Path, curve) -> None:
    write_csv(path, ["epoch", "train_loss", "val_loss"], [list(row) for row in curve])


def _train_job(args) -> str:
    """One training unit; module-level so process pools can pickle it."""
    (task_key, algo, dataset_path, model_path, curve_path, cfg_kwargs, marginal, seed) = args
    task = TaskId.from_key(task_key)
    ds = read_dataset(dataset_path)
    cfg = TrainConfig.for_task(task, **cfg_kwargs)
    if algo == "npe-mc":
        est = train_npe(ds, cfg, seed=seed)
        est.save(model_path)
        _write_curve(Path(curve_path), est.curve)
    else:
        spec = CostSpec(task, marginal_index=marginal or 0)
        reg = train_bam(ds, cfg, action_distribution_for(task), spec, seed=seed)
        reg.save(model_path)
        _write_curve(Path(curve_path), reg.curve)
    return str(model_path)


def _training_jobs(cfg: ExperimentConfig, paths: RunPaths) -> list[tuple]:
    jobs = []
    base_kwargs = dict(
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        mdn_components=cfg.mdn_components,
        actions_per_pair=cfg.actions_per_pair,
        mc_samples=cfg.mc_samples,
    )
    if cfg.learning_rate > 0:
        base_kwargs["learning_rate"] = cfg.learning_rate

    def add(algo, budget, seed, marginal=None, variant="", **extra):
        model = paths.model(algo if algo != "npe-mc" else "npe", budget, seed, marginal, variant)
        kwargs = dict(base_kwargs)
        kwargs.update(extra)
        jobs.append(
            (
                cfg.task.key,
                algo,
                str(paths.dataset(budget, seed)),
                str(model),
                str(paths.curve(model)),
                kwargs,
                marginal,
                seed,
            )
        )

    marginals = cfg.lv_marginals if cfg.task is TaskId.LOTKA_VOLTERRA else (None,)
    for seed in cfg.seeds:
        for budget in cfg.budgets:
            if "npe-mc" in cfg.algorithms:
                add("npe-mc", budget, seed)
            if "bam" in cfg.algorithms:
                for m in marginals:
                    add("bam", budget, seed, m)
        if cfg.ablation:
            m0 = marginals[0]
            for mode in ABLATION_ACTION_MODES:
                add(
                    "bam",
                    cfg.ablation_budget,
                    seed,
                    m0,
                    variant=f"ap{mode}",
                    actions_per_pair=mode,
                )
            if cfg.ablation_budget not in cfg.budgets and "npe-mc" in cfg.algorithms:
                add("npe-mc", cfg.ablation_budget, seed)
    return jobs


def cmd_train(cfg: ExperimentConfig) -> int:
    paths = RunPaths(cfg.out, cfg.task)
    write_resolved_config(cfg, cfg.out / "resolved_config.ini")
    jobs = _training_jobs(cfg, paths)
    for job in jobs:
        if not Path(job[2]).exists():
            raise AbdmError(f"missing dataset {job[2]}; run generate first")
    if cfg.ablation and cfg.ablation_budget not in cfg.budgets:
        for seed in cfg.seeds:
            ds_path = paths.dataset(cfg.ablation_budget, seed)
            if not ds_path.exists():
                write_dataset(
                    generate_dataset(cfg.task, cfg.ablation_budget, master_seed=seed), ds_path
                )
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for done in pool.map(_train_job, jobs):
                print(f"trained {done}")
    else:
        for job in jobs:
            print(f"trained {_train_job(job)}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _oracle_for(paths: RunPaths, cfg: ExperimentConfig, obs_id: int, x_o):
    key_src = repr((cfg.task.key, cfg.eval_seed, obs_id, "v1"))
    key = hashlib.blake2b(key_src.encode(), digest_size=6).hexdigest()
    cache = paths.oracle_cache(obs_id, key)
    if cache.exists():
        return load_posterior(cache)
    post = reference_posterior(cfg.task, x_o, seed=split_seed(cfg.eval_seed, 1000 + obs_id))
    save_posterior(cache, post)
    return post


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    paths = RunPaths(cfg.out, cfg.task)
    write_resolved_config(cfg, cfg.out / "resolved_config.ini")
    eval_path = paths.eval_dataset(cfg)
    if not eval_path.exists():
        raise AbdmError(f"missing evaluation observations {eval_path}; run generate first")
    obs = read_dataset(eval_path)
    space = ActionSpace.for_task(cfg.task)
    has_oracle_posterior = cfg.task is not TaskId.BVEP

    # Reference decisions first: the reference posterior may re-run the
    # deterministic forward model, which must not count against the
    # algorithms' amortization guarantee below.
    posts = []
    if has_oracle_posterior:
        for j in range(len(obs)):
            posts.append(_oracle_for(paths, cfg, j, obs.xs[j]))
            print(f"oracle posterior ready for obs {j}")

    rows = []
    for dtask, spec in cfg.cost_specs():
        oracle_curves = []
        refs = []
        for j in range(len(obs)):
            if has_oracle_posterior:
                curve = expected_cost_curve(posts[j], spec, space.actions)
                a_ref, ec_ref = argmin_on_grid(curve, space.actions)
            else:
                curve = None
                a_ref = float(classify_zone(obs.thetas[j][0]).value)
                ec_ref = 0.0
            oracle_curves.append(curve)
            inc_ref = incurred_cost(obs.thetas[j], a_ref, spec)
            refs.append((a_ref, ec_ref, inc_ref))

        for seed in cfg.seeds:
            for budget in cfg.budgets:
                est = reg = None
                if "npe-mc" in cfg.algorithms:
                    est = PosteriorEstimator.load(paths.model("npe", budget, seed))
                if "bam" in cfg.algorithms:
                    marginal = spec.marginal_index if cfg.task is TaskId.LOTKA_VOLTERRA else None
                    reg = CostRegressor.load(paths.model("bam", budget, seed, marginal))

                # Amortization: scoring actions for fresh observations must
                # not invoke the simulator.
                sims_before = simulation_calls()
                algo_curves: dict[str, list[np.ndarray]] = {}
                if est is not None:
                    algo_curves["npe-mc"] = [
                        npe_mc_expected_cost_curve(
                            est,
                            obs.xs[j],
                            space.actions,
                            cfg.mc_samples,
                            spec,
                            seed=split_seed(split_seed(seed, budget), 5000 + j),
                        )
                        for j in range(len(obs))
                    ]
                if reg is not None:
                    algo_curves["bam"] = [
                        reg.expected_cost_curve(obs.xs[j], space.actions)
                        for j in range(len(obs))
                    ]
                if simulation_calls() != sims_before:
                    raise AbdmError("amortization violated: simulator ran during inference")

                for j in range(len(obs)):
                    a_ref, ec_ref, inc_ref = refs[j]
                    rows.append(
                        [dtask, "oracle", budget, seed, j, float(a_ref), float(ec_ref), float(inc_ref), 0.0]
                    )
                    for algo in cfg.algorithms:
                        curve = algo_curves[algo][j]
                        a_alg, ec_alg = argmin_on_grid(curve, space.actions)
                        inc = incurred_cost(obs.thetas[j], a_alg, spec)
                        rows.append(
                            [
                                dtask,
                                algo,
                                budget,
                                seed,
                                j,
                                float(a_alg),
                                float(ec_alg),
                                float(inc),
                                float(inc - inc_ref),
                            ]
                        )
                    if has_oracle_posterior:
                        profile_rows = []
                        for k, a in enumerate(space.actions):
                            row = [float(a), float(oracle_curves[j][k])]
                            for algo in cfg.algorithms:
                                row.append(float(algo_curves[algo][j][k]))
                            profile_rows.append(row)
                        write_csv(
                            paths.profiles_dir()
                            / f"{dtask}_n{budget}_s{seed}_obs{j}_profile.csv",
                            ["action", "oracle"] + list(cfg.algorithms),
                            profile_rows,
                        )
                print(f"evaluated {dtask} budget={budget} seed={seed}")

    write_csv(paths.results_dir() / "results.csv", RESULT_COLUMNS, rows)
    if cfg.ablation:
        _evaluate_ablations(cfg, paths, obs, space)
    return 0


def _evaluate_ablations(cfg: ExperimentConfig, paths: RunPaths, obs: Dataset, space: ActionSpace) -> None:
    dtask, spec = cfg.cost_specs()[0]
    marginal = spec.marginal_index if cfg.task is TaskId.LOTKA_VOLTERRA else None
    posts = [_oracle_for(paths, cfg, j, obs.xs[j]) for j in range(len(obs))]
    refs = []
    for j, post in enumerate(posts):
        curve = expected_cost_curve(post, spec, space.actions)
        a_ref, _ = argmin_on_grid(curve, space.actions)
        refs.append(incurred_cost(obs.thetas[j], a_ref, spec))
    rows = []
    budget = cfg.ablation_budget
    for seed in cfg.seeds:
        for mode in ABLATION_ACTION_MODES:
            model_path = paths.model("bam", budget, seed, marginal, variant=f"ap{mode}")
            reg = CostRegressor.load(model_path)
            _, curve_rows = read_csv(paths.curve(model_path))
            val_mse = min(float(r[2]) for r in curve_rows)
            gaps = []
            for j in range(len(obs)):
                a, _ = argmin_on_grid(reg.expected_cost_curve(obs.xs[j], space.actions), space.actions)
                gaps.append(incurred_cost(obs.thetas[j], a, spec) - refs[j])
            rows.append([dtask, "bam", f"actions_{mode}", budget, seed, "val_mse", val_mse])
            rows.append([dtask, "bam", f"actions_{mode}", budget, seed, "mean_gap", float(np.mean(gaps))])
        est = PosteriorEstimator.load(paths.model("npe", budget, seed))
        for m in ABLATION_MC_SAMPLES:
            gaps = []
            for j in range(len(obs)):
                curve = npe_mc_expected_cost_curve(
                    est, obs.xs[j], space.actions, m, spec,
                    seed=split_seed(split_seed(seed, budget), 7000 + j),
                )
                a, _ = argmin_on_grid(curve, space.actions)
                gaps.append(incurred_cost(obs.thetas[j], a, spec) - refs[j])
            rows.append([dtask, "npe-mc", f"mc_{m}", budget, seed, "mean_gap", float(np.mean(gaps))])
    write_csv(
        paths.results_dir() / "ablation_results.csv",
        ["task", "component", "variant", "budget", "seed", "metric", "value"],
        rows,
    )


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(cfg: ExperimentConfig) -> int:
    paths = RunPaths(cfg.out, cfg.task)
    write_resolved_config(cfg, cfg.out / "resolved_config.ini")
    results_path = paths.results_dir() / "results.csv"
    if not results_path.exists():
        raise AbdmError(f"missing {results_path}; run evaluate first")
    header, rows = read_csv(results_path)
    col = {name: i for i, name in enumerate(header)}
    report_dir = paths.report_dir()

    dtasks = sorted({r[col["task"]] for r in rows})
    budgets = sorted({int(r[col["budget"]]) for r in rows})
    algos = [a for a in ALGORITHMS if any(r[col["algo"]] == a for r in rows)]

    # Cost gap versus simulation budget, one series per algorithm per task.
    gap_rows = []
    for dtask in dtasks:
        series = []
        for algo in algos:
            ys = []
            for budget in budgets:
                vals = [
                    float(r[col["gap"]])
                    for r in rows
                    if r[col["task"]] == dtask
                    and r[col["algo"]] == algo
                    and int(r[col["budget"]]) == budget
                ]
                mean_gap = float(np.mean(vals)) if vals else float("nan")
                ys.append(mean_gap)
                gap_rows.append([dtask, algo, budget, mean_gap])
            series.append({"label": algo, "x": budgets, "y": ys})
        svg_line_plot(
            report_dir / f"fig3_gap_vs_budget_{dtask}.svg",
            series,
            f"Cost gap vs budget ({dtask})",
            "simulation budget",
            "mean cost gap",
            x_log=True,
        )
    write_csv(report_dir / "fig3_gap_vs_budget.csv", ["task", "algo", "budget", "mean_gap"], gap_rows)

    # Expected-cost profiles at the largest budget, plus per-action
    # differences to the reference curve.
    if cfg.task is not TaskId.BVEP:
        diff_rows = []
        budget = max(budgets)
        seed = cfg.seeds[0]
        for dtask in dtasks:
            for j in range(cfg.n_eval):
                ppath = paths.profiles_dir() / f"{dtask}_n{budget}_s{seed}_obs{j}_profile.csv"
                if not ppath.exists():
                    continue
                ph, prow = read_csv(ppath)
                actions = [float(r[0]) for r in prow]
                series = []
                for ci, name in enumerate(ph[1:], start=1):
                    ys = [float(r[ci]) for r in prow]
                    series.append({"label": name, "x": actions, "y": ys})
                    if name != "oracle":
                        diffs = [abs(float(r[ci]) - float(r[1])) for r in prow]
                        diff_rows.append([dtask, name, budget, seed, j, float(np.mean(diffs))])
                svg_line_plot(
                    report_dir / f"fig4_profile_{dtask}_obs{j}.svg",
                    series,
                    f"Expected cost profiles ({dtask}, obs {j}, N={budget})",
                    "action",
                    "expected cost",
                )
        write_csv(
            report_dir / "fig4_profile_differences.csv",
            ["task", "algo", "budget", "seed", "obs_id", "mean_abs_diff_to_oracle"],
            diff_rows,
        )

    # BVEP: incurred cost by budget, overall and split by true zone.
    if cfg.task is TaskId.BVEP:
        eval_ds = read_dataset(paths.eval_dataset(cfg))
        zones = [classify_zone(eval_ds.thetas[j][0]).name for j in range(len(eval_ds))]
        bb_rows = []
        series = []
        for algo in algos:
            ys = []
            for budget in budgets:
                sel = [
                    r
                    for r in rows
                    if r[col["algo"]] == algo and int(r[col["budget"]]) == budget
                ]
                overall = float(np.mean([float(r[col["incurred_cost"]]) for r in sel]))
                ys.append(overall)
                bb_rows.append([algo, budget, "all", overall])
                for zone in Zone:
                    zvals = [
                        float(r[col["incurred_cost"]])
                        for r in sel
                        if zones[int(r[col["obs_id"]])] == zone.name
                    ]
                    bb_rows.append(
                        [algo, budget, zone.name, float(np.mean(zvals)) if zvals else float("nan")]
                    )
            series.append({"label": algo, "x": budgets, "y": ys})
        svg_line_plot(
            report_dir / "fig5d_bvep_costs.svg",
            series,
            "BVEP incurred cost vs budget",
            "simulation budget",
            "mean incurred cost",
            x_log=True,
        )
        write_csv(report_dir / "fig5d_bvep_costs.csv", ["algo", "budget", "zone", "mean_incurred_cost"], bb_rows)

    # Ablation table: actions per pair and Monte-Carlo sample counts.
    ablation_path = paths.results_dir() / "ablation_results.csv"
    if ablation_path.exists():
        ah, arows = read_csv(ablation_path)
        acol = {name: i for i, name in enumerate(ah)}
        table = []
        variants = [f"actions_{m}" for m in ABLATION_ACTION_MODES] + [
            f"mc_{m}" for m in ABLATION_MC_SAMPLES
        ]
        for variant in variants:
            for metric in ("val_mse", "mean_gap"):
                vals = [
                    float(r[acol["value"]])
                    for r in arows
                    if r[acol["variant"]] == variant and r[acol["metric"]] == metric
                ]
                if vals:
                    component = "bam" if variant.startswith("actions") else "npe-mc"
                    table.append([component, variant, metric, float(np.mean(vals))])
        write_csv(
            report_dir / "figA1_ablation.csv",
            ["component", "variant", "metric", "mean_value"],
            table,
        )
        mse = [r for r in table if r[2] == "val_mse"]
        if mse:
            svg_line_plot(
                report_dir / "figA1_ablation.svg",
                [
                    {
                        "label": "bam val MSE",
                        "x": list(range(len(mse))),
                        "y": [r[3] for r in mse],
                    }
                ],
                "BAM validation MSE by actions-per-pair variant",
                "variant index (1, 5, 10, 100, resample)",
                "validation MSE",
            )
    print(f"report written to {report_dir}")
    return 0


def cmd_all(cfg: ExperimentConfig) -> int:
    for step in (cmd_generate, cmd_train, cmd_evaluate, cmd_report):
        code = step(cfg)
        if code != 0:
            return code
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abdm",
        description="Amortized Bayesian decision making: experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "evaluate", "report", "all"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI config file")
        p.add_argument("--task", type=str, help="toy|linear_gaussian|sir|lotka_volterra|bvep")
        p.add_argument("--algo", type=str, help="npe-mc|bam|both")
        p.add_argument("--budget", type=int, nargs="+", help="simulation budgets")
        p.add_argument("--seed", type=int, nargs="+", help="experiment seeds")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--jobs", type=int, help="parallel training jobs")
        p.add_argument("--eval-observations", type=int, dest="eval_observations")
        p.add_argument("--large-budgets", action="store_true", dest="large_budgets")
        p.add_argument("--ablation", action="store_true")
    return parser


def config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()
    kw = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    if args.task:
        kw["task"] = TaskId.from_key(args.task)
    if args.algo:
        kw["algorithms"] = tuple(ALGORITHMS) if args.algo == "both" else (args.algo,)
    if args.budget:
        kw["budgets"] = tuple(args.budget)
    if args.seed:
        kw["seeds"] = tuple(args.seed)
    if args.out:
        kw["out"] = args.out
    if args.jobs:
        kw["jobs"] = args.jobs
    if args.eval_observations:
        kw["eval_observations"] = args.eval_observations
    if args.large_budgets:
        kw["include_large_budgets"] = True
    if args.ablation:
        kw["ablation"] = True
    return ExperimentConfig(**kw)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "all": cmd_all,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except (AbdmError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
