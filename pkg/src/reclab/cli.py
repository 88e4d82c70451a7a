"""Command-line orchestration for the full pipeline.

One binary with subcommands: ingest, train, simulate, experiment,
analyze, evaluate-policy, report.  Every run takes a root seed (from the
config file or --seed), splits it per stage by stable hashing, and
writes a manifest (config hash, seeds, input fingerprints) next to its
outputs so the run can be replayed exactly.

Exit codes: 2 parse failure, 3 training divergence, 4 bad config,
5 degenerate sample, 6 propensity coverage violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, interactions, models, offpolicy, policies, simulator
from .errors import (
    ConfigError,
    CoverageViolation,
    DegenerateArm,
    EmptyGroup,
    NonFiniteLoss,
    ParseError,
    RecLabError,
)
from .util import derive_seed

EXIT_PARSE = 2
EXIT_DIVERGENCE = 3
EXIT_CONFIG = 4
EXIT_DEGENERATE = 5
EXIT_COVERAGE = 6

DATA_ROOT_ENV = "RECLAB_DATA_ROOT"


def _resolve(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(_resolve(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    return cfg


def write_manifest(out_dir: Path, command: str, config: dict, seed: int,
                   inputs, outputs) -> None:
    canon = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "seed": seed,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "config": config,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs
                   if Path(p).exists()},
        "outputs": [str(p) for p in outputs],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_dataset(args) -> interactions.LogDataset:
    return interactions.ingest_log(_resolve(args.log),
                                   _resolve(args.users) if args.users
                                   else None,
                                   _resolve(args.stories) if args.stories
                                   else None)


def _write_dataset(data, out_dir: Path, stem: str):
    log = out_dir / f"{stem}.log"
    users = out_dir / "users.tsv"
    stories = out_dir / "stories.tsv"
    interactions.emit_log(data, log, users, stories)
    return [log, users, stories]


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    out_dir = _resolve(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _read_dataset(args)
    dropped = []
    if args.trim == "session10":
        data, dropped = interactions.trim_outliers(data)
    elif args.trim == "daily5":
        data, dropped = interactions.trim_top_daily_percentile(data)
    outputs = _write_dataset(data, out_dir, "ingested")
    print(f"records: {data.n_records}")
    print(f"users: {len(set(np.unique(data.user_id)))}")
    print(f"dropped_users: {len(dropped)}")
    cfg = {"trim": args.trim}
    write_manifest(out_dir, "ingest", cfg, 0,
                   [p for p in (args.log, args.users, args.stories) if p],
                   outputs)
    return 0


def _parse_grid(text: str):
    """Parse "k=4,8 l2=1e-4,1e-3" into grid tuples."""
    k_grid, l2_grid = None, None
    for part in text.split():
        key, _, vals = part.partition("=")
        if key == "k":
            k_grid = tuple(int(v) for v in vals.split(","))
        elif key == "l2":
            l2_grid = tuple(float(v) for v in vals.split(","))
        else:
            raise ConfigError(f"unknown grid key {key!r}")
    return k_grid, l2_grid


def cmd_train(args) -> int:
    cfg = _load_config(args)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out_dir = _resolve(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _read_dataset(args)

    train_kwargs = dict(cfg.get("train", {}))
    if args.epochs:
        train_kwargs["epochs"] = args.epochs
    if args.grid:
        k_grid, l2_grid = _parse_grid(args.grid)
        if k_grid:
            train_kwargs["k_grid"] = k_grid
        if l2_grid:
            train_kwargs["l2_grid"] = l2_grid
    config = models.TrainConfig(seed=derive_seed(seed, "train"),
                                **train_kwargs)
    split = models.SplitSpec(seed=derive_seed(seed, "split"))

    kinds = args.compare.split(",") if args.compare else [args.model]
    outputs = []
    report_lines = ["model\tk\tl2\tval_mse\ttest_mse"]
    for kind in kinds:
        model, report = models.train(kind, data, config, split)
        path = out_dir / f"model_{kind}.json"
        models.save_model(model, path)
        outputs.append(path)
        for row in report.as_rows():
            selected = (row["k"], row["l2"]) == report.selected
            report_lines.append(
                f"{kind}\t{row['k']}\t{row['l2']}\t{row['val_mse']:.6f}\t"
                f"{report.test_mse:.6f}" if selected else
                f"{kind}\t{row['k']}\t{row['l2']}\t{row['val_mse']:.6f}\t")
        print(f"{kind}: test_mse={report.test_mse:.6f}")
    report_path = out_dir / "tuning_report.tsv"
    report_path.write_text("\n".join(report_lines) + "\n")
    outputs.append(report_path)
    write_manifest(out_dir, "train",
                   {"kinds": kinds, "train": train_kwargs}, seed,
                   [args.log], outputs)
    return 0


def _world_from_config(cfg: dict, args) -> simulator.World:
    wc = dict(cfg.get("world", {}))
    for flag in ("users", "stories"):
        v = getattr(args, flag, None)
        if v:
            wc["n_users" if flag == "users" else "n_stories"] = v
    world_cfg = simulator.WorldConfig(**wc).validate() if wc else \
        simulator.WorldConfig()
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    return simulator.make_world(world_cfg, derive_seed(seed, "world"))


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out_dir = _resolve(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = _world_from_config(cfg, args)
    editorial = world.editorial_policy()
    data = simulator.simulate_period(
        world, {u: editorial for u in world.users}, days=args.days,
        seed=derive_seed(seed, "simulate"))
    outputs = _write_dataset(data, out_dir, "editorial")
    wc_path = out_dir / "world_config.json"
    wc_path.write_text(world.config.to_json() + "\n")
    outputs.append(wc_path)
    pe_path = out_dir / "position_effects.txt"
    policies.write_position_effects(world.position_effects, pe_path)
    outputs.append(pe_path)
    print(f"records: {data.n_records}")
    write_manifest(out_dir, "simulate",
                   {"world": json.loads(world.config.to_json()),
                    "days": args.days}, seed, [], outputs)
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out_dir = _resolve(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = _world_from_config(cfg, args)

    plan_kwargs = dict(cfg.get("experiment", {}))
    plan_kwargs.setdefault("duration_days", args.days)
    plan_kwargs.setdefault("assignment_prob", args.p)
    if args.null:
        plan_kwargs["treatment_policy"] = "editorial"
        plan_kwargs["control_policy"] = "editorial"
    plan = simulator.ExperimentPlan(
        seed=derive_seed(seed, "experiment"), **plan_kwargs).validate()
    result = simulator.run_experiment(world, plan)

    outputs = _write_dataset(result.pre, out_dir, "pre")
    outputs += [_write_dataset(result.experiment, out_dir, "experiment")[0]]
    assign_path = out_dir / "assignment.tsv"
    with open(assign_path, "w") as fh:
        fh.write("user_id\tarm\tlaunched\n")
        for uid in sorted(result.assignment):
            fh.write(f"{uid}\t{result.assignment[uid]}\t"
                     f"{int(uid in result.launched)}\n")
    outputs.append(assign_path)
    wc_path = out_dir / "world_config.json"
    wc_path.write_text(world.config.to_json() + "\n")
    outputs.append(wc_path)
    n_t = sum(result.assignment.values())
    print(f"treated: {n_t} control: {len(result.assignment) - n_t}")
    print(f"pre_records: {result.pre.n_records} "
          f"experiment_records: {result.experiment.n_records}")
    write_manifest(out_dir, "experiment",
                   {"world": json.loads(world.config.to_json()),
                    "plan": plan_kwargs}, seed, [], outputs)
    return 0


def _read_assignment(path: Path):
    arms, launched = {}, set()
    with open(path) as fh:
        next(fh)
        for line in fh:
            uid, arm, lau = line.split("\t")
            arms[int(uid)] = int(arm)
            if int(lau):
                launched.add(int(uid))
    return arms, launched


SECTION_OUTCOMES = ("total_engagement_section", "total_stories_section",
                    "reading_time_section")
ALL_OUTCOMES = ("total_engagement_all", "total_stories_all",
                "reading_time_all")


def cmd_analyze(args) -> int:
    data_dir = _resolve(args.data_dir)
    out_dir = _resolve(args.out_dir) if args.out_dir else data_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    users_p, stories_p = data_dir / "users.tsv", data_dir / "stories.tsv"
    pre = interactions.ingest_log(data_dir / "pre.log", users_p, stories_p)
    exp = interactions.ingest_log(data_dir / "experiment.log",
                                  users_p, stories_p)
    arms, launched = _read_assignment(data_dir / "assignment.tsv")

    cutoff = exp.period[0] if exp.n_records else pre.period[1] + 1
    covs = interactions.compute_covariates(pre, cutoff_day=cutoff)
    outcomes = analysis.build_outcomes(exp, arms, launched=launched)
    users_launched = sorted(u for u in arms
                            if u in outcomes and outcomes[u].launched_app)
    X, names = analysis.covariate_matrix(users_launched, exp.users, covs)
    outputs = []

    want = set(args.tables.split(",")) if args.tables != "all" else \
        {"ate", "subgroups", "balance", "figures", "wilcoxon", "scores"}

    if "ate" in want:
        lines = ["estimator\toutcome\tfilter\testimate\tse\tp\tpct"]
        for outcome in SECTION_OUTCOMES + ALL_OUTCOMES:
            lines.append(analysis.diff_in_means(outcome, outcomes,
                                                arms).line())
            lines.append(analysis.regression_adjusted_ate(
                outcome, outcomes, arms, covs, exp.users).line())
            rep, _ = analysis.aipw_ate(outcome, outcomes, arms, X,
                                       seed=derive_seed(args.seed, "aipw"))
            lines.append(rep.line())
        path = out_dir / "ate_table.tsv"
        path.write_text("\n".join(lines) + "\n")
        outputs.append(path)
        print("\n".join(lines))

    if "wilcoxon" in want:
        _, y, a = analysis.analysis_sample(outcomes, arms,
                                           "total_engagement_section")
        w = analysis.wilcoxon_one_sided(y[a == 1], y[a == 0])
        path = out_dir / "wilcoxon.txt"
        path.write_text(f"statistic\t{w.statistic}\np_value\t{w.p_value}\n"
                        f"exact\t{w.exact}\nfully_tied\t{w.fully_tied}\n")
        outputs.append(path)

    if "subgroups" in want:
        table = analysis.subgroup_ates("total_engagement_section",
                                       outcomes, arms, covs)
        lines = ["split\tgroup\testimate\tse\tp"]
        for split, rows in table.items():
            for label in ("true", "false", "diff"):
                r = rows[label]
                if r is None:
                    lines.append(f"{split}\t{label}\tempty\t\t")
                else:
                    lines.append(f"{split}\t{label}\t{r.estimate:.6g}\t"
                                 f"{r.std_error:.6g}\t{r.p_value:.4g}")
        path = out_dir / "subgroup_table.tsv"
        path.write_text("\n".join(lines) + "\n")
        outputs.append(path)

    if "scores" in want:
        _, scores = analysis.aipw_ate("total_engagement_section", outcomes,
                                      arms, X,
                                      seed=derive_seed(args.seed, "aipw"))
        rows = analysis.aipw_score_regression(
            scores, [X[users_launched.index(u)] for u in sorted(scores)],
            names)
        path = out_dir / "aipw_score_regression.tsv"
        path.write_text("name\tcoef\tse\tp\n" + "\n".join(
            f"{n}\t{c:.6g}\t{s:.6g}\t{p:.4g}" for n, c, s, p in rows) + "\n")
        outputs.append(path)

    if "balance" in want:
        Xb, nb = analysis.covariate_matrix(sorted(arms), exp.users, covs)
        rows = analysis.balance_table(Xb, nb, sorted(arms), arms)
        path = out_dir / "balance_table.tsv"
        path.write_text(
            "covariate\tmean_t\tsd_t\tmean_c\tsd_c\tp\n" + "\n".join(
                f"{n}\t{mt:.6g}\t{st:.6g}\t{mc:.6g}\t{sc:.6g}\t{p:.4g}"
                for n, mt, st, mc, sc, p in rows) + "\n")
        outputs.append(path)

    if "figures" in want:
        by_rank = analysis.mean_engagement_by_rank(exp, arms)
        path = out_dir / "rank_means.tsv"
        path.write_text("arm\trank\tmean\tci_lo\tci_hi\tn\n" + "\n".join(
            f"{arm}\t{r}\t{m:.6g}\t{lo:.6g}\t{hi:.6g}\t{n}"
            for arm, rows in by_rank.items()
            for r, m, lo, hi, n in rows) + "\n")
        outputs.append(path)

        hist = analysis.session_length_distribution(exp, arms)
        path = out_dir / "session_lengths.tsv"
        path.write_text("arm\tlength\tfrequency\n" + "\n".join(
            f"{arm}\t{ln}\t{f:.6g}" for arm, h in hist.items()
            for ln, f in h.items()) + "\n")
        outputs.append(path)

        buckets = analysis.bucket_engagement_analysis(
            exp, arms, args.buckets, exp.users, covs)
        path = out_dir / "engagement_buckets.tsv"
        path.write_text(
            "bucket\tn\tcontrol_mean\ttreatment_adj_mean\tdiff\tse\n"
            + "\n".join(f"{b}\t{n}\t{cm:.6g}\t{tm:.6g}\t{d:.6g}\t{s:.6g}"
                        for b, n, cm, tm, d, s in buckets) + "\n")
        outputs.append(path)

        exposure = analysis.story_popularity_exposure(exp, arms, covs)
        path = out_dir / "niche_exposure.tsv"
        lines = ["arm\tmean_rank_niche\tmean_rank_non_niche\tdiff\tp"]
        for arm in (0, 1):
            row = exposure[arm]
            lines.append(f"{arm}\t{row['mean_rank_niche']:.6g}\t"
                         f"{row['mean_rank_non_niche']:.6g}\t"
                         f"{row['diff']:.6g}\t{row['p_value']:.4g}")
        path.write_text("\n".join(lines) + "\n")
        outputs.append(path)

    write_manifest(out_dir, "analyze", {"tables": sorted(want)},
                   args.seed,
                   [data_dir / "pre.log", data_dir / "experiment.log",
                    data_dir / "assignment.tsv"], outputs)
    return 0


POLICY_ALIASES = {"pers": "personalized", "pop": "popularity",
                  "edit": "editorial"}


def cmd_evaluate_policy(args) -> int:
    cfg = _load_config(args)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    data_dir = _resolve(args.data_dir)
    out_dir = _resolve(args.out_dir) if args.out_dir else data_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    users_p, stories_p = data_dir / "users.tsv", data_dir / "stories.tsv"
    log_path = data_dir / ("pre.log" if (data_dir / "pre.log").exists()
                           else "editorial.log")
    data = interactions.ingest_log(log_path, users_p, stories_p)
    world = _world_from_config(
        {"world": json.loads((data_dir / "world_config.json").read_text()),
         "seed": seed}, args) \
        if (data_dir / "world_config.json").exists() else None
    if world is None:
        raise ConfigError("evaluate-policy needs world_config.json")

    grade_of = {u: p.grade for u, p in data.users.items()}
    pos = offpolicy.estimate_position_effects(data)
    e_t = offpolicy.editorial_propensity(data, grade_of)
    regressor = offpolicy.fit_outcome_regressor(
        data, seed=derive_seed(seed, "regressor"),
        section=interactions.RECOMMENDED_SECTION)

    names = [POLICY_ALIASES.get(p, p) for p in args.policies.split(",")]
    targets = {}
    for name in names:
        if name == "editorial":
            spec = world.editorial_policy()
            week_of = lambda day: world.editorial_week(day // 7)
        else:
            spec = simulator.resolve_policy(world, name, data, None,
                                            derive_seed(seed, "policy",
                                                        name))
            week_of = None
        targets[name] = offpolicy.topk_propensity(
            spec, pos.vector(), world.story_ids(), grade_of,
            week_of=week_of)

    lines = [offpolicy.REPORT_HEADER,
             "policy\tvalue\tse\tci_lo\tci_hi\tess\tclipped_frac\tn_logs"]
    estimates = {}
    for name in names:
        est = offpolicy.dr_value(data, targets[name], e_t, regressor,
                                 bootstrap=args.bootstrap,
                                 seed=derive_seed(seed, "dr", name))
        estimates[name] = est
        lo, hi = est.ci()
        lines.append(f"{name}\t{est.value:.6g}\t{est.std_error:.6g}\t"
                     f"{lo:.6g}\t{hi:.6g}\t"
                     f"{est.effective_sample_size:.1f}\t"
                     f"{est.clipped_fraction:.4f}\t{est.n_logs}")
    path = out_dir / "dr_values.tsv"
    path.write_text("\n".join(lines) + "\n")
    outputs = [path]
    print("\n".join(lines))

    pre_outcomes = analysis.build_outcomes(
        data, {u: 0 for u in data.users})
    groups = offpolicy.heavy_light_split(pre_outcomes)
    rows = offpolicy.compare_policies(
        data, targets, e_t, regressor, groups,
        B=args.bootstrap, seed=derive_seed(seed, "compare"))
    path = out_dir / "policy_comparisons.tsv"
    path.write_text(
        offpolicy.REPORT_HEADER
        + "\npolicy_a\tpolicy_b\tgroup\testimate\tse\tci_lo\tci_hi\n"
        + "\n".join(f"{a}\t{b}\t{g}\t{e:.6g}\t{s:.6g}\t{lo:.6g}\t{hi:.6g}"
                    for a, b, g, e, s, lo, hi in rows) + "\n")
    outputs.append(path)

    if args.check_against_rct:
        rct_dir = _resolve(args.check_against_rct)
        arms, launched = _read_assignment(rct_dir / "assignment.tsv")
        exp = interactions.ingest_log(rct_dir / "experiment.log",
                                      rct_dir / "users.tsv",
                                      rct_dir / "stories.tsv")
        sec = exp.in_section(interactions.RECOMMENDED_SECTION)
        treated = {u for u, a in arms.items() if a == 1}
        vals = sec.values[sec.scored
                          & np.isin(sec.user_id, list(treated))]
        on_est = float(np.mean(vals))
        on_se = float(np.std(vals, ddof=1) / np.sqrt(vals.size))
        name = names[0]
        check = offpolicy.onpolicy_vs_offpolicy_check(
            on_est, on_se, estimates[name].value,
            estimates[name].std_error)
        path = out_dir / "rct_check.tsv"
        path.write_text("policy\ton_value\toff_value\tdiff\tse\tz\tp\n"
                        f"{name}\t{on_est:.6g}\t{estimates[name].value:.6g}"
                        f"\t{check['difference']:.6g}\t"
                        f"{check['std_error']:.6g}\t{check['z']:.4g}\t"
                        f"{check['p_value']:.4g}\n")
        outputs.append(path)

    write_manifest(out_dir, "evaluate-policy",
                   {"policies": names, "bootstrap": args.bootstrap},
                   seed, [log_path], outputs)
    return 0


def cmd_report(args) -> int:
    """Full analysis bundle: all tables plus the DR report when the
    directory carries editorial logs and a world config."""
    rc = cmd_analyze(args)
    if rc != 0:
        return rc
    data_dir = _resolve(args.data_dir)
    if (data_dir / "world_config.json").exists():
        args.policies = "pers,pop,edit"
        args.bootstrap = 500
        args.check_against_rct = None
        return cmd_evaluate_policy(args)
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reclab",
        description="Recommendation-policy laboratory: simulation, "
                    "experiments, and off-policy evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1,
                       help="within-stage parallelism (reduction order "
                            "is deterministic)")

    p = sub.add_parser("ingest", help="read, validate, and trim a log")
    p.add_argument("--log", required=True)
    p.add_argument("--users")
    p.add_argument("--stories")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--trim", choices=["none", "session10", "daily5"],
                   default="none")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit engagement models")
    common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--users")
    p.add_argument("--stories")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model", choices=sorted(models.MODEL_KINDS),
                   default="mf")
    p.add_argument("--compare", help="comma list, e.g. mean,twfe,mf")
    p.add_argument("--grid", help='e.g. "k=4,8 l2=1e-4,1e-3"')
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="generate editorial logs from a "
                                        "synthetic world")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--days", type=int, default=28)
    p.add_argument("--users", type=int)
    p.add_argument("--stories", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a randomized experiment")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--days", type=int, default=14)
    p.add_argument("--p", type=float, default=0.5,
                   help="treatment assignment probability")
    p.add_argument("--null", action="store_true",
                   help="editorial policy in both arms")
    p.add_argument("--users", type=int)
    p.add_argument("--stories", type=int)
    p.set_defaults(func=cmd_experiment)

    def analyze_args(p):
        common(p, config=False)
        p.add_argument("--data-dir", required=True)
        p.add_argument("--out-dir")
        p.add_argument("--tables", default="all",
                       help="comma list: ate,subgroups,balance,figures,"
                            "wilcoxon,scores")
        p.add_argument("--buckets", type=int, default=5)
        p.set_defaults(seed=0)

    p = sub.add_parser("analyze", help="experiment analysis bundle")
    analyze_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("evaluate-policy", help="doubly robust off-policy "
                                               "report")
    common(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--policies", default="pers,pop,edit")
    p.add_argument("--bootstrap", type=int, default=500)
    p.add_argument("--check-against-rct",
                   help="experiment output dir for the on-policy check")
    p.set_defaults(func=cmd_evaluate_policy)

    p = sub.add_parser("report", help="analyze plus off-policy bundle")
    analyze_args(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # commands with a --config flag resolve a missing seed from the file
    if getattr(args, "seed", 0) is None and not hasattr(args, "config"):
        args.seed = 0
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NonFiniteLoss as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateArm, EmptyGroup) as exc:
        print(f"error: degenerate sample: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except CoverageViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    except RecLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
