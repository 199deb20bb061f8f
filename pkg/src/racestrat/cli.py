"""Command-line entry point.

Subcommands cover the whole workflow: `calibrate` scaling (and optionally the
controlled car's pace delta), `train` a recurrent Q-network, `eval` a
checkpoint, `compare` models against baselines, `generalise` across tracks,
`distill` a surrogate decision tree, `explain` a stored trace lap, `simulate`
batch races to CSV, and `serve` the live session service.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .agent import (TrainingConfig, evaluate, load_checkpoint, save_checkpoint,
                    train, write_training_log)
from .baselines import (format_strategy, load_strategy_pool, parse_strategy,
                        scale_plan)
from .basetypes import ACTIONS, Action
from .env import RaceEnv
from .state import (FEATURE_NAMES, calibrate_scaling, load_profile,
                    save_profile)
from .track import desk_track, load_track


def _track_setup(track_id: str, laps: int | None):
    """Track config plus an opponent pool rescaled to the requested distance."""
    config = load_track(track_id)
    pool = load_strategy_pool(track_id)
    if laps is not None and laps != config.total_laps:
        pool = [scale_plan(p, config.total_laps, laps) for p in pool]
        config = config.replace(total_laps=laps)
    return config, pool


def _profile_for(args, config):
    if getattr(args, "profile", None):
        return load_profile(args.profile)
    return calibrate_scaling(config, n_sims=args.calibration_sims, seed=args.seed)


def _env_factory(config, profile, pool, delta=0.0, model_key="model"):
    def factory(seed):
        return RaceEnv(config, profile, seed, opponent_pool=pool,
                       controlled_delta=delta, model_key=model_key)
    return factory


def _comparison_spec(models, config, pool, profile, args):
    from .harness import ComparisonSpec

    return ComparisonSpec(models=tuple(models), tracks=(config.track_id,),
                          configs={config.track_id: config},
                          pools={config.track_id: pool}, profile=profile,
                          n_races=args.n_races, master_seed=args.seed)


# ---- subcommand handlers ----


def cmd_calibrate(args) -> int:
    config, pool = _track_setup(args.track, args.laps)
    profile = calibrate_scaling(config, n_sims=args.calibration_sims,
                                seed=args.seed)
    out = Path(args.out or "profile.json")
    save_profile(profile, out)
    print(f"scaling profile written to {out}")
    if args.plan is not None:
        from .harness import ComparisonSpec, calibrate_pace

        spec = _comparison_spec((), config, pool, profile, args)
        delta, achieved = calibrate_pace(spec, parse_strategy(args.plan),
                                         config.track_id, target=args.target)
        print(f"pace_delta {delta:.4f} gives mean finish {achieved:.3f} "
              f"(target {args.target})")
    return 0


def cmd_train(args) -> int:
    config, pool = _track_setup(args.track, args.laps)
    profile = _profile_for(args, config)
    cfg = TrainingConfig(episodes=args.episodes, hidden_dim=args.hidden_dim,
                         updates_per_episode=args.updates_per_episode,
                         batch_size=args.batch_size,
                         target_update_every=args.target_update_every,
                         mask_invalid=args.mask_invalid, seed=args.seed)
    out = Path(args.out or "ckpt")
    out.mkdir(parents=True, exist_ok=True)
    factory = _env_factory(config, profile, pool, args.controlled_delta, "train")
    net, log = train(factory, cfg, verbose=not args.quiet)
    save_checkpoint(out / "checkpoint.npz", net, cfg, profile,
                    extra={"track": config.track_id,
                           "total_laps": config.total_laps})
    write_training_log(log, out / "training_log.csv")
    print(f"checkpoint and training log written to {out}/")
    return 0


def cmd_eval(args) -> int:
    net, cfg, profile, extra = load_checkpoint(args.checkpoint)
    config, pool = _track_setup(args.track or extra.get("track", "BHR"),
                                args.laps or extra.get("total_laps"))
    factory = _env_factory(config, profile, pool, args.controlled_delta, "eval")
    metrics = evaluate(net, factory, args.n_races, args.seed)
    print(f"mean finish {metrics.mean_finish:.3f} "
          f"median {metrics.median_finish:.1f} "
          f"failure rate {metrics.failure_rate:.3f} "
          f"mean pits {metrics.mean_pit_count:.2f} over {metrics.n_races} races")
    for strat, count in sorted(metrics.strategy_histogram.items(),
                               key=lambda kv: -kv[1])[:10]:
        print(f"  {strat:24s} {count}")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "mean_finish": metrics.mean_finish,
            "median_finish": metrics.median_finish,
            "std_finish": metrics.std_finish,
            "failure_rate": metrics.failure_rate,
            "mean_pit_count": metrics.mean_pit_count,
            "n_races": metrics.n_races,
            "finish_distribution": metrics.finish_distribution,
            "strategy_histogram": metrics.strategy_histogram,
        }, indent=2) + "\n")
    return 0


def cmd_compare(args) -> int:
    from .harness import (FixedPlanPolicy, NetPolicy, RandomPolicy,
                          run_comparison, strategy_summary, write_aggregate_csv,
                          write_race_csv)

    net, cfg, profile, extra = load_checkpoint(args.checkpoint)
    config, pool = _track_setup(args.track or extra.get("track", "BHR"),
                                args.laps or extra.get("total_laps"))
    models = [("rsrl", lambda: NetPolicy(net)),
              ("random", lambda: RandomPolicy())]
    for plan in pool:
        models.append((f"fixed_{format_strategy(plan)}",
                       lambda p=plan: FixedPlanPolicy(p)))
    spec = _comparison_spec(models, config, pool, profile, args)
    table = run_comparison(spec)
    for (model, track), cell in table.cells.items():
        print(f"{model:28s} mean {cell.mean_finish:.3f} "
              f"fail {cell.failure_rate:.3f} pits {cell.mean_pit_count:.2f}")
    summary = strategy_summary([r for r in table.records if r.model == "rsrl"])
    print(f"rsrl modal strategy: {summary.rendered}")
    for flag in summary.flags:
        print(f"  flag: {flag}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_aggregate_csv(table, out / "aggregate.csv")
        write_race_csv(table.records, out / "races.csv")
        print(f"CSV written to {out}/")
    return 0


def cmd_generalise(args) -> int:
    from .harness import NetPolicy, generalisability_matrix, write_matrix_csv
    from .harness import ComparisonSpec

    net, cfg, profile, extra = load_checkpoint(args.checkpoint)
    tracks = tuple(args.tracks)
    configs, pools = {}, {}
    for t in tracks:
        configs[t], pools[t] = _track_setup(t, args.laps)
    spec = ComparisonSpec(models=(), tracks=tracks, configs=configs,
                          pools=pools, profile=profile, n_races=args.n_races,
                          master_seed=args.seed)
    trained = tuple(args.trained_tracks or [extra.get("track", "BHR")])
    models = {"rsrl": ((lambda: NetPolicy(net)), trained)}
    table, summary = generalisability_matrix(models, spec)
    for (model, track), cell in table.cells.items():
        tag = "seen" if cell.seen else "unseen"
        print(f"{model:10s} {track:6s} {tag:6s} mean {cell.mean_finish:.3f}")
    print(f"seen mean {summary['seen_mean']} unseen mean {summary['unseen_mean']}")
    if args.out:
        write_matrix_csv(table, args.out)
        print(f"matrix written to {args.out}")
    return 0


def cmd_distill(args) -> int:
    from .xai.cart import save_tree
    from .xai.viper import surrogate_fidelity, viper_distill

    net, cfg, profile, extra = load_checkpoint(args.checkpoint)
    config, pool = _track_setup(args.track or extra.get("track", "BHR"),
                                args.laps or extra.get("total_laps"))
    factory = _env_factory(config, profile, pool, args.controlled_delta,
                           "distill")
    tree, log = viper_distill(net, factory, iterations=args.iterations,
                              max_depth=args.depth, seed=args.seed)
    report = surrogate_fidelity(tree, net, factory, n_sims=100, seed=args.seed)
    print(f"held-out fidelity {tree.metadata['heldout_fidelity']:.3f} "
          f"simulation accuracy {report.accuracy:.3f} "
          f"macro F1 {report.macro_f1:.3f} leaves {tree.n_leaves}")
    out = Path(args.out or "tree.json")
    save_tree(tree, out)
    with open(out.with_suffix(".log.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "dataset_size", "train_fidelity",
                    "heldout_fidelity", "n_leaves"])
        for row in log:
            w.writerow([row.iteration, row.dataset_size, row.train_fidelity,
                        row.heldout_fidelity, row.n_leaves])
    print(f"tree written to {out}")
    return 0


def _load_trace(path: str) -> list[np.ndarray]:
    """Trace CSV: header row of feature names, one row of scaled values per lap."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:1] == ["lap"]:
            header = header[1:]
            rows = [row[1:] for row in reader]
        else:
            rows = list(reader)
    if tuple(header) != FEATURE_NAMES:
        raise ValueError(f"trace columns do not match the feature ordering "
                         f"({len(header)} columns, expected {len(FEATURE_NAMES)})")
    return [np.array([float(v) for v in row]) for row in rows]


def cmd_explain(args) -> int:
    features = _load_trace(args.trace)
    if not 0 <= args.lap < len(features):
        print(f"trace has {len(features)} laps; lap {args.lap} out of range",
              file=sys.stderr)
        return 1
    x = features[args.lap]

    if args.method == "attribution":
        from .xai.shapley import attribute

        net, cfg, profile, extra = load_checkpoint(args.checkpoint)
        baseline = np.asarray(profile.baseline, dtype=float)
        att = attribute(net, features, args.lap, baseline, budget=args.budget)
        print(f"lap {args.lap}: action {Action(att.chosen_action).short} "
              f"Q {att.explained_output:.2f} (base {att.base_value:.2f})")
        for name, value in sorted(att.values.items(), key=lambda kv: -abs(kv[1])):
            print(f"  {name:22s} {value:+10.3f}")
        return 0

    from .xai.cart import decision_path, load_tree

    tree = load_tree(args.tree)
    profile = None
    if args.checkpoint:
        profile = load_checkpoint(args.checkpoint)[2]
    elif args.profile:
        profile = load_profile(args.profile)

    if args.method == "path":
        preds, action = decision_path(tree, x, profile)
        print(f"lap {args.lap}: action {Action(action).short}")
        for p in preds:
            print(f"  {p.display:34s} ({p.formal})")
        return 0

    from .xai.counterfactual import counterfactual

    target = next((a for a in ACTIONS if a.short == args.target), None)
    if target is None:
        print(f"unknown target action {args.target!r}", file=sys.stderr)
        return 1
    try:
        cf = counterfactual(tree, x, target)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print(f"lap {args.lap}: {len(cf.changes)} changes, "
          f"{cf.norm} distance {cf.distance:.4f}")
    for c in cf.changes:
        print(f"  {c.name:22s} {c.before:.4f} -> {c.after:.4f}")
    for note in cf.feasibility:
        print(f"  note: {note}")
    return 0


def cmd_simulate(args) -> int:
    from .harness import FixedPlanPolicy, NetPolicy, run_comparison, write_race_csv

    if args.checkpoint:
        net, cfg, profile, extra = load_checkpoint(args.checkpoint)
        config, pool = _track_setup(args.track or extra.get("track", "BHR"),
                                    args.laps or extra.get("total_laps"))
        models = [("rsrl", lambda: NetPolicy(net))]
    elif args.plan:
        config, pool = _track_setup(args.track, args.laps)
        profile = _profile_for(args, config)
        plan = parse_strategy(args.plan)
        models = [(f"fixed_{format_strategy(plan)}",
                   lambda: FixedPlanPolicy(plan))]
    else:
        print("simulate needs --checkpoint or --plan", file=sys.stderr)
        return 1
    spec = _comparison_spec(models, config, pool, profile, args)
    table = run_comparison(spec)
    cell = next(iter(table.cells.values()))
    print(f"mean finish {cell.mean_finish:.3f} fail {cell.failure_rate:.3f} "
          f"pits {cell.mean_pit_count:.2f} over {cell.n} races")
    if args.out:
        write_race_csv(table.records, args.out)
        print(f"race CSV written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import os

    import uvicorn

    from .server import create_app, default_context

    context = default_context(checkpoint=args.checkpoint, tree_path=args.tree,
                              track=args.track, total_laps=args.laps or 20)
    host = args.host or os.environ.get("RACESTRAT_HOST", "127.0.0.1")
    port = args.port or int(os.environ.get("RACESTRAT_PORT", "8099"))
    uvicorn.run(create_app(context), host=host, port=port, log_level="warning")
    return 0


# ---- parser ----


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="racestrat",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", dest="profile", default=None,
                       help="path to a saved scaling profile")
        p.add_argument("--out", default=None)
        p.add_argument("--track", default=None)
        p.add_argument("--laps", type=int, default=None)
        p.add_argument("--calibration-sims", type=int, default=200)
        p.add_argument("--n-races", type=int, default=100)
        p.add_argument("--controlled-delta", type=float, default=0.0)
        return p

    p = common(sub.add_parser("calibrate", help="scaling bounds and pace delta"))
    p.set_defaults(func=cmd_calibrate, track="BHR")
    p.add_argument("--plan", default=None,
                   help="fixed plan whose pace delta to calibrate")
    p.add_argument("--target", type=float, default=5.5)

    p = common(sub.add_parser("train", help="train a recurrent Q-network"))
    p.set_defaults(func=cmd_train, track="BHR")
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--updates-per-episode", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--target-update-every", type=int, default=100)
    p.add_argument("--mask-invalid", action="store_true")
    p.add_argument("--quiet", action="store_true")

    p = common(sub.add_parser("eval", help="greedy evaluation of a checkpoint"))
    p.set_defaults(func=cmd_eval)
    p.add_argument("--checkpoint", required=True)

    p = common(sub.add_parser("compare", help="model vs baselines, paired seeds"))
    p.set_defaults(func=cmd_compare)
    p.add_argument("--checkpoint", required=True)

    p = common(sub.add_parser("generalise", help="seen vs unseen track matrix"))
    p.set_defaults(func=cmd_generalise)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tracks", nargs="+", required=True)
    p.add_argument("--trained-tracks", nargs="+", default=None)

    p = common(sub.add_parser("distill", help="distil a surrogate tree"))
    p.set_defaults(func=cmd_distill)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--iterations", type=int, default=25)
    p.add_argument("--depth", type=int, default=5)

    p = common(sub.add_parser("explain", help="explain a stored trace lap"))
    p.set_defaults(func=cmd_explain)
    p.add_argument("--trace", required=True)
    p.add_argument("--lap", type=int, required=True)
    p.add_argument("--method", required=True,
                   choices=("attribution", "path", "counterfactual"))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--tree", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--budget", type=int, default=2000)

    p = common(sub.add_parser("simulate", help="batch races to CSV"))
    p.set_defaults(func=cmd_simulate, track="BHR")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--plan", default=None)

    p = common(sub.add_parser("serve", help="start the session service"))
    p.set_defaults(func=cmd_serve, track="BHR")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--tree", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)

    return parser


def cli_dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
