"""Command-line interface.

Subcommands: ``dcorr`` (correlation of two CSV matrices), ``synth``
(write a synthetic bundle), ``eval`` (episodic evaluation of one
metric), ``train`` (episodic training to a checkpoint), ``compare``
(metric-by-alpha sweep to CSV), ``gradcheck`` (finite-difference
gradient verification).

Exit codes: 0 success, 1 usage, 2 data/format, 3 numerical consistency
or training failure.  JSON reports follow ``schemas/run_report.schema.json``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from .data import SyntheticConfig, load_bundle, sample_episode, save_bundle, synth_generate
from .dcorr import DEFAULT_ALPHA, dcorr2_from_observations
from .errors import (
    DataError,
    DCMatchError,
    InputError,
    NumericalConsistencyError,
    ShapeError,
    TrainingError,
)
from .evaluate import METRICS, EvalSettings, MetricSpec, default_jobs, evaluate_bundle
from .params import CheckpointMeta, ModelDims, ParamStore, load_checkpoint, save_checkpoint
from .train import TrainConfig, gradcheck, train

GRADCHECK_THRESHOLD = 1e-4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(name: str, value: int) -> int:
    if value < 1:
        raise _UsageError(f"--{name} must be a positive integer, got {value}")
    return value


def _alpha_flag(value: float) -> float:
    if not 0.0 < value < 2.0:
        raise _UsageError(f"--alpha must lie strictly inside (0, 2), got {value}")
    return value


def _print_report(report: dict, path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _result_row(metric, alpha, way, shot, episodes, accuracy, ci95) -> dict:
    return {
        "metric": metric,
        "alpha": float(alpha),
        "way": int(way),
        "shot": int(shot),
        "episodes": int(episodes),
        "accuracy": float(accuracy),
        "ci95": float(ci95),
    }


def build_parser() -> _Parser:
    parser = _Parser(prog="dcmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dcorr", help="alpha-distance correlation of two CSV matrices")
    p.add_argument("x_csv")
    p.add_argument("y_csv")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)

    p = sub.add_parser("synth", help="generate a synthetic feature bundle")
    p.add_argument("--scenario", choices=("A", "B"), default="B")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--videos-per-class", type=int, default=30)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--tokens", type=int, default=10)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--text-dim", type=int, default=16)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--hidden-jitter", type=float, default=0.1)
    p.add_argument("--teacher-fidelity", type=float, default=0.9)
    p.add_argument("--teacher-sharpness", type=float, default=2.0)
    p.add_argument("--report", default=None)

    p = sub.add_parser("eval", help="episodic few-shot evaluation of one metric")
    p.add_argument("--bundle", required=True)
    p.add_argument("--metric", choices=METRICS, default="tsdcm")
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=1)
    p.add_argument("--queries-per-class", type=int, default=1)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--match-temperature", type=float, default=1.0)
    p.add_argument("--shot-aggregate", choices=("score-mean", "feature-mean"),
                   default="score-mean")
    p.add_argument("--exclude-class-token", action="store_true")
    p.add_argument("--report", default=None)
    p.add_argument("--per-episode", default=None,
                   help="write per-episode accuracies to this CSV")

    p = sub.add_parser("train", help="episodic training to a checkpoint")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=1)
    p.add_argument("--queries-per-class", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--weight-decay", type=float, default=0.1)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--proj-dim", type=int, default=16)
    p.add_argument("--match-temperature", type=float, default=1.0)
    p.add_argument("--guidance-temperature", type=float, default=1.0)
    p.add_argument("--align-temperature", type=float, default=1.0)
    p.add_argument("--fusion-weight", type=float, default=1.0)
    p.add_argument("--shot-aggregate", choices=("score-mean", "feature-mean"),
                   default="score-mean")
    p.add_argument("--grad-accumulation", type=int, default=1)
    p.add_argument("--eval-interval", type=int, default=500)
    p.add_argument("--eval-episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exclude-class-token", action="store_true")
    p.add_argument("--curve", default=None, help="loss-curve CSV path (default <out>.curve.csv)")
    p.add_argument("--report", default=None)

    p = sub.add_parser("compare", help="accuracy sweep over metrics and alphas to CSV")
    p.add_argument("--bundle", required=True)
    p.add_argument("--metrics", default="tsdcm,ifdc,cosine,gap,bimhm")
    p.add_argument("--alphas", default="0.4,0.8,1.2,1.6")
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=1)
    p.add_argument("--queries-per-class", type=int, default=1)
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference verification of gradients")
    p.add_argument("--bundle", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=1)
    p.add_argument("--queries-per-class", type=int, default=1)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--proj-dim", type=int, default=16)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------


def _load_csv_matrix(path: str) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path} is not a numeric CSV matrix: {exc}") from exc


def cmd_dcorr(args) -> int:
    _alpha_flag(args.alpha)
    x = _load_csv_matrix(args.x_csv)
    y = _load_csv_matrix(args.y_csv)
    value = dcorr2_from_observations(x, y, args.alpha)
    print(f"{value:.12f}")
    return 0


def cmd_synth(args) -> int:
    started = time.perf_counter()
    config = SyntheticConfig(
        scenario=args.scenario,
        classes=args.classes,
        videos_per_class=args.videos_per_class,
        frames=args.frames,
        tokens=args.tokens,
        channels=args.channels,
        text_dim=args.text_dim,
        gamma=args.gamma,
        sigma=args.sigma,
        hidden_jitter=args.hidden_jitter,
        teacher_fidelity=args.teacher_fidelity,
        teacher_sharpness=args.teacher_sharpness,
        seed=args.seed,
    )
    bundle = synth_generate(config)
    save_bundle(bundle, args.out)
    report = {
        "command": "synth",
        "config": vars(config).copy(),
        "seed": args.seed,
        "results": [],
        "duration_seconds": time.perf_counter() - started,
        "outputs": {"bundle": args.out},
    }
    _print_report(report, args.report)
    return 0


def _resolve_jobs(value) -> int:
    if value is None:
        return default_jobs()
    if value < 1:
        raise _UsageError(f"--jobs must be positive, got {value}")
    return value


def _load_eval_params(checkpoint, bundle, need_params: bool, proj_dim: int, seed: int):
    """Checkpoint params/meta, or a fresh init when the metric needs them."""
    params = meta = None
    if checkpoint:
        params, meta = load_checkpoint(checkpoint)
        dims = params.dims
        if (
            dims.frames != bundle.frames
            or dims.channels != bundle.channels
            or dims.classes != bundle.num_classes
        ):
            raise InputError(
                f"checkpoint dimensions (frames={dims.frames}, channels={dims.channels}, "
                f"classes={dims.classes}) do not match the bundle"
            )
    elif need_params:
        dims = ModelDims(
            frames=bundle.frames,
            channels=bundle.channels,
            proj_dim=proj_dim,
            classes=bundle.num_classes,
        )
        params = ParamStore.init(dims, np.random.default_rng(seed))
    return params, meta


def cmd_eval(args) -> int:
    started = time.perf_counter()
    _positive_int("episodes", args.episodes)
    _positive_int("way", args.way)
    _positive_int("shot", args.shot)
    _positive_int("queries-per-class", args.queries_per_class)
    jobs = _resolve_jobs(args.jobs)
    bundle = load_bundle(args.bundle)
    proj_dim = (
        bundle.text_embeddings.shape[1] if bundle.text_embeddings is not None else 16
    )
    params, meta = _load_eval_params(
        args.checkpoint, bundle, args.metric == "tsdcm", proj_dim, args.seed
    )
    alpha = args.alpha
    if alpha is None:
        alpha = meta.alpha if meta is not None else DEFAULT_ALPHA
    _alpha_flag(alpha)
    settings = EvalSettings(
        alpha=alpha,
        match_temperature=args.match_temperature,
        include_class_token=not args.exclude_class_token,
        shot_aggregate=args.shot_aggregate,
    )
    rng = np.random.default_rng(args.seed)
    episodes = [
        sample_episode(bundle, args.way, args.shot, args.queries_per_class, rng)
        for _ in range(args.episodes)
    ]
    spec = MetricSpec(args.metric, params=params, meta=meta)
    outcome = evaluate_bundle(bundle, episodes, [spec], settings, jobs=jobs)[args.metric]
    outputs = {}
    if args.per_episode:
        with open(args.per_episode, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode_index", "accuracy"])
            for i, value in enumerate(outcome.outcomes):
                writer.writerow([i, f"{value:.6f}"])
        outputs["per_episode"] = args.per_episode
    report = {
        "command": "eval",
        "config": {
            "bundle": args.bundle,
            "metric": args.metric,
            "way": args.way,
            "shot": args.shot,
            "queries_per_class": args.queries_per_class,
            "episodes": args.episodes,
            "alpha": alpha,
            "checkpoint": args.checkpoint,
            "jobs": jobs,
            "shot_aggregate": args.shot_aggregate,
            "include_class_token": not args.exclude_class_token,
        },
        "seed": args.seed,
        "results": [
            _result_row(
                args.metric, alpha, args.way, args.shot, args.episodes,
                outcome.accuracy, outcome.ci95,
            )
        ],
        "duration_seconds": time.perf_counter() - started,
        "outputs": outputs,
    }
    _print_report(report, args.report)
    return 0


def cmd_train(args) -> int:
    started = time.perf_counter()
    _positive_int("episodes", args.episodes)
    bundle = load_bundle(args.bundle)
    cfg = TrainConfig(
        way=args.way,
        shot=args.shot,
        queries_per_class=args.queries_per_class,
        episodes=args.episodes,
        lr=args.lr,
        weight_decay=args.weight_decay,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        alpha=args.alpha,
        match_temperature=args.match_temperature,
        guidance_temperature=args.guidance_temperature,
        align_temperature=args.align_temperature,
        proj_dim=args.proj_dim,
        include_class_token=not args.exclude_class_token,
        shot_aggregate=args.shot_aggregate,
        grad_accumulation=args.grad_accumulation,
        fusion_weight=args.fusion_weight,
        eval_interval=args.eval_interval,
        eval_episodes=args.eval_episodes,
        seed=args.seed,
    )
    result = train(bundle, cfg)
    save_checkpoint(result.params, result.meta, args.out)
    curve_path = args.curve or args.out + ".curve.csv"
    with open(curve_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "align", "match", "guidance", "lr", "eval_accuracy"])
        for entry in result.history:
            writer.writerow(
                [
                    entry.step,
                    repr(entry.loss),
                    repr(entry.align),
                    repr(entry.match),
                    repr(entry.guidance),
                    repr(entry.lr),
                    "" if entry.eval_accuracy is None else repr(entry.eval_accuracy),
                ]
            )
    report = {
        "command": "train",
        "config": vars(cfg).copy(),
        "seed": args.seed,
        "results": [
            _result_row(
                "tsdcm", cfg.alpha, cfg.way, cfg.shot, cfg.eval_episodes,
                result.final_accuracy, 0.0,
            )
        ],
        "duration_seconds": time.perf_counter() - started,
        "outputs": {"checkpoint": args.out, "curve": curve_path},
    }
    _print_report(report, args.report)
    return 0


def cmd_compare(args) -> int:
    _positive_int("episodes", args.episodes)
    jobs = _resolve_jobs(args.jobs)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    if not metrics:
        raise _UsageError("--metrics must name at least one metric")
    for m in metrics:
        if m not in METRICS:
            raise _UsageError(f"unknown metric {m!r}, expected one of {METRICS}")
    raw_alphas = []
    try:
        raw_alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError as exc:
        raise _UsageError(f"--alphas must be a comma-separated float list: {exc}") from exc
    alphas = []
    for a in raw_alphas:
        if a in alphas:
            print(f"warning: duplicate alpha {a} ignored", file=sys.stderr)
            continue
        alphas.append(_alpha_flag(a))
    if not alphas:
        raise _UsageError("--alphas must name at least one value")

    bundle = load_bundle(args.bundle)
    rng = np.random.default_rng(args.seed)
    episodes = [
        sample_episode(bundle, args.way, args.shot, args.queries_per_class, rng)
        for _ in range(args.episodes)
    ]
    params = meta = None
    if "tsdcm" in metrics:
        proj_dim = (
            bundle.text_embeddings.shape[1] if bundle.text_embeddings is not None else 16
        )
        params, meta = _load_eval_params(args.checkpoint, bundle, True, proj_dim, args.seed)
    rows = []
    for alpha in alphas:
        settings = EvalSettings(alpha=alpha)
        specs = [MetricSpec(m, params=params, meta=meta) for m in metrics]
        outcomes = evaluate_bundle(bundle, episodes, specs, settings, jobs=jobs)
        for m in metrics:
            rows.append(
                _result_row(
                    m, alpha, args.way, args.shot, args.episodes,
                    outcomes[m].accuracy, outcomes[m].ci95,
                )
            )
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "alpha", "way", "shot", "episodes", "accuracy", "ci95"])
        for row in rows:
            writer.writerow(
                [
                    row["metric"],
                    row["alpha"],
                    row["way"],
                    row["shot"],
                    row["episodes"],
                    f"{row['accuracy']:.6f}",
                    f"{row['ci95']:.6f}",
                ]
            )
    return 0


def cmd_gradcheck(args) -> int:
    if args.epsilon <= 0.0:
        raise _UsageError(f"--epsilon must be positive, got {args.epsilon}")
    _positive_int("episodes", args.episodes)
    bundle = load_bundle(args.bundle)
    cfg = TrainConfig(
        way=args.way,
        shot=args.shot,
        queries_per_class=args.queries_per_class,
        alpha=args.alpha,
        proj_dim=args.proj_dim,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        seed=args.seed,
    )
    worst, reports = gradcheck(bundle, cfg, n_episodes=args.episodes, epsilon=args.epsilon)
    by_tensor = {}
    for report in reports:
        for name, check in report.per_tensor.items():
            if name not in by_tensor or check.rel_error > by_tensor[name].rel_error:
                by_tensor[name] = check
    for name in sorted(by_tensor):
        check = by_tensor[name]
        print(
            f"{name}: worst coordinate {check.coordinate} "
            f"analytic {check.analytic:.6e} numeric {check.numeric:.6e} "
            f"rel_error {check.rel_error:.3e}"
        )
    print(f"max_rel_error {worst:.3e} over {args.episodes} episodes")
    if worst >= GRADCHECK_THRESHOLD:
        print(f"FAIL: exceeds {GRADCHECK_THRESHOLD}", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "dcorr": cmd_dcorr,
        "synth": cmd_synth,
        "eval": cmd_eval,
        "train": cmd_train,
        "compare": cmd_compare,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"dcmatch {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalConsistencyError, TrainingError) as exc:
        print(f"dcmatch {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, InputError, ShapeError) as exc:
        print(f"dcmatch {args.command}: {exc}", file=sys.stderr)
        return 2
    except DCMatchError as exc:
        print(f"dcmatch {args.command}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
