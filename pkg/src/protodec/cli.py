"""Command-line entry point.

Subcommands: ``expand`` (build a verbalizer spec), ``validate`` (check a
feature pack), ``train`` (fit decoding heads over a seed list), ``eval``
(fused scoring with ablation switches), and ``sweep`` (hyperparameter
studies).  Configuration may come from a YAML file; explicit flags override
file values, which override built-in defaults.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence, 5 remote-transport error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import report
from .decoder import TrainConfig, load_checkpoint, save_checkpoint
from .errors import (ConfigError, DataError, NumericError, ProtodecError,
                     RemoteError)
from .joint import JointConfig, seed_summary
from .ot import SinkhornConfig
from .pipeline import (evaluate_pack, subset_pack_prompts, train_from_pack)
from .store import read_pack, validate_pack
from .verbalizer import EmbeddingTable, VerbalizerSpec, build_spec

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_REMOTE = 5


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("config file must contain a mapping")
    return doc


def _resolve(args: argparse.Namespace, file_cfg: dict, key: str, default=None):
    """Precedence: explicit flag > config file > default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _train_config(args: argparse.Namespace, file_cfg: dict) -> TrainConfig:
    section = dict(file_cfg.get("train", {}))
    sink = section.pop("sinkhorn", {})
    try:
        cfg = TrainConfig(sinkhorn=SinkhornConfig(**sink), **section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc
    for flag, name in (("epochs", "epochs"), ("d_out", "d_out"),
                       ("num_prototypes", "num_prototypes"), ("lr", "lr"),
                       ("batch_mode", "batch_mode"), ("plan", "plan")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = replace(cfg, **{name: value})
    return cfg


def _joint_config(args: argparse.Namespace, file_cfg: dict) -> JointConfig:
    section = dict(file_cfg.get("joint", {}))
    beta = getattr(args, "beta", None)
    rule = getattr(args, "beta_rule", None)
    if beta is not None:
        section["beta"] = beta
        # an explicit beta means "use this number" unless a rule is also given
        section["beta_rule"] = rule if rule is not None else "fixed"
    elif rule is not None:
        section["beta_rule"] = rule
    try:
        return JointConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad joint config: {exc}") from exc


def _seeds(args: argparse.Namespace, file_cfg: dict) -> list[int]:
    seeds = _resolve(args, file_cfg, "seeds", [0])
    if isinstance(seeds, str):
        seeds = [int(s) for s in seeds.split(",") if s]
    if not seeds:
        raise ConfigError("seed list must be nonempty")
    return [int(s) for s in seeds]


def _require(value, name: str):
    if value is None:
        raise ConfigError(f"missing required setting: {name}")
    return value


def _require_path(value, name: str) -> Path:
    path = Path(_require(value, name))
    if not path.exists():
        raise DataError(f"{name} path does not exist: {path}")
    return path


def cmd_expand(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    table_path = _require_path(_resolve(args, file_cfg, "table"), "embedding table")
    class_names = _require(args.classes, "--classes").split(",")
    seed_words = [w.split("+") for w in _require(args.words, "--words").split(",")]
    if len(class_names) != len(seed_words):
        raise ConfigError("--classes and --words must have matching lengths")
    table = EmbeddingTable.load(table_path)
    spec = build_spec(table, class_names, seed_words,
                      expansion_size=args.k,
                      temperature=args.temperature,
                      expansion_enabled=not args.no_expansion)
    out = Path(_require(args.out, "--out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    spec.save(out)
    print(f"wrote verbalizer spec for {len(class_names)} classes to {out}")
    for cw in spec.classes:
        preview = ", ".join(t for t, _ in cw.expanded[:5])
        print(f"  {cw.name}: {preview}{'...' if len(cw.expanded) > 5 else ''}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    pack = read_pack(args.pack)
    result = validate_pack(pack)
    print(f"pack {args.pack} ({pack.dataset}, split={pack.split}, "
          f"{pack.num_samples} records)")
    for line in result.lines():
        print(f"  {line}")
    return 0 if result.ok else EXIT_DATA


def _train_one_run(pack, cfg, seeds, checkpoint_dir: Path, report_dir: Path,
                   resolved: dict) -> dict[int, list[float]]:
    traces: dict[int, list[float]] = {}
    rows = []
    for seed in seeds:
        params, trace = train_from_pack(pack, cfg, seed=seed)
        traces[seed] = trace
        ckpt = checkpoint_dir / f"seed_{seed}"
        save_checkpoint(ckpt, params, replace(cfg, seed=seed,
                                              num_prompts=pack.num_prompts),
                        shots=pack.shots, overwrite=True)
        report.write_csv(report_dir / f"loss_trace_seed{seed}.csv",
                         ["epoch", "loss"],
                         [(e + 1, v) for e, v in enumerate(trace)])
        rows.append((seed, trace[0] if trace else float("nan"),
                     trace[-1] if trace else float("nan"), str(ckpt)))
    report.plot_loss_curves(report_dir / "figures" / "loss_curves.png", traces)
    report.write_json(report_dir / "train_report.json", {
        "config": resolved,
        "seeds": list(traces),
        "final_loss": {str(s): (t[-1] if t else None) for s, t in traces.items()},
    })
    print(report.summary_table(
        ["seed", "first loss", "final loss", "checkpoint"], rows))
    return traces


def cmd_train(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    pack = read_pack(_require_path(_resolve(args, file_cfg, "train_pack"),
                                   "train_pack"))
    cfg = _train_config(args, file_cfg)
    seeds = _seeds(args, file_cfg)
    checkpoint_dir = Path(_require(_resolve(args, file_cfg, "checkpoint_dir"),
                                   "checkpoint_dir"))
    report_dir = Path(_resolve(args, file_cfg, "report_dir", "reports"))
    resolved = {"train": cfg.to_dict(), "seeds": seeds,
                "train_pack": str(_resolve(args, file_cfg, "train_pack"))}
    _train_one_run(pack, cfg, seeds, checkpoint_dir, report_dir, resolved)
    return 0


def _checkpoint_for_seed(checkpoint_dir: Path, seed: int):
    path = checkpoint_dir / f"seed_{seed}"
    if not path.exists():
        raise DataError(f"no checkpoint for seed {seed} under {checkpoint_dir}")
    return load_checkpoint(path)


def cmd_eval(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    pack = read_pack(_require_path(_resolve(args, file_cfg, "eval_pack"),
                                   "eval_pack"))
    checkpoint_dir = _require_path(_resolve(args, file_cfg, "checkpoint_dir"),
                                   "checkpoint_dir")
    seeds = _seeds(args, file_cfg)
    joint_cfg = _joint_config(args, file_cfg)
    ablation = args.ablate or "none"
    spec_path = _resolve(args, file_cfg, "verbalizer")
    spec = VerbalizerSpec.load(spec_path) if spec_path else None
    report_dir = Path(_resolve(args, file_cfg, "report_dir", "reports"))

    per_seed = {}
    for seed in seeds:
        params, cfg, manifest = _checkpoint_for_seed(checkpoint_dir, seed)
        if args.plan is not None:
            cfg = replace(cfg, plan=args.plan)
        run = evaluate_pack(pack, params, cfg, spec, joint_cfg,
                            shots=manifest["shots"], ablation=ablation)
        per_seed[seed] = run
        report.write_csv(
            report_dir / f"predictions_seed{seed}.csv",
            ["sample_id", "gold", "predicted"]
            + [f"fused_{k + 1}" for k in range(pack.num_classes)],
            [[pack.sample_ids[i], int(pack.labels[i]), int(run.predictions[i])]
             + [float(v) for v in run.fused[i]]
             for i in range(pack.num_samples)])

    fused_acc = [run.result.accuracy for run in per_seed.values()]
    ot_acc = [run.ot_only.accuracy for run in per_seed.values()]
    cal_acc = [run.cal_only.accuracy for run in per_seed.values()]
    mean, std = seed_summary(fused_acc)
    ot_mean, ot_std = seed_summary(ot_acc)
    cal_mean, cal_std = seed_summary(cal_acc)

    resolved = {
        "eval_pack": str(_resolve(args, file_cfg, "eval_pack")),
        "checkpoint_dir": str(checkpoint_dir),
        "verbalizer": str(spec_path) if spec_path else None,
        "joint": {"beta": joint_cfg.beta, "beta_rule": joint_cfg.beta_rule},
        "ablation": ablation,
        "plan_override": args.plan,
        "seeds": seeds,
    }
    report.write_json(report_dir / "eval_report.json", {
        "config": resolved,
        "accuracy": {"mean": mean, "std": std,
                     "per_seed": {str(s): a for s, a in zip(per_seed, fused_acc)}},
        "ot_only": {"mean": ot_mean, "std": ot_std},
        "calibration_only": {"mean": cal_mean, "std": cal_std},
        "beta_resolved": {str(s): run.beta for s, run in per_seed.items()},
    })
    report.write_csv(report_dir / "eval_summary.csv",
                     ["seed", "fused", "ot_only", "calibration_only", "beta"],
                     [(s, run.result.accuracy, run.ot_only.accuracy,
                       run.cal_only.accuracy, run.beta)
                      for s, run in per_seed.items()])
    report.plot_component_accuracy(
        report_dir / "figures" / "component_accuracy.png",
        ["fused", "transport only", "calibration only"],
        [mean, ot_mean, cal_mean], [std, ot_std, cal_std])
    print(report.summary_table(
        ["metric", "mean", "std"],
        [("fused accuracy", mean, std),
         ("transport only", ot_mean, ot_std),
         ("calibration only", cal_mean, cal_std)]))
    return 0


def _parse_sweep_values(axis: str, raw: str, shots: int) -> list:
    if axis == "beta":
        values = []
        for tok in raw.split(","):
            tok = tok.strip()
            if tok in ("1/K", "1/k"):
                values.append(1.0 / shots)
            else:
                values.append(float(tok))
        return values
    if axis in ("prototypes", "prompts"):
        return [int(t) for t in raw.split(",")]
    if axis == "prompt-subset":
        return [[int(i) for i in group.split(",")] for group in raw.split("|")]
    raise ConfigError(f"unknown sweep axis {axis!r}")


def cmd_sweep(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    train_pack = read_pack(_require_path(_resolve(args, file_cfg, "train_pack"),
                                         "train_pack"))
    eval_pack = read_pack(_require_path(_resolve(args, file_cfg, "eval_pack"),
                                        "eval_pack"))
    cfg = _train_config(args, file_cfg)
    seeds = _seeds(args, file_cfg)
    joint_cfg = _joint_config(args, file_cfg)
    spec_path = _resolve(args, file_cfg, "verbalizer")
    spec = VerbalizerSpec.load(spec_path) if spec_path else None
    report_dir = Path(_resolve(args, file_cfg, "report_dir", "reports"))
    axis = args.axis
    values = _parse_sweep_values(axis, args.values, train_pack.shots)

    rows = []
    means, stds = [], []
    if axis == "beta":
        # heads do not depend on beta: train once per seed, reuse across values
        trained = {s: train_from_pack(train_pack, cfg, seed=s)[0] for s in seeds}
        for beta in values:
            accs = []
            for s in seeds:
                run = evaluate_pack(eval_pack, trained[s], cfg, spec,
                                    JointConfig(beta=beta, beta_rule="fixed"),
                                    shots=train_pack.shots)
                accs.append(run.result.accuracy)
            mean, std = seed_summary(accs)
            rows.append([beta, mean, std] + accs)
            means.append(mean)
            stds.append(std)
    else:
        for value in values:
            accs = []
            for s in seeds:
                if axis == "prototypes":
                    run_cfg = replace(cfg, num_prototypes=int(value))
                    tr_pack, ev_pack = train_pack, eval_pack
                elif axis == "prompts":
                    run_cfg = cfg
                    tr_pack = subset_pack_prompts(train_pack, range(int(value)))
                    ev_pack = subset_pack_prompts(eval_pack, range(int(value)))
                else:  # prompt-subset
                    run_cfg = cfg
                    tr_pack = subset_pack_prompts(train_pack, value)
                    ev_pack = subset_pack_prompts(eval_pack, value)
                params, _ = train_from_pack(tr_pack, run_cfg, seed=s)
                run = evaluate_pack(ev_pack, params, replace(
                    run_cfg, num_prompts=ev_pack.num_prompts), spec, joint_cfg,
                    shots=tr_pack.shots)
                accs.append(run.result.accuracy)
            mean, std = seed_summary(accs)
            label = ",".join(map(str, value)) if isinstance(value, list) else value
            rows.append([label, mean, std] + accs)
            means.append(mean)
            stds.append(std)

    header = [axis, "mean_accuracy", "std"] + [f"seed_{s}" for s in seeds]
    report.write_csv(report_dir / f"sweep_{axis}.csv", header, rows)
    report.write_json(report_dir / f"sweep_{axis}.json", {
        "axis": axis,
        "values": [str(r[0]) for r in rows],
        "mean_accuracy": means,
        "std": stds,
        "seeds": seeds,
        "config": {"train": cfg.to_dict(),
                   "joint": {"beta": joint_cfg.beta,
                             "beta_rule": joint_cfg.beta_rule}},
    })
    report.plot_sweep(report_dir / "figures" / f"sweep_{axis}.png",
                      axis, [r[0] for r in rows], means, stds)
    print(report.summary_table(header[:3], [r[:3] for r in rows]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protodec",
        description="Few-shot decoding of black-box encoder outputs: "
                    "transport-matched prototypes fused with calibrated "
                    "verbalizer scores.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_expand = sub.add_parser("expand", help="expand label words into a verbalizer spec")
    p_expand.add_argument("--config", default=None)
    p_expand.add_argument("--table", default=None, help="embedding-table directory")
    p_expand.add_argument("--classes", default=None, help="comma-separated class names")
    p_expand.add_argument("--words", default=None,
                          help="comma-separated seeds per class; join multi-seeds with +")
    p_expand.add_argument("-k", type=int, default=10, help="expansion size")
    p_expand.add_argument("--temperature", type=float, default=1.0)
    p_expand.add_argument("--no-expansion", action="store_true",
                          help="keep seed words only (NLI-style tasks)")
    p_expand.add_argument("--out", default=None, help="output spec path")
    p_expand.set_defaults(func=cmd_expand)

    p_val = sub.add_parser("validate", help="integrity-check a feature pack")
    p_val.add_argument("pack")
    p_val.set_defaults(func=cmd_validate)

    def add_common(p):
        p.add_argument("--config", default=None, help="YAML run configuration")
        p.add_argument("--seeds", default=None, help="comma-separated seed list")
        p.add_argument("--report-dir", default=None)

    def add_train_flags(p):
        p.add_argument("--train-pack", default=None)
        p.add_argument("--checkpoint-dir", default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--d-out", type=int, default=None)
        p.add_argument("--num-prototypes", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-mode", choices=["full", "per_sample"], default=None)
        p.add_argument("--plan", choices=["sinkhorn", "uniform", "cosine"],
                       default=None)

    p_train = sub.add_parser("train", help="fit decoding heads, one per seed")
    add_common(p_train)
    add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints on a pack")
    add_common(p_eval)
    p_eval.add_argument("--eval-pack", default=None)
    p_eval.add_argument("--checkpoint-dir", default=None)
    p_eval.add_argument("--verbalizer", default=None)
    p_eval.add_argument("--beta", type=float, default=None)
    p_eval.add_argument("--beta-rule", choices=["fixed", "inverse_shots"],
                        default=None)
    p_eval.add_argument("--plan", choices=["sinkhorn", "uniform", "cosine"],
                        default=None)
    p_eval.add_argument("--ablate", choices=["none", "no-cal", "no-ot"],
                        default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="sweep one axis and tabulate accuracy")
    add_common(p_sweep)
    add_train_flags(p_sweep)
    p_sweep.add_argument("--eval-pack", default=None)
    p_sweep.add_argument("--verbalizer", default=None)
    p_sweep.add_argument("--beta", type=float, default=None)
    p_sweep.add_argument("--beta-rule", choices=["fixed", "inverse_shots"],
                         default=None)
    p_sweep.add_argument("--axis", required=True,
                         choices=["beta", "prototypes", "prompts", "prompt-subset"])
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values; use | between subsets")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RemoteError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ProtodecError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
