"""Command line front end.

Exit codes: 0 on success, 1 for configuration errors (bad flags, missing
files), 2 for runtime failures (malformed data, solver breakdowns). Reports
are written atomically by the harness.
"""

import argparse
import os
import sys

from .bench import (BenchmarkError, ExperimentConfig, TrainParams,
                    adversarial_training_experiment, distillation_experiment,
                    run_benchmark, transferability_sweep)
from .classifier import (CheckpointError, accuracy, init_model, load_model,
                         save_model, train)
from .data import DatasetFormatError, load_dataset
from .drivers import TargetMode
from .engine import AdaptiveRho, BinarySearchC
from .numerics import Norm


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_io_flags(p, need_model=True):
    p.add_argument("--seed", type=int, default=0)
    if need_model:
        p.add_argument("--model", required=True, help="model checkpoint path")
    p.add_argument("--dataset", default="digits",
                   help="dataset path ('images,labels' for idx) or 'digits'")
    p.add_argument("--format", default="digits", choices=["idx", "csv", "digits"])
    p.add_argument("--out", default=None, help="report output path")
    p.add_argument("--report-format", default="json", choices=["json", "csv"])


def _add_attack_flags(p):
    p.add_argument("--norm", default="l2", choices=[n.value for n in Norm])
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--admm-iters", type=int, default=None)
    p.add_argument("--inner-iters", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--search-steps", type=int, default=None)
    p.add_argument("--targets", default="average",
                   choices=[m.value for m in TargetMode])
    p.add_argument("--images", type=int, default=100)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--train-lr", type=float, default=1e-3)
    p.add_argument("--hidden", default="64,64",
                   help="comma separated hidden layer widths")
    p.add_argument("--temperature", type=float, default=1.0)


def _build_parser() -> _Parser:
    parser = _Parser(prog="admm-adversary", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier checkpoint")
    _add_io_flags(p, need_model=False)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("attack", help="run the splitting attack on sampled images")
    _add_io_flags(p)
    _add_attack_flags(p)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("bench", help="attack benchmark against the baselines")
    _add_io_flags(p)
    _add_attack_flags(p)
    p.add_argument("--methods", default="admm,fgm,ifgm")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("distill", help="attack models trained at several temperatures")
    _add_io_flags(p, need_model=False)
    _add_attack_flags(p)
    _add_train_flags(p)
    p.add_argument("--temperatures", default="1,100")
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("advtrain", help="adversarial-training robustness check")
    _add_io_flags(p, need_model=False)
    _add_attack_flags(p)
    _add_train_flags(p)
    p.add_argument("--augment-count", type=int, default=150)
    p.set_defaults(func=_cmd_advtrain)

    p = sub.add_parser("transfer", help="confidence sweep against a second model")
    _add_io_flags(p)
    _add_attack_flags(p)
    _add_train_flags(p)
    p.add_argument("--kappas", default="0,5,10")
    p.add_argument("--transfer-model", default=None)
    p.add_argument("--transfer-distilled-T", type=float, default=None,
                   dest="transfer_distilled_t")
    p.add_argument("--transfer-seed", type=int, default=1)
    p.set_defaults(func=_cmd_transfer)
    return parser


def _overrides_from_args(args) -> dict:
    norm = Norm(args.norm)
    overrides = {}
    if args.rho is not None:
        overrides["rho"] = args.rho
    if args.c is not None:
        overrides["const"] = args.c
    if args.kappa is not None:
        overrides["kappa"] = args.kappa
    if args.admm_iters is not None:
        overrides["admm_iterations"] = args.admm_iters
    if args.inner_iters is not None:
        overrides["inner_iterations"] = args.inner_iters
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    # keep the search policy consistent with explicit constants
    if norm is Norm.L2 and (args.search_steps is not None or args.c is not None):
        policy = BinarySearchC()
        overrides["search"] = BinarySearchC(
            steps=args.search_steps or policy.steps,
            c_init=args.c if args.c is not None else policy.c_init,
        )
    if norm is Norm.L0 and (args.search_steps is not None or args.rho is not None):
        policy = AdaptiveRho()
        overrides["search"] = AdaptiveRho(
            steps=args.search_steps or policy.steps,
            rho_init=args.rho if args.rho is not None else policy.rho_init,
        )
    return overrides


def _experiment_config(args, methods) -> ExperimentConfig:
    return ExperimentConfig(
        dataset=args.dataset,
        dataset_format=args.format,
        model_path=getattr(args, "model", None),
        methods=methods,
        norm=Norm(args.norm),
        cases=(TargetMode(args.targets),),
        image_count=args.images,
        seed=args.seed,
        output=args.out,
        report_format=args.report_format,
        attack_overrides=_overrides_from_args(args),
        train=_train_params(args),
        augment_count=getattr(args, "augment_count", 150),
    )


def _train_params(args) -> TrainParams:
    if not hasattr(args, "epochs"):
        return TrainParams()
    try:
        hidden = tuple(int(h) for h in args.hidden.split(",") if h.strip())
    except ValueError:
        raise UsageError(f"bad --hidden value {args.hidden!r}")
    if not hidden:
        raise UsageError("--hidden needs at least one layer width")
    return TrainParams(
        hidden=hidden,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.train_lr,
        temperature=args.temperature,
    )


def _check_input_files(args) -> None:
    model = getattr(args, "model", None)
    if model is not None and not os.path.isfile(model):
        raise UsageError(f"model file not found: {model}")
    if args.format != "digits":
        for part in str(args.dataset).split(","):
            if not os.path.exists(part.strip()):
                raise UsageError(f"dataset path not found: {part.strip()}")
    transfer = getattr(args, "transfer_model", None)
    if transfer is not None and not os.path.isfile(transfer):
        raise UsageError(f"transfer model file not found: {transfer}")


def _parse_float_list(text, flag) -> list[float]:
    try:
        values = [float(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"bad {flag} value {text!r}")
    if not values:
        raise UsageError(f"{flag} needs at least one value")
    return values


def _cmd_train(args) -> int:
    if args.out is None:
        raise UsageError("train needs --out for the checkpoint path")
    dataset = load_dataset(args.dataset, args.format)
    params = _train_params(args)
    dims = (dataset.inputs.shape[1], *params.hidden, int(dataset.labels.max()) + 1)
    model = init_model(dims, seed=args.seed, temperature=params.temperature)
    trained = train(model, dataset, params.epochs, params.batch_size, params.lr,
                    args.seed)
    save_model(trained, args.out)
    print(f"trained {dims} model, accuracy {accuracy(trained, dataset):.4f}, "
          f"saved to {args.out}")
    return 0


def _print_rows(rows) -> None:
    for row in rows:
        extras = {k: v for k, v in row.items()
                  if k not in ("method", "case", "asr_pct")}
        detail = " ".join(
            f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
            for k, v in extras.items() if v is not None
        )
        print(f"{row.get('method', '-'):8s} {row.get('case', '-'):8s} "
              f"ASR {row['asr_pct']:6.2f}% {detail}")


def _cmd_attack(args) -> int:
    config = _experiment_config(args, methods=("admm",))
    report = run_benchmark(config)
    _print_rows(report.rows)
    return 0


def _cmd_bench(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if not methods:
        raise UsageError("--methods needs at least one method")
    for m in methods:
        if m not in ("admm", "fgm", "ifgm"):
            raise UsageError(f"unknown method {m!r}")
    config = _experiment_config(args, methods=methods)
    report = run_benchmark(config)
    _print_rows(report.rows)
    return 0


def _cmd_distill(args) -> int:
    temperatures = _parse_float_list(args.temperatures, "--temperatures")
    config = _experiment_config(args, methods=("admm",))
    reports = distillation_experiment(config, temperatures)
    for temperature in temperatures:
        print(f"temperature {temperature}:")
        _print_rows(reports[temperature][0].rows)
    return 0


def _cmd_advtrain(args) -> int:
    config = _experiment_config(args, methods=("admm",))
    report, _ = adversarial_training_experiment(config)
    _print_rows(report.rows)
    return 0


def _cmd_transfer(args) -> int:
    kappas = _parse_float_list(args.kappas, "--kappas")
    config = _experiment_config(args, methods=("admm",))
    source = load_model(args.model)
    if args.transfer_model is not None:
        transfer = load_model(args.transfer_model)
    else:
        dataset = load_dataset(args.dataset, args.format)
        params = _train_params(args)
        temperature = (args.transfer_distilled_t
                       if args.transfer_distilled_t is not None else 1.0)
        dims = (dataset.inputs.shape[1], *params.hidden,
                int(dataset.labels.max()) + 1)
        transfer = train(
            init_model(dims, seed=args.transfer_seed, temperature=temperature),
            dataset, params.epochs, params.batch_size, params.lr,
            args.transfer_seed,
        )
    report, _ = transferability_sweep(source, transfer, kappas, config)
    for row in report.rows:
        print(f"kappa {row['kappa']:6.2f}: generation ASR "
              f"{row['generation_asr_pct']:6.2f}%, transfer ASR "
              f"{row['transfer_asr_pct']:6.2f}%")
    return 0


def cli(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        _check_input_files(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DatasetFormatError, CheckpointError, BenchmarkError, ValueError,
            ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
