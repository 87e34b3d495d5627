"""Command line entry point: ``rnpg {run,sweep,lqc-verify,theory}``.

Options after the subcommand are either fixed flags (``--config``, ``--out``,
``--jobs``, ...) or ``--key=value`` overrides of any experiment-config field.
Exit codes: 0 success, 1 configuration error, 2 every replication failed.
"""
import argparse
import json
import logging
import sys

from .experiment import (
    ConfigError,
    ExperimentConfig,
    lqc_verify,
    run_experiment,
    sweep_reuse,
    write_theory,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _parser():
    p = argparse.ArgumentParser(prog="rnpg", description="Natural policy gradient with trajectory reuse.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes across macro-reps")

    common(sub.add_parser("run", help="train macro-replications and write metrics.csv"))
    sw = sub.add_parser("sweep", help="grid over gradient/Fisher reuse sizes")
    common(sw)
    sw.add_argument("--K-list", type=_int_list, required=True)
    sw.add_argument("--K-fim-list", type=_int_list, default=None)
    lv = sub.add_parser("lqc-verify", help="check asymptotic normality on the LQC problem")
    common(lv)
    lv.add_argument("--strict", action="store_true", help="fail when replications are too few")
    th = sub.add_parser("theory", help="print/write the LQC asymptotic covariance")
    th.add_argument("--gamma", type=float, default=0.5)
    th.add_argument("--B", type=int, default=5)
    th.add_argument("--K", type=int, default=5)
    th.add_argument("--epsilon", type=float, default=0.01)
    th.add_argument("--mc-reps", type=int, default=10**7)
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--out", default=None)
    return p


def _split_overrides(extra):
    overrides = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognised argument {item!r}; overrides take the form --key=value")
        key, value = item[2:].split("=", 1)
        overrides[key] = value
    return overrides


def _load_config(args, extra) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_json(fh.read())
    return cfg.with_overrides(_split_overrides(extra))


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    try:
        if args.command == "theory":
            if extra:
                raise ConfigError(f"unrecognised arguments: {extra}")
            theory = write_theory(args.gamma, args.B, args.K, args.epsilon, args.mc_reps, args.seed, args.out)
            print(json.dumps(theory, indent=2, sort_keys=True))
            return EXIT_OK
        cfg = _load_config(args, extra)
        if args.command == "run":
            result = run_experiment(cfg, args.out, jobs=args.jobs)
            n = len(result.outcomes)
            print(f"{n - result.n_failed}/{n} replications finished; results in {result.path}")
            return EXIT_RUNTIME if result.n_failed == n else EXIT_OK
        if args.command == "sweep":
            k_fim = args.K_fim_list or [cfg.resolved().K_fim]
            path = sweep_reuse(cfg, args.K_list, k_fim, args.out, jobs=args.jobs)
            print((path / "summary.csv").read_text(), end="")
            return EXIT_OK
        if args.command == "lqc-verify":
            verdict = lqc_verify(cfg, args.out, strict=args.strict)
            print(json.dumps(verdict, indent=2, sort_keys=True))
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
