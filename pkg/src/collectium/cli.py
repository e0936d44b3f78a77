"""Command-line entry point for the benchmark harness.

Every config-file field has a long flag of the same name (flag wins over
the file).  Exit codes: 0 success, 2 config error, 3 transport error,
4 invariant violation detected during the run.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .bench import BenchConfig, run_bench
from .errors import CollectiumError, ConfigError, TransportError
from .simcost import CostModel


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collectium-bench",
        description="Allreduce microbenchmarks and synthetic training "
                    "benchmarks over simulated or socket transports.",
    )
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--mode", choices=["microbench", "train", "sweep"])
    parser.add_argument("--transport", choices=["sim", "socket"])
    parser.add_argument("--algo",
                        choices=["flat", "ring_rsa", "rhd_rsa", "auto"])
    parser.add_argument("--switch-bytes", type=int,
                        help="auto-dispatch boundary (default 131072)")
    parser.add_argument("--fusion-threshold", type=int,
                        help="tensor fusion threshold in bytes")
    parser.add_argument("--strategy",
                        choices=["horovod_allreduce", "baidu_ring", "ps_pull"])
    parser.add_argument("--model",
                        help="built-in model name or path to a JSON spec")
    parser.add_argument("--p", type=int, help="group size (sim mode)")
    parser.add_argument("--warmup-iters", type=int)
    parser.add_argument("--timed-iters", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output", help="CSV output path (default stdout)")
    parser.add_argument("--hostfile",
                        help="socket mode: one 'rank host port' line per rank")
    parser.add_argument("--rank", type=int,
                        help="socket mode rank (or set COLLECTIUM_RANK)")
    parser.add_argument("--msg-min-bytes", type=int)
    parser.add_argument("--msg-max-bytes", type=int)
    parser.add_argument("--recv-timeout", type=float)
    parser.add_argument("--rendezvous-timeout", type=float)
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument("--cost-model",
                        help="path to a JSON cost model "
                             "(alpha/beta/gamma/driver_query_delay/"
                             "parallel_channels)")
    parser.add_argument("--models", help="sweep mode: comma-separated models")
    parser.add_argument("--strategies",
                        help="sweep mode: comma-separated strategies")
    parser.add_argument("--p-list",
                        help="sweep mode: comma-separated group sizes")
    parser.add_argument("--dump-grads",
                        help="write the final data-path tensors to this "
                             ".npz file (train mode)")
    return parser


def config_from_args(args: argparse.Namespace) -> BenchConfig:
    cfg = BenchConfig.from_file(args.config) if args.config else BenchConfig()
    overrides = {}
    simple = ["mode", "transport", "algo", "switch_bytes", "fusion_threshold",
              "strategy", "model", "p", "warmup_iters", "timed_iters", "seed",
              "output", "hostfile", "rank", "msg_min_bytes", "msg_max_bytes",
              "recv_timeout", "rendezvous_timeout", "learning_rate",
              "dump_grads"]
    for name in simple:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.cost_model is not None:
        overrides["cost_model"] = CostModel.from_json(args.cost_model)
    if args.models is not None:
        overrides["models"] = args.models.split(",")
    if args.strategies is not None:
        overrides["strategies"] = args.strategies.split(",")
    if args.p_list is not None:
        try:
            overrides["p_list"] = [int(x) for x in args.p_list.split(",")]
        except ValueError as exc:
            raise ConfigError(f"--p-list: {exc}") from exc
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        run_bench(cfg)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3
    except CollectiumError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
