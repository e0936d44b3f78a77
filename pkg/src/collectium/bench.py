"""Benchmark harness: osu-style allreduce latency sweeps and a synthetic
training benchmark (warmup iterations followed by ten timed iterations),
over the simulated or the socket transport, emitting CSV.

Rank 0 owns the reported statistics and broadcasts them, so every rank of a
socket run writes byte-identical CSV.  All synthetic gradient values are
seeded per (seed, iteration, layer, rank), making payloads identical across
transports and runs.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .aggregation import (DEFAULT_FUSION_THRESHOLD, FusionConfig,
                          GradientSet, aggregate)
from .collectives import (ALGORITHMS, DEFAULT_SWITCH_BYTES, ReduceOp,
                          allreduce, resolve_algorithm)
from .core import GroupSpec, Tensor
from .errors import CollectiumError, ConfigError, TransportError
from .paramserver import PsTopology, run_ps_step
from .simcost import (STRATEGIES, CostModel, ModelSpec, resolve_model, sweep,
                      sweep_csv_rows)
from .transport.base import Transport
from .transport.sim import SimNetwork
from .transport.sockets import SocketEndpoint, parse_hostfile

ENV_NPROCS = "COLLECTIUM_NPROCS"
ENV_RANK = "COLLECTIUM_RANK"

TAG_BENCH = 3

MICROBENCH_CSV_HEADER = ("message_bytes,algo,p,mean_latency_s,min_latency_s,"
                         "max_latency_s,messages_per_rank")
TRAIN_CSV_HEADER = "model,strategy,p,images_per_sec,ideal,efficiency"

_MODES = ("microbench", "train", "sweep")
_TRANSPORTS = ("sim", "socket")


@dataclass
class BenchConfig:
    mode: str = "microbench"
    transport: str = "sim"
    algo: str = "auto"
    switch_bytes: int = DEFAULT_SWITCH_BYTES
    fusion_threshold: int = DEFAULT_FUSION_THRESHOLD
    strategy: str = "horovod_allreduce"
    model: str = "resnet50_like"
    p: int = 2
    warmup_iters: int = 5
    timed_iters: int = 10
    seed: int = 0
    output: str | None = None
    hostfile: str | None = None
    rank: int | None = None
    msg_min_bytes: int = 8
    msg_max_bytes: int = 268435456
    recv_timeout: float = 30.0
    rendezvous_timeout: float = 30.0
    learning_rate: float = 0.1
    cost_model: CostModel = field(default_factory=CostModel)
    models: list[str] = field(default_factory=lambda: [
        "mobilenet_like", "resnet50_like", "nasnet_like"])
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    p_list: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    dump_grads: str | None = None

    def validate(self) -> None:
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.transport not in _TRANSPORTS:
            raise ConfigError(
                f"transport must be one of {_TRANSPORTS}, got {self.transport!r}")
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {ALGORITHMS}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.timed_iters < 1:
            raise ConfigError("timed_iters must be >= 1")
        if self.warmup_iters < 0:
            raise ConfigError("warmup_iters must be >= 0")
        if self.p < 1:
            raise ConfigError("p must be >= 1")
        if self.switch_bytes <= 0:
            raise ConfigError("switch_bytes must be > 0")
        if self.fusion_threshold <= 0:
            raise ConfigError("fusion_threshold must be > 0")
        if self.msg_min_bytes < 8 or self.msg_min_bytes % 8:
            raise ConfigError("msg_min_bytes must be a multiple of 8, >= 8")
        if self.msg_max_bytes < self.msg_min_bytes:
            raise ConfigError("msg_max_bytes must be >= msg_min_bytes")
        if self.transport == "socket" and not self.hostfile:
            raise ConfigError("socket transport requires a hostfile")

    @classmethod
    def from_file(cls, path: str) -> "BenchConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
        return cls.from_dict(data, source=path)

    @classmethod
    def from_dict(cls, data: dict, source: str = "<config>") -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{source}: unknown fields {sorted(unknown)}")
        kwargs = dict(data)
        if "cost_model" in kwargs and isinstance(kwargs["cost_model"], dict):
            kwargs["cost_model"] = CostModel.from_dict(kwargs["cost_model"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"{source}: {exc}") from exc


def _message_sizes(cfg: BenchConfig) -> list[int]:
    sizes = []
    size = cfg.msg_min_bytes
    while size <= cfg.msg_max_bytes:
        sizes.append(size)
        size *= 2
    return sizes


def _clock(tp: Transport, simulated: bool) -> float:
    return tp.virtual_time() if simulated else time.perf_counter()


def _broadcast_floats(tp: Transport, values: list[float] | None,
                      count: int) -> list[float]:
    """Rank 0 gathers nothing here; it just broadcasts its statistics so
    every rank reports identical numbers."""
    if tp.size == 1:
        return list(values)
    if tp.rank == 0:
        raw = np.asarray(values, dtype="<f8").tobytes()
        for dst in range(1, tp.size):
            tp.send(dst, TAG_BENCH, raw)
        return list(values)
    raw = tp.recv(0, TAG_BENCH)
    return list(np.frombuffer(raw, dtype="<f8", count=count))


def _gather_max_times(tp: Transport, times: list[float]) -> list[float]:
    """Element-wise max of per-iteration times across ranks, on rank 0."""
    if tp.size == 1:
        return list(times)
    if tp.rank == 0:
        acc = np.asarray(times, dtype="<f8")
        for src in range(1, tp.size):
            peer = np.frombuffer(tp.recv(src, TAG_BENCH), dtype="<f8")
            acc = np.maximum(acc, peer)
        return list(acc)
    tp.send(0, TAG_BENCH, np.asarray(times, dtype="<f8").tobytes())
    return list(times)


def _fmt(x: float) -> str:
    return format(x, ".9g")


# -- microbenchmark ----------------------------------------------------------

def _microbench_rank_program(rank: int, tp: Transport, cfg: BenchConfig,
                             size_bytes: int, simulated: bool) -> list[str]:
    group = GroupSpec(tp.size)
    count = size_bytes // 8
    rng = np.random.default_rng([cfg.seed, size_bytes, rank])
    t = Tensor("payload", "float64", rng.standard_normal(count))
    algo = resolve_algorithm(cfg.algo, size_bytes, cfg.switch_bytes)
    times = []
    messages = None
    for it in range(cfg.warmup_iters + cfg.timed_iters):
        t0 = _clock(tp, simulated)
        _, stats = allreduce(t, ReduceOp.SUM, group, tp, algo=algo)
        t1 = _clock(tp, simulated)
        if it >= cfg.warmup_iters:
            times.append(t1 - t0)
            messages = stats.messages_per_rank
    worst = _gather_max_times(tp, times)
    if tp.rank == 0:
        mean = sum(worst) / len(worst)
        reported = [mean, min(worst), max(worst)]
    else:
        reported = None
    mean, lo, hi = _broadcast_floats(tp, reported, 3)
    return [",".join([str(size_bytes), algo, str(tp.size), _fmt(mean),
                      _fmt(lo), _fmt(hi), str(messages)])]


def run_microbench(cfg: BenchConfig, endpoint: Transport | None = None
                   ) -> list[str]:
    """Returns CSV rows (including the header).  ``endpoint`` must be given
    for socket mode; sim mode builds its own network per message size."""
    cfg.validate()
    rows = [MICROBENCH_CSV_HEADER]
    for size in _message_sizes(cfg):
        if cfg.transport == "sim":
            net = SimNetwork(cfg.p, link=cfg.cost_model.link(),
                             gamma=cfg.cost_model.gamma)
            results = net.run(lambda r, tp: _microbench_rank_program(
                r, tp, cfg, size, simulated=True))
            rows.extend(results[0])
        else:
            rows.extend(_microbench_rank_program(
                endpoint.rank, endpoint, cfg, size, simulated=False))
    return rows


# -- synthetic training benchmark --------------------------------------------

def synth_gradients(seed: int, iteration: int, model: ModelSpec,
                    rank: int) -> GradientSet:
    """Seeded pseudorandom float32 gradients per (iteration, layer, rank)."""
    tensors = []
    for idx, (nbytes, _) in enumerate(model.layers):
        rng = np.random.default_rng([seed, iteration, idx, rank])
        values = rng.standard_normal(nbytes // 4, dtype=np.float32)
        tensors.append(Tensor(f"layer{idx:04d}", "float32", values))
    return GradientSet(tuple(tensors), iteration)


def _initial_params(model: ModelSpec) -> list[Tensor]:
    return [Tensor(f"layer{idx:04d}", "float32",
                   np.zeros(nbytes // 4, dtype=np.float32))
            for idx, (nbytes, _) in enumerate(model.layers)]


def _train_rank_program(rank: int, tp: Transport, cfg: BenchConfig,
                        model: ModelSpec, simulated: bool):
    group = GroupSpec(tp.size)
    fusion = FusionConfig(cfg.fusion_threshold)
    if cfg.strategy == "ps_pull":
        topology = PsTopology.create(range(tp.size), range(tp.size),
                                     [t.name for t in _initial_params(model)])
        params = _initial_params(model)
    times = []
    final_state = None
    for it in range(cfg.warmup_iters + cfg.timed_iters):
        t0 = _clock(tp, simulated)
        tp.advance(model.forward_s + model.backward_s)
        grads = synth_gradients(cfg.seed, it, model, rank)
        if cfg.strategy == "ps_pull":
            params = run_ps_step(rank, tp, topology, list(grads.tensors),
                                 params, cfg.learning_rate)
            final_state = params
        else:
            algo = "ring_rsa" if cfg.strategy == "baidu_ring" else cfg.algo
            result = aggregate(grads, group, tp, algo=algo, cfg=fusion,
                               switch_bytes=cfg.switch_bytes)
            final_state = list(result.tensors)
        t1 = _clock(tp, simulated)
        if it >= cfg.warmup_iters:
            times.append(t1 - t0)
    worst = _gather_max_times(tp, times)
    p = tp.size
    if tp.rank == 0:
        mean_step = sum(worst) / len(worst)
        ips = p * model.batch_size / mean_step
        reported = [ips]
    else:
        reported = None
    (ips,) = _broadcast_floats(tp, reported, 1)
    ideal = p * model.batch_size / (model.forward_s + model.backward_s)
    row = ",".join([model.name, cfg.strategy, str(p), _fmt(ips), _fmt(ideal),
                    _fmt(ips / ideal)])
    return row, final_state


def run_train_bench(cfg: BenchConfig, endpoint: Transport | None = None
                    ) -> tuple[list[str], list[Tensor]]:
    """Returns (CSV rows incl. header, final tensors of the data path)."""
    cfg.validate()
    model = resolve_model(cfg.model)
    if cfg.transport == "sim":
        net = SimNetwork(cfg.p, link=cfg.cost_model.link(),
                         gamma=cfg.cost_model.gamma)
        results = net.run(lambda r, tp: _train_rank_program(
            r, tp, cfg, model, simulated=True))
        row, final_state = results[0]
    else:
        row, final_state = _train_rank_program(endpoint.rank, endpoint, cfg,
                                               model, simulated=False)
    return [TRAIN_CSV_HEADER, row], final_state


def run_sweep(cfg: BenchConfig) -> list[str]:
    cfg.validate()
    reports = sweep(cfg.models, cfg.strategies, cfg.p_list, cfg.cost_model,
                    cfg.fusion_threshold)
    return sweep_csv_rows(reports)


# -- top-level drivers --------------------------------------------------------

def _write_output(cfg: BenchConfig, rows: list[str]) -> None:
    text = "\n".join(rows) + "\n"
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")


def _dump_state(path: str, tensors: list[Tensor]) -> None:
    np.savez(path, **{t.name: t.payload for t in tensors})


def resolve_socket_identity(cfg: BenchConfig) -> tuple[int, int]:
    """Rank from the --rank flag or COLLECTIUM_RANK; group size from the
    hostfile, cross-checked against COLLECTIUM_NPROCS when set."""
    hosts = parse_hostfile(cfg.hostfile)
    size = len(hosts)
    env_np = os.environ.get(ENV_NPROCS)
    if env_np is not None and int(env_np) != size:
        raise ConfigError(
            f"{ENV_NPROCS}={env_np} disagrees with hostfile of {size} ranks")
    rank = cfg.rank
    if rank is None:
        env_rank = os.environ.get(ENV_RANK)
        if env_rank is None:
            raise ConfigError(
                f"socket mode needs --rank or {ENV_RANK} in the environment")
        rank = int(env_rank)
    if not 0 <= rank < size:
        raise ConfigError(f"rank {rank} outside hostfile of {size} ranks")
    return rank, size


def run_bench(cfg: BenchConfig) -> None:
    cfg.validate()
    if cfg.mode == "sweep":
        _write_output(cfg, run_sweep(cfg))
        return
    if cfg.transport == "sim":
        if cfg.mode == "microbench":
            _write_output(cfg, run_microbench(cfg))
        else:
            rows, final_state = run_train_bench(cfg)
            _write_output(cfg, rows)
            if cfg.dump_grads:
                _dump_state(cfg.dump_grads, final_state)
        return
    rank, size = resolve_socket_identity(cfg)
    cfg = replace(cfg, rank=rank, p=size)
    with SocketEndpoint(rank, parse_hostfile(cfg.hostfile),
                        recv_timeout=cfg.recv_timeout,
                        rendezvous_timeout=cfg.rendezvous_timeout) as endpoint:
        if cfg.mode == "microbench":
            _write_output(cfg, run_microbench(cfg, endpoint))
        else:
            rows, final_state = run_train_bench(cfg, endpoint)
            _write_output(cfg, rows)
            if cfg.dump_grads:
                _dump_state(cfg.dump_grads, final_state)


def launch_socket_group(hostfile: str, rank: int | None,
                        cfg: BenchConfig) -> int:
    """Run this process's rank of a socket-mode benchmark; returns the
    process exit status (0 ok, 2 config error, 3 transport error, 4 other
    invariant violation)."""
    import sys

    cfg = replace(cfg, transport="socket", hostfile=hostfile, rank=rank)
    try:
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
