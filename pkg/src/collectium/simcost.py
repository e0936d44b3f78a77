"""Analytic alpha-beta-gamma cost model for the collectives plus a
training-step simulator predicting images/sec and scaling efficiency.

Overlap model: a layer's gradient becomes ready when its backward compute
finishes (layers run backward in reverse order); ready fused buffers queue
onto ``parallel_channels`` transfer channels; the step's exposed
communication is whatever outlasts backward compute.  The parameter-server
strategy charges both a push and a pull of each buffer per worker, with PS
ingress/egress serialized across workers per channel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .collectives import DEFAULT_SWITCH_BYTES, resolve_algorithm
from .errors import ConfigError
from .transport.sim import LinkModel

STRATEGIES = ("horovod_allreduce", "baidu_ring", "ps_pull")


@dataclass(frozen=True)
class CostModel:
    alpha: float = 25e-6  # seconds per message
    beta: float = 2e-9  # seconds per byte
    gamma: float = 1e-9  # seconds per byte of local reduction
    driver_query_delay: float = 0.0  # seconds per buffer-type lookup
    parallel_channels: int = 1

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma,
               self.driver_query_delay) < 0:
            raise ConfigError("cost parameters must be non-negative")
        if self.parallel_channels < 1:
            raise ConfigError("parallel_channels must be >= 1")

    def link(self) -> LinkModel:
        return LinkModel(self.alpha, self.beta)

    @classmethod
    def from_dict(cls, data: dict) -> "CostModel":
        allowed = {"alpha", "beta", "gamma", "driver_query_delay",
                   "parallel_channels"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown cost model fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "CostModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_cost_model() -> CostModel:
    return CostModel()


def predict_allreduce_time(algo: str, n_bytes: int, p: int,
                           m: CostModel,
                           switch_bytes: int = DEFAULT_SWITCH_BYTES) -> float:
    """Closed-form allreduce latency from the algorithms' step structure.

    ring:  2(p-1)a + 2((p-1)/p) n b + ((p-1)/p) n g
    rhd:   2 log2(p) a + 2((p-1)/p) n b + ((p-1)/p) n g   (power-of-two p;
           non-power-of-two adds one fold exchange of the full vector)
    flat:  2(p-1)a + 2(p-1) n b + (p-1) n g               (root-serialized)
    """
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    if n_bytes < 0:
        raise ConfigError(f"n_bytes must be >= 0, got {n_bytes}")
    if p == 1:
        return 0.0
    concrete = resolve_algorithm(algo, n_bytes, switch_bytes)
    frac = (p - 1) / p
    if concrete == "ring_rsa":
        return (2 * (p - 1) * m.alpha + 2 * frac * n_bytes * m.beta
                + frac * n_bytes * m.gamma)
    if concrete == "rhd_rsa":
        steps = math.ceil(math.log2(p))
        t = (2 * steps * m.alpha + 2 * frac * n_bytes * m.beta
             + frac * n_bytes * m.gamma)
        if p & (p - 1):  # excess ranks fold their full vector in and out
            t += 2 * (m.alpha + n_bytes * m.beta) + n_bytes * m.gamma
        return t
    if concrete == "flat":
        return (2 * (p - 1) * m.alpha + 2 * (p - 1) * n_bytes * m.beta
                + (p - 1) * n_bytes * m.gamma)
    raise ConfigError(f"unknown algorithm {algo!r}")  # pragma: no cover


@dataclass(frozen=True)
class ModelSpec:
    """Synthetic DNN: per-layer (gradient bytes, backward seconds) in
    forward order, plus whole-model forward time per batch."""

    name: str
    layers: tuple[tuple[int, float], ...]
    forward_s: float
    batch_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "layers",
                           tuple((int(b), float(s)) for b, s in self.layers))
        if not self.layers:
            raise ConfigError("model needs at least one layer")
        for nbytes, seconds in self.layers:
            if nbytes <= 0 or seconds <= 0:
                raise ConfigError("layer sizes and times must be positive")
        if self.forward_s <= 0 or self.batch_size < 1:
            raise ConfigError("forward time and batch size must be positive")

    @property
    def total_bytes(self) -> int:
        return sum(b for b, _ in self.layers)

    @property
    def backward_s(self) -> float:
        return sum(s for _, s in self.layers)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        try:
            return cls(name=data["name"],
                       layers=tuple((int(b), float(s))
                                    for b, s in data["layers"]),
                       forward_s=float(data["forward_s"]),
                       batch_size=int(data.get("batch_size", 64)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed model spec: {exc}") from exc

    @classmethod
    def from_json(cls, path: str) -> "ModelSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _uniform(name: str, n_layers: int, layer_bytes: int, backward_s: float,
             forward_s: float) -> ModelSpec:
    per_layer = backward_s / n_layers
    return ModelSpec(name, tuple((layer_bytes, per_layer)
                                 for _ in range(n_layers)), forward_s)


# Calibration artifacts, not measurements: parameter bytes in ratio about
# 1 : 6 : 21 with per-image compute rising with model size, so the shipped
# cost model reproduces the small/medium/large scaling-efficiency spread.
def builtin_models() -> dict[str, ModelSpec]:
    return {
        "mobilenet_like": _uniform("mobilenet_like", n_layers=28,
                                   layer_bytes=600_000, backward_s=0.0114,
                                   forward_s=0.0057),
        "resnet50_like": _uniform("resnet50_like", n_layers=53,
                                  layer_bytes=1_920_000, backward_s=0.524,
                                  forward_s=0.262),
        "nasnet_like": _uniform("nasnet_like", n_layers=60,
                                layer_bytes=5_880_000, backward_s=1.855,
                                forward_s=0.927),
    }


def resolve_model(name_or_path: str) -> ModelSpec:
    models = builtin_models()
    if name_or_path in models:
        return models[name_or_path]
    try:
        return ModelSpec.from_json(name_or_path)
    except OSError as exc:
        raise ConfigError(
            f"model {name_or_path!r} is neither a built-in "
            f"({sorted(models)}) nor a readable spec file"
        ) from exc


@dataclass(frozen=True)
class ThroughputReport:
    model: str
    strategy: str
    p: int
    images_per_sec: float
    ideal_images_per_sec: float
    efficiency: float
    compute_s: float
    exposed_comm_s: float

    @property
    def step_time_s(self) -> float:
        return self.compute_s + self.exposed_comm_s


def _fuse_sizes(model: ModelSpec, threshold_bytes: int) -> list[tuple[int, float]]:
    """Greedy-packed (buffer bytes, ready time) in gradient readiness order
    (reverse layer order as backward compute progresses)."""
    buffers = []
    current_bytes = 0
    elapsed = 0.0
    for nbytes, seconds in reversed(model.layers):
        if current_bytes and current_bytes + nbytes > threshold_bytes:
            buffers.append((current_bytes, elapsed))
            current_bytes = 0
        elapsed += seconds
        current_bytes += nbytes
        if current_bytes >= threshold_bytes:
            buffers.append((current_bytes, elapsed))
            current_bytes = 0
    if current_bytes:
        buffers.append((current_bytes, elapsed))
    return buffers


def _buffer_comm_time(strategy: str, nbytes: int, p: int, costs: CostModel,
                      switch_bytes: int, n_tensors: int = 1) -> float:
    lookup = costs.driver_query_delay * n_tensors
    if strategy == "horovod_allreduce":
        return predict_allreduce_time("auto", nbytes, p, costs,
                                      switch_bytes) + lookup
    if strategy == "baidu_ring":
        return predict_allreduce_time("ring_rsa", nbytes, p, costs) + lookup
    if strategy == "ps_pull":
        # push to the shard owners plus pull of the refreshed parameters;
        # the PS side serializes the workers' transfers per channel
        serial = math.ceil(p / costs.parallel_channels)
        return (2 * serial * (costs.alpha + nbytes * costs.beta)
                + nbytes * costs.gamma + lookup)
    raise ConfigError(f"unknown strategy {strategy!r}")


def simulate_training_step(model: ModelSpec, p: int, strategy: str,
                           costs: CostModel,
                           fusion_threshold_bytes: int = 67108864,
                           switch_bytes: int = DEFAULT_SWITCH_BYTES
                           ) -> ThroughputReport:
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    compute = model.forward_s + model.backward_s
    single_ips = model.batch_size / compute
    if p == 1:
        return ThroughputReport(model.name, strategy, 1, single_ips,
                                single_ips, 1.0, compute, 0.0)
    buffers = _fuse_sizes(model, fusion_threshold_bytes)
    channels = 1 if strategy == "ps_pull" else costs.parallel_channels
    free = [0.0] * channels
    finish = 0.0
    for nbytes, ready in buffers:
        ch = min(range(channels), key=free.__getitem__)
        start = max(free[ch], ready)
        done = start + _buffer_comm_time(strategy, nbytes, p, costs,
                                         switch_bytes)
        free[ch] = done
        finish = max(finish, done)
    exposed = max(0.0, finish - model.backward_s)
    step = compute + exposed
    ips = p * model.batch_size / step
    ideal = single_ips * p
    return ThroughputReport(model.name, strategy, p, ips, ideal, ips / ideal,
                            compute, exposed)


def sweep(models, strategies, p_list, costs: CostModel,
          fusion_threshold_bytes: int = 67108864) -> list[ThroughputReport]:
    if not models or not strategies or not p_list:
        raise ConfigError("sweep needs non-empty model/strategy/p lists")
    reports = []
    for model in models:
        spec = model if isinstance(model, ModelSpec) else resolve_model(model)
        for strategy in strategies:
            for p in p_list:
                reports.append(simulate_training_step(
                    spec, p, strategy, costs, fusion_threshold_bytes))
    return reports


SWEEP_CSV_HEADER = "model,strategy,p,images_per_sec,ideal,efficiency,exposed_comm_s"


def sweep_csv_rows(reports) -> list[str]:
    rows = [SWEEP_CSV_HEADER]
    for r in reports:
        rows.append(",".join([
            r.model, r.strategy, str(r.p),
            format(r.images_per_sec, ".9g"),
            format(r.ideal_images_per_sec, ".9g"),
            format(r.efficiency, ".9g"),
            format(r.exposed_comm_s, ".9g"),
        ]))
    return rows
