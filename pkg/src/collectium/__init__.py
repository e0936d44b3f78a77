"""Collective-communication engine and training-communication simulator:
ring and recursive halving/doubling allreduce over simulated or socket
transports, Horovod-style gradient aggregation with tensor fusion, a
parameter-server pull model, a buffer-kind pointer cache, and an
alpha-beta-gamma cost model with a benchmark CLI."""

from .aggregation import (FusedBuffer, FusionConfig, GradientSet, aggregate,
                          fuse, negotiate_ready, unfuse)
from .collectives import (CollectiveStats, allreduce, allreduce_flat,
                          allreduce_rhd, allreduce_ring, resolve_algorithm)
from .core import (GroupSpec, ReduceOp, Tensor, chunk_partition, local_reduce)
from .errors import (CollectiumError, ConfigError, DeadlockError,
                     InvalidGroupError, InvalidHandleError, ProtocolError,
                     RoutingError, ShapeError, StalledProducerError,
                     TransportError, UnknownBufferError,
                     UnsupportedOperationError)
from .paramserver import PsTopology, TensorTable, ps_training_step, run_ps_step
from .registry import BufferHandle, BufferKind, BufferRegistry, Policy
from .simcost import (CostModel, ModelSpec, ThroughputReport, builtin_models,
                      default_cost_model, predict_allreduce_time,
                      simulate_training_step, sweep)
from .transport import (EventLog, LinkModel, SimNetwork, SocketEndpoint,
                        Transport, run_simulated)

__version__ = "0.1.0"
