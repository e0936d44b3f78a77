from .base import Transport
from .events import Event, EventLog
from .sim import LinkModel, SimEndpoint, SimNetwork, run_simulated
from .sockets import SocketEndpoint, parse_hostfile

__all__ = [
    "Transport",
    "Event",
    "EventLog",
    "LinkModel",
    "SimEndpoint",
    "SimNetwork",
    "run_simulated",
    "SocketEndpoint",
    "parse_hostfile",
]
