"""Exception hierarchy shared by all collectium modules."""


class CollectiumError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CollectiumError):
    """Tensor length or dtype mismatch between reduction operands."""


class InvalidGroupError(CollectiumError):
    """Process group is empty or a rank id falls outside 0..p-1."""


class RoutingError(CollectiumError):
    """A message names a destination rank that does not exist."""


class TransportError(CollectiumError):
    """Peer failure, disconnect, or timeout on a transport endpoint."""


class DeadlockError(TransportError):
    """All simulated ranks are blocked with no deliverable message."""

    def __init__(self, blocked_ranks):
        self.blocked_ranks = tuple(sorted(blocked_ranks))
        super().__init__(
            "simulated deadlock: ranks %s all blocked in recv with no "
            "matching message in flight" % (list(self.blocked_ranks),)
        )


class UnsupportedOperationError(CollectiumError):
    """Operation not available on this transport backend."""


class ProtocolError(CollectiumError):
    """Tensor-table protocol violation (e.g. duplicate pending produce)."""


class StalledProducerError(CollectiumError):
    """A blocking tensor request timed out waiting for its producer."""


class InvalidHandleError(CollectiumError):
    """Buffer handle is dead or was never allocated (double free)."""


class UnknownBufferError(CollectiumError):
    """Classification asked about an address with no known allocation."""


class ConfigError(CollectiumError):
    """Benchmark configuration is malformed or inconsistent."""
