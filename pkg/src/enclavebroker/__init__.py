"""Protected-enclave access broker: runnable service, simulator, and CLI."""

from .broker import Broker
from .clock import SimClock
from .errors import BrokerError
from .model import AccessMode, Decision, Tier, Verdict

__all__ = [
    "AccessMode",
    "Broker",
    "BrokerError",
    "Decision",
    "SimClock",
    "Tier",
    "Verdict",
]

__version__ = "0.1.0"
