"""Device-to-network co-simulator for magnetoelectric spintronic CeNN neurons."""

from .backend import kernel as _active_kernel

__version__ = "0.1.0"
BACKEND = _active_kernel.NAME
