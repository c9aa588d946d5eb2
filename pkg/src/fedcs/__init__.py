"""Federated learning with compressive-sensing update compression.

Subsystems: DCT sensing codec (:mod:`fedcs.codec`), BPDN recovery solver
(:mod:`fedcs.bpdn`), moments-accountant privacy auditing
(:mod:`fedcs.accountant`), fixed-point masked aggregation
(:mod:`fedcs.secagg`), the client/server protocol schemes
(:mod:`fedcs.protocols`), a small dense-network ML core (:mod:`fedcs.ml`),
and the experiment runner/CLI (:mod:`fedcs.experiment`, :mod:`fedcs.cli`).
"""

from .kernels import ACTIVE as _active_kernels

__version__ = "0.1.0"

#: Which OWL-QN kernel backend was selected at import ("native" or "python").
KERNEL_BACKEND: str = _active_kernels.BACKEND
