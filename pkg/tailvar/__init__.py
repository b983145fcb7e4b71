"""tailvar: VaR under tail misspecification, by tilted IS and moment brackets."""

from __future__ import annotations

__version__ = "0.1.0"
