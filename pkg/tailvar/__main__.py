"""Entry point for python -m tailvar."""

from __future__ import annotations

import sys

from tailvar.cli import main

sys.exit(main())
