"""
Main entry point when running as a module: python -m vsf_planner
"""

from __future__ import annotations

import sys

from .cli.app import main

if __name__ == "__main__":
    sys.exit(main())
