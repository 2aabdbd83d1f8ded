"""Web application components."""

from __future__ import annotations
