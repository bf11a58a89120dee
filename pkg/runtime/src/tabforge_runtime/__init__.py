"""Sandbox-side runtime: the job harness and the table tool functions.

The parent process locates ``harness.py`` next to this package and launches
it as the sandboxed interpreter for each snippet.
"""

__version__ = "0.1.0"
