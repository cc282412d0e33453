"""Benchmark diagnostics and retrieval evaluation for domain-adapted retrievers.

The pipeline stages live in their own modules and hand off through
line-delimited JSON artifacts:

    corpus -> qagen -> embed -> retrieve / mine -> diagnose -> evalkit

``benchdiag.cli`` binds them into subcommands.
"""

__version__ = "0.1.0"
