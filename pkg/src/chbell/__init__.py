"""CH-Eberhard Bell-test workbench."""

__version__ = "0.1.0"
