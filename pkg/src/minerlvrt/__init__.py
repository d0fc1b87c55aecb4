"""EMT toolkit for PFC-boost mining power supplies under voltage sags."""

__version__ = "0.1.0"
