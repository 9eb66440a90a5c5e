"""Reference broadcast clock synchronization over 5G NR, as a discrete-event simulation."""

__version__ = "0.1.0"
