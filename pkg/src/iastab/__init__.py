"""Rate model, stability-region geometry and Max-Weight scheduling for
interference alignment over a rate-limited backhaul."""

__version__ = "0.1.0"
