"""Multi-domain re-identification training with adversarial alignment to a central domain."""

__version__ = "0.1.0"
