"""Label leakage from final-layer gradients in federated activity recognition."""

__version__ = "0.1.0"
