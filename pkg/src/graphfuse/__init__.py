"""Multi-view graph structure fusion for GCN node classification."""

__version__ = "0.1.0"
