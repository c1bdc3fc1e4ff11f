"""Access-control-aware vector indexing over a role-subset lattice."""
__version__ = "0.1.0"
