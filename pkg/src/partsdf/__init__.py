"""Hybrid implicit shape engine: learned SDF parts composed with
analytic geometric primitives, trainable end to end and editable
through explicit parameters."""

__version__ = "0.1.0"
