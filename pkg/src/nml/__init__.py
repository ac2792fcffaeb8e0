"""Neural mechanics lab: symmetry geometry and learning dynamics of small networks."""

__version__ = "0.1.0"
