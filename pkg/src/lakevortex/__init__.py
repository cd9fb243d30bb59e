"""lakevortex: numerical laboratory for steady vortex cores in the lake equations."""

__version__ = "0.1.0"
