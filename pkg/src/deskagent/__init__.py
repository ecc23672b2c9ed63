"""A fast/slow dual-process agent for a desk-scale text world."""
__version__ = "0.1.0"
