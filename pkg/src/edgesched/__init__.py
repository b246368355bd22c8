"""Request scheduling across a control region of edge servers."""

__version__ = "0.1.0"
