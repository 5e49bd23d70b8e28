"""Visual-field total deviation and MD from peripapillary RNFL thickness."""

__version__ = "0.1.0"
