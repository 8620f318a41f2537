"""Reference adapter for the gazp-adapter/1 protocol.

Standard library only: the point of this package is the process boundary,
not the model. A real neural generator/parser replaces the rule-based
codec in ``model.py`` and keeps the server loop unchanged.
"""

__version__ = "0.1.0"
