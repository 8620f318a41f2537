"""Toolkit for adapting executable text-to-SQL parsers to unseen databases.

Pipeline: fit a template distribution from a training corpus, sample
executable queries in a target database, round-trip them through a
generator/parser pair, keep the cycle-consistent pairs, and score
predictions with template exact match (EM), execution accuracy (EX),
and fuzz-test accuracy (FX) over randomized database content.
"""

__version__ = "0.1.0"
