"""Fragment-based attributed-graph generation.

A spatial graph attention encoder embeds attributed graphs; an attention
policy over dynamic fragment-mutation candidate sets is trained with
clipped-surrogate policy optimization; a distilled random network supplies
curiosity rewards.  Pluggable objectives include toy drug-likeness and
synthetic-accessibility analogs, constrained and multi-objective
compositions, and an external scorer wire protocol.
"""

__version__ = "0.1.0"
