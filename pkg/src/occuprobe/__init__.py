"""Occupational-association bias probe for generative language models.

Pipeline: plan prompt templates over demographic categories, collect
completions from a generation backend (real, mock, or replayed), extract
job titles, then analyze the resulting frequency matrix with inequality
metrics, interaction logistic regressions, and labor-market comparisons.
"""

__version__ = "0.1.0"
