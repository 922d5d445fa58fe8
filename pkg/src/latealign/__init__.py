"""Desk-scale fine-grained image-text alignment laboratory.

Dual toy encoders feed a learnable token aggregation stage and a
late-interaction scorer; training uses a dual triplet loss (or a global
contrastive baseline) over synthetic corpora with planted token-level
correspondence, and the evaluation harness reports Recall@K both ways
under fine, coarse and combined scoring.
"""

__version__ = "0.1.0"
