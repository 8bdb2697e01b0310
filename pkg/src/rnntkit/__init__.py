"""Desk-scale RNN-T toolkit.

Three deployment mechanisms on top of a small, fully gradient-checked
transducer: adaptation audio built by splicing word/phone segments, second-pass
word timing from a shared-encoder phone branch, and word-level confidence
annotation from decoding and confusion-network features.
"""

__version__ = "0.1.0"
