"""Learnable modules: object encoder, scene GRU, attention fusion, queue classifier."""
