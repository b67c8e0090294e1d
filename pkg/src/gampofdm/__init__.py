"""Joint channel estimation and decoding for BICM-OFDM over clustered sparse
channels, using GAMP with a Markov-chain tap-state prior."""

__version__ = "0.1.0"
