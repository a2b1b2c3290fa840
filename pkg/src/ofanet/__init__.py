"""One-for-all masked-autoencoder pretraining across remote-sensing modalities.

A single shared Transformer backbone serves every registered modality through
per-modality patch embedders and masked-autoencoder decoders; synthetic data
generators, a pretraining loop, and linear-probe evaluation make the whole
mechanism testable on a desk-scale budget.
"""

__version__ = "0.1.0"
