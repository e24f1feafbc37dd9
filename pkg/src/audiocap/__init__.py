"""Audio captioning toolkit: feature extraction, a GRU encoder-attention-
decoder network trained with tape-based reverse-mode gradients, dataset
preparation, baseline generators, and caption evaluation metrics."""

__version__ = "0.1.0"
