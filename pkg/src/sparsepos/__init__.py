"""Unsupervised part-of-speech induction with HMMs and posterior-regularized tag sparsity."""
__version__ = "0.1.0"
