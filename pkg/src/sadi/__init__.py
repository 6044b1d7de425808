"""Self-attention conditional diffusion imputation for multivariate time series."""
__version__ = "0.1.0"
