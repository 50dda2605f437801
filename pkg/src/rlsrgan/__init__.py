"""Low-rate image compression by downsampling plus learned super-resolution,
trained with adversarial and actor-critic (PSNR-improvement) losses."""

__version__ = "0.1.0"
