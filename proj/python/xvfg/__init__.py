from ._core import (
    gradcheck,
    kl_divergence,
    psnr,
    set_threads,
    ssim,
    toy_pair,
    train,
)

__all__ = ["gradcheck", "kl_divergence", "psnr", "set_threads", "ssim", "toy_pair", "train"]
