"""Split-latent residual autoencoder for image forgery detection.

An autoencoder over high-pass residual images whose latent space is divided
into a "real" half and a "fake" half. Training drives the in-class half's
mean absolute activation to 1 and the off-class half to 0, so the activation
strengths classify images and the detector fine-tunes to new manipulation
families from a handful of examples.
"""

import os as _os

# FT_THREADS caps BLAS worker threads; it must reach the environment before
# numpy loads its BLAS, so it is applied at package import, not in the CLI.
if "FT_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["FT_THREADS"])

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
