"""hycot: learned hyperspectral-image compression with a pixelwise
transformer autoencoder.

Submodules
----------
tensor    float64 tensors with tape-based reverse-mode autodiff
model     the autoencoder architecture, complexity accounting, checkpoints
training  Adam optimization with random-pixel training-set reduction
dataio    cube container, HSC1 raster format, synthetic datasets, splits
codec     HYC1 compressed-image container and compress/decompress
metrics   PSNR, rate-distortion sweeps, complexity tables
cli       command-line interface over the whole pipeline

Submodules are imported lazily so lightweight entry points can configure
the process (e.g. BLAS thread counts) before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = ("tensor", "model", "training", "dataio", "codec", "metrics", "cli")

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f"{__name__}.{name}")
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
