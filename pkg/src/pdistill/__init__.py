"""Probability density distillation of an autoregressive waveform model
into a parallel inverse-autoregressive-flow student, on a synthetic corpus.

Submodules load lazily so that importing the package (e.g. for the CLI)
does not pull in numpy before thread environment variables are applied.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff", "bench", "checkpointio", "classifier", "cli", "config",
    "corpus", "demos", "distill", "distributions", "metrics", "optim",
    "rng", "student", "teacher", "trainers", "wavio",
)

__all__ = list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
