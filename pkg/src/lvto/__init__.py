"""lvto - multiclass microstructure libraries, latent-variable surrogates and
multiscale topology optimization."""

from .cli import main

__all__ = ["main"]
