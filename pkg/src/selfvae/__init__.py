"""Self-supervised variational autoencoders on a small numpy autodiff core."""

from .models import VAE, LatentHierarchy, build_model
from .networks import NetConfig
from .objectives import ElboTerms, elbo, hierarchical_elbo, selfvae_elbo, vae_elbo
from .pipelines import ReconMode, generate, iwae_nll, reconstruct
from .tensor import Tape, Tensor, backward

__all__ = [
    "VAE",
    "ElboTerms",
    "LatentHierarchy",
    "NetConfig",
    "ReconMode",
    "Tape",
    "Tensor",
    "backward",
    "build_model",
    "elbo",
    "generate",
    "hierarchical_elbo",
    "iwae_nll",
    "reconstruct",
    "selfvae_elbo",
    "vae_elbo",
]
