"""Semi-supervised deep generative model lab.

Stacked variational autoencoders for document classification trained
from a handful of labels plus unlabelled text, cross-lingual VAE
pretraining with an adversarial language discriminator, and the
reverse-mode autodiff tensor core everything runs on.
"""

from sdgmlab.tensor import Tensor, Tape, backward, grad_check, Adam

__all__ = ["Tensor", "Tape", "backward", "grad_check", "Adam"]
__version__ = "0.1.0"
