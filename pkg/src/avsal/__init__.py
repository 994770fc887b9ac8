"""Audio-visual saliency prediction at desk scale.

A small float64 tensor engine with reverse-mode autodiff, the neural
building blocks on top of it (3D convolution, pooling pyramids,
relevance-gated cross-modal fusion), a synthetic scene generator, and the
training / sliding-window inference / evaluation harness around them.
"""

__version__ = "0.1.0"

from .tensor import Tensor, backward, grad_check, no_grad  # noqa: F401
