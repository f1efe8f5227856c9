"""Desk-scale lab for measuring and steering syntactic attention structure
in masked language models: a synthetic dependency grammar, a from-scratch
encoder MLM, attention-head parse probes, an attention regularizer,
breakthrough detection, and the experiment harness tying them together.
"""

from .tensor import GradientTape, Tensor, backward

__all__ = ["Tensor", "GradientTape", "backward"]
__version__ = "0.1.0"
