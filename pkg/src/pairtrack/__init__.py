"""pairtrack: a desk-scale two-modality tracker built on a tiny autodiff core.

Subpackages and modules:
  numerics  tensor kernels, reverse-mode differentiation, RNG, checkpoints
  moe       token router, balance loss, sparse and shared expert branches
  fusion    multi-level fusion, Gram alignment, hypergraph convolution
  losses    focal / GIoU / L1 / balance loss stack
  harness   synthetic data, toy backbone, training loop, CLI
"""

__version__ = "0.1.0"
