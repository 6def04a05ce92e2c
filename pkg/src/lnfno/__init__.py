"""Operator-learning benchmark suite with a from-scratch autodiff engine.

Subpackages and modules:

- ``autodiff``, ``optim``: reverse-mode tensors, layers, AdamW
- ``numerics``: FFT, sparse CSR, conjugate gradient, resampling
- ``solvers``: reference PDE solvers used to build datasets
- ``fieldgen``: random input fields and analytic solution families
- ``datagen``: benchmark dataset generation and audits
- ``models``: the fused linear/nonlinear operator network and DeepONet
- ``train``: split, normalization, loss, training and evaluation
- ``nodf``: binary container for datasets and checkpoints
- ``cli``: the ``lnfno`` command
"""

__version__ = "0.1.0"
