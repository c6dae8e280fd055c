"""Transfer learning from pose-derived time series to inertial activity recognition.

Subpackages and modules:

- ``signal``: quintic resampling, synthetic accelerations, normalization
- ``dataio``: manifests, clip CSVs, windows, splits, shards
- ``nn``: numpy network engine, RMSProp, training loop, gradient check
- ``arch``: tCNN and tCNN-IMU graphs
- ``transfer``: checkpoints, layer transplant, fine-tuning matrix
- ``metrics``: weighted F1, majority vote, permutation test
- ``cli``: the ``posetransfer`` command
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
