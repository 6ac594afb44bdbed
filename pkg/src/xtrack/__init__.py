"""Interaction-aware vehicle trajectory prediction with a kinematic output layer.

Subpackages and modules:

- ``numcore``: float64 reverse-mode autodiff, Adam, seeded RNG, gradient checks
- ``cells``: LSTM, sLSTM and mLSTM recurrent steps
- ``graph``: star-graph attention over a target and its neighbors
- ``kinematics``: control derivation, saturation and differentiable rollout
- ``scenario``: track loading, scenario extraction, synthetic data, archives
- ``model``: model assembly, loss, training, checkpoints
- ``evalcli``: metrics, ablation, gradient certification, command line
"""
from ._accel import USE_NUMBA

__version__ = "0.1.0"
__all__ = ["USE_NUMBA", "__version__"]
