"""Time-series forecasting with HiPPO-initialized state space layers.

Submodules: ``tensor`` (numeric kernels), ``hippo`` (basis matrices),
``discretize``, ``engine`` (recurrence / scan / convolution), ``legp``
(multiscale operators), ``autodiff``, ``model``, ``train``, ``bench``
(reconstruction benchmark), ``data`` and ``cli``.
"""

from .hippo import Family, HippoSpec
from .model import ModelConfig, TimeSSM, Variant

__all__ = ["Family", "HippoSpec", "ModelConfig", "TimeSSM", "Variant"]
__version__ = "0.1.0"
