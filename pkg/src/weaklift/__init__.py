"""Weakly supervised 2D-to-3D human pose lifting with a camera branch.

Modules, bottom-up: ``skeleton`` (joint tree, KCS, format conversion),
``geometry`` (camera model, projection, Procrustes), ``autograd`` (reverse
mode on numpy, Adam), ``diffpose`` (differentiable batched pose ops), ``nets``,
``losses``, ``augment``, ``data``, ``train``, ``evaluation`` and ``cli``.
"""

__version__ = "0.1.0"
