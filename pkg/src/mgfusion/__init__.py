"""Multimodal fusion via learned patient-modality multigraphs.

Raw per-modality feature tables are projected into a shared space with
correlation-trained networks, thresholded into a multi-layered patient
graph with learnable sparsity, and classified with a two-branch
message-passing network trained jointly with the correlation objective.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
