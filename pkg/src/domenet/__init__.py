"""domenet: compactness-inducing activation functions and their training stack.

A small, numpy-backed package providing the bounded mirrored-exponential
activation family (scalar binary head, penalized hidden-layer variant,
multi-class simplex-anchored head) with exact analytic gradients, a
minimal neural-network training stack with fast adversarial training,
FGSM/PGD attacks with adaptive surrogate losses, and embedding-space
compactness diagnostics. See the ``domenet`` CLI for the experiment
runner.
"""

__version__ = "0.1.0"

from .activations import (  # noqa: F401
    DomeParams,
    MdomeParams,
    PdomeParams,
    SimplexRefs,
    dome_forward,
    mdome_forward,
    pdome_forward,
    simplex_vertices,
)
from .network import Network, build_network, load_checkpoint, save_checkpoint  # noqa: F401
