"""Few-shot aerial action classifiers from feature vectors.

Two data engines back the few-shot training: a conditional Wasserstein GAN
with gradient penalty that synthesizes target-domain features from source
("ground") features, and a disjoint multitask trainer that integrates
synthesized, auxiliary ("game"), and few real examples through a shared
trunk with pseudo-labeled cross-task heads.
"""

from ._backend import BACKEND_NAME

__version__ = "0.1.0"
__all__ = ["BACKEND_NAME", "__version__"]
