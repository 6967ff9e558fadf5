"""Contrastive-learning + self-training domain adaptation at desk scale.

Submodules are imported lazily by the code that needs them so that the CLI
can pin thread-count environment variables before numpy is loaded.
"""

__version__ = "0.1.0"
