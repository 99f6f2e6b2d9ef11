"""Cost-sensitive training of a convolutional semantic matching model.

Submodules: ``text`` (letter-trigram hashing), ``model`` (encoder, gradients,
checkpoints), ``objective`` (weighted losses), ``weighting`` (click and
co-purchase weights), ``trainer``, ``evalkit``, ``datakit``, ``retrieval``,
``experiment`` and ``cli``.
"""

__version__ = "0.1.0"
