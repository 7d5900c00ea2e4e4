"""mogrid: scale-wise skeletal-temporal motion tokenization, generation, and editing."""

from . import _malloc

_malloc.tune()

__version__ = "0.1.0"
