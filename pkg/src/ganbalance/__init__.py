"""GAN-balanced training of a chest-pathology-style image classifier.

Subpackages cover the tensor/autodiff engine, optimizers, the DCGAN and
CNN classifier, dataset planning and balancing, the human-in-the-loop
curation service, and the DS1/DS2/DS3 study orchestrator.
"""

from ._alloc import tune_allocator, tune_threads
from .tensor import Tensor, no_grad

tune_allocator()
tune_threads()

__all__ = ["Tensor", "no_grad"]
__version__ = "0.1.0"
