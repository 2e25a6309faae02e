"""defrend: a desk-scale deferred shading lab.

Pipeline: procedural scenes -> ray-cast G-buffers -> randomized materials
and lights -> a CPU shading oracle producing ground-truth light buffers ->
a trainable deferred renderer approximating the oracle -> differentiable
recovery of scene light and materials, with a metrics suite over all of it.
"""

__version__ = "0.1.0"
