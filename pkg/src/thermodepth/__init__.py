"""thermodepth: thermal image refinement and recurrent monocular depth estimation.

Desk-scale library: synthetic non-radiometric sensor simulation, a lightweight
refinement network, an encoder-decoder depth network with interchangeable
recurrent bottlenecks (ConvGRU or an LIF reservoir), the composite training
loss, and the evaluation metrics.
"""

__version__ = "0.1.0"
