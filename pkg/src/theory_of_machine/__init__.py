"""Learn machine-identity embeddings from input/output sequences.

A GRU encodes windows of recent I/O pairs into a stateful embedding, a
decayed running sum of those gives a per-machine prior, and an affine head
predicts the next output.  The package ships the synthetic machines, the
dataset pipeline, a numpy reverse-mode core, training, analysis and a CLI.
"""

from .rng import SplitMix64, mix_seed

__version__ = "0.1.0"

__all__ = ["SplitMix64", "mix_seed", "__version__"]
