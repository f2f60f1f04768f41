"""synwire: compositional synapse detection and connectome extraction.

Three lightweight convolutional detectors segment membranes, intercellular
clefts and vesicle clusters from anisotropic EM-style volumes; explicit
biological rules compose the three maps into directed synapse candidates,
from which a neuron wiring graph is built and scored.
"""

__version__ = "0.1.0"

from synwire.volume_io import VoxelGrid, ChunkSpec, load_volume, save_volume

__all__ = ["VoxelGrid", "ChunkSpec", "load_volume", "save_volume", "__version__"]
