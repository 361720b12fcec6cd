"""Training-free change detection with simulated memristive nanowire networks.

The package simulates a random nanowire network as an electrical circuit with
history-dependent junction conductances, drives it with tiled multi-spectral
image sequences, and scores change per tile from distances in the readout
feature space. No part of the model is trained.
"""

__version__ = "0.1.0"
