from .layers import Activation, Conv2d, Dense, Flatten, FourierFeatures, Layer, layer_from_descriptor
from .network import Network, Tape, mlp, mse_loss, network_from_descriptors
from .optim import Adam, NonFiniteGradient
from .checkpoint import CheckpointError, load_network, load_networks, save_network, save_networks
from .rng import make_rng, spawn_rngs

__all__ = [
    "Activation", "Conv2d", "Dense", "Flatten", "FourierFeatures", "Layer", "layer_from_descriptor",
    "Network", "Tape", "mlp", "mse_loss", "network_from_descriptors",
    "Adam", "NonFiniteGradient",
    "CheckpointError", "load_network", "load_networks", "save_network", "save_networks",
    "make_rng", "spawn_rngs",
]
