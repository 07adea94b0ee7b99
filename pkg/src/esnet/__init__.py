"""Energy-stable block networks for gradient-flow PDEs (Allen-Cahn)."""
from .kernels import BACKEND
from .model import EStableNet, forward, init_params, load_checkpoint, save_checkpoint
from .spectral import Grid

__all__ = ["BACKEND", "EStableNet", "Grid", "forward", "init_params", "load_checkpoint", "save_checkpoint"]
__version__ = "0.1.0"
