"""
Model file loading utilities.

This module handles:
- Dispatching a model file to the single-layer or stacked codec by magic
- Summarizing a loaded model (sizes, parameter counts, weight statistics)
"""

import logging

import numpy as np

from .data import DataFormatError
from .model import CaeParams
from .stack import StackedCae
from .storage import LAYER_MAGIC, STACK_MAGIC, load_layer, load_stack, read_magic

logger = logging.getLogger(__name__)


def load_model(path) -> CaeParams | StackedCae:
    """
    Load a CAE1 or CAE2 model file.

    Args:
        path: Path to the model file

    Returns:
        CaeParams for a CAE1 file, StackedCae for a CAE2 file

    Raises:
        FileNotFoundError: If the file does not exist
        DataFormatError: If the file is not a valid model file
    """
    magic = read_magic(path)
    logger.debug(f"Loading model {path} (magic {magic!r})")

    try:
        if magic == LAYER_MAGIC:
            model = load_layer(path)
        elif magic == STACK_MAGIC:
            model = load_stack(path)
        else:
            raise DataFormatError(f"unknown model magic {magic!r}")
    except DataFormatError as e:
        logger.error(f"Failed to load model: {e}")
        raise DataFormatError(f"Model loading failed: {e}")

    logger.debug(f"Model loaded: {get_model_info(model)}")
    return model


def load_first_layer(path) -> CaeParams:
    """The layer-1 parameters of either model kind."""
    model = load_model(path)
    return model.layer1 if isinstance(model, StackedCae) else model


def _layers(model) -> list[CaeParams]:
    if isinstance(model, StackedCae):
        return [model.layer1, model.layer2]
    return [model]


def get_model_info(model) -> dict:
    """
    Get information about a loaded model.

    Args:
        model: CaeParams or StackedCae

    Returns:
        Dictionary with model information
    """
    layers = _layers(model)
    num_params = sum(p.w.size + p.b_h.size + p.b_r.size for p in layers)
    return {
        "kind": "CAE2" if isinstance(model, StackedCae) else "CAE1",
        "input_size": layers[0].input_size,
        "layer_sizes": [p.hidden_size for p in layers],
        "num_parameters": num_params,
        "weight_norm": round(float(np.sqrt(sum(np.sum(p.w * p.w) for p in layers))), 6),
    }
