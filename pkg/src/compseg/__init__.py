"""Compositional part-based models for weakly-supervised modal and amodal
instance segmentation on unit-feature lattices."""

from .context import ContextDictionary, classify_context, learn_context_dictionary
from .geometry import Alignment, align_partial, complete_amodal_box, to_image_frame
from .models import (
    ClassModel,
    OutlierModel,
    classify,
    map_log_likelihood,
    position_log_likelihood,
)
from .segmentation import MaskSet, amodal_segment, modal_segment, rasterize
from .tensors import (
    Box,
    FeatureMap,
    LabelGrid,
    load_feature_map,
    normalize,
    save_feature_map,
)
from .vmf import ActivationMap, VmfDictionary, activation_map, init_dictionary

__version__ = "0.1.0"
