"""
Prediction targets of the three boosted-tree variants and their inverses.

Every function works on (vm, va) pairs or on (n, 2) arrays of pairs.
"""
from enum import Enum

import numpy as np

from errors import BadConfig


class Variant(str, Enum):
    ABSOLUTE = "absolute"
    PARENT_RESIDUAL = "parent"
    PHYSICS_RESIDUAL = "ldf"

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, Variant):
            return value
        aliases = {
            "a": cls.ABSOLUTE, "absolute": cls.ABSOLUTE, "xgb-absolute": cls.ABSOLUTE,
            "b": cls.PARENT_RESIDUAL, "parent": cls.PARENT_RESIDUAL, "xgb-parent": cls.PARENT_RESIDUAL,
            "c": cls.PHYSICS_RESIDUAL, "ldf": cls.PHYSICS_RESIDUAL, "physics": cls.PHYSICS_RESIDUAL,
            "xgb-ldf": cls.PHYSICS_RESIDUAL,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise BadConfig(f"Unknown variant '{value}', expected one of {[v.value for v in cls]}") from None


def make_target(variant: Variant, truth_child, parent_state, ldf) -> np.ndarray:
    """
    Absolute -> child; ParentResidual -> parent - child; PhysicsResidual -> ldf - child.
    """
    child = np.asarray(truth_child, dtype=float)
    if variant == Variant.ABSOLUTE:
        return child.copy()
    if variant == Variant.PARENT_RESIDUAL:
        return np.asarray(parent_state, dtype=float) - child
    if variant == Variant.PHYSICS_RESIDUAL:
        return np.asarray(ldf, dtype=float) - child
    raise BadConfig(f"Unknown variant {variant}")


def reconstruct(variant: Variant, prediction, parent_state, ldf) -> np.ndarray:
    prediction = np.asarray(prediction, dtype=float)
    if variant == Variant.ABSOLUTE:
        return prediction.copy()
    if variant == Variant.PARENT_RESIDUAL:
        return np.asarray(parent_state, dtype=float) - prediction
    if variant == Variant.PHYSICS_RESIDUAL:
        return np.asarray(ldf, dtype=float) - prediction
    raise BadConfig(f"Unknown variant {variant}")
