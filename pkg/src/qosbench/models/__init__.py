"""Throughput predictors: REM lookup, OLS, random forest, gradient boosting and an MLP."""
from .core import (
    DEFAULTS,
    FORMAT_VERSION,
    KINDS,
    FittedModel,
    ModelSpec,
    SchemaMismatchError,
    feature_matrix,
    fit,
    load_model,
    model_from_dict,
    model_to_dict,
    predict,
    predict_matrix,
    save_model,
    staged_predict,
)

__all__ = [
    "DEFAULTS", "FORMAT_VERSION", "KINDS", "FittedModel", "ModelSpec", "SchemaMismatchError",
    "feature_matrix", "fit", "load_model", "model_from_dict", "model_to_dict", "predict",
    "predict_matrix", "save_model", "staged_predict",
]
