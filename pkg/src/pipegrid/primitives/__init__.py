from .core import (
    BLANK_ID,
    PREDICTOR_FAMILIES,
    Family,
    FittedPrimitive,
    InvalidPipeline,
    PrimitiveSpec,
    accepts_flags,
    apply,
    can_accept,
    catalog,
    catalog_hash,
    catalog_json,
    family_members,
    fit_apply,
    merge_inputs,
    primitive,
    table_flags,
)

__all__ = [
    "BLANK_ID",
    "PREDICTOR_FAMILIES",
    "Family",
    "FittedPrimitive",
    "InvalidPipeline",
    "PrimitiveSpec",
    "accepts_flags",
    "apply",
    "can_accept",
    "catalog",
    "catalog_hash",
    "catalog_json",
    "family_members",
    "fit_apply",
    "merge_inputs",
    "primitive",
    "table_flags",
]
