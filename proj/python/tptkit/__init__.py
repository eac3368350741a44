"""Turbulent potential temperature forecasting toolkit."""

from ._core import (
    GeoBox,
    GridSpec,
    HeightAdjustModel,
    OrdinaryKriging,
    Pipeline,
    TptkitError,
    VariogramModel,
    __version__,
    autocorrelation,
    empirical_variogram,
    fit_variogram,
    from_potential,
    integral_time_scale,
    project,
    rmse_aggregate,
    rmse_mesh,
    rmse_station,
    sample_bilinear,
    to_potential,
    unproject,
)

__all__ = [
    "GeoBox",
    "GridSpec",
    "HeightAdjustModel",
    "OrdinaryKriging",
    "Pipeline",
    "TptkitError",
    "VariogramModel",
    "__version__",
    "autocorrelation",
    "empirical_variogram",
    "fit_variogram",
    "from_potential",
    "integral_time_scale",
    "project",
    "rmse_aggregate",
    "rmse_mesh",
    "rmse_station",
    "sample_bilinear",
    "to_potential",
    "unproject",
]
