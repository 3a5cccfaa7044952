"""Monte Carlo x-ray projection."""
from .materials import MaterialTable, Spectrum, build_spectrum
from .projector import (AcquisitionConfig, GridSpec, Projection, ScatterMode, add_electronic_noise,
                        apply_focal_blur, apply_grid, glandular_dose_estimate, histories_for,
                        simulate_projection)

__all__ = ["MaterialTable", "Spectrum", "build_spectrum", "AcquisitionConfig", "GridSpec",
           "Projection", "ScatterMode", "add_electronic_noise", "apply_focal_blur", "apply_grid",
           "glandular_dose_estimate", "histories_for", "simulate_projection"]
