//! Discrete differential geometry and surface metrics.

pub mod curvature;
pub mod distance;
mod dual;
pub mod sdf;
pub mod smooth;
pub mod stats;

pub use curvature::{mean_curvature, mean_curvature_unchecked, mean_curvature_vjp};
pub use distance::{
    chamfer_distance, cortical_thickness, face_mask_from_vertices, hausdorff_percentile, hausdorff_percentile_with,
    mean_thickness, symmetric_surface_distance, symmetric_surface_distance_with, transfer_vertex_field,
    SurfaceSampling,
};
pub use sdf::{signed_distance_volume, SignedDistanceVolume};
pub use smooth::taubin_smooth;
pub use stats::{clip_to_percentiles, fit_quadratic_trend, percentile_bounds, quadratic_residuals, quantile};

/// Per-vertex mean curvature (1/mm).
pub type CurvatureField = Vec<f64>;
