use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Randomization knobs for synthetic scans. Every field has a default, so a
/// JSON config may list any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Uniform range for per-label mean intensities.
    pub mean_range: [f64; 2],
    /// Uniform range for per-label noise standard deviations.
    pub std_range: [f64; 2],
    /// Minimum pairwise gap between the WM, GM and CSF means.
    pub min_contrast: f64,
    /// Gaussian smoothing std (voxels) applied to the mean image.
    pub smoothing_std_range: [f64; 2],
    /// Partial-volume sigmoid steepness (1/mm).
    pub pv_rho_range: [f64; 2],
    pub gamma_probability: f64,
    /// Range of ln(gamma).
    pub gamma_log_range: [f64; 2],
    pub bias_probability: f64,
    /// Control points per axis of the bias field.
    pub bias_grid: usize,
    /// Std of the log bias field at the control points.
    pub bias_log_std: f64,
    /// Probability of an isotropic (rather than single-axis) resolution.
    pub isotropic_probability: f64,
    /// Isotropic spacing range (mm).
    pub isotropic_spacing: [f64; 2],
    /// Spacing range (mm) of the single coarse axis in the anisotropic case.
    pub anisotropic_spacing: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            mean_range: [0.0, 1.0],
            std_range: [0.01, 0.10],
            min_contrast: 0.10,
            smoothing_std_range: [0.0, 1.0],
            pv_rho_range: [2.0, 10.0],
            gamma_probability: 0.33,
            gamma_log_range: [0.5f64.ln(), 2f64.ln()],
            bias_probability: 0.75,
            bias_grid: 4,
            bias_log_std: 0.3,
            isotropic_probability: 0.5,
            isotropic_spacing: [1.0, 3.0],
            anisotropic_spacing: [1.0, 8.0],
        }
    }
}

fn check_range(name: &str, r: [f64; 2], allow_equal: bool) -> Result<()> {
    let ok = r[0].is_finite() && r[1].is_finite() && if allow_equal { r[0] <= r[1] } else { r[0] < r[1] };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be an increasing range, got {r:?}")))
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be in [0, 1], got {p}")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("mean_range", self.mean_range, false)?;
        check_range("std_range", self.std_range, true)?;
        check_range("smoothing_std_range", self.smoothing_std_range, true)?;
        check_range("pv_rho_range", self.pv_rho_range, true)?;
        check_range("gamma_log_range", self.gamma_log_range, true)?;
        check_range("isotropic_spacing", self.isotropic_spacing, true)?;
        check_range("anisotropic_spacing", self.anisotropic_spacing, true)?;
        check_probability("gamma_probability", self.gamma_probability)?;
        check_probability("bias_probability", self.bias_probability)?;
        check_probability("isotropic_probability", self.isotropic_probability)?;
        if self.std_range[0] < 0.0 || self.smoothing_std_range[0] < 0.0 {
            return Err(Error::invalid("standard deviations must be non-negative"));
        }
        if self.pv_rho_range[0] <= 0.0 {
            return Err(Error::invalid("pv_rho must be positive"));
        }
        if self.min_contrast < 0.0 {
            return Err(Error::invalid("min_contrast must be non-negative"));
        }
        if self.bias_grid < 2 {
            return Err(Error::invalid("bias_grid needs at least 2 control points per axis"));
        }
        if self.bias_log_std < 0.0 {
            return Err(Error::invalid("bias_log_std must be non-negative"));
        }
        if self.isotropic_spacing[0] < 1.0 || self.anisotropic_spacing[0] < 1.0 {
            return Err(Error::invalid("simulated spacing must be at least 1 mm"));
        }
        Ok(())
    }

    /// Parses a JSON config; missing fields take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let c: SynthConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}
