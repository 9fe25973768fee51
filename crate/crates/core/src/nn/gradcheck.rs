//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::tape::{Tape, Tensor, Var};

/// Analytic against numeric gradient for one input, over the checked elements.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub name: String,
    pub indices: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Differences below this are indistinguishable from rounding noise in
    /// the finite differences.
    pub noise_floor: f64,
}

impl GroupCheck {
    pub fn relative_error(&self) -> f64 {
        relative_error(&self.analytic, &self.numeric)
    }

    pub fn abs_error(&self) -> f64 {
        self.analytic.iter().zip(&self.numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// Passes when the relative error is within `tol`, or when the whole
    /// discrepancy is below the rounding-noise floor (a gradient that is
    /// zero by construction has no meaningful relative error).
    pub fn passes(&self, tol: f64) -> bool {
        self.relative_error() <= tol || self.abs_error() <= self.noise_floor
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub objective: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups.iter().map(GroupCheck::relative_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.groups.iter().all(|g| g.passes(tol))
    }

    /// Largest relative error among groups that are above the noise floor.
    pub fn max_resolved_error(&self) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.abs_error() > g.noise_floor)
            .map(GroupCheck::relative_error)
            .fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / scale
    }
}

/// Checks the gradient of the scalar built by `f` with respect to each named
/// input by central differences, on at most `max_elements` entries per input.
pub fn gradient_check<F>(f: F, inputs: &[(&str, Tensor)], max_elements: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradient_check_with_step(f, inputs, max_elements, seed, 1e-5)
}

/// As [`gradient_check`] with relative step `step`: each entry `x` moves by
/// `step * max(1, |x|)`. Smaller steps help when many piecewise-linear
/// kernels (interpolation cells, max selections) sit close to a switch.
pub fn gradient_check_with_step<F>(
    f: F,
    inputs: &[(&str, Tensor)],
    max_elements: usize,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::ShapeMismatch(format!("gradient check needs a scalar, got {:?}", v.shape)));
        }
        if !v.data[0].is_finite() {
            return Err(Error::NonFinite("gradient check objective".into()));
        }
        Ok(v.data[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let objective = tape.data(out)[0];
    if !objective.is_finite() {
        return Err(Error::NonFinite("gradient check objective".into()));
    }
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut groups = Vec::with_capacity(inputs.len());
    for (gi, (name, t)) in inputs.iter().enumerate() {
        let full = grads.tensor(&tape, vars[gi]).data;
        let mut indices: Vec<usize> = if t.len() <= max_elements {
            (0..t.len()).collect()
        } else {
            sample(&mut rng, t.len(), max_elements).into_vec()
        };
        indices.sort_unstable();
        let mut numeric = Vec::with_capacity(indices.len());
        let mut noise = 0.0;
        for &i in &indices {
            let x = t.data[i];
            let h = step * x.abs().max(1.0);
            values[gi].data[i] = x + h;
            let up = eval(&values)?;
            values[gi].data[i] = x - h;
            let down = eval(&values)?;
            values[gi].data[i] = x;
            numeric.push((up - down) / (2.0 * h));
            // Rounding in each evaluation is a few ulps of the objective.
            let e = 1e2 * f64::EPSILON * objective.abs().max(up.abs()).max(1.0) / h;
            noise += e * e;
        }
        groups.push(GroupCheck {
            name: name.to_string(),
            analytic: indices.iter().map(|&i| full[i]).collect(),
            indices,
            numeric,
            noise_floor: noise.sqrt(),
        });
    }
    Ok(GradCheckReport { objective, groups })
}
