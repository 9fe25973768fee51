use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Start and end weight of one loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRamp {
    pub start: f64,
    pub end: f64,
}

impl WeightRamp {
    pub const fn new(start: f64, end: f64) -> Self {
        WeightRamp { start, end }
    }

    pub const fn constant(w: f64) -> Self {
        WeightRamp { start: w, end: w }
    }

    fn at(&self, frac: f64) -> f64 {
        self.start + (self.end - self.start) * frac
    }
}

/// Linear interpolation of every loss weight over the first `horizon`
/// iterations, constant afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSchedule {
    pub chamfer: WeightRamp,
    pub matched: WeightRamp,
    pub curvature: WeightRamp,
    pub spring: WeightRamp,
    pub edge: WeightRamp,
    pub horizon: u64,
}

impl Default for LossSchedule {
    fn default() -> Self {
        LossSchedule {
            chamfer: WeightRamp::new(1.0, 1.0),
            matched: WeightRamp::new(1.0, 0.0),
            curvature: WeightRamp::new(40.0, 2.5),
            spring: WeightRamp::new(100.0, 0.0),
            edge: WeightRamp::constant(1.0),
            horizon: 1000,
        }
    }
}

/// Weights of the five terms at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub chamfer: f64,
    pub matched: f64,
    pub curvature: f64,
    pub spring: f64,
    pub edge: f64,
}

impl LossWeights {
    pub fn scaled(&self, s: f64) -> Self {
        LossWeights {
            chamfer: self.chamfer * s,
            matched: self.matched * s,
            curvature: self.curvature * s,
            spring: self.spring * s,
            edge: self.edge * s,
        }
    }

    /// Only `matched` is non-zero.
    pub fn only_matched(w: f64) -> Self {
        LossWeights {
            chamfer: 0.0,
            matched: w,
            curvature: 0.0,
            spring: 0.0,
            edge: 0.0,
        }
    }
}

impl LossSchedule {
    /// Schedule whose ramps end at 25% of a run of `max_iterations`.
    pub fn for_run(max_iterations: u64) -> Self {
        LossSchedule {
            horizon: (max_iterations / 4).max(1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in self.ramps() {
            if !(r.start.is_finite() && r.end.is_finite() && r.start >= 0.0 && r.end >= 0.0) {
                return Err(Error::invalid(format!("{name} weights must be finite and non-negative")));
            }
        }
        Ok(())
    }

    fn ramps(&self) -> [(&'static str, WeightRamp); 5] {
        [
            ("chamfer", self.chamfer),
            ("matched", self.matched),
            ("curvature", self.curvature),
            ("spring", self.spring),
            ("edge", self.edge),
        ]
    }

    pub fn weights_at(&self, iteration: u64) -> LossWeights {
        let frac = if self.horizon == 0 {
            1.0
        } else {
            (iteration as f64 / self.horizon as f64).min(1.0)
        };
        LossWeights {
            chamfer: self.chamfer.at(frac),
            matched: self.matched.at(frac),
            curvature: self.curvature.at(frac),
            spring: self.spring.at(frac),
            edge: self.edge.at(frac),
        }
    }
}

/// Weights of every term at `iteration` under `schedule`.
pub fn scheduled_weights(schedule: &LossSchedule, iteration: u64) -> LossWeights {
    schedule.weights_at(iteration)
}
