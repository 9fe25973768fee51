//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{OptimizerState, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One AdamW update of every tensor in `params`; `grads` holds one buffer
/// per tensor in store order.
///
/// Weight decay shrinks the parameters directly (`p -= lr * wd * p`) and
/// never enters the moment estimates.
pub fn adamw_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut OptimizerState, hp: &AdamW) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {}/{} moment buffers",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    for (i, (name, t)) in params.iter().enumerate() {
        if grads[i].len() != t.len() || state.m[i].len() != t.len() || state.v[i].len() != t.len() {
            return Err(Error::ShapeMismatch(format!("gradient or moments of {name} do not match {:?}", t.shape)));
        }
        if grads[i].iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let names: Vec<String> = params.names().to_vec();
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, x) in p.data.iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g;
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g * g;
            let update = (m[j] / c1) / ((v[j] / c2).sqrt() + hp.eps);
            *x -= hp.lr * (hp.weight_decay * *x + update);
        }
        if p.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {} after update", names[i])));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::new(vec![values.len()], values.to_vec()).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = store(&[1.5, -2.0]);
        let mut s = OptimizerState::zeros(&p);
        let hp = AdamW {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut p, &[vec![0.0, 0.0]], &mut s, &hp).unwrap();
        assert_eq!(p.tensors()[0].data, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // After one step m̂ = g and v̂ = g², so the move is lr * g / (|g| + eps).
        let g = [0.3, -2.0, 1e-3];
        let x0 = [1.0, 0.5, -0.25];
        let mut p = store(&x0);
        let mut s = OptimizerState::zeros(&p);
        let hp = AdamW {
            lr: 1e-3,
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut p, &[g.to_vec()], &mut s, &hp).unwrap();
        for k in 0..3 {
            let want = x0[k] - 1e-3 * g[k] / (g[k].abs() + 1e-8);
            assert!((p.tensors()[0].data[k] - want).abs() < 1e-10);
        }
        assert_eq!(s.step, 1);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = store(&[2.0, -4.0]);
        let mut s = OptimizerState::zeros(&p);
        let hp = AdamW {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        };
        adamw_step(&mut p, &[vec![0.0, 0.0]], &mut s, &hp).unwrap();
        assert_eq!(p.tensors()[0].data, vec![2.0 * (1.0 - 0.01 * 0.1), -4.0 * (1.0 - 0.01 * 0.1)]);
        assert!(s.m[0].iter().chain(&s.v[0]).all(|&x| x == 0.0));
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = store(&[1.0]);
        let mut s = OptimizerState::zeros(&p);
        let err = adamw_step(&mut p, &[vec![f64::NAN]], &mut s, &AdamW::default()).unwrap_err();
        assert!(err.to_string().contains("gradient of a"), "{err}");
        assert_eq!(p.tensors()[0].data, vec![1.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = store(&[1.0, 2.0]);
        let mut s = OptimizerState::zeros(&p);
        assert!(adamw_step(&mut p, &[vec![0.0]], &mut s, &AdamW::default()).is_err());
    }
}
