use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{MasqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(len: usize, hyper: AdamHyper) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam step descending `grads`.
///
/// Non-finite gradients are rejected and leave both the parameters and the
/// optimizer state untouched.
pub fn adam_step(params: &mut ParamStore, grads: &[f64], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() {
        return Err(MasqError::dim("adam gradient", params.len(), grads.len()));
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(MasqError::dim("adam state", params.len(), state.m.len()));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(MasqError::NonFinite("adam gradient".into()));
    }
    let AdamHyper {
        lr,
        beta1,
        beta2,
        eps,
    } = state.hyper;
    let t = state.step_count + 1;
    let bc1 = 1.0 - beta1.powf(t as f64);
    let bc2 = 1.0 - beta2.powf(t as f64);
    let mut next = params.values.clone();
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    for i in 0..grads.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        next[i] -= lr * mh / (vh.sqrt() + eps);
    }
    if !next.iter().all(|x| x.is_finite()) {
        return Err(MasqError::NonFinite("parameters after adam step".into()));
    }
    params.values = next;
    state.m = m;
    state.v = v;
    state.step_count = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use proptest::prelude::*;

    fn scalar_store(values: &[f64]) -> ParamStore {
        // a 1 x (n-1) linear layer has n parameters
        let n = values.len();
        let mut p = ParamStore::new(
            vec![LayerSpec {
                rows: 1,
                cols: n - 1,
                activation: Activation::Linear,
            }],
            0,
        )
        .unwrap();
        p.values.copy_from_slice(values);
        p
    }

    #[test]
    fn zero_gradient_only_counts_the_step() {
        let mut p = scalar_store(&[1.0, -2.0]);
        let mut s = AdamState::new(2, AdamHyper::default());
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p.values, vec![1.0, -2.0]);
        assert_eq!(s.m, vec![0.0, 0.0]);
        assert_eq!(s.v, vec![0.0, 0.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(&[1.0, 0.0]);
        let hyper = AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        };
        let mut s = AdamState::new(2, hyper);
        adam_step(&mut p, &[1.0, 0.0], &mut s).unwrap();
        let want = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.values[0] - want).abs() < 1e-15);
        assert!((p.values[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let mut p = scalar_store(&[0.5, 0.5]);
        let mut s = AdamState::new(2, AdamHyper::default());
        for _ in 0..5 {
            adam_step(&mut p, &[0.3, 0.3], &mut s).unwrap();
        }
        assert_eq!(p.values[0], p.values[1]);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut p = scalar_store(&[1.0, 2.0]);
        let mut s = AdamState::new(2, AdamHyper::default());
        adam_step(&mut p, &[0.1, 0.2], &mut s).unwrap();
        let (pv, ss) = (p.clone(), s.clone());
        assert!(adam_step(&mut p, &[f64::NAN, 0.0], &mut s).is_err());
        assert_eq!(p, pv);
        assert_eq!(s, ss);
    }

    proptest! {
        #[test]
        fn permutation_equivariance(
            vals in prop::collection::vec(-3.0f64..3.0, 4),
            grads in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..4),
            rot in 0usize..4,
        ) {
            let perm = |v: &[f64]| -> Vec<f64> { (0..4).map(|i| v[(i + rot) % 4]).collect() };
            let mut a = scalar_store(&vals);
            let mut b = scalar_store(&perm(&vals));
            let mut sa = AdamState::new(4, AdamHyper::default());
            let mut sb = AdamState::new(4, AdamHyper::default());
            for g in &grads {
                adam_step(&mut a, g, &mut sa).unwrap();
                adam_step(&mut b, &perm(g), &mut sb).unwrap();
            }
            prop_assert_eq!(perm(&a.values), b.values);
            prop_assert_eq!(perm(&sa.m), sb.m);
        }
    }
}
