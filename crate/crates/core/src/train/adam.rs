use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Real};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(store: &ParamStore<F>, lr: f64) -> Self {
        let zeros: Vec<Vec<F>> = store.iter().map(|(_, _, t)| vec![F::zero(); t.len()]).collect();
        AdamState {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, id: ParamId) -> &[F] {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &[F] {
        &self.v[id.index()]
    }

    /// Apply one update. Parameters without a gradient entry are left
    /// alone and their moments do not decay.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, Vec<F>)], checked: bool) -> Result<()> {
        for (id, g) in grads {
            if g.len() != self.m[id.index()].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient of {} has {} entries, parameter {}", store.name(*id), g.len(), self.m[id.index()].len()),
                ));
            }
            if checked && g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    op: format!("gradient of {}", store.name(*id)),
                });
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads {
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.get_mut(*id).data_mut();
            for i in 0..g.len() {
                let gi = g[i].as_f64();
                let mi = self.beta1 * m[i].as_f64() + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v[i].as_f64() + (1.0 - self.beta2) * gi * gi;
                m[i] = F::from_f64_lossy(mi);
                v[i] = F::from_f64_lossy(vi);
                let delta = self.lr * (mi / c1) / ((vi / c2).sqrt() + self.epsilon);
                p[i] = F::from_f64_lossy(p[i].as_f64() - delta);
            }
        }
        Ok(())
    }
}
