use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(parameter name, relative error of its gradient)`.
    pub per_param: Vec<(String, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.per_param.iter().all(|(_, e)| *e <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

// Below this magnitude both gradients count as zero and the error is absolute.
const REL_FLOOR: f64 = 1e-6;

/// Max-norm relative error `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-6)`.
///
/// Normalizing by the whole tensor's scale keeps entries with a tiny
/// gradient from being judged on truncation noise alone.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(REL_FLOOR)
}

fn eval<B>(store: &ParamStore<f64>, build: &B) -> Result<f64>
where
    B: for<'p> Fn(&mut Graph<'p, f64>, &'p ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::inference();
    let loss = build(&mut g, store)?;
    Ok(g.value(loss)[0])
}

/// Check every parameter in `store` against five-point central finite
/// differences (error O(step⁴)).
///
/// `build` must construct a scalar loss from the store's parameters.
pub fn grad_check<B>(store: &mut ParamStore<f64>, build: B, step: f64, tol: f64) -> Result<GradCheckReport>
where
    B: for<'p> Fn(&mut Graph<'p, f64>, &'p ParamStore<f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        g.backward(loss)?;
        ParamStore::collect_grads(&g)
    };
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    let mut per_param = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).len();
        let grad = analytic
            .iter()
            .find(|(k, _)| *k == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; n]);
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).data()[j];
            let mut at = |k: f64| -> Result<f64> {
                store.get_mut(id).data_mut()[j] = orig + k * step;
                eval(store, &build)
            };
            let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
            store.get_mut(id).data_mut()[j] = orig;
            *slot = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
        }
        per_param.push((store.name(id).to_string(), relative_error(&grad, &numeric)));
    }
    Ok(GradCheckReport {
        per_param,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_loss_is_exact() {
        let mut store = ParamStore::new();
        store
            .add("x", Tensor::new(&[4], vec![0.3, -1.2, 2.5, 0.0]).unwrap())
            .unwrap();
        let report = grad_check(
            &mut store,
            |g, s| {
                let x = s.var(g, s.id("x").unwrap());
                let sq = g.mul(x, x)?;
                let total = g.sum(sq)?;
                g.affine(total, 0.5, 0.0)
            },
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.max_error() < 1e-8, "{report:?}");
    }

    #[test]
    fn quartic_loss_is_exact() {
        let mut store = ParamStore::new();
        store
            .add("x", Tensor::new(&[3], vec![0.7, -1.3, 2.1]).unwrap())
            .unwrap();
        let report = grad_check(
            &mut store,
            |g, s| {
                let x = s.var(g, s.id("x").unwrap());
                let sq = g.mul(x, x)?;
                let q = g.mul(sq, sq)?;
                g.sum(q)
            },
            1e-2,
            1e-4,
        )
        .unwrap();
        // the five-point stencil has no error on polynomials of degree four
        assert!(report.max_error() < 1e-10, "{report:?}");
    }

    #[test]
    fn relative_error_scales_by_largest_entry() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[2.0, 1e-4], &[2.0, 2e-4]) - 5e-5).abs() < 1e-15);
        assert!((relative_error(&[1.0], &[0.5]) - 0.5).abs() < 1e-15);
        assert!((relative_error(&[1e-9], &[0.0]) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        // sum(x * stop(x)) has analytic grad x but numeric 2x without the stop
        let mut store = ParamStore::new();
        store.add("x", Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        let report = grad_check(
            &mut store,
            |g, s| {
                let x = s.var(g, s.id("x").unwrap());
                let fixed = g.value(x).to_vec();
                let y = g.mul_const(x, fixed)?;
                g.sum(y)
            },
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert!((report.max_error() - 0.5).abs() < 1e-6, "{report:?}");
    }
}
