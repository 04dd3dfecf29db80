//! Central finite-difference verification of analytic gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Denominator floor so that near-zero gradients are judged absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            tolerance: 1e-3,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` (aligned with each store's tensors) against central
/// differences of `loss` on every scalar of every store.
pub fn grad_check<F>(
    stores: &[Params],
    analytic: &[Vec<Tensor>],
    loss: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&[Params]) -> Result<f64> + Sync,
{
    if analytic.len() != stores.len()
        || stores.iter().zip(analytic).any(|(s, a)| s.len() != a.len())
    {
        return Err(Error::ShapeMismatch("analytic gradients do not match stores".into()));
    }
    let jobs: Vec<(usize, usize)> = stores
        .iter()
        .enumerate()
        .flat_map(|(s, p)| (0..p.len()).map(move |k| (s, k)))
        .collect();
    let results: Vec<Result<(usize, Option<(String, usize, f64, f64, f64)>)>> = jobs
        .par_iter()
        .map(|&(s, k)| {
            let mut local = stores.to_vec();
            let name = stores[s].names()[k].clone();
            let n = stores[s].tensors()[k].len();
            let mut worst: Option<(String, usize, f64, f64, f64)> = None;
            for i in 0..n {
                let orig = stores[s].tensors()[k].data()[i];
                local[s].tensors_mut()[k].data_mut()[i] = orig + opts.h;
                let up = loss(&local)?;
                local[s].tensors_mut()[k].data_mut()[i] = orig - opts.h;
                let down = loss(&local)?;
                local[s].tensors_mut()[k].data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * opts.h);
                let a = analytic[s][k].data()[i];
                let rel = relative_error(a, numeric, opts.floor);
                if worst.as_ref().is_none_or(|w| rel > w.4) {
                    worst = Some((name.clone(), i, a, numeric, rel));
                }
            }
            Ok((n, worst))
        })
        .collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for r in results {
        let (n, w) = r?;
        report.checked += n;
        if let Some((name, i, a, num, rel)) = w {
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name, i, a, num));
            }
        }
    }
    if report.max_rel_error > opts.tolerance {
        let (param, index, analytic, numeric) = report.worst.clone().unwrap_or_default();
        return Err(Error::GradMismatch {
            param,
            index,
            analytic,
            numeric,
            rel: report.max_rel_error,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Graph;

    fn linear_quadratic(p: &Params, x: &Tensor, y: &Tensor) -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let b = p.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let pred = g.linear(xv, b.var("w"), b.var("b"));
        let l = g.mse(pred, yv);
        let grads = g.backward(l);
        (g.value(l).get(0, 0), b.grads(&grads))
    }

    fn setup() -> (Params, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Params::new();
        p.insert("w", Tensor::randn(4, 3, 1.0, &mut rng));
        p.insert("b", Tensor::randn(1, 3, 1.0, &mut rng));
        (p, Tensor::randn(6, 4, 1.0, &mut rng), Tensor::randn(6, 3, 1.0, &mut rng))
    }

    #[test]
    fn quadratic_loss_of_linear_model_is_exact() {
        let (p, x, y) = setup();
        let (_, g) = linear_quadratic(&p, &x, &y);
        let opts = GradCheckOptions {
            tolerance: 1e-8,
            ..Default::default()
        };
        let r = grad_check(&[p], &[g], |s| Ok(linear_quadratic(&s[0], &x, &y).0), opts).unwrap();
        assert_eq!(r.checked, 15);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let (p, x, y) = setup();
        let (_, mut g) = linear_quadratic(&p, &x, &y);
        g[1].data_mut()[2] += 0.5;
        let err = grad_check(&[p], &[g], |s| Ok(linear_quadratic(&s[0], &x, &y).0), Default::default())
            .unwrap_err();
        match err {
            Error::GradMismatch { param, index, .. } => {
                assert_eq!(param, "b");
                assert_eq!(index, 2);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 0.0, 1e-6), 1e-3);
        assert_eq!(relative_error(2.0, 1.0, 1e-6), 0.5);
    }
}
