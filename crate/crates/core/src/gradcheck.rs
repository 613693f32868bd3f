//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::autodiff::{ParamSet, Tape, Var};
use crate::error::Result;
use crate::init::ModelRng;

/// Worst relative error seen for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_err: f64,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst: (f64, f64),
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `∂loss/∂θ` from the tape with `(L(θ+ε) − L(θ−ε)) / 2ε` on up to
/// `samples` seeded coordinates per parameter tensor (all of them when the
/// tensor is smaller).
///
/// `loss` records a scalar on a fresh tape for the given parameter values.
pub fn check_gradients<F>(params: &ParamSet, loss: F, epsilon: f64, samples: usize, seed: u64) -> Result<Vec<GroupReport>>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut analytic = params.clone();
    analytic.zero_grads();
    let mut tape = Tape::new();
    let root = loss(&mut tape, &analytic)?;
    tape.backward(root)?.accumulate(&mut analytic);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let root = loss(&mut tape, p)?;
        tape.value(root).item()
    };

    let mut rng = ModelRng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut reports = Vec::with_capacity(params.len());
    for id in params.ids() {
        let n = params.get(id).len();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, samples).into_vec();
            c.sort_unstable();
            c
        };
        let grad = analytic.get(id).grad.clone().unwrap_or_else(|| vec![0.0; n]);
        let mut report = GroupReport {
            name: params.name(id).to_string(),
            coordinates: coords.len(),
            max_rel_err: 0.0,
            worst: (0.0, 0.0),
        };
        for i in coords {
            let orig = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + epsilon;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - epsilon;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = relative_error(grad[i], numeric);
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (grad[i], numeric);
            }
        }
        reports.push(report);
    }
    Ok(reports)
}
