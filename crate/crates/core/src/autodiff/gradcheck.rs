use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamKind, ParamStore};
use super::session::Session;
use super::tape::Var;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Entries checked per tensor; tensors at most this large are checked exhaustively.
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Denominator floor of the relative error: gradients below it are
    /// effectively compared in absolute terms.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            samples_per_tensor: 12,
            seed: 0,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes left out because the `±step` evaluations flipped a ReLU.
    pub kinked: usize,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tol
    }
}

/// Compare tape gradients of a scalar `f` against central differences for
/// every trainable tensor in `store`.
///
/// `f` rebuilds the computation on a fresh session each call; BatchNorm runs
/// in training mode and its running-statistic updates are discarded.
/// Relative error is `|a − n| / max(|a|, |n|, abs_floor)`. A probe whose `±step`
/// runs change the sign of any ReLU input straddles a kink, where the
/// central difference is meaningless; such probes are counted in `kinked`
/// instead of being compared.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    cfg: &GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<(f64, Vec<bool>)> {
        let mut s = Session::new(store, true);
        let loss = f(&mut s)?;
        let signs = s.tape.relu_signs();
        let v = s.value(loss);
        if v.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        let v = v.get(0, 0);
        if !v.is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        Ok((v, signs))
    };
    let (analytic, signs) = {
        let mut s = Session::new(store, true);
        let loss = f(&mut s)?;
        let signs = s.tape.relu_signs();
        (s.finish(loss)?.grads, signs)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let names: Vec<String> = store
        .iter()
        .filter(|(_, _, k)| *k == ParamKind::Param)
        .map(|(n, _, _)| n.to_string())
        .collect();
    for name in names {
        let len = store.get(&name)?.len();
        let grad = analytic.iter().find(|(n, _)| *n == name).map(|(_, g)| g);
        let picks: Vec<usize> = if len <= cfg.samples_per_tensor {
            (0..len).collect()
        } else {
            sample(&mut rng, len, cfg.samples_per_tensor).into_vec()
        };
        for i in picks {
            let orig = store.get(&name)?.as_slice()[i];
            store.value_mut(&name)?.as_mut_slice()[i] = orig + cfg.step;
            let plus = eval(store);
            store.value_mut(&name)?.as_mut_slice()[i] = orig - cfg.step;
            let minus = eval(store);
            store.value_mut(&name)?.as_mut_slice()[i] = orig;
            let ((plus, sp), (minus, sm)) = (plus?, minus?);
            if sp != signs || sm != signs {
                report.kinked += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.map_or(0.0, |g| g.as_slice()[i]);
            if !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "analytic gradient of {name}[{i}]"
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}
