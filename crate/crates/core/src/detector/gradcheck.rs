//! Central finite-difference check of [`batch_loss_and_grad`].

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_loss, batch_loss_and_grad, DetectorConfig, DetectorError, EncodedCase, Params};

/// Gradients smaller than this are dominated by rounding in the
/// difference quotient and are resampled.
pub const NEGLIGIBLE_GRAD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
    pub skipped_negligible: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn tensors_covered(&self) -> BTreeSet<&str> {
        self.checks.iter().map(|c| c.tensor.as_str()).collect()
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Checks `per_tensor` random coordinates of every tensor. Embedding
/// coordinates are drawn only from rows used by `batch`.
pub fn gradient_check(
    params: &Params,
    batch: &[EncodedCase],
    config: &DetectorConfig,
    per_tensor: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport, DetectorError> {
    let (_, grad) = batch_loss_and_grad(params, batch, config)?;
    let layout = params.layout();
    let d = params.dims.embed;
    let used_rows: Vec<usize> = batch
        .iter()
        .flat_map(|c| c.comment.iter().chain(&c.diff).copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut checks = Vec::new();
    let mut skipped = 0;
    for (ti, (name, _)) in layout.iter().enumerate() {
        let len = params.tensors()[ti].len();
        let mut found = 0;
        let mut attempts = 0;
        while found < per_tensor && attempts < per_tensor * 50 {
            attempts += 1;
            let index = if name == "emb" {
                used_rows[rng.gen_range(0..used_rows.len())] * d + rng.gen_range(0..d)
            } else {
                rng.gen_range(0..len)
            };
            let orig = work.tensors()[ti][index];
            work.tensors_mut()[ti][index] = orig + step;
            let up = batch_loss(&work, batch, config)?;
            work.tensors_mut()[ti][index] = orig - step;
            let down = batch_loss(&work, batch, config)?;
            work.tensors_mut()[ti][index] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grad.tensors()[ti][index];
            if analytic.abs().max(numeric.abs()) < NEGLIGIBLE_GRAD {
                skipped += 1;
                continue;
            }
            found += 1;
            checks.push(CoordCheck {
                tensor: name.clone(),
                index,
                analytic,
                numeric,
                rel_err: rel_err(analytic, numeric),
            });
        }
    }
    let max_rel_err = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        checks,
        skipped_negligible: skipped,
        max_rel_err,
    })
}
