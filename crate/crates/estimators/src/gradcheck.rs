use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::CnnConfig;
use crate::error::{Error, Result};
use crate::network::{mse_loss, Cache, Model};

pub const FD_STEP: f64 = 1e-5;
const BATCH: usize = 3;


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation flipped a ReLU and were replaced.
    pub skipped: usize,
    /// Worst error per tensor.
    pub per_tensor: Vec<(String, f64)>,
}

fn loss_at(model: &Model<f64>, input: &[f64], target: &[f64], cache: &mut Cache<f64>) -> Result<(f64, Vec<bool>)> {
    model.forward_cached(input, BATCH, cache)?;
    let (loss, _) = mse_loss(cache.output(), target, 1.0);
    Ok((loss, cache.relu_pattern(model)))
}

/// Compares backpropagated gradients of the MSE loss with central
/// differences on `samples` parameters drawn at random, at least one from
/// every tensor. Parameters whose ±step moves any ReLU across zero are
/// redrawn, since the loss is not differentiable there.
pub fn gradient_check(config: &CnnConfig, seed: u64, samples: usize) -> Result<GradCheckReport> {
    let mut model = Model::<f64>::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    // zero biases put units fed only by dead inputs exactly on the ReLU kink
    let b_dist = Normal::new(0.0, 0.1).expect("valid");
    for t in model.tensors().iter().filter(|t| t.name.ends_with(".bias")) {
        for p in &mut model.params_mut()[t.offset..t.offset + t.len] {
            *p = b_dist.sample(&mut rng);
        }
    }
    let x_dist = Normal::new(0.0, 1.5).expect("valid");
    let t_dist = Normal::new(0.0, 0.5).expect("valid");
    let input: Vec<f64> = (0..BATCH * model.input_len()).map(|_| x_dist.sample(&mut rng)).collect();
    let target: Vec<f64> = (0..BATCH * model.output_len()).map(|_| t_dist.sample(&mut rng)).collect();

    let mut cache = Cache::default();
    model.forward_cached(&input, BATCH, &mut cache)?;
    let base_pattern = cache.relu_pattern(&model);
    let (_, d_out) = mse_loss(cache.output(), &target, 1.0);
    let mut grad = vec![0.0; model.param_count()];
    model.backward(&mut cache, &d_out, &mut grad);

    let tensors = model.tensors();
    let mut probe = model.clone();
    let mut per_tensor: Vec<(String, f64)> = tensors.iter().map(|t| (t.name.clone(), 0.0)).collect();
    let (mut checked, mut skipped, mut max_err) = (0, 0, 0.0f64);
    let mut seen = vec![false; tensors.len()];
    let mut attempts = 0;
    while checked < samples.max(tensors.len()) {
        attempts += 1;
        if attempts > 50 * samples.max(tensors.len()) {
            return Err(Error::Config("too many ReLU crossings to complete the check".into()));
        }
        // one pass over the tensors first, then uniform over all parameters
        let t = seen.iter().position(|s| !s).unwrap_or_else(|| {
            let p = rng.random_range(0..model.param_count());
            tensors.iter().position(|t| (t.offset..t.offset + t.len).contains(&p)).expect("covered")
        });
        let idx = tensors[t].offset + rng.random_range(0..tensors[t].len);

        let orig = model.params()[idx];
        probe.params_mut()[idx] = orig + FD_STEP;
        let (lp, pp) = loss_at(&probe, &input, &target, &mut cache)?;
        probe.params_mut()[idx] = orig - FD_STEP;
        let (lm, pm) = loss_at(&probe, &input, &target, &mut cache)?;
        probe.params_mut()[idx] = orig;
        if pp != base_pattern || pm != base_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let analytic = grad[idx];
        let err = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        per_tensor[t].1 = per_tensor[t].1.max(err);
        max_err = max_err.max(err);
        seen[t] = true;
        checked += 1;
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        checked,
        skipped,
        per_tensor,
    })
}
