//! Central finite-difference verification of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassWeights, Mode, Model};
use crate::error::{Error, Result};

pub const STEP: f64 = 1e-5;
pub const MIN_COORDINATES: usize = 200;

fn relative_error(ga: f64, gn: f64) -> f64 {
    (ga - gn).abs() / (ga.abs() + gn.abs()).max(1e-8)
}

/// Max relative error between analytic and numeric gradients of the batch
/// objective, over `n_coords` parameters drawn with `seed` (all of them if the
/// model has fewer).
///
/// In [`Mode::Train`] batchnorm uses batch statistics; dropout must be zero for
/// the objective to be deterministic.
pub fn grad_check_batch(
    model: &Model,
    windows: &[&[f64]],
    labels: &[u8],
    weights: &ClassWeights,
    mode: Mode,
    n_coords: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_params();
    let coords = sample(&mut rng, n, n_coords.min(n)).into_vec();
    grad_check_coords(model, windows, labels, weights, mode, &coords, seed)
}

/// As [`grad_check_batch`] on an explicit coordinate list.
pub fn grad_check_coords(
    model: &Model,
    windows: &[&[f64]],
    labels: &[u8],
    weights: &ClassWeights,
    mode: Mode,
    coords: &[usize],
    seed: u64,
) -> Result<f64> {
    if mode == Mode::Train && model.spec.dropout > 0.0 {
        return Err(Error::argument("gradient check needs dropout disabled"));
    }
    let objective = |probe: &Model| -> Result<(f64, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, g, _) = probe.objective_and_gradient(windows, labels, weights, mode, &mut rng)?;
        Ok((f, g))
    };
    let (_, analytic) = objective(model)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let x = model.params.values[i];
        probe.params.values[i] = x + STEP;
        let up = objective(&probe)?.0;
        probe.params.values[i] = x - STEP;
        let down = objective(&probe)?.0;
        probe.params.values[i] = x;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Single-sample check in inference mode.
pub fn grad_check(model: &Model, window: &[f64], label: u8, weights: &ClassWeights, seed: u64) -> Result<f64> {
    grad_check_batch(model, &[window], &[label], weights, Mode::Inference, MIN_COORDINATES, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, ModelKind, ModelSpec};
    use rand::Rng;

    const W: usize = 6;
    const F: usize = 7;

    fn window(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..W * F).map(|_| rng.gen::<f64>()).collect()
    }

    /// Smooth activation and perturbed running stats so every path is exercised.
    fn model(kind: ModelKind, hidden: Vec<usize>, batchnorm: bool, seed: u64) -> Model {
        let mut spec = ModelSpec::new(kind, hidden);
        spec.activation = Activation::Softplus;
        spec.batchnorm = batchnorm;
        spec.seed = seed;
        let mut m = Model::init(&spec, W, F).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for e in &m.network.buffer_manifest {
            let is_var = e.name.ends_with("var");
            for v in &mut m.params.buffers[e.offset..e.offset + e.len()] {
                *v = if is_var { rng.gen_range(0.5..1.5) } else { rng.gen_range(-0.2..0.2) };
            }
        }
        m
    }

    fn check(kind: ModelKind, hidden: Vec<usize>, batchnorm: bool) {
        let weights = ClassWeights { w_pos: 2.5, w_neg: 0.625 };
        for seed in 0..5 {
            let m = model(kind, hidden.clone(), batchnorm, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = window(&mut rng);
            for label in [0, 1] {
                let err = grad_check(&m, &x, label, &weights, seed).unwrap();
                assert!(err < 1e-4, "{kind} seed {seed} label {label}: {err:e}");
            }
        }
    }

    #[test]
    fn dense_gradients() {
        check(ModelKind::Dense, vec![16, 16], false);
        check(ModelKind::Dense, vec![16, 16], true);
    }

    #[test]
    fn cnn_gradients() {
        check(ModelKind::Cnn, vec![16], false);
        check(ModelKind::Cnn, vec![8, 4], true);
    }

    #[test]
    fn lstm_gradients() {
        check(ModelKind::Lstm, vec![8], false);
        check(ModelKind::Lstm, vec![6, 4], true);
    }

    #[test]
    fn batch_statistics_gradients() {
        let weights = ClassWeights { w_pos: 1.5, w_neg: 0.75 };
        for kind in [ModelKind::Dense, ModelKind::Cnn, ModelKind::Lstm] {
            let m = model(kind, vec![6, 5], true, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let xs: Vec<Vec<f64>> = (0..5).map(|_| window(&mut rng)).collect();
            let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            // a bias feeding batch statistics has an exactly zero gradient,
            // which leaves nothing but roundoff to compare
            let cancelled = |name: &str| (name.starts_with("dense") || name.starts_with("conv")) && name.ends_with(".bias");
            let coords: Vec<usize> = m
                .network
                .manifest
                .iter()
                .filter(|e| !cancelled(&e.name))
                .flat_map(|e| e.offset..e.offset + e.len())
                .collect();
            let err = grad_check_coords(&m, &refs, &[1, 0, 0, 1, 0], &weights, Mode::Train, &coords, 4).unwrap();
            assert!(err < 1e-4, "{kind}: {err:e}");
        }
    }

    #[test]
    fn svm_gradient_away_from_hinge() {
        let spec = ModelSpec::new(ModelKind::Svm, vec![]);
        let mut m = Model::init(&spec, W, F).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        m.params.values.iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
        let x = window(&mut rng);
        let err = grad_check(&m, &x, 1, &ClassWeights::UNIT, 1).unwrap();
        assert!(err < 1e-4, "{err:e}");
    }

    #[test]
    fn examines_requested_coordinates() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    }
}
