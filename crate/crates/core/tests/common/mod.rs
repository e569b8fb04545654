//! Finite-difference gradient check shared by the test targets.

use pano_orient::geometry::OrientationLabel;
use pano_orient::neural::{forward_train, ModelConfig, ParameterSet, Variant};
use pano_orient::rng::SeqRng;

pub const H: f64 = 1e-5;
/// Denominator floor for the relative error, so components whose true
/// gradient is zero (key biases) are compared absolutely. One rounding step
/// of the loss moves the central difference by about 2e-11.
pub const FLOOR: f64 = 1e-5;

pub fn tiny(variant: Variant, frames: usize) -> ModelConfig {
    ModelConfig {
        variant,
        frames,
        height: 16,
        width: 16,
        patch: 8,
        embed_dim: 16,
        depth: 1,
        heads: 2,
        mlp_ratio: 4,
        n_classes: 8,
    }
}

/// Initialized parameters with every tensor perturbed so no gradient is
/// structurally zero (a zero head would block everything upstream).
fn generic_params(cfg: &ModelConfig, seed: u64) -> ParameterSet<f64> {
    let mut p = ParameterSet::<f64>::init(cfg, seed).unwrap();
    let mut rng = SeqRng::new(seed ^ 0xABCD);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    p
}

fn loss(cfg: &ModelConfig, p: &ParameterSet<f64>, x: &[f64], y: OrientationLabel) -> f64 {
    forward_train(cfg, p, x, y).unwrap().1
}

pub fn max_rel_error(cfg: &ModelConfig, seed: u64) -> Vec<(String, f64)> {
    let mut rng = SeqRng::new(seed);
    let x: Vec<f64> = (0..cfg.input_len()).map(|_| rng.unit()).collect();
    let y = OrientationLabel(5);
    let mut p = generic_params(cfg, seed);
    let (tape, _, _) = forward_train(cfg, &p, &x, y).unwrap();
    let grads = tape.backward().unwrap();

    let names = p.names().to_vec();
    let mut report = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..grads[ti].len() {
            let orig = p.tensors()[ti].data()[j];
            p.tensors_mut()[ti].data_mut()[j] = orig + H;
            let lp = loss(cfg, &p, &x, y);
            p.tensors_mut()[ti].data_mut()[j] = orig - H;
            let lm = loss(cfg, &p, &x, y);
            p.tensors_mut()[ti].data_mut()[j] = orig;
            let fd = (lp - lm) / (2.0 * H);
            let an = grads[ti].data()[j];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
        report.push((name.clone(), worst));
    }
    report
}
