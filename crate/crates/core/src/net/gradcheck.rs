//! Central finite differences against the analytic backward pass.
//!
//! A perturbation that flips a ReLU or changes a max-pool winner crosses a
//! kink, where the difference quotient is meaningless. Such parameters are
//! detected by comparing activation patterns at `θ ± eps` and at a wider
//! margin, and replaced by fresh draws.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{conv3d, conv3d_backward, sigmoid};
use super::{dice_loss, NetConfig, Tensor5, UNet};
use crate::error::Result;

/// Half-width, in units of `eps`, of the interval that must be free of kinks.
const KINK_MARGIN: f64 = 4.0;

/// Parameters compared per full-net check.
pub const GRADCHECK_SAMPLES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Draws rejected because the perturbation crossed a kink.
    pub skipped: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn random_problem(channels: usize, edge: usize, batch: usize, rng: &mut ChaCha8Rng) -> (Tensor5<f64>, Tensor5<f64>) {
    let n = edge * edge * edge;
    let x: Vec<f64> = (0..batch * channels * n).map(|_| rng.random_range(0.0..1.0)).collect();
    let t: Vec<f64> = (0..batch * n).map(|_| (rng.random_range(0.0..1.0) < 0.3) as u8 as f64).collect();
    (
        Tensor5::from_vec([batch, channels, edge, edge, edge], x).unwrap(),
        Tensor5::from_vec([batch, 1, edge, edge, edge], t).unwrap(),
    )
}

/// Checks `dice_loss ∘ unet_forward` in 64-bit on a random batch of two patches.
pub fn gradient_check(config: &NetConfig, edge: usize, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let mut net = UNet::<f64>::init(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    // Random biases keep units away from the all-zero symmetric start.
    for p in &mut net.params.entries {
        if p.name.ends_with(".bias") {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let (x, target) = random_problem(config.in_channels, edge, 2, &mut rng);

    let tape = net.forward_tape(&x)?;
    let (_, dprobs) = dice_loss(tape.probs(), &target)?;
    let grads = net.backward(&tape, &dprobs)?;
    let base_pattern = tape.activation_pattern();

    let mut candidates: Vec<(usize, usize)> = net
        .params
        .entries
        .iter()
        .enumerate()
        .flat_map(|(e, p)| (0..p.data.len()).map(move |i| (e, i)))
        .collect();
    candidates.shuffle(&mut rng);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (e, i) in candidates {
        if report.checked == GRADCHECK_SAMPLES {
            break;
        }
        let orig = net.params.entries[e].data[i];
        let mut eval = |v: f64| -> Result<(f64, bool)> {
            net.params.entries[e].data[i] = v;
            let t = net.forward_tape(&x)?;
            let (l, _) = dice_loss(t.probs(), &target)?;
            Ok((l, t.activation_pattern() == base_pattern))
        };
        let (lp, same_p) = eval(orig + eps)?;
        let (lm, same_m) = eval(orig - eps)?;
        let (_, wide_p) = eval(orig + KINK_MARGIN * eps)?;
        let (_, wide_m) = eval(orig - KINK_MARGIN * eps)?;
        net.params.entries[e].data[i] = orig;
        if !(same_p && same_m && wide_p && wide_m) {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = grads.entries[e].data[i];
        report.max_rel_error = report.max_rel_error.max(rel_error(analytic, numeric));
        report.checked += 1;
    }
    Ok(report)
}

/// Same check for a lone convolution followed by sigmoid and Dice; every parameter is compared.
pub fn gradient_check_conv(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let (ic, oc, edge) = (2, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, _) = random_problem(ic, edge, 2, &mut rng);
    let (_, target) = random_problem(oc, edge, 2, &mut rng);
    let target = Tensor5::stack(&(0..2).map(|b| {
        let t = target.select(b);
        let rep: Vec<f64> = (0..oc).flat_map(|_| t.data().to_vec()).collect();
        Tensor5::from_vec([1, oc, edge, edge, edge], rep).unwrap()
    }).collect::<Vec<_>>())?;
    let mut params: Vec<f64> = (0..oc * ic * 27 + oc).map(|_| rng.random_range(-0.5..0.5)).collect();

    let loss_of = |params: &[f64]| -> Result<(f64, Tensor5<f64>, Tensor5<f64>)> {
        let (w, b) = params.split_at(oc * ic * 27);
        let y = conv3d(&x, w, b)?.map(sigmoid);
        let (l, g) = dice_loss(&y, &target)?;
        Ok((l, y, g))
    };
    let (_, y, dy) = loss_of(&params)?;
    let mut dz = dy.clone();
    for (g, &p) in dz.data_mut().iter_mut().zip(y.data()) {
        *g *= p * (1.0 - p);
    }
    let mut dw = vec![0.0; oc * ic * 27];
    let mut db = vec![0.0; oc];
    conv3d_backward(&x, &params[..oc * ic * 27], &dz, &mut dw, &mut db, false)?;
    let analytic: Vec<f64> = dw.into_iter().chain(db).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let lp = loss_of(&params)?.0;
        params[i] = orig - eps;
        let lm = loss_of(&params)?.0;
        params[i] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        report.max_rel_error = report.max_rel_error.max(rel_error(analytic[i], numeric));
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_layer() {
        let r = gradient_check_conv(0, 1e-3).unwrap();
        assert_eq!(r.checked, 2 * 3 * 27 + 3);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn tiny_net_across_seeds() {
        for seed in [0, 1, 2] {
            let r = gradient_check(&NetConfig::tiny(), 8, seed, 1e-3).unwrap();
            assert!(r.checked >= 200, "{r:?}");
            assert!(r.max_rel_error <= 1e-4, "{r:?}");
        }
    }
}
