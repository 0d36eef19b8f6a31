use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::index::sample;
use rand::Rng;

use super::{softmax_cross_entropy, Mode, Result, Sequential, Tensor};
use crate::seed::rng_from_seed;

/// Central finite-difference check of [`Sequential`] gradients under the
/// softmax cross-entropy loss.
///
/// Dropout must be inactive (rate 0 or `Mode::Eval`) or the check is
/// meaningless. Relative error is `|a − n| / max(|a|, |n|, floor)`; the floor
/// keeps coordinates whose true gradient is ~0 from reporting noise.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub epsilon: f64,
    pub mode: Mode,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    pub denominator_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            epsilon: 1e-5,
            mode: Mode::Eval,
            max_coords_per_param: None,
            seed: 0,
            denominator_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

fn loss_of(net: &mut Sequential, input: &Tensor, labels: &[usize], mode: Mode) -> Result<f64> {
    let logits = net.forward(input, mode)?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

/// Add `U(-scale, scale)` noise to every parameter and running mean, and
/// `U(0, scale)` to running variances, so zero-initialized shifts do not put
/// ReLU inputs exactly on the kink.
pub fn jitter(net: &mut Sequential, scale: f64, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for (_, p) in net.params_mut() {
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-scale..scale));
    }
    for (name, t) in net.buffers_mut() {
        let var = name.ends_with("running_var");
        t.data_mut().iter_mut().for_each(|v| {
            *v += if var {
                rng.random_range(0.0..scale)
            } else {
                rng.random_range(-scale..scale)
            }
        });
    }
}

pub fn gradient_check(
    net: &mut Sequential,
    input: &Tensor,
    labels: &[usize],
    check: &GradCheck,
) -> Result<GradCheckReport> {
    net.zero_grad();
    let logits = net.forward(input, check.mode)?;
    let (_, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let dinput = net.backward(&dlogits)?;
    let analytic: Vec<(String, Vec<f64>)> = net
        .params()
        .into_iter()
        .map(|(n, p)| (n, p.grad.data().to_vec()))
        .collect();

    let mut rng = rng_from_seed(check.seed);
    let mut pick = |len: usize| -> Vec<usize> {
        match check.max_coords_per_param {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let eps = check.epsilon;
    let record = |name: &str, j: usize, a: f64, n: f64, report: &mut GradCheckReport| {
        let denom = a.abs().max(n.abs()).max(check.denominator_floor);
        let rel = (a - n).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = alloc::format!("{name}[{j}]");
        }
    };

    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for j in pick(grad.len()) {
            let orig = net.params_mut()[pi].1.value.data()[j];
            net.params_mut()[pi].1.value.data_mut()[j] = orig + eps;
            let plus = loss_of(net, input, labels, check.mode)?;
            net.params_mut()[pi].1.value.data_mut()[j] = orig - eps;
            let minus = loss_of(net, input, labels, check.mode)?;
            net.params_mut()[pi].1.value.data_mut()[j] = orig;
            record(name, j, grad[j], (plus - minus) / (2.0 * eps), &mut report);
        }
    }

    let mut x = input.clone();
    for j in pick(x.len()) {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + eps;
        let plus = loss_of(net, &x, labels, check.mode)?;
        x.data_mut()[j] = orig - eps;
        let minus = loss_of(net, &x, labels, check.mode)?;
        x.data_mut()[j] = orig;
        record(
            "input",
            j,
            dinput.data()[j],
            (plus - minus) / (2.0 * eps),
            &mut report,
        );
    }
    Ok(report)
}
