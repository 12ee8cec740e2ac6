//! Central-difference gradient verification.
//!
//! The checker perturbs each parameter coordinate of a network by ±h, compares
//! the resulting slope against the analytic gradient the loss closure
//! accumulates, and reports the worst relative error. Coordinates where the
//! two one-sided slopes disagree (kinks of ReLU, L1, max, …) are skipped, not
//! failed: finite differences are meaningless exactly there.
//!
//! Tiny gradients need special care. When a coordinate moves the loss by only
//! a few ulps across ±h, the difference quotient is dominated by float
//! rounding of the loss value, and no analytic gradient — correct or not —
//! could match it to a small relative error. Such coordinates are judged
//! against the checker's own resolution floor instead of their magnitude, so
//! they only fail when the discrepancy exceeds what rounding can explain.

use super::{DiffnetError, Network};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Relative-error threshold for `pass`.
    pub tol: f64,
    /// Check at most this many coordinates (deterministic subsample).
    pub max_coords: Option<usize>,
    /// Seed for the coordinate subsample.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    /// `(parameter name, flat index)` of the worst checked coordinate.
    pub worst_param: Option<(String, usize)>,
    pub tol: f64,
    pub pass: bool,
}

/// Relative error between analytic and numeric slopes.
///
/// `floor` is the smallest slope magnitude the finite difference can resolve
/// to the requested tolerance; magnitudes below it are compared against the
/// floor itself, otherwise rounding noise in the loss evaluation would fail
/// coordinates whose true gradient is merely small.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / floor.max(a.abs() + n.abs())
}

/// True when the one-sided slopes around the base point disagree more than
/// curvature at step `h` can explain — the signature of a kink.
fn is_kink(d_plus: f64, d_minus: f64) -> bool {
    (d_plus - d_minus).abs() > 0.1 * (d_plus.abs() + d_minus.abs()) + 1e-4
}

/// Verify the gradients `loss_fn` accumulates into `net` against central
/// finite differences.
///
/// `loss_fn` must return the scalar loss and add its gradient into the
/// network's parameter `grad` buffers (perturbed evaluations only use the
/// returned value). It must be deterministic: any internal randomness has to
/// be fixed across calls. Grad buffers are zeroed before the analytic pass
/// and left zeroed on return.
pub fn grad_check<F>(
    net: &mut Network,
    mut loss_fn: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, DiffnetError>
where
    F: FnMut(&mut Network) -> Result<f64, DiffnetError>,
{
    net.zero_grads();
    let base = loss_fn(net)?;
    if !base.is_finite() {
        return Err(DiffnetError::NonFinite("loss at base point".into()));
    }
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.values().to_vec()).collect();
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();

    // Perturbing by ±h changes the loss in steps no finer than its ulp, so the
    // difference quotient carries ~eps*|loss|/h of absolute noise. Slopes whose
    // magnitude is below that noise divided by the tolerance cannot be checked
    // relatively; rel_err measures them against this floor instead.
    let res_floor = (1e-8_f64).max(2.0 * f64::EPSILON * base.abs().max(1.0) / (cfg.h * cfg.tol));

    let mut coords: Vec<(usize, usize)> = (0..analytic.len())
        .flat_map(|pi| (0..analytic[pi].len()).map(move |i| (pi, i)))
        .collect();
    if let Some(cap) = cfg.max_coords {
        if coords.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            coords.shuffle(&mut rng);
            coords.truncate(cap);
            coords.sort_unstable();
        }
    }

    let mut report = GradCheckReport {
        checked: 0,
        skipped_kinks: 0,
        max_rel_err: 0.0,
        worst_param: None,
        tol: cfg.tol,
        pass: true,
    };
    for (pi, i) in coords {
        let w = net.params()[pi].tensor.values()[i];
        net.params_mut()[pi].tensor.values_mut()[i] = w + cfg.h;
        let plus = loss_fn(net)?;
        net.params_mut()[pi].tensor.values_mut()[i] = w - cfg.h;
        let minus = loss_fn(net)?;
        net.params_mut()[pi].tensor.values_mut()[i] = w;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(DiffnetError::NonFinite(format!(
                "loss near {}[{i}]",
                names[pi]
            )));
        }
        let d_plus = (plus - base) / cfg.h;
        let d_minus = (base - minus) / cfg.h;
        if is_kink(d_plus, d_minus) {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.h);
        let err = rel_err(analytic[pi][i], numeric, res_floor);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_param = Some((names[pi].clone(), i));
        }
    }
    report.pass = report.max_rel_err < cfg.tol;
    net.zero_grads();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{LayerSpec, NetworkSpec, Tensor};

    fn tiny_net(layers: Vec<LayerSpec>, seed: u64) -> Network {
        Network::new(NetworkSpec::new(layers).unwrap(), seed)
    }

    #[test]
    fn linear_loss_is_near_exact() {
        // loss = sum(c_i * w_i): central differences are exact for linear maps.
        let mut net = tiny_net(
            vec![LayerSpec::Conv1d {
                in_ch: 1,
                out_ch: 2,
                kernel: 2,
                stride: 1,
            }],
            7,
        );
        let coeffs: Vec<f64> = (0..net.param_count()).map(|i| 0.3 + i as f64).collect();
        let report = grad_check(
            &mut net,
            |net| {
                let mut loss = 0.0;
                let mut k = 0;
                for p in net.params_mut() {
                    for i in 0..p.tensor.len() {
                        loss += coeffs[k] * p.tensor.values()[i];
                        p.grad.values_mut()[i] += coeffs[k];
                        k += 1;
                    }
                }
                Ok(loss)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.skipped_kinks, 0);
        assert!(report.max_rel_err < 1e-10, "err = {}", report.max_rel_err);
    }

    #[test]
    fn relu_kink_is_skipped_not_failed() {
        let mut net = tiny_net(
            vec![LayerSpec::Conv1d {
                in_ch: 1,
                out_ch: 1,
                kernel: 1,
                stride: 1,
            }],
            0,
        );
        // Park the weight exactly on the ReLU kink; bias contributes smoothly.
        net.params_mut()[0].tensor.values_mut()[0] = 0.0;
        let report = grad_check(
            &mut net,
            |net| {
                // loss = relu(w) + 2*b with subgradient 1 chosen at w = 0
                let w = net.params()[0].tensor.values()[0];
                let b = net.params()[1].tensor.values()[0];
                net.params_mut()[0].grad.values_mut()[0] += if w >= 0.0 { 1.0 } else { 0.0 };
                net.params_mut()[1].grad.values_mut()[0] += 2.0;
                Ok(w.max(0.0) + 2.0 * b)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.skipped_kinks, 1);
        assert_eq!(report.checked, 1);
    }

    #[test]
    fn sub_resolution_gradient_is_not_failed_by_rounding_noise() {
        // loss = 10 + 1e-7*w moves by ~1e-12 across ±h, a few hundred ulps of
        // the loss value: the difference quotient is rounding-limited and the
        // naive relative error against |grad| ≈ 1e-7 would spuriously exceed
        // the tolerance even though the analytic gradient is exact.
        let mut net = tiny_net(
            vec![LayerSpec::Conv1d {
                in_ch: 1,
                out_ch: 1,
                kernel: 1,
                stride: 1,
            }],
            0,
        );
        let report = grad_check(
            &mut net,
            |net| {
                let w = net.params()[0].tensor.values()[0];
                net.params_mut()[0].grad.values_mut()[0] += 1e-7;
                Ok(10.0 + 1e-7 * w)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.pass, "report: {report:?}");
        assert_eq!(report.skipped_kinks, 0);
    }

    #[test]
    fn wrong_tiny_gradient_still_fails() {
        // Same sub-resolution setup, but the claimed gradient is 6e-7 against
        // a true 1e-7: the discrepancy exceeds what rounding can explain, so
        // the resolution floor must not absorb it.
        let mut net = tiny_net(
            vec![LayerSpec::Conv1d {
                in_ch: 1,
                out_ch: 1,
                kernel: 1,
                stride: 1,
            }],
            0,
        );
        let report = grad_check(
            &mut net,
            |net| {
                let w = net.params()[0].tensor.values()[0];
                net.params_mut()[0].grad.values_mut()[0] += 6e-7;
                Ok(10.0 + 1e-7 * w)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.pass, "report: {report:?}");
    }

    #[test]
    fn softmax_l1_at_equal_coordinates_is_a_kink() {
        // Weight row [0,0] puts softmax at [0.5,0.5]; an L1 target of exactly
        // [0.5,0.5] makes both weight coordinates kink points.
        let mut net = tiny_net(
            vec![
                LayerSpec::Conv1d {
                    in_ch: 1,
                    out_ch: 2,
                    kernel: 1,
                    stride: 1,
                },
                LayerSpec::SoftmaxRows,
            ],
            0,
        );
        for v in net.params_mut()[0].tensor.values_mut() {
            *v = 0.0;
        }
        let x = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let target = [0.5, 0.5];
        let report = grad_check(
            &mut net,
            |net| {
                let (y, tape) = net.forward(&x)?;
                let loss: f64 = y
                    .values()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| (p - t).abs())
                    .sum();
                let dy: Vec<f64> = y
                    .values()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| (p - t).signum())
                    .collect();
                let dy = Tensor::from_vec(y.shape(), dy)?;
                net.backward(&tape, &dy)?;
                Ok(loss)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.pass, "report: {report:?}");
        assert!(report.skipped_kinks >= 2, "report: {report:?}");
    }

    #[test]
    fn random_three_layer_net_passes() {
        let mut net = tiny_net(
            vec![
                LayerSpec::Conv1d {
                    in_ch: 2,
                    out_ch: 3,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Conv1d {
                    in_ch: 3,
                    out_ch: 2,
                    kernel: 2,
                    stride: 1,
                },
            ],
            11,
        );
        let x = Tensor::from_vec(&[5, 2], (0..10).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let report = grad_check(
            &mut net,
            |net| {
                let (y, tape) = net.forward(&x)?;
                let loss: f64 = y.values().iter().map(|v| v * v).sum();
                let dy = Tensor::from_vec(y.shape(), y.values().iter().map(|v| 2.0 * v).collect())?;
                net.backward(&tape, &dy)?;
                Ok(loss)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.pass, "report: {report:?}");
        assert!(report.max_rel_err < 1e-4);
        assert!(report.checked > 0);
    }

    #[test]
    fn subsample_caps_checked_coordinates() {
        let mut net = tiny_net(
            vec![LayerSpec::Conv1d {
                in_ch: 2,
                out_ch: 4,
                kernel: 3,
                stride: 1,
            }],
            3,
        );
        let x = Tensor::from_vec(&[4, 2], vec![0.25; 8]).unwrap();
        let cfg = GradCheckConfig {
            max_coords: Some(5),
            ..GradCheckConfig::default()
        };
        let report = grad_check(
            &mut net,
            |net| {
                let (y, tape) = net.forward(&x)?;
                let loss: f64 = y.values().iter().sum();
                let dy = Tensor::from_vec(y.shape(), vec![1.0; y.len()])?;
                net.backward(&tape, &dy)?;
                Ok(loss)
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(report.checked + report.skipped_kinks, 5);
    }
}
