//! Central finite-difference verification of analytic gradients.

use super::param::Parameter;
use crate::error::KernelError;

/// Finite-difference step on double precision.
pub const FD_STEP: f64 = 1e-5;

/// A deterministic scalar objective over a fixed set of parameters.
pub trait Differentiable {
    fn param_count(&self) -> usize;
    fn param(&self, index: usize) -> &Parameter;
    fn param_mut(&mut self, index: usize) -> &mut Parameter;
    /// Objective value at the current parameters.
    fn loss(&self) -> Result<f64, KernelError>;
    /// Clears and repopulates every trainable parameter's `grad`; returns the loss.
    fn compute_grads(&mut self) -> Result<f64, KernelError>;
    /// Name used for parameter `index` in reports.
    fn param_label(&self, index: usize) -> String {
        self.param(index).name.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupStatus {
    Checked { max_rel_error: f64, entries: usize },
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub status: GroupStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups
            .iter()
            .filter_map(|g| match g.status {
                GroupStatus::Checked { max_rel_error, .. } => Some(max_rel_error),
                GroupStatus::Skipped => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.name == name)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for g in &self.groups {
            match g.status {
                GroupStatus::Checked { max_rel_error, entries } => {
                    writeln!(f, "{:<28} {:>6} entries  max rel err {:.3e}", g.name, entries, max_rel_error)?
                }
                GroupStatus::Skipped => writeln!(f, "{:<28} skipped (frozen)", g.name)?,
            }
        }
        write!(
            f,
            "overall max rel err {:.3e} (tolerance {:.0e}): {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Relative error with an absolute floor so that vanishing gradients compare on an
/// absolute scale instead of amplifying round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

pub fn grad_check<M: Differentiable + ?Sized>(model: &mut M, tolerance: f64) -> Result<GradCheckReport, KernelError> {
    model.compute_grads()?;
    let analytic: Vec<Option<Vec<f64>>> = (0..model.param_count())
        .map(|i| {
            let p = model.param(i);
            p.trainable.then(|| p.grad.data().to_vec())
        })
        .collect();

    let mut groups = Vec::with_capacity(analytic.len());
    for (i, grads) in analytic.into_iter().enumerate() {
        let name = model.param_label(i);
        let Some(grads) = grads else {
            groups.push(GroupReport {
                name,
                status: GroupStatus::Skipped,
            });
            continue;
        };
        let mut worst = 0.0f64;
        for (k, &g) in grads.iter().enumerate() {
            let original = model.param(i).value.data()[k];
            model.param_mut(i).value.data_mut()[k] = original + FD_STEP;
            let plus = model.loss()?;
            model.param_mut(i).value.data_mut()[k] = original - FD_STEP;
            let minus = model.loss()?;
            model.param_mut(i).value.data_mut()[k] = original;
            if !plus.is_finite() || !minus.is_finite() || !g.is_finite() {
                return Err(KernelError::NonFinite { name, index: k });
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(g, numeric));
        }
        groups.push(GroupReport {
            name,
            status: GroupStatus::Checked {
                max_rel_error: worst,
                entries: grads.len(),
            },
        });
    }
    for i in 0..model.param_count() {
        model.param_mut(i).zero_grad();
    }
    Ok(GradCheckReport { groups, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkern::{bce_with_logits, glu_backward_accum, glu_trace, RngStream, Tensor2D};

    /// Logistic regression `σ(w·x + b)` with mean BCE over a fixed sample.
    struct LinearBce {
        params: Vec<Parameter>,
        xs: Vec<Vec<f64>>,
        ys: Vec<u8>,
    }

    impl Differentiable for LinearBce {
        fn param_count(&self) -> usize {
            self.params.len()
        }
        fn param(&self, i: usize) -> &Parameter {
            &self.params[i]
        }
        fn param_mut(&mut self, i: usize) -> &mut Parameter {
            &mut self.params[i]
        }
        fn loss(&self) -> Result<f64, KernelError> {
            let w = self.params[0].value.data();
            let b = self.params[1].value.data()[0];
            let n = self.xs.len() as f64;
            Ok(self
                .xs
                .iter()
                .zip(&self.ys)
                .map(|(x, &y)| {
                    let logit: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
                    bce_with_logits(logit, y).0
                })
                .sum::<f64>()
                / n)
        }
        fn compute_grads(&mut self) -> Result<f64, KernelError> {
            let n = self.xs.len() as f64;
            let mut total = 0.0;
            self.params.iter_mut().for_each(|p| p.zero_grad());
            for (x, &y) in self.xs.iter().zip(&self.ys) {
                let w = self.params[0].value.data();
                let logit: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.params[1].value.data()[0];
                let (l, d) = bce_with_logits(logit, y);
                total += l;
                for (g, xv) in self.params[0].grad.data_mut().iter_mut().zip(x) {
                    *g += d * xv / n;
                }
                self.params[1].grad.data_mut()[0] += d / n;
            }
            Ok(total / n)
        }
    }

    fn linear_bce(frozen_bias: bool) -> LinearBce {
        let mut rng = RngStream::new(99);
        let mut bias = Parameter::new("b", Tensor2D::column(&[0.1]));
        bias.trainable = !frozen_bias;
        LinearBce {
            params: vec![Parameter::new("w", rng.uniform_tensor(1, 5, -1.0, 1.0)), bias],
            xs: (0..8).map(|_| (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect(),
            ys: (0..8).map(|i| (i % 3 == 0) as u8).collect(),
        }
    }

    #[test]
    fn linear_layer_with_bce() {
        let mut m = linear_bce(false);
        let report = grad_check(&mut m, 1e-5).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.groups.len(), 2);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut m = linear_bce(true);
        let report = grad_check(&mut m, 1e-5).unwrap();
        assert_eq!(report.group("b").unwrap().status, GroupStatus::Skipped);
        assert!(report.to_string().contains("skipped"));
    }

    /// Loss `Σ c ⊙ glu(u1, u2, z)` with z also trainable.
    struct GluProbe {
        params: Vec<Parameter>,
        c: Vec<f64>,
    }

    impl Differentiable for GluProbe {
        fn param_count(&self) -> usize {
            3
        }
        fn param(&self, i: usize) -> &Parameter {
            &self.params[i]
        }
        fn param_mut(&mut self, i: usize) -> &mut Parameter {
            &mut self.params[i]
        }
        fn loss(&self) -> Result<f64, KernelError> {
            let t = glu_trace(&self.params[0].value, &self.params[1].value, self.params[2].value.data());
            Ok(t.out.iter().zip(&self.c).map(|(a, b)| a * b).sum())
        }
        fn compute_grads(&mut self) -> Result<f64, KernelError> {
            let z = self.params[2].value.data().to_vec();
            let t = glu_trace(&self.params[0].value, &self.params[1].value, &z);
            let (u, rest) = self.params.split_at_mut(2);
            let (u1, u2) = u.split_at_mut(1);
            u1[0].zero_grad();
            u2[0].zero_grad();
            let dz = glu_backward_accum(
                &u1[0].value,
                &u2[0].value,
                &z,
                &t,
                &self.c,
                1.0,
                &mut u1[0].grad,
                &mut u2[0].grad,
                true,
            )
            .unwrap();
            rest[0].grad = Tensor2D::column(&dz);
            Ok(t.out.iter().zip(&self.c).map(|(a, b)| a * b).sum())
        }
    }

    #[test]
    fn glu_adapter_in_isolation() {
        let mut rng = RngStream::new(123);
        let mut probe = GluProbe {
            params: vec![
                Parameter::new("u1", rng.uniform_tensor(4, 3, -1.0, 1.0)),
                Parameter::new("u2", rng.uniform_tensor(4, 3, -1.0, 1.0)),
                Parameter::new("z", rng.uniform_tensor(3, 1, -1.0, 1.0)),
            ],
            c: (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        };
        let report = grad_check(&mut probe, 1e-5).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn non_finite_loss_is_reported_with_name() {
        let mut m = linear_bce(false);
        m.params[0].value.data_mut()[0] = f64::NAN;
        let err = grad_check(&mut m, 1e-5).unwrap_err();
        assert!(matches!(err, KernelError::NonFinite { ref name, .. } if name == "w"));
    }
}
