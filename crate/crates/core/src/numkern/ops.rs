//! Activations, gated linear units, linear adapters and the logistic loss.

use super::tensor::{matvec, matvec_t_accum, outer_accum, Tensor2D};
use crate::error::KernelError;

pub fn relu(x: &Tensor2D) -> Tensor2D {
    x.map(relu_scalar)
}

#[inline]
pub fn relu_scalar(x: f64) -> f64 {
    // Written as a branch so that -0.0 and NaN-free inputs map to +0.0.
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Passes `upstream` where `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward(x: &Tensor2D, upstream: &Tensor2D) -> Result<Tensor2D, KernelError> {
    if x.shape() != upstream.shape() {
        return Err(KernelError::dims("relu_backward", x.shape(), upstream.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
        .collect();
    Tensor2D::from_vec(x.rows(), x.cols(), data)
}

/// Logistic function, branching on sign so neither tail overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_column(op: &'static str, z: &Tensor2D) -> Result<(), KernelError> {
    if z.cols() != 1 {
        return Err(KernelError::dims(op, z.shape(), (z.rows(), 1)));
    }
    Ok(())
}

fn check_glu_shapes(u1: &Tensor2D, u2: &Tensor2D, z: &Tensor2D) -> Result<(), KernelError> {
    check_column("glu", z)?;
    if u1.shape() != u2.shape() {
        return Err(KernelError::dims("glu", u1.shape(), u2.shape()));
    }
    if u1.cols() != z.rows() {
        return Err(KernelError::dims("glu", u1.shape(), z.shape()));
    }
    Ok(())
}

/// Intermediate values of a GLU evaluation, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GluTrace {
    /// Linear path `u1 · z`.
    pub linear: Vec<f64>,
    /// Gate `σ(u2 · z)`.
    pub gate: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn glu_trace(u1: &Tensor2D, u2: &Tensor2D, z: &[f64]) -> GluTrace {
    let linear = matvec(u1, z);
    let gate: Vec<f64> = matvec(u2, z).into_iter().map(sigmoid).collect();
    let out = linear.iter().zip(&gate).map(|(a, s)| a * s).collect();
    GluTrace { linear, gate, out }
}

/// Accumulates `scale`-weighted GLU parameter gradients and returns the gradient w.r.t. `z`
/// when `want_input` is set.
pub fn glu_backward_accum(
    u1: &Tensor2D,
    u2: &Tensor2D,
    z: &[f64],
    trace: &GluTrace,
    upstream: &[f64],
    scale: f64,
    grad_u1: &mut Tensor2D,
    grad_u2: &mut Tensor2D,
    want_input: bool,
) -> Option<Vec<f64>> {
    let d_linear: Vec<f64> = upstream.iter().zip(&trace.gate).map(|(d, s)| d * s).collect();
    let d_pre_gate: Vec<f64> = upstream
        .iter()
        .zip(&trace.linear)
        .zip(&trace.gate)
        .map(|((d, a), s)| d * a * s * (1.0 - s))
        .collect();
    outer_accum(grad_u1, &d_linear, z, scale);
    outer_accum(grad_u2, &d_pre_gate, z, scale);
    if want_input {
        let mut dz = vec![0.0; z.len()];
        matvec_t_accum(u1, &d_linear, &mut dz);
        matvec_t_accum(u2, &d_pre_gate, &mut dz);
        Some(dz)
    } else {
        None
    }
}

/// `(u1 · z) ⊙ σ(u2 · z)` for a column `z`.
pub fn glu_forward(u1: &Tensor2D, u2: &Tensor2D, z: &Tensor2D) -> Result<Tensor2D, KernelError> {
    check_glu_shapes(u1, u2, z)?;
    Ok(Tensor2D::column(&glu_trace(u1, u2, z.data()).out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GluGrads {
    pub u1: Tensor2D,
    pub u2: Tensor2D,
    pub z: Tensor2D,
}

pub fn glu_backward(
    u1: &Tensor2D,
    u2: &Tensor2D,
    z: &Tensor2D,
    upstream: &Tensor2D,
) -> Result<GluGrads, KernelError> {
    check_glu_shapes(u1, u2, z)?;
    check_column("glu_backward", upstream)?;
    if upstream.rows() != u1.rows() {
        return Err(KernelError::dims("glu_backward", u1.shape(), upstream.shape()));
    }
    let trace = glu_trace(u1, u2, z.data());
    let mut g1 = Tensor2D::zeros(u1.rows(), u1.cols());
    let mut g2 = Tensor2D::zeros(u2.rows(), u2.cols());
    let dz = glu_backward_accum(u1, u2, z.data(), &trace, upstream.data(), 1.0, &mut g1, &mut g2, true)
        .expect("input gradient requested");
    Ok(GluGrads {
        u1: g1,
        u2: g2,
        z: Tensor2D::column(&dz),
    })
}

pub fn linear_adapter_forward(u: &Tensor2D, z: &Tensor2D) -> Result<Tensor2D, KernelError> {
    check_column("linear_adapter", z)?;
    if u.cols() != z.rows() {
        return Err(KernelError::dims("linear_adapter", u.shape(), z.shape()));
    }
    Ok(Tensor2D::column(&matvec(u, z.data())))
}

/// Returns `(grad_u, grad_z)`.
pub fn linear_adapter_backward(
    u: &Tensor2D,
    z: &Tensor2D,
    upstream: &Tensor2D,
) -> Result<(Tensor2D, Tensor2D), KernelError> {
    check_column("linear_adapter_backward", z)?;
    check_column("linear_adapter_backward", upstream)?;
    if u.cols() != z.rows() || u.rows() != upstream.rows() {
        return Err(KernelError::dims("linear_adapter_backward", u.shape(), z.shape()));
    }
    let mut gu = Tensor2D::zeros(u.rows(), u.cols());
    outer_accum(&mut gu, upstream.data(), z.data(), 1.0);
    let mut gz = vec![0.0; z.rows()];
    matvec_t_accum(u, upstream.data(), &mut gz);
    Ok((gu, Tensor2D::column(&gz)))
}

/// Binary cross-entropy on a logit: returns `(loss, dloss/dlogit)`.
#[inline]
pub fn bce_with_logits(logit: f64, label: u8) -> (f64, f64) {
    let y = f64::from(label);
    // log(1 + exp(x)) = max(x, 0) + log1p(exp(-|x|))
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    (softplus - y * logit, sigmoid(logit) - y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkern::RngStream;

    fn central_diff(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn relu_values_and_backward() {
        let x = Tensor2D::column(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let up = Tensor2D::column(&[1.0, 1.0, 1.0]);
        assert_eq!(relu_backward(&x, &up).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_gradient_matches_finite_differences_away_from_kink() {
        let mut rng = RngStream::new(5);
        for _ in 0..100 {
            let x = rng.uniform(-3.0, 3.0);
            if x.abs() < 1e-4 {
                continue;
            }
            let up = Tensor2D::column(&[1.0]);
            let analytic = relu_backward(&Tensor2D::column(&[x]), &up).unwrap().data()[0];
            let numeric = central_diff(&relu_scalar, x, 1e-6);
            assert!((analytic - numeric).abs() <= 1e-6 * numeric.abs().max(1.0));
        }
    }

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        let mut rng = RngStream::new(9);
        for _ in 0..100 {
            let x = rng.uniform(-50.0, 50.0);
            assert!((sigmoid(x) - (1.0 - sigmoid(-x))).abs() < 1e-15);
        }
        // exp(-100) = 3.720075976020836e-44
        let tail = sigmoid(-100.0);
        assert!(tail > 0.0 && tail <= 1e-40);
        assert!((tail - 3.720075976020836e-44).abs() / 3.72e-44 < 1e-12);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0).is_finite());
    }

    #[test]
    fn glu_zero_linear_path_is_exact_zero() {
        let mut rng = RngStream::new(1);
        let u1 = Tensor2D::zeros(3, 4);
        let u2 = rng.uniform_tensor(3, 4, -5.0, 5.0);
        let z = rng.uniform_tensor(4, 1, -5.0, 5.0);
        let out = glu_forward(&u1, &u2, &z).unwrap();
        assert!(out.data().iter().all(|v| v.to_bits() == 0.0f64.to_bits()));
    }

    #[test]
    fn glu_half_gate() {
        let out = glu_forward(
            &Tensor2D::identity(2),
            &Tensor2D::zeros(2, 2),
            &Tensor2D::column(&[2.0, -4.0]),
        )
        .unwrap();
        assert_eq!(out.data(), &[1.0, -2.0]);
    }

    #[test]
    fn glu_matches_scalar_oracle() {
        let mut rng = RngStream::new(21);
        let u1 = rng.uniform_tensor(3, 2, -1.0, 1.0);
        let u2 = rng.uniform_tensor(3, 2, -1.0, 1.0);
        let z = rng.uniform_tensor(2, 1, -1.0, 1.0);
        let out = glu_forward(&u1, &u2, &z).unwrap();
        for i in 0..3 {
            let a = u1.get(i, 0) * z.get(0, 0) + u1.get(i, 1) * z.get(1, 0);
            let b = u2.get(i, 0) * z.get(0, 0) + u2.get(i, 1) * z.get(1, 0);
            let want = a / (1.0 + (-b).exp());
            assert!((out.get(i, 0) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn glu_rejects_mismatched_shapes() {
        let r = glu_forward(&Tensor2D::zeros(2, 3), &Tensor2D::zeros(2, 2), &Tensor2D::zeros(3, 1));
        assert!(r.is_err());
        let r = glu_forward(&Tensor2D::zeros(2, 3), &Tensor2D::zeros(2, 3), &Tensor2D::zeros(2, 1));
        assert!(r.is_err());
    }

    /// Scalar loss `Σ upstream ⊙ glu(u1, u2, z)`, differentiated numerically.
    fn glu_fd_check(u1: &Tensor2D, u2: &Tensor2D, z: &Tensor2D, up: &Tensor2D) -> f64 {
        let loss = |u1: &Tensor2D, u2: &Tensor2D, z: &Tensor2D| -> f64 {
            let out = glu_forward(u1, u2, z).unwrap();
            out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let g = glu_backward(u1, u2, z, up).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (which, analytic) in [(0, &g.u1), (1, &g.u2), (2, &g.z)] {
            let n = analytic.data().len();
            for k in 0..n {
                let (mut a1, mut a2, mut az) = (u1.clone(), u2.clone(), z.clone());
                let (mut b1, mut b2, mut bz) = (u1.clone(), u2.clone(), z.clone());
                let (pa, pb) = match which {
                    0 => (&mut a1, &mut b1),
                    1 => (&mut a2, &mut b2),
                    _ => (&mut az, &mut bz),
                };
                pa.data_mut()[k] += h;
                pb.data_mut()[k] -= h;
                let numeric = (loss(&a1, &a2, &az) - loss(&b1, &b2, &bz)) / (2.0 * h);
                worst = worst.max(rel_err(analytic.data()[k], numeric));
            }
        }
        worst
    }

    #[test]
    fn glu_backward_matches_finite_differences() {
        let mut rng = RngStream::new(77);
        for _ in 0..20 {
            let u1 = rng.uniform_tensor(4, 3, -1.0, 1.0);
            let u2 = rng.uniform_tensor(4, 3, -1.0, 1.0);
            let z = rng.uniform_tensor(3, 1, -1.0, 1.0);
            let up = rng.uniform_tensor(4, 1, -1.0, 1.0);
            let err = glu_fd_check(&u1, &u2, &z, &up);
            assert!(err < 1e-5, "max rel err {err}");
        }
    }

    #[test]
    fn glu_backward_with_zero_linear_path() {
        let mut rng = RngStream::new(4);
        let u1 = Tensor2D::zeros(3, 2);
        let u2 = rng.uniform_tensor(3, 2, -1.0, 1.0);
        let z = rng.uniform_tensor(2, 1, -1.0, 1.0);
        let up = rng.uniform_tensor(3, 1, -1.0, 1.0);
        let g = glu_backward(&u1, &u2, &z, &up).unwrap();
        assert!(g.u2.data().iter().all(|&v| v == 0.0));
        assert!(g.z.data().iter().all(|&v| v == 0.0));
        assert!(g.u1.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn glu_backward_zero_upstream() {
        let mut rng = RngStream::new(8);
        let u1 = rng.uniform_tensor(3, 2, -1.0, 1.0);
        let u2 = rng.uniform_tensor(3, 2, -1.0, 1.0);
        let z = rng.uniform_tensor(2, 1, -1.0, 1.0);
        let g = glu_backward(&u1, &u2, &z, &Tensor2D::zeros(3, 1)).unwrap();
        for t in [&g.u1, &g.u2, &g.z] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_adapter_cases() {
        let z = Tensor2D::column(&[1.5, -2.0, 0.25]);
        let zero = linear_adapter_forward(&Tensor2D::zeros(2, 3), &z).unwrap();
        assert_eq!(zero.data(), &[0.0, 0.0]);
        assert_eq!(linear_adapter_forward(&Tensor2D::identity(3), &z).unwrap(), z);

        let mut rng = RngStream::new(13);
        let u = rng.uniform_tensor(2, 3, -1.0, 1.0);
        let up = rng.uniform_tensor(2, 1, -1.0, 1.0);
        let (gu, gz) = linear_adapter_backward(&u, &z, &up).unwrap();
        let loss = |u: &Tensor2D, z: &Tensor2D| -> f64 {
            linear_adapter_forward(u, z)
                .unwrap()
                .data()
                .iter()
                .zip(up.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-5;
        for k in 0..6 {
            let (mut a, mut b) = (u.clone(), u.clone());
            a.data_mut()[k] += h;
            b.data_mut()[k] -= h;
            let numeric = (loss(&a, &z) - loss(&b, &z)) / (2.0 * h);
            assert!(rel_err(gu.data()[k], numeric) < 1e-6);
        }
        for k in 0..3 {
            let (mut a, mut b) = (z.clone(), z.clone());
            a.data_mut()[k] += h;
            b.data_mut()[k] -= h;
            let numeric = (loss(&u, &a) - loss(&u, &b)) / (2.0 * h);
            assert!(rel_err(gz.data()[k], numeric) < 1e-6);
        }
    }

    #[test]
    fn bce_reference_values() {
        let ln2 = std::f64::consts::LN_2;
        let (l, g) = bce_with_logits(0.0, 1);
        assert!((l - ln2).abs() < 1e-15);
        assert_eq!(g, -0.5);
        let (l, g) = bce_with_logits(0.0, 0);
        assert!((l - ln2).abs() < 1e-15);
        assert_eq!(g, 0.5);
        // ln(1 + e^-3) = 0.04858735157374206
        let (l, _) = bce_with_logits(3.0, 1);
        assert!((l - 0.048_587_351_573_742_06).abs() < 1e-14);
        let (l, g) = bce_with_logits(-800.0, 1);
        assert!(l.is_finite() && g.is_finite());
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(17);
        for _ in 0..100 {
            let x = rng.uniform(-10.0, 10.0);
            for label in [0u8, 1] {
                let numeric = central_diff(&|v| bce_with_logits(v, label).0, x, 1e-5);
                let analytic = bce_with_logits(x, label).1;
                assert!(rel_err(analytic, numeric) < 1e-4);
            }
        }
    }
}
