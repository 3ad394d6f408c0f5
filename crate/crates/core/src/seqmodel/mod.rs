//! Multi-head scaled dot-product target attention over a user's behavior sequence.
//!
//! For head `h` the query is projected from the candidate item, keys and values from
//! the behaviors; the head output is the softmax-weighted sum of values over the
//! valid (unmasked) positions. An empty or fully masked sequence yields zeros.

use crate::error::KernelError;
use crate::numkern::{matvec, matvec_t_accum, outer_accum, Parameter, RngStream, Tensor2D};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub head_dim: usize,
    pub wq: Parameter,
    pub wk: Parameter,
    pub wv: Parameter,
}

/// Forward intermediates over the valid positions only.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    pub query: Vec<f64>,
    pub valid: Vec<usize>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    /// `weights[h][j]` over `valid`.
    pub weights: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGrads {
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub target: Vec<f64>,
    /// One gradient per behavior position, zero at masked positions.
    pub behaviors: Vec<Vec<f64>>,
}

impl AttentionParams {
    pub fn new(heads: usize, head_dim: usize, input_dim: usize, prefix: &str, rng: &mut RngStream) -> Self {
        let out = heads * head_dim;
        let std = 1.0 / (input_dim as f64).sqrt();
        AttentionParams {
            heads,
            head_dim,
            wq: Parameter::new(format!("{prefix}.wq"), rng.normal_tensor(out, input_dim, std)),
            wk: Parameter::new(format!("{prefix}.wk"), rng.normal_tensor(out, input_dim, std)),
            wv: Parameter::new(format!("{prefix}.wv"), rng.normal_tensor(out, input_dim, std)),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn input_dim(&self) -> usize {
        self.wq.value.cols()
    }

    pub fn params(&self) -> [&Parameter; 3] {
        [&self.wq, &self.wk, &self.wv]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 3] {
        [&mut self.wq, &mut self.wk, &mut self.wv]
    }

    fn check(&self, target: &[f64], behaviors: &[&[f64]], mask: &[bool]) -> Result<(), KernelError> {
        let d = self.input_dim();
        if target.len() != d {
            return Err(KernelError::dims("target_attention", self.wq.shape(), (target.len(), 1)));
        }
        if mask.len() != behaviors.len() {
            return Err(KernelError::dims("target_attention", (behaviors.len(), 1), (mask.len(), 1)));
        }
        if let Some(b) = behaviors.iter().find(|b| b.len() != d) {
            return Err(KernelError::dims("target_attention", self.wk.shape(), (b.len(), 1)));
        }
        Ok(())
    }

    pub fn forward(&self, target: &[f64], behaviors: &[&[f64]], mask: &[bool]) -> Result<AttentionTrace, KernelError> {
        self.check(target, behaviors, mask)?;
        let out_dim = self.output_dim();
        let valid: Vec<usize> = (0..behaviors.len()).filter(|&j| mask[j]).collect();
        if valid.is_empty() {
            return Ok(AttentionTrace {
                query: vec![0.0; out_dim],
                valid,
                keys: vec![],
                values: vec![],
                weights: vec![vec![]; self.heads],
                out: vec![0.0; out_dim],
            });
        }
        let query = matvec(&self.wq.value, target);
        let keys: Vec<Vec<f64>> = valid.iter().map(|&j| matvec(&self.wk.value, behaviors[j])).collect();
        let values: Vec<Vec<f64>> = valid.iter().map(|&j| matvec(&self.wv.value, behaviors[j])).collect();
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut out = vec![0.0; out_dim];
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let r = h * self.head_dim..(h + 1) * self.head_dim;
            let q = &query[r.clone()];
            let scores: Vec<f64> = keys
                .iter()
                .map(|k| q.iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let alpha: Vec<f64> = exps.iter().map(|e| e / total).collect();
            let head_out = &mut out[r.clone()];
            for (a, v) in alpha.iter().zip(&values) {
                for (o, x) in head_out.iter_mut().zip(&v[r.clone()]) {
                    *o += a * x;
                }
            }
            weights.push(alpha);
        }
        Ok(AttentionTrace {
            query,
            valid,
            keys,
            values,
            weights,
            out,
        })
    }

    /// Accumulates `scale`-weighted projection gradients into the parameters' `grad`
    /// buffers and returns `(d_target, d_behaviors)`; masked behaviors get zeros.
    pub fn backward_into(
        &mut self,
        target: &[f64],
        behaviors: &[&[f64]],
        trace: &AttentionTrace,
        upstream: &[f64],
        scale: f64,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (heads, head_dim) = (self.heads, self.head_dim);
        let AttentionParams { wq, wk, wv, .. } = self;
        backward_core(
            heads,
            head_dim,
            (&wq.value, &wk.value, &wv.value),
            (&mut wq.grad, &mut wk.grad, &mut wv.grad),
            target,
            behaviors,
            trace,
            upstream,
            scale,
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_core(
    heads: usize,
    head_dim: usize,
    (wq, wk, wv): (&Tensor2D, &Tensor2D, &Tensor2D),
    (gq, gk, gv): (&mut Tensor2D, &mut Tensor2D, &mut Tensor2D),
    target: &[f64],
    behaviors: &[&[f64]],
    trace: &AttentionTrace,
    upstream: &[f64],
    scale: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = target.len();
    let mut d_target = vec![0.0; d];
    let mut d_behaviors = vec![vec![0.0; d]; behaviors.len()];
    if trace.valid.is_empty() {
        return (d_target, d_behaviors);
    }
    let out_dim = heads * head_dim;
    let n = trace.valid.len();
    let inv = 1.0 / (head_dim as f64).sqrt();
    let mut d_query = vec![0.0; out_dim];
    let mut d_keys = vec![vec![0.0; out_dim]; n];
    let mut d_values = vec![vec![0.0; out_dim]; n];
    for h in 0..heads {
        let r = h * head_dim..(h + 1) * head_dim;
        let up = &upstream[r.clone()];
        let alpha = &trace.weights[h];
        // dα_j = up · v_j ; ds_j = α_j (dα_j − Σ_k α_k dα_k)
        let d_alpha: Vec<f64> = trace
            .values
            .iter()
            .map(|v| up.iter().zip(&v[r.clone()]).map(|(a, b)| a * b).sum())
            .collect();
        let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, b)| a * b).sum();
        let q = &trace.query[r.clone()];
        for j in 0..n {
            let ds = alpha[j] * (d_alpha[j] - mean) * inv;
            for (k, idx) in r.clone().enumerate() {
                d_values[j][idx] += alpha[j] * up[k];
                d_query[idx] += ds * trace.keys[j][idx];
                d_keys[j][idx] += ds * q[k];
            }
        }
    }
    outer_accum(gq, &d_query, target, scale);
    matvec_t_accum(wq, &d_query, &mut d_target);
    for (j, &pos) in trace.valid.iter().enumerate() {
        outer_accum(gk, &d_keys[j], behaviors[pos], scale);
        outer_accum(gv, &d_values[j], behaviors[pos], scale);
        matvec_t_accum(wk, &d_keys[j], &mut d_behaviors[pos]);
        matvec_t_accum(wv, &d_values[j], &mut d_behaviors[pos]);
    }
    (d_target, d_behaviors)
}

/// Attention output `e_TA` for one candidate item.
pub fn target_attention(
    params: &AttentionParams,
    target: &[f64],
    behaviors: &[&[f64]],
    mask: &[bool],
) -> Result<Vec<f64>, KernelError> {
    Ok(params.forward(target, behaviors, mask)?.out)
}

/// Gradients of `upstream · e_TA` w.r.t. the projections and all inputs.
pub fn target_attention_backward(
    params: &AttentionParams,
    target: &[f64],
    behaviors: &[&[f64]],
    mask: &[bool],
    upstream: &[f64],
) -> Result<AttentionGrads, KernelError> {
    let trace = params.forward(target, behaviors, mask)?;
    if upstream.len() != params.output_dim() {
        return Err(KernelError::dims(
            "target_attention_backward",
            (params.output_dim(), 1),
            (upstream.len(), 1),
        ));
    }
    let (r, c) = params.wq.shape();
    let (mut gq, mut gk, mut gv) = (Tensor2D::zeros(r, c), Tensor2D::zeros(r, c), Tensor2D::zeros(r, c));
    let (dt, db) = backward_core(
        params.heads,
        params.head_dim,
        (&params.wq.value, &params.wk.value, &params.wv.value),
        (&mut gq, &mut gk, &mut gv),
        target,
        behaviors,
        &trace,
        upstream,
        1.0,
    );
    Ok(AttentionGrads {
        wq: gq,
        wk: gk,
        wv: gv,
        target: dt,
        behaviors: db,
    })
}
