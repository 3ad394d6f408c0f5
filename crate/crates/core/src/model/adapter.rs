use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numkern::{glu_backward_accum, glu_trace, matvec, outer_accum, GluTrace, Parameter, RngStream, Tensor2D};

/// Standard deviation of the gate matrix at warm start.
pub const GATE_INIT_STD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Glu,
    Linear,
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdapterKind::Glu => "glu",
            AdapterKind::Linear => "linear",
        })
    }
}

impl FromStr for AdapterKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "glu" => Ok(AdapterKind::Glu),
            "linear" => Ok(AdapterKind::Linear),
            other => Err(format!("unknown adapter kind `{other}`")),
        }
    }
}

/// Projection of one source activation into the matching target slot.
#[derive(Clone, Debug, PartialEq)]
pub enum Adapter {
    /// `(u1 · z) ⊙ σ(u2 · z)`
    Glu { u1: Parameter, u2: Parameter },
    /// `u · z`
    Linear { u: Parameter },
}

#[derive(Clone, Debug)]
pub enum AdapterTrace {
    Glu(GluTrace),
    Linear,
}

impl Adapter {
    /// Zero linear path; the gate is small Gaussian noise.
    pub fn warm(kind: AdapterKind, index: usize, outputs: usize, inputs: usize, rng: &mut RngStream) -> Adapter {
        match kind {
            AdapterKind::Glu => Adapter::Glu {
                u1: Parameter::zeros(format!("adapter.{index}.u1"), outputs, inputs),
                u2: Parameter::new(format!("adapter.{index}.u2"), rng.normal_tensor(outputs, inputs, GATE_INIT_STD)),
            },
            AdapterKind::Linear => Adapter::Linear {
                u: Parameter::zeros(format!("adapter.{index}.u"), outputs, inputs),
            },
        }
    }

    pub fn kind(&self) -> AdapterKind {
        match self {
            Adapter::Glu { .. } => AdapterKind::Glu,
            Adapter::Linear { .. } => AdapterKind::Linear,
        }
    }

    /// `(outputs, inputs)`.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Adapter::Glu { u1, .. } => u1.shape(),
            Adapter::Linear { u } => u.shape(),
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        match self {
            Adapter::Glu { u1, u2 } => vec![u1, u2],
            Adapter::Linear { u } => vec![u],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Adapter::Glu { u1, u2 } => vec![u1, u2],
            Adapter::Linear { u } => vec![u],
        }
    }

    pub fn forward(&self, z: &[f64]) -> (Vec<f64>, AdapterTrace) {
        match self {
            Adapter::Glu { u1, u2 } => {
                let t = glu_trace(&u1.value, &u2.value, z);
                (t.out.clone(), AdapterTrace::Glu(t))
            }
            Adapter::Linear { u } => (matvec(&u.value, z), AdapterTrace::Linear),
        }
    }

    /// Accumulates parameter gradients. The source input is frozen, so no input
    /// gradient is produced.
    pub fn backward(&mut self, z: &[f64], trace: &AdapterTrace, upstream: &[f64]) {
        match (self, trace) {
            (Adapter::Glu { u1, u2 }, AdapterTrace::Glu(t)) => {
                glu_backward_accum(&u1.value, &u2.value, z, t, upstream, 1.0, &mut u1.grad, &mut u2.grad, false);
            }
            (Adapter::Linear { u }, AdapterTrace::Linear) => outer_accum(&mut u.grad, upstream, z, 1.0),
            _ => unreachable!("trace kind always matches adapter kind"),
        }
    }
}

/// One adapter per tower level: index 0 maps the source embedding, index `l` maps the
/// output of source hidden layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterStack {
    pub kind: AdapterKind,
    pub layers: Vec<Adapter>,
}

impl AdapterStack {
    /// `dims[l] = (target_dim, source_dim)` for each level.
    pub fn warm(kind: AdapterKind, dims: &[(usize, usize)], rng: &mut RngStream) -> Self {
        AdapterStack {
            kind,
            layers: dims
                .iter()
                .enumerate()
                .map(|(l, &(o, i))| Adapter::warm(kind, l, o, i, rng))
                .collect(),
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(Adapter::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(Adapter::params_mut).collect()
    }

    /// Largest absolute entry of the linear paths (`u1` or `u`).
    pub fn max_linear_magnitude(&self) -> f64 {
        self.layers
            .iter()
            .map(|a| match a {
                Adapter::Glu { u1, .. } => &u1.value,
                Adapter::Linear { u } => &u.value,
            })
            .flat_map(|t: &Tensor2D| t.data().iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }
}
