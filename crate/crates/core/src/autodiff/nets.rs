use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};
use crate::numerics::{ComplexImage, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// `x + body(x)` on the 2-channel (real, imag) image.
    Denoiser,
    /// `body([c_in * z, log sigma]) / sigma`.
    Score,
}

/// A plain stack of same-padded convolutions with ReLU between layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: NetKind,
    /// Channel count at each layer boundary, input first.
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Architecture {
    pub fn default_denoiser() -> Self {
        Self { kind: NetKind::Denoiser, channels: vec![2, 16, 16, 16, 2], kernel: 3 }
    }

    pub fn default_score() -> Self {
        Self { kind: NetKind::Score, channels: vec![3, 32, 32, 32, 32, 2], kernel: 3 }
    }

    pub fn layers(&self) -> usize {
        self.channels.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let input = match self.kind {
            NetKind::Denoiser => 2,
            NetKind::Score => 3,
        };
        if self.channels.len() < 2 {
            return invalid("architecture needs at least one layer");
        }
        if self.channels[0] != input || *self.channels.last().unwrap() != 2 {
            return invalid(format!(
                "{:?} nets map {input} channels to 2, got {:?}",
                self.kind, self.channels
            ));
        }
        if self.kernel % 2 == 0 || self.channels.contains(&0) {
            return invalid("kernel must be odd and channel counts positive");
        }
        Ok(())
    }

    /// Names and shapes of every parameter tensor, in order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel;
        let mut out = Vec::new();
        for (i, pair) in self.channels.windows(2).enumerate() {
            out.push((format!("conv{i}.weight"), vec![pair[1], pair[0], k, k]));
            out.push((format!("conv{i}.bias"), vec![pair[1]]));
        }
        out
    }
}

/// Parameter tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl NetworkParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (names, tensors) = arch
            .parameter_shapes()
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(s)))
            .unzip();
        Ok(Self { arch, names, tensors })
    }

    /// He-normal weights, zero biases; the last layer is scaled down so a
    /// fresh network starts close to its skip path.
    pub fn init(arch: Architecture, stream: &mut RngStream) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let layers = p.arch.layers();
        for l in 0..layers {
            let w = &mut p.tensors[2 * l];
            let fan_in: usize = w.shape()[1..].iter().product();
            let mut std = (2.0 / fan_in as f64).sqrt();
            if l + 1 == layers {
                std *= 0.1;
            }
            for v in w.data_mut() {
                *v = std * stream.gaussian();
            }
        }
        Ok(p)
    }

    pub fn from_tensors(arch: Architecture, named: Vec<(String, Tensor)>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.parameter_shapes();
        if shapes.len() != named.len() {
            return Err(Error::DimensionMismatch(format!(
                "architecture has {} tensors, got {}",
                shapes.len(),
                named.len()
            )));
        }
        for ((name, shape), (n, t)) in shapes.iter().zip(&named) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "expected {name} {shape:?}, got {n} {:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return invalid(format!("non-finite entries in {n}"));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { arch, names, tensors })
    }

    /// All parameters concatenated in declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Same architecture with parameters taken from `flat` (as produced by
    /// [`NetworkParams::to_flat`]).
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut off = 0;
        let mut named = Vec::with_capacity(self.tensors.len());
        for (n, t) in self.names.iter().zip(&self.tensors) {
            named.push((n.clone(), Tensor::new(t.shape().to_vec(), flat[off..off + t.len()].to_vec())?));
            off += t.len();
        }
        Self::from_tensors(self.arch.clone(), named)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records the parameters as leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundParams> {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.variable(t.clone()) } else { tape.constant(t.clone()) })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { arch: self.arch.clone(), vars })
    }

    /// Inference-only denoiser pass.
    pub fn denoise(&self, x: &ComplexImage) -> Result<ComplexImage> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false)?;
        let xv = tape.constant(Tensor::from_image(x))?;
        let out = denoiser_forward(&mut tape, &p, xv)?;
        tape.value(out).to_image()
    }

    /// Inference-only score evaluation.
    pub fn score(&self, z: &ComplexImage, sigma: f64) -> Result<ComplexImage> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false)?;
        let zv = tape.constant(Tensor::from_image(z))?;
        let out = score_forward(&mut tape, &p, zv, sigma)?;
        tape.value(out).to_image()
    }
}

/// Parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    arch: Architecture,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }
}

fn body(tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
    let layers = p.arch.layers();
    let mut h = x;
    for l in 0..layers {
        h = tape.conv2d(h, p.vars[2 * l], p.vars[2 * l + 1])?;
        if l + 1 < layers {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// `x + body(x)` for a planar `[2, h, w]` image.
pub fn denoiser_forward(tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
    if p.arch.kind != NetKind::Denoiser {
        return invalid("denoiser_forward needs denoiser parameters");
    }
    let shape = tape.value(x).shape();
    if shape.len() != 3 || shape[0] != 2 {
        return Err(Error::DimensionMismatch(format!("denoiser input {shape:?}")));
    }
    let r = body(tape, p, x)?;
    tape.add(x, r)
}

/// Input scaling applied before the score body so that its activations
/// stay O(1) across the noise range.
pub fn score_input_scale(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma).sqrt()
}

/// `body([c_in(sigma) * z, log sigma]) / sigma`.
pub fn score_forward(tape: &mut Tape, p: &BoundParams, z: Var, sigma: f64) -> Result<Var> {
    if p.arch.kind != NetKind::Score {
        return invalid("score_forward needs score parameters");
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return invalid(format!("sigma must be positive, got {sigma}"));
    }
    let shape = tape.value(z).shape().to_vec();
    if shape.len() != 3 || shape[0] != 2 {
        return Err(Error::DimensionMismatch(format!("score input {shape:?}")));
    }
    let zs = tape.scale(z, score_input_scale(sigma))?;
    let cond = tape.constant(Tensor::filled(vec![1, shape[1], shape[2]], sigma.ln()))?;
    let input = tape.concat(&[zs, cond])?;
    let out = body(tape, p, input)?;
    tape.scale(out, 1.0 / sigma)
}
