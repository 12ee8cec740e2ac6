//! Layer stack with reverse-mode gradients.
//!
//! The layer set is deliberately small: 1-D convolutions with "same" zero
//! padding, ReLU, sigmoid, and row-wise softmax. A forward pass records every
//! activation on a [`Tape`]; `backward` replays the tape to accumulate
//! parameter gradients and return the input gradient.

use super::{DiffnetError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    /// 1-D convolution over frames, "same" zero padding. With stride `s` the
    /// output has `ceil(T/s)` frames.
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Sigmoid,
    SoftmaxRows,
}

/// Ordered layer list with compatible channel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self, DiffnetError> {
        if layers.is_empty() {
            return Err(DiffnetError::InvalidSpec("no layers".into()));
        }
        let mut channels: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            if let LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } = layer
            {
                if *in_ch == 0 || *out_ch == 0 || *kernel == 0 || *stride == 0 {
                    return Err(DiffnetError::InvalidSpec(format!(
                        "layer {i}: zero-sized conv dimension"
                    )));
                }
                if let Some(c) = channels {
                    if c != *in_ch {
                        return Err(DiffnetError::InvalidSpec(format!(
                            "layer {i}: expects {in_ch} input channels but receives {c}"
                        )));
                    }
                }
                channels = Some(*out_ch);
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input channel count, fixed by the first convolution (if any).
    pub fn input_channels(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            LayerSpec::Conv1d { in_ch, .. } => Some(*in_ch),
            _ => None,
        })
    }

    pub fn output_channels(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            LayerSpec::Conv1d { out_ch, .. } => Some(*out_ch),
            _ => None,
        })
    }
}

/// A named tensor with a same-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let grad = Tensor::zeros(tensor.shape());
        Self {
            name: name.into(),
            tensor,
            grad,
        }
    }
}

/// Activations recorded by one forward pass. `acts[0]` is the network input,
/// `acts[i + 1]` the output of layer `i`. The tape remembers the parameter
/// version it was built against; using it after a parameter update is an
/// error.
pub struct Tape {
    version: u64,
    acts: Vec<Tensor>,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("tape has activations")
    }
}

/// A layer stack together with its parameters.
///
/// Convolution weights are stored as `[out_ch, kernel, in_ch]` so that the
/// innermost loops run over contiguous memory; biases are `[out_ch]`.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Parameter>,
    /// First parameter index per layer (convs own two: weight, bias).
    layer_params: Vec<Option<usize>>,
    version: u64,
}

impl Network {
    /// Initialize with uniform weights in `[-a, a]`, `a = sqrt(6/(fan_in+fan_out))`,
    /// and zero biases, drawn from a ChaCha stream seeded by `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut layer_params = Vec::with_capacity(spec.layers().len());
        for (li, layer) in spec.layers().iter().enumerate() {
            match layer {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    layer_params.push(Some(params.len()));
                    let fan_in = in_ch * kernel;
                    let fan_out = out_ch * kernel;
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n = out_ch * kernel * in_ch;
                    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-a..a)).collect();
                    let weight = Tensor::from_vec(&[*out_ch, *kernel, *in_ch], weights)
                        .expect("init values are finite");
                    params.push(Parameter::new(format!("layer{li}.weight"), weight));
                    params.push(Parameter::new(
                        format!("layer{li}.bias"),
                        Tensor::zeros(&[*out_ch]),
                    ));
                }
                _ => layer_params.push(None),
            }
        }
        Self {
            spec,
            params,
            layer_params,
            version: 0,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    /// Mutable parameter access. Invalidates all existing tapes.
    pub fn params_mut(&mut self) -> &mut [Parameter] {
        self.version += 1;
        &mut self.params
    }

    /// Replace parameter values (shape-checked), e.g. when loading a checkpoint.
    pub fn load_params(&mut self, loaded: Vec<Parameter>) -> Result<(), DiffnetError> {
        if loaded.len() != self.params.len() {
            return Err(DiffnetError::BadCheckpoint(format!(
                "{} parameters in checkpoint, network has {}",
                loaded.len(),
                self.params.len()
            )));
        }
        for (have, got) in self.params.iter().zip(&loaded) {
            if have.name != got.name || have.tensor.shape() != got.tensor.shape() {
                return Err(DiffnetError::BadCheckpoint(format!(
                    "parameter {} {:?} does not match checkpoint entry {} {:?}",
                    have.name,
                    have.tensor.shape(),
                    got.name,
                    got.tensor.shape()
                )));
            }
        }
        self.version += 1;
        self.params = loaded;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Number of scalar parameter coordinates.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tape), DiffnetError> {
        if input.shape().len() != 2 {
            return Err(DiffnetError::Shape(format!(
                "network input must be 2-D, got {:?}",
                input.shape()
            )));
        }
        if let Some(c) = self.spec.input_channels() {
            if input.cols() != c {
                return Err(DiffnetError::Shape(format!(
                    "input has {} channels, network expects {c}",
                    input.cols()
                )));
            }
        }
        let mut acts = Vec::with_capacity(self.spec.layers().len() + 1);
        acts.push(input.clone());
        for (li, layer) in self.spec.layers().iter().enumerate() {
            let x = acts.last().expect("non-empty");
            let y = match layer {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                } => {
                    let pi = self.layer_params[li].expect("conv has params");
                    conv1d_forward(
                        x,
                        &self.params[pi].tensor,
                        &self.params[pi + 1].tensor,
                        *in_ch,
                        *out_ch,
                        *kernel,
                        *stride,
                    )?
                }
                LayerSpec::Relu => {
                    let mut y = x.clone();
                    y.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    y
                }
                LayerSpec::Sigmoid => {
                    let mut y = x.clone();
                    y.values_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
                    y
                }
                LayerSpec::SoftmaxRows => softmax_rows(x),
            };
            acts.push(y);
        }
        let output = acts.last().expect("non-empty").clone();
        Ok((
            output,
            Tape {
                version: self.version,
                acts,
            },
        ))
    }

    /// Propagate `output_grad` back through the tape, accumulating parameter
    /// gradients additively, and return the gradient w.r.t. the input.
    pub fn backward(&mut self, tape: &Tape, output_grad: &Tensor) -> Result<Tensor, DiffnetError> {
        if tape.version != self.version {
            return Err(DiffnetError::StaleTape);
        }
        if !output_grad.same_shape(tape.output()) {
            return Err(DiffnetError::Shape(format!(
                "output grad {:?} vs output {:?}",
                output_grad.shape(),
                tape.output().shape()
            )));
        }
        let mut grad = output_grad.clone();
        for (li, layer) in self.spec.layers().iter().enumerate().rev() {
            let x = &tape.acts[li];
            let y = &tape.acts[li + 1];
            grad = match layer {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                } => {
                    let pi = self.layer_params[li].expect("conv has params");
                    let (weight, rest) = self.params.split_at_mut(pi + 1);
                    let weight = &mut weight[pi];
                    let bias = &mut rest[0];
                    conv1d_backward(
                        x,
                        &grad,
                        &weight.tensor,
                        &mut weight.grad,
                        &mut bias.grad,
                        *in_ch,
                        *out_ch,
                        *kernel,
                        *stride,
                    )
                }
                LayerSpec::Relu => {
                    let mut dx = grad;
                    for (d, &xv) in dx.values_mut().iter_mut().zip(x.values()) {
                        if xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                }
                LayerSpec::Sigmoid => {
                    let mut dx = grad;
                    for (d, &yv) in dx.values_mut().iter_mut().zip(y.values()) {
                        *d *= yv * (1.0 - yv);
                    }
                    dx
                }
                LayerSpec::SoftmaxRows => {
                    let mut dx = grad;
                    let cols = y.cols();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dr = &mut dx.values_mut()[r * cols..(r + 1) * cols];
                        let dot: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                        for (d, &yv) in dr.iter_mut().zip(yr) {
                            *d = yv * (*d - dot);
                        }
                    }
                    dx
                }
            };
        }
        Ok(grad)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let cols = x.cols();
    for r in 0..x.rows() {
        let row = &mut y.values_mut()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// Output length for "same" padding: `ceil(T / stride)`.
fn out_len(t: usize, stride: usize) -> usize {
    t.div_ceil(stride)
}

fn conv1d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
) -> Result<Tensor, DiffnetError> {
    if x.cols() != in_ch {
        return Err(DiffnetError::Shape(format!(
            "conv input has {} channels, expected {in_ch}",
            x.cols()
        )));
    }
    let t_in = x.rows();
    let t_out = out_len(t_in, stride);
    let left_pad = (kernel - 1) / 2;
    let mut y = Tensor::zeros(&[t_out, out_ch]);
    let w = weight.values();
    let xv = x.values();
    for t in 0..t_out {
        let base = (t * stride) as isize - left_pad as isize;
        let yr = y.row_mut(t);
        for (o, yo) in yr.iter_mut().enumerate() {
            let mut acc = bias.values()[o];
            let wo = &w[o * kernel * in_ch..(o + 1) * kernel * in_ch];
            for j in 0..kernel {
                let ti = base + j as isize;
                if ti < 0 || ti >= t_in as isize {
                    continue;
                }
                let xr = &xv[ti as usize * in_ch..(ti as usize + 1) * in_ch];
                let wj = &wo[j * in_ch..(j + 1) * in_ch];
                acc += wj.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
            *yo = acc;
        }
    }
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    x: &Tensor,
    dy: &Tensor,
    weight: &Tensor,
    dweight: &mut Tensor,
    dbias: &mut Tensor,
    in_ch: usize,
    _out_ch: usize,
    kernel: usize,
    stride: usize,
) -> Tensor {
    let t_in = x.rows();
    let t_out = dy.rows();
    let left_pad = (kernel - 1) / 2;
    let mut dx = Tensor::zeros(&[t_in, in_ch]);
    let w = weight.values();
    let xv = x.values();
    for t in 0..t_out {
        let base = (t * stride) as isize - left_pad as isize;
        let dyr = dy.row(t);
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            dbias.values_mut()[o] += g;
            let wo = &w[o * kernel * in_ch..(o + 1) * kernel * in_ch];
            let dwo = &mut dweight.values_mut()[o * kernel * in_ch..(o + 1) * kernel * in_ch];
            for j in 0..kernel {
                let ti = base + j as isize;
                if ti < 0 || ti >= t_in as isize {
                    continue;
                }
                let ti = ti as usize;
                let xr = &xv[ti * in_ch..(ti + 1) * in_ch];
                let dxr = &mut dx.values_mut()[ti * in_ch..(ti + 1) * in_ch];
                let wj = &wo[j * in_ch..(j + 1) * in_ch];
                let dwj = &mut dwo[j * in_ch..(j + 1) * in_ch];
                for i in 0..in_ch {
                    dwj[i] += g * xr[i];
                    dxr[i] += g * wj[i];
                }
            }
        }
    }
    dx
}
