use rand::Rng as _;

use super::arch::{ArchDescriptor, ArchId, LayerSpec, INPUT_SHAPE, NUM_CLASSES};
use super::layers::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::TFImage;
use crate::rng::rng_from_seed;

pub type Logits = [f64; NUM_CLASSES];

/// A small CNN: its architecture and a flat parameter store.
///
/// Parameters are kept in `f32` (the precision of the weight file), while all
/// arithmetic runs in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: ArchDescriptor,
    params: Vec<f32>,
    init_seed: u64,
}

/// Cross-entropy loss, its gradient with respect to the input image, and the
/// logits it was computed from.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_input: Image,
    pub logits: Logits,
}

/// Activations recorded during a forward pass.
struct Tape {
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
}

impl Model {
    /// He-uniform weights, zero biases.
    pub fn init(id: ArchId, seed: u64) -> Self {
        let arch = id.descriptor();
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for layer in &arch.layers {
            let (fan_in, weights, biases) = match *layer {
                LayerSpec::Conv { in_ch, out_ch, kernel, .. } => {
                    (in_ch * kernel * kernel, out_ch * in_ch * kernel * kernel, out_ch)
                }
                LayerSpec::Dense { inputs, outputs } => (inputs, inputs * outputs, outputs),
                _ => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            params.extend((0..weights).map(|_| rng.gen_range(-bound..bound) as f32));
            params.extend(std::iter::repeat(0.0f32).take(biases));
        }
        Model {
            arch,
            params,
            init_seed: seed,
        }
    }

    pub fn from_params(id: ArchId, params: Vec<f32>) -> Result<Self> {
        let arch = id.descriptor();
        if params.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "{id} has {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Model {
            arch,
            params,
            init_seed: 0,
        })
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn id(&self) -> ArchId {
        self.arch.id
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn forward(&self, img: &TFImage) -> Result<Logits> {
        self.logits(&img.pixels)
    }

    pub fn predict(&self, img: &TFImage) -> Result<usize> {
        self.logits(&img.pixels).map(|l| argmax(&l))
    }

    pub fn logits(&self, x: &Image) -> Result<Logits> {
        self.check_input(x)?;
        let tape = self.run(&self.params_f64(), &x.data);
        Ok(to_logits(tape.acts.last().unwrap()))
    }

    pub fn predict_pixels(&self, x: &Image) -> Result<usize> {
        self.logits(x).map(|l| argmax(&l))
    }

    /// Cross-entropy of `softmax(logits)` against `label` with its exact
    /// input gradient. The model is not modified.
    pub fn loss_and_input_grad(&self, img: &TFImage, label: usize) -> Result<LossGrad> {
        self.loss_and_input_grad_pixels(&img.pixels, label)
    }

    pub fn loss_and_input_grad_pixels(&self, x: &Image, label: usize) -> Result<LossGrad> {
        self.loss_grad(x, label)
    }

    /// Forward pass, then backpropagation of `upstream(logits)` to the
    /// input. Returns the logits and the input gradient.
    pub fn input_vjp(&self, x: &Image, upstream: impl FnOnce(&Logits) -> Logits) -> Result<(Logits, Image)> {
        self.check_input(x)?;
        let params = self.params_f64();
        let tape = self.run(&params, &x.data);
        let logits = to_logits(tape.acts.last().unwrap());
        let grad_logits = upstream(&logits);
        let grad = self.backprop(&params, &tape, &grad_logits, None);
        Ok((logits, Image::from_data(x.channels, x.height, x.width, grad)?))
    }

    /// Cross-entropy loss, its gradient with respect to every parameter (same
    /// layout as [`Model::params`]) and the logits.
    pub fn loss_and_param_grad(&self, x: &Image, label: usize) -> Result<(f64, Vec<f64>, Logits)> {
        check_label(label)?;
        self.check_input(x)?;
        let params = self.params_f64();
        let tape = self.run(&params, &x.data);
        let logits = to_logits(tape.acts.last().unwrap());
        let (loss, grad_logits) = cross_entropy(&logits, label);
        let mut grad_params = vec![0.0; params.len()];
        self.backprop(&params, &tape, &grad_logits, Some(&mut grad_params));
        Ok((loss, grad_params, logits))
    }

    fn check_input(&self, x: &Image) -> Result<()> {
        if x.shape() != INPUT_SHAPE {
            return Err(Error::Shape(format!("model input must be {INPUT_SHAPE:?}, got {:?}", x.shape())));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("input image has non-finite pixels".into()));
        }
        Ok(())
    }

    fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&p| p as f64).collect()
    }

    fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.arch.shapes().expect("built-in architectures are consistent")
    }

    fn run(&self, params: &[f64], input: &[f64]) -> Tape {
        let shapes = self.shapes();
        let mut acts = Vec::with_capacity(self.arch.layers.len() + 1);
        let mut argmax = Vec::new();
        acts.push(input.to_vec());
        let mut offset = 0;
        for (li, layer) in self.arch.layers.iter().enumerate() {
            let (c_in, h_in, w_in) = shapes[li];
            let (c, h, w) = shapes[li + 1];
            let x = acts.last().unwrap();
            let mut out = vec![0.0; c * h * w];
            match *layer {
                LayerSpec::Conv { in_ch, out_ch, kernel, stride } => {
                    let nw = out_ch * in_ch * kernel * kernel;
                    let geom = ConvGeom { in_ch, out_ch, kernel, stride, in_h: h_in, in_w: w_in, out_h: h, out_w: w };
                    geom.forward(&params[offset..offset + nw], &params[offset + nw..offset + nw + out_ch], x, &mut out);
                }
                LayerSpec::Relu => layers::relu_forward(x, &mut out),
                LayerSpec::MaxPool { size } => {
                    let mut idx = vec![0usize; out.len()];
                    layers::maxpool_forward(x, (c_in, h_in, w_in), size, &mut out, &mut idx);
                    argmax.push(idx);
                }
                LayerSpec::GlobalAvgPool => layers::gap_forward(x, c_in, &mut out),
                LayerSpec::Dense { inputs, outputs } => {
                    let nw = inputs * outputs;
                    layers::dense_forward(&params[offset..offset + nw], &params[offset + nw..offset + nw + outputs], x, &mut out);
                }
            }
            offset += layer.param_count();
            acts.push(out);
        }
        Tape { acts, argmax }
    }

    /// Returns the input gradient, or accumulates parameter gradients when
    /// `grad_params` is given (the returned input gradient is then unset).
    fn backprop(&self, params: &[f64], tape: &Tape, grad_logits: &Logits, mut grad_params: Option<&mut [f64]>) -> Vec<f64> {
        let need_input = grad_params.is_none();
        let shapes = self.shapes();
        let mut offsets = Vec::with_capacity(self.arch.layers.len());
        let mut acc = 0;
        for layer in &self.arch.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        let mut pool_slot = tape.argmax.len();
        let mut grad = grad_logits.to_vec();
        for (li, layer) in self.arch.layers.iter().enumerate().rev() {
            let (_, h_in, w_in) = shapes[li];
            let (_, h, w) = shapes[li + 1];
            let x = &tape.acts[li];
            let mut grad_in = vec![0.0; x.len()];
            let offset = offsets[li];
            match *layer {
                LayerSpec::Conv { in_ch, out_ch, kernel, stride } => {
                    let nw = out_ch * in_ch * kernel * kernel;
                    let geom = ConvGeom { in_ch, out_ch, kernel, stride, in_h: h_in, in_w: w_in, out_h: h, out_w: w };
                    let gp = grad_params.as_deref_mut().map(|g| g[offset..offset + nw + out_ch].split_at_mut(nw));
                    // Parameter-only passes skip the image gradient.
                    let gi = (li > 0 || need_input).then_some(grad_in.as_mut_slice());
                    geom.backward(&params[offset..offset + nw], x, &grad, gi, gp);
                }
                LayerSpec::Relu => layers::relu_backward(x, &grad, &mut grad_in),
                LayerSpec::MaxPool { .. } => {
                    pool_slot -= 1;
                    layers::maxpool_backward(&tape.argmax[pool_slot], &grad, &mut grad_in);
                }
                LayerSpec::GlobalAvgPool => layers::gap_backward(&grad, &mut grad_in),
                LayerSpec::Dense { inputs, outputs } => {
                    let nw = inputs * outputs;
                    let gp = grad_params.as_deref_mut().map(|g| g[offset..offset + nw + outputs].split_at_mut(nw));
                    layers::dense_backward(&params[offset..offset + nw], x, &grad, Some(&mut grad_in), gp);
                }
            }
            grad = grad_in;
        }
        grad
    }
}

fn check_label(label: usize) -> Result<()> {
    if label >= NUM_CLASSES {
        return Err(Error::Config(format!("label {label} is not a class id below {NUM_CLASSES}")));
    }
    Ok(())
}

fn to_logits(v: &[f64]) -> Logits {
    let mut out = [0.0; NUM_CLASSES];
    out.copy_from_slice(v);
    out
}

pub fn argmax(v: &[f64]) -> usize {
    // First maximum wins, so uniform logits predict class 0.
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

pub fn softmax(logits: &Logits) -> Logits {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

/// Cross-entropy against `label` and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: &Logits, label: usize) -> (f64, Logits) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    ((lse - logits[label]).max(0.0), grad)
}

/// The view of a classifier the attacks work with: logits and
/// vector-Jacobian products of the logits with respect to the input.
pub trait Classifier: Sync {
    fn logits(&self, x: &Image) -> Result<Logits>;

    /// Logits at `x` and the input gradient of `upstream(logits) · logits`.
    fn vjp(&self, x: &Image, upstream: &mut dyn FnMut(&Logits) -> Logits) -> Result<(Logits, Image)>;

    fn classify(&self, x: &Image) -> Result<usize> {
        self.logits(x).map(|l| argmax(&l))
    }

    /// Cross-entropy against `label` with its input gradient.
    fn loss_grad(&self, x: &Image, label: usize) -> Result<LossGrad> {
        check_label(label)?;
        let mut loss = 0.0;
        let (logits, grad_input) = self.vjp(x, &mut |z| {
            let (l, g) = cross_entropy(z, label);
            loss = l;
            g
        })?;
        Ok(LossGrad {
            loss,
            grad_input,
            logits,
        })
    }
}

impl Classifier for Model {
    fn logits(&self, x: &Image) -> Result<Logits> {
        Model::logits(self, x)
    }

    fn vjp(&self, x: &Image, upstream: &mut dyn FnMut(&Logits) -> Logits) -> Result<(Logits, Image)> {
        self.input_vjp(x, upstream)
    }
}
