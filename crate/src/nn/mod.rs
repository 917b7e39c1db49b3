//! From-scratch neural networks over a pluggable numeric backend.
//!
//! Models are a flat parameter vector plus an architecture describing how
//! to slice it. The same layer code runs on float64 and on ring
//! fixed-point; the fixed path additionally counts multiplications and
//! comparisons so secure training can be cost-accounted.

mod checkpoint;
mod layers;
mod numeric;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointInfo};
pub use numeric::OpCount;
pub use train::{
    argmax, evaluate, gradient, predict, predict_counted, train, Samples, SliceSamples, TrainStats,
};

use crate::error::{Error, Result};
use crate::fixed::FixedVec;
use crate::rng::{self, kind};
use crate::sharing::Carrier;

use rand::Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize },
    MaxPool { size: usize },
    Relu,
    Flatten,
}

/// Network shape: input tensor dimensions and the layer chain. The loss is
/// always softmax cross-entropy over the last dense layer's outputs.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Architecture {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// 28x28 grayscale convolutional network:
    /// conv(1>6,5) pool2 conv(6>16,5) pool2 dense 256-120-84-10.
    pub fn lenet() -> Self {
        Self {
            input: (1, 28, 28),
            layers: vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 6, kernel: 5, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv2d { in_ch: 6, out_ch: 16, kernel: 5, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 256, output: 120 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 120, output: 84 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 84, output: 10 },
            ],
        }
    }

    /// Fully connected chain over 28x28 inputs, e.g. `mlp(&[784, 128, 10])`.
    pub fn mlp(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2 && dims[0] == 784, "first dim must be 784");
        let mut layers = vec![LayerSpec::Flatten];
        for (i, pair) in dims.windows(2).enumerate() {
            if i > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::Dense { input: pair[0], output: pair[1] });
        }
        Self { input: (1, 28, 28), layers }
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    /// Output dimension of the final dense layer.
    pub fn classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Dense { output, .. } => Some(*output),
                _ => None,
            })
            .expect("architecture has no dense layer")
    }

    /// Tensor shape after each layer; fails when layers do not chain.
    pub fn shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (idx, l) in self.layers.iter().enumerate() {
            shape = match *l {
                LayerSpec::Dense { input, output } => {
                    let flat = shape.0 * shape.1 * shape.2;
                    if flat != input {
                        return Err(Error::ArchMismatch(format!(
                            "layer {idx}: dense expects {input} inputs, got {flat}"
                        )));
                    }
                    (1, 1, output)
                }
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => {
                    if shape.0 != in_ch {
                        return Err(Error::ArchMismatch(format!(
                            "layer {idx}: conv expects {in_ch} channels, got {}",
                            shape.0
                        )));
                    }
                    if shape.1 < kernel || shape.2 < kernel || stride == 0 {
                        return Err(Error::ArchMismatch(format!(
                            "layer {idx}: kernel {kernel} does not fit {}x{}",
                            shape.1, shape.2
                        )));
                    }
                    (out_ch, (shape.1 - kernel) / stride + 1, (shape.2 - kernel) / stride + 1)
                }
                LayerSpec::MaxPool { size } => {
                    if size == 0 || shape.1 < size || shape.2 < size {
                        return Err(Error::ArchMismatch(format!(
                            "layer {idx}: pool {size} does not fit {}x{}",
                            shape.1, shape.2
                        )));
                    }
                    (shape.0, shape.1 / size, shape.2 / size)
                }
                LayerSpec::Relu => shape,
                LayerSpec::Flatten => (1, 1, shape.0 * shape.1 * shape.2),
            };
            out.push(shape);
        }
        Ok(out)
    }

    /// Flat parameter count over all dense and conv layers.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Dense { input, output } => input * output + output,
                LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                    out_ch * in_ch * kernel * kernel + out_ch
                }
                _ => 0,
            })
            .sum()
    }

    /// (offset, weight count, bias count) per parameterized layer, in layer
    /// order; weights precede biases, rows are output-major.
    pub(crate) fn layout(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for l in &self.layers {
            match *l {
                LayerSpec::Dense { input, output } => {
                    out.push((offset, input * output, output));
                    offset += input * output + output;
                }
                LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                    let w = out_ch * in_ch * kernel * kernel;
                    out.push((offset, w, out_ch));
                    offset += w + out_ch;
                }
                _ => out.push((offset, 0, 0)),
            }
        }
        out
    }

    /// Canonical text form, `in:1x28x28|conv:1,6,5,1|relu|...`.
    pub fn descriptor(&self) -> String {
        let mut parts = vec![format!("in:{}x{}x{}", self.input.0, self.input.1, self.input.2)];
        for l in &self.layers {
            parts.push(match *l {
                LayerSpec::Dense { input, output } => format!("dense:{input},{output}"),
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => {
                    format!("conv:{in_ch},{out_ch},{kernel},{stride}")
                }
                LayerSpec::MaxPool { size } => format!("pool:{size}"),
                LayerSpec::Relu => "relu".into(),
                LayerSpec::Flatten => "flatten".into(),
            });
        }
        parts.join("|")
    }

    pub fn parse(descriptor: &str) -> Result<Self> {
        let bad = |msg: &str| Error::ArchMismatch(format!("descriptor: {msg}"));
        let mut parts = descriptor.split('|');
        let head = parts.next().ok_or_else(|| bad("empty"))?;
        let dims = head.strip_prefix("in:").ok_or_else(|| bad("missing input shape"))?;
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| bad("bad input dims")))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(bad("input shape needs three dims"));
        }
        let mut layers = Vec::new();
        for part in parts {
            let (name, args) = part.split_once(':').unwrap_or((part, ""));
            let nums: Vec<usize> = if args.is_empty() {
                Vec::new()
            } else {
                args.split(',')
                    .map(|a| a.parse().map_err(|_| bad("bad layer argument")))
                    .collect::<Result<_>>()?
            };
            layers.push(match (name, nums.as_slice()) {
                ("dense", [input, output]) => LayerSpec::Dense { input: *input, output: *output },
                ("conv", [ic, oc, k, s]) => {
                    LayerSpec::Conv2d { in_ch: *ic, out_ch: *oc, kernel: *k, stride: *s }
                }
                ("pool", [size]) => LayerSpec::MaxPool { size: *size },
                ("relu", []) => LayerSpec::Relu,
                ("flatten", []) => LayerSpec::Flatten,
                _ => return Err(bad(&format!("unknown layer {part}"))),
            });
        }
        let arch = Self { input: (dims[0], dims[1], dims[2]), layers };
        arch.shapes()?;
        Ok(arch)
    }
}

/// Hyperparameters of one local training call.
#[derive(Clone, Copy, Debug)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl TrainSpec {
    pub fn new(epochs: usize, batch_size: usize, lr: f64) -> Self {
        Self { epochs, batch_size, lr, momentum: 0.0, weight_decay: 0.0 }
    }
}

/// A model is an architecture plus flat parameters in one numeric mode.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Architecture,
    pub params: Carrier,
}

impl Model {
    /// Fan-in scaled uniform init (He-style), drawn from the init
    /// substream of `seed`; biases start at zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.shapes()?;
        let mut rng = rng::substream(seed, kind::INIT, 0, 0);
        let mut params = vec![0.0f64; arch.param_count()];
        for (l, (offset, wlen, _blen)) in arch.layers.iter().zip(arch.layout()) {
            let fan_in = match *l {
                LayerSpec::Dense { input, .. } => input,
                LayerSpec::Conv2d { in_ch, kernel, .. } => in_ch * kernel * kernel,
                _ => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in &mut params[offset..offset + wlen] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self { arch, params: Carrier::F64(params) })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.shapes()?;
        let n = arch.param_count();
        Ok(Self { arch, params: Carrier::F64(vec![0.0; n]) })
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self.params, Carrier::Fixed(_))
    }

    pub fn to_fixed(&self, frac_bits: u32) -> Result<Self> {
        let params = match &self.params {
            Carrier::F64(p) => Carrier::Fixed(FixedVec::encode_slice(p, frac_bits)?),
            Carrier::Fixed(v) => Carrier::Fixed(v.clone()),
        };
        Ok(Self { arch: self.arch.clone(), params })
    }

    pub fn to_float(&self) -> Self {
        Self { arch: self.arch.clone(), params: Carrier::F64(self.params.to_f64_vec()) }
    }

    /// Rebuild from a flat carrier; the inverse of reading `self.params`.
    pub fn from_params(arch: Architecture, params: Carrier) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::LengthMismatch { left: arch.param_count(), right: params.len() });
        }
        Ok(Self { arch, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_has_the_classic_parameter_count() {
        assert_eq!(Architecture::lenet().param_count(), 44426);
    }

    #[test]
    fn mlp_parameter_count() {
        assert_eq!(Architecture::mlp(&[784, 128, 10]).param_count(), 101_770);
    }

    #[test]
    fn lenet_shapes_chain() {
        let shapes = Architecture::lenet().shapes().unwrap();
        assert_eq!(shapes[0], (6, 24, 24));
        assert_eq!(shapes[2], (6, 12, 12));
        assert_eq!(shapes[3], (16, 8, 8));
        assert_eq!(shapes[5], (16, 4, 4));
        assert_eq!(*shapes.last().unwrap(), (1, 1, 10));
    }

    #[test]
    fn descriptor_roundtrip() {
        for arch in [Architecture::lenet(), Architecture::mlp(&[784, 128, 10])] {
            let parsed = Architecture::parse(&arch.descriptor()).unwrap();
            assert_eq!(parsed, arch);
            assert_eq!(parsed.descriptor(), arch.descriptor());
        }
    }

    #[test]
    fn bad_chains_are_rejected() {
        let arch = Architecture {
            input: (1, 28, 28),
            layers: vec![LayerSpec::Dense { input: 100, output: 10 }],
        };
        assert!(arch.shapes().is_err());
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let a = Model::init(Architecture::mlp(&[784, 128, 10]), 7).unwrap();
        let b = Model::init(Architecture::mlp(&[784, 128, 10]), 7).unwrap();
        let c = Model::init(Architecture::mlp(&[784, 128, 10]), 8).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        let p = a.params.to_f64_vec();
        let bound = (6.0f64 / 784.0).sqrt();
        assert!(p[..784 * 128].iter().all(|w| w.abs() < bound));
        // Biases of the first dense layer are zero.
        assert!(p[784 * 128..784 * 128 + 128].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn flat_layout_is_a_bijection() {
        let arch = Architecture::lenet();
        let layout = arch.layout();
        let mut seen = 0;
        for (offset, w, b) in &layout {
            if *w > 0 {
                assert_eq!(*offset, seen);
                seen = offset + w + b;
            }
        }
        assert_eq!(seen, arch.param_count());
    }
}
