//! Minibatch SGD, single-shot gradients, and evaluation.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fixed::FixedVec;
use crate::sharing::Carrier;

use super::layers::{backward, forward};
use super::numeric::{FixedNum, FloatNum, Numeric, OpCount};
use super::{Model, TrainSpec};

/// Read access to a labeled sample store. Inputs are written as f64 in
/// [0,1]; numeric encoding happens per batch.
pub trait Samples: Sync {
    fn len(&self) -> usize;
    fn write_input(&self, idx: usize, out: &mut [f64]);
    fn label(&self, idx: usize) -> usize;
}

/// Borrowed flat buffers as a sample store.
pub struct SliceSamples<'a> {
    pub images: &'a [f64],
    pub labels: &'a [usize],
    pub input_len: usize,
}

impl Samples for SliceSamples<'_> {
    fn len(&self) -> usize {
        self.labels.len()
    }
    fn write_input(&self, idx: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.images[idx * self.input_len..(idx + 1) * self.input_len]);
    }
    fn label(&self, idx: usize) -> usize {
        self.labels[idx]
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainStats {
    /// Mean loss per epoch, in epoch order.
    pub epoch_loss: Vec<f64>,
    pub ops: OpCount,
    pub steps: u64,
}

/// Runs `spec.epochs` of shuffled minibatch SGD in the model's numeric
/// mode. The shuffle order comes from `rng` alone, so a fixed substream
/// reproduces the whole trajectory.
pub fn train(
    model: &mut Model,
    data: &dyn Samples,
    spec: &TrainSpec,
    rng: &mut ChaCha8Rng,
) -> Result<TrainStats> {
    if data.len() == 0 {
        return Err(Error::EmptyDataset);
    }
    let arch = model.arch.clone();
    match &mut model.params {
        Carrier::F64(p) => run(&FloatNum, &arch, p, data, spec, rng),
        Carrier::Fixed(v) => {
            let n = FixedNum::new(v.frac_bits());
            run(&n, &arch, v.raw_mut(), data, spec, rng)
        }
    }
}

fn run<N: Numeric>(
    n: &N,
    arch: &super::Architecture,
    params: &mut [N::E],
    data: &dyn Samples,
    spec: &TrainSpec,
    rng: &mut ChaCha8Rng,
) -> Result<TrainStats> {
    let shapes = arch.shapes()?;
    let layout = arch.layout();
    let classes = arch.classes();
    let input_len = arch.input_len();
    let batch = spec.batch_size.max(1);
    let mut velocity =
        (spec.momentum != 0.0).then(|| vec![n.zero(); params.len()]);
    let lr = n.enc(spec.lr);
    let mu = n.enc(spec.momentum);
    let wd = n.enc(spec.weight_decay);

    let mut stats = TrainStats::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut buf = vec![0.0f64; batch * input_len];
    for epoch in 0..spec.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let b = chunk.len();
            for (i, &idx) in chunk.iter().enumerate() {
                data.write_input(idx, &mut buf[i * input_len..(i + 1) * input_len]);
            }
            let input: Vec<N::E> = buf[..b * input_len].iter().map(|&x| n.enc(x)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&idx| data.label(idx)).collect();

            let (logits, tape) =
                forward(n, arch, &shapes, &layout, params, &input, b, true);
            let (loss, dlogits) = n.softmax_ce(&logits, &labels, classes);
            loss_sum += loss;
            let grads =
                backward(n, arch, &shapes, &layout, params, tape.unwrap(), dlogits, b);

            for (i, g) in grads.into_iter().enumerate() {
                let mut g = g;
                if spec.weight_decay != 0.0 {
                    g = n.add(g, n.mul(wd, params[i]));
                }
                if let Some(v) = velocity.as_deref_mut() {
                    v[i] = n.add(n.mul(mu, v[i]), g);
                    g = v[i];
                }
                params[i] = n.sub(params[i], n.mul(lr, g));
            }
            stats.steps += 1;
        }
        let mean = loss_sum / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        stats.epoch_loss.push(mean);
    }
    stats.ops = n.take_ops();
    Ok(stats)
}

/// Mean loss and flat gradient on one explicit batch, without updating the
/// model. The gradient carrier matches the model's numeric mode.
pub fn gradient(
    model: &Model,
    images: &[f64],
    labels: &[usize],
) -> Result<(f64, Carrier, OpCount)> {
    let arch = &model.arch;
    let input_len = arch.input_len();
    if images.len() != labels.len() * input_len {
        return Err(Error::LengthMismatch { left: images.len(), right: labels.len() * input_len });
    }
    let shapes = arch.shapes()?;
    let layout = arch.layout();
    let b = labels.len();
    match &model.params {
        Carrier::F64(p) => {
            let n = FloatNum;
            let (logits, tape) = forward(&n, arch, &shapes, &layout, p, images, b, true);
            let (loss, dlogits) = n.softmax_ce(&logits, labels, arch.classes());
            let g = backward(&n, arch, &shapes, &layout, p, tape.unwrap(), dlogits, b);
            Ok((loss / b as f64, Carrier::F64(g), n.take_ops()))
        }
        Carrier::Fixed(v) => {
            let n = FixedNum::new(v.frac_bits());
            let input: Vec<u64> = images.iter().map(|&x| n.enc(x)).collect();
            let (logits, tape) =
                forward(&n, arch, &shapes, &layout, v.raw(), &input, b, true);
            let (loss, dlogits) = n.softmax_ce(&logits, labels, arch.classes());
            let g =
                backward(&n, arch, &shapes, &layout, v.raw(), tape.unwrap(), dlogits, b);
            let g = FixedVec::from_raw(g, v.frac_bits());
            Ok((loss / b as f64, Carrier::Fixed(g), n.take_ops()))
        }
    }
}

/// Decoded logits for a batch of inputs, row-major batch x classes.
pub fn predict(model: &Model, images: &[f64]) -> Result<Vec<f64>> {
    predict_counted(model, images).map(|(logits, _)| logits)
}

/// [`predict`] that also reports the multiplication and comparison counts
/// of the forward pass, for callers pricing it as an oblivious computation.
/// The float path reports zeros: nothing there models ring arithmetic.
pub fn predict_counted(model: &Model, images: &[f64]) -> Result<(Vec<f64>, OpCount)> {
    let arch = &model.arch;
    let input_len = arch.input_len();
    if images.is_empty() || images.len() % input_len != 0 {
        return Err(Error::LengthMismatch {
            left: images.len(),
            right: input_len,
        });
    }
    let b = images.len() / input_len;
    let shapes = arch.shapes()?;
    let layout = arch.layout();
    match &model.params {
        Carrier::F64(p) => {
            let (logits, _) = forward(&FloatNum, arch, &shapes, &layout, p, images, b, false);
            Ok((logits, OpCount::default()))
        }
        Carrier::Fixed(v) => {
            let n = FixedNum::new(v.frac_bits());
            let input: Vec<u64> = images.iter().map(|&x| n.enc(x)).collect();
            let (logits, _) =
                forward(&n, arch, &shapes, &layout, v.raw(), &input, b, false);
            let ops = n.take_ops();
            Ok((logits.iter().map(|&e| n.dec(e)).collect(), ops))
        }
    }
}

/// Index of the largest score; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy over a sample store, evaluated in batches.
pub fn evaluate(model: &Model, data: &dyn Samples) -> Result<f64> {
    if data.len() == 0 {
        return Err(Error::EmptyDataset);
    }
    let input_len = model.arch.input_len();
    let classes = model.arch.classes();
    let chunk = 256;
    let mut correct = 0usize;
    let mut buf = vec![0.0f64; chunk * input_len];
    let mut idx = 0;
    while idx < data.len() {
        let b = chunk.min(data.len() - idx);
        for i in 0..b {
            data.write_input(idx + i, &mut buf[i * input_len..(i + 1) * input_len]);
        }
        let logits = predict(model, &buf[..b * input_len])?;
        for i in 0..b {
            if argmax(&logits[i * classes..(i + 1) * classes]) == data.label(idx + i) {
                correct += 1;
            }
        }
        idx += b;
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::Architecture;
    use super::super::LayerSpec;
    use super::*;
    use crate::rng::{kind, substream};

    fn toy_blobs(n_per_class: usize) -> (Vec<f64>, Vec<usize>) {
        // Two deterministic 2-d blobs around (0.2, 0.8) and (0.8, 0.2).
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class {
            let jx = (i as f64 * 0.61803) % 0.2 - 0.1;
            let jy = (i as f64 * 0.41421) % 0.2 - 0.1;
            images.extend_from_slice(&[0.2 + jx, 0.8 + jy]);
            labels.push(0);
            images.extend_from_slice(&[0.8 + jy, 0.2 + jx]);
            labels.push(1);
        }
        (images, labels)
    }

    fn tiny_arch() -> Architecture {
        Architecture {
            input: (1, 1, 2),
            layers: vec![
                LayerSpec::Dense { input: 2, output: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 8, output: 2 },
            ],
        }
    }

    #[test]
    fn one_dense_step_matches_hand_computed_update() {
        // w = [[0.1,-0.2],[0.3,0.4]], b = 0, x = (1.0, 0.5), label 0,
        // lr = 0.1, batch 1. Softmax over logits (0, 0.5).
        let arch = Architecture {
            input: (1, 1, 2),
            layers: vec![LayerSpec::Dense { input: 2, output: 2 }],
        };
        let mut model = Model::from_params(
            arch,
            Carrier::F64(vec![0.1, -0.2, 0.3, 0.4, 0.0, 0.0]),
        )
        .unwrap();
        let data = SliceSamples { images: &[1.0, 0.5], labels: &[0], input_len: 2 };
        let spec = TrainSpec::new(1, 1, 0.1);
        let mut rng = substream(1, kind::BATCH, 0, 0);
        let stats = train(&mut model, &data, &spec, &mut rng).unwrap();

        // p1 = e^0.5 / (1 + e^0.5), dz = (p0 - 1, p1).
        let p1 = 0.6224593312018546;
        assert!((stats.epoch_loss[0] - 0.9740769841801067).abs() < 1e-12);
        let got = model.params.to_f64_vec();
        let want = [
            0.1 + 0.1 * p1 * 1.0,
            -0.2 + 0.1 * p1 * 0.5,
            0.3 - 0.1 * p1 * 1.0,
            0.4 - 0.1 * p1 * 0.5,
            0.1 * p1,
            -0.1 * p1,
        ];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn finite_differences_validate_dense_gradients() {
        let arch = tiny_arch();
        let model = Model::init(arch, 42).unwrap();
        let (images, labels) = toy_blobs(3);
        let (_, grad, _) = gradient(&model, &images, &labels).unwrap();
        let grad = grad.to_f64_vec();
        let eps = 1e-5;
        let mut params = model.params.to_f64_vec();
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + eps;
            let up = Model::from_params(model.arch.clone(), Carrier::F64(params.clone())).unwrap();
            let (lu, _, _) = gradient(&up, &images, &labels).unwrap();
            params[i] = orig - eps;
            let dn = Model::from_params(model.arch.clone(), Carrier::F64(params.clone())).unwrap();
            let (ld, _, _) = gradient(&dn, &images, &labels).unwrap();
            params[i] = orig;
            let fd = (lu - ld) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-4);
            assert!(
                ((fd - grad[i]) / denom).abs() < 1e-4,
                "param {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
        let mut model = Model::init(tiny_arch(), 9).unwrap();
        let before = model.params.clone();
        let (images, labels) = toy_blobs(4);
        let data = SliceSamples { images: &images, labels: &labels, input_len: 2 };
        let mut rng = substream(9, kind::BATCH, 0, 0);
        train(&mut model, &data, &TrainSpec::new(3, 4, 0.0), &mut rng).unwrap();
        assert_eq!(model.params, before);
    }

    #[test]
    fn training_separates_toy_blobs_in_both_numeric_modes() {
        let (images, labels) = toy_blobs(32);
        let data = SliceSamples { images: &images, labels: &labels, input_len: 2 };
        for fixed in [false, true] {
            let mut model = Model::init(tiny_arch(), 5).unwrap();
            if fixed {
                model = model.to_fixed(22).unwrap();
            }
            let mut rng = substream(5, kind::BATCH, 0, 0);
            let stats =
                train(&mut model, &data, &TrainSpec::new(20, 8, 0.5), &mut rng).unwrap();
            assert!(
                stats.epoch_loss.last().unwrap() < &stats.epoch_loss[0],
                "loss should fall (fixed={fixed})"
            );
            let acc = evaluate(&model, &data).unwrap();
            assert!(acc > 0.95, "accuracy {acc} too low (fixed={fixed})");
            if fixed {
                assert!(stats.ops.mults > 0 && stats.ops.comparisons > 0);
            } else {
                assert_eq!(stats.ops, OpCount::default());
            }
        }
    }

    #[test]
    fn momentum_and_weight_decay_follow_sgd_semantics() {
        // One parameter step checked against the reference update rule:
        // g <- g + wd*w ; v <- mu*v + g ; w <- w - lr*v, applied twice.
        let arch = Architecture {
            input: (1, 1, 1),
            layers: vec![LayerSpec::Dense { input: 1, output: 2 }],
        };
        let w0 = [0.5, -0.5, 0.0, 0.0];
        let mut model =
            Model::from_params(arch.clone(), Carrier::F64(w0.to_vec())).unwrap();
        let data = SliceSamples { images: &[1.0], labels: &[0], input_len: 1 };
        let spec = TrainSpec {
            epochs: 2,
            batch_size: 1,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
        };
        let mut rng = substream(3, kind::BATCH, 0, 0);
        train(&mut model, &data, &spec, &mut rng).unwrap();

        // Reference trajectory in plain f64.
        let mut w = w0.to_vec();
        let mut v = vec![0.0; 4];
        for _ in 0..2 {
            let z = (w[0] + w[2], w[1] + w[3]);
            let m = z.0.max(z.1);
            let e = ((z.0 - m).exp(), (z.1 - m).exp());
            let p0 = e.0 / (e.0 + e.1);
            let g = [p0 - 1.0, 1.0 - p0, p0 - 1.0, 1.0 - p0];
            for i in 0..4 {
                let gi = g[i] + 0.01 * w[i];
                v[i] = 0.9 * v[i] + gi;
                w[i] -= 0.1 * v[i];
            }
        }
        let got = model.params.to_f64_vec();
        for (g, w) in got.iter().zip(&w) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn divergence_is_reported_not_propagated_as_nan() {
        let (images, labels) = toy_blobs(8);
        let data = SliceSamples { images: &images, labels: &labels, input_len: 2 };
        let mut model = Model::init(tiny_arch(), 2).unwrap();
        let mut rng = substream(2, kind::BATCH, 0, 0);
        // One absurd step makes both dense layers ~1e155; their product
        // overflows f64 on the next forward pass.
        let err = train(&mut model, &data, &TrainSpec::new(3, 4, 1e155), &mut rng);
        assert!(matches!(err, Err(Error::Diverged { .. })));
    }

    #[test]
    fn same_seed_reproduces_the_exact_parameter_bits() {
        let (images, labels) = toy_blobs(16);
        let data = SliceSamples { images: &images, labels: &labels, input_len: 2 };
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut model = Model::init(tiny_arch(), 11).unwrap();
            let mut rng = substream(11, kind::BATCH, 7, 3);
            train(&mut model, &data, &TrainSpec::new(5, 4, 0.2), &mut rng).unwrap();
            runs.push(model.params.to_f64_vec());
        }
        let bits =
            |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&runs[0]), bits(&runs[1]));
    }

    #[test]
    fn evaluate_breaks_ties_toward_the_lowest_class() {
        let model = Model::zeros(tiny_arch()).unwrap();
        let (images, labels) = toy_blobs(10);
        let data = SliceSamples { images: &images, labels: &labels, input_len: 2 };
        // All logits equal, so every prediction is class 0; half the toy
        // labels are 0.
        let acc = evaluate(&model, &data).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
        assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut model = Model::init(tiny_arch(), 1).unwrap();
        let data = SliceSamples { images: &[], labels: &[], input_len: 2 };
        let mut rng = substream(1, kind::BATCH, 0, 0);
        assert!(matches!(
            train(&mut model, &data, &TrainSpec::new(1, 4, 0.1), &mut rng),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(evaluate(&model, &data), Err(Error::EmptyDataset)));
    }
}
