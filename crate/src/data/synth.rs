//! Deterministic procedural 28x28 digit corpus.
//!
//! Each sample renders a class skeleton (polylines and arcs) through a
//! jittered affine map with gaussian stroke splats plus pixel noise. The
//! corpus identity is fixed by an internal seed, so every run of every
//! experiment sees the same data; splits differ only by tag.

use rand::Rng;

use super::Dataset;
use crate::rng::{kind, substream};

pub const SIDE: usize = 28;
pub const CLASSES: usize = 10;

/// Corpus identity. Changing this constant changes every split.
const CORPUS_SEED: u64 = 0x6469_6769_7473_2d31; // "digits-1"

/// Split tags double as the round field of the sample substream.
pub const TAG_TRAIN: u64 = 1;
pub const TAG_TEST: u64 = 2;
pub const TAG_ROOT: u64 = 3;

// Jitter ranges, tuned so a small dense net learns the corpus well while
// leaving enough headroom for label poisoning to show up as lost accuracy.
const ROT: f64 = 0.30;
const SCALE_LO: f64 = 0.72;
const SCALE_HI: f64 = 1.22;
const SHIFT: f64 = 2.6;
const SIGMA_LO: f64 = 0.55;
const SIGMA_HI: f64 = 1.05;
const NOISE: f64 = 0.14;

fn line(points: &mut Vec<(f64, f64)>, a: (f64, f64), b: (f64, f64)) {
    let steps = 24;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        points.push((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t));
    }
}

fn arc(
    points: &mut Vec<(f64, f64)>,
    center: (f64, f64),
    rx: f64,
    ry: f64,
    from_deg: f64,
    to_deg: f64,
) {
    let steps = 36;
    for s in 0..=steps {
        let t = from_deg + (to_deg - from_deg) * s as f64 / steps as f64;
        let a = t.to_radians();
        points.push((center.0 + rx * a.cos(), center.1 + ry * a.sin()));
    }
}

/// Skeleton of one digit class as points in [0,1]^2 (x right, y down).
/// Angles follow screen coordinates: 90 degrees points down.
fn skeleton(class: usize) -> Vec<(f64, f64)> {
    let mut p = Vec::new();
    match class {
        0 => arc(&mut p, (0.5, 0.5), 0.26, 0.36, 0.0, 360.0),
        1 => {
            line(&mut p, (0.38, 0.26), (0.52, 0.12));
            line(&mut p, (0.52, 0.12), (0.52, 0.88));
        }
        2 => {
            arc(&mut p, (0.5, 0.32), 0.22, 0.18, 180.0, 360.0);
            line(&mut p, (0.72, 0.32), (0.3, 0.84));
            line(&mut p, (0.3, 0.84), (0.74, 0.84));
        }
        3 => {
            arc(&mut p, (0.46, 0.3), 0.2, 0.16, 160.0, 380.0);
            arc(&mut p, (0.46, 0.66), 0.24, 0.2, 280.0, 560.0);
        }
        4 => {
            line(&mut p, (0.62, 0.12), (0.28, 0.6));
            line(&mut p, (0.28, 0.6), (0.76, 0.6));
            line(&mut p, (0.62, 0.12), (0.62, 0.88));
        }
        5 => {
            line(&mut p, (0.7, 0.14), (0.34, 0.14));
            line(&mut p, (0.34, 0.14), (0.32, 0.46));
            arc(&mut p, (0.48, 0.64), 0.22, 0.22, 250.0, 480.0);
        }
        6 => {
            arc(&mut p, (0.58, 0.3), 0.3, 0.34, 180.0, 260.0);
            arc(&mut p, (0.5, 0.66), 0.19, 0.2, 0.0, 360.0);
        }
        7 => {
            line(&mut p, (0.26, 0.16), (0.74, 0.16));
            line(&mut p, (0.74, 0.16), (0.42, 0.88));
        }
        8 => {
            arc(&mut p, (0.5, 0.32), 0.17, 0.16, 0.0, 360.0);
            arc(&mut p, (0.5, 0.68), 0.21, 0.2, 0.0, 360.0);
        }
        9 => {
            arc(&mut p, (0.52, 0.34), 0.19, 0.19, 0.0, 360.0);
            line(&mut p, (0.71, 0.4), (0.6, 0.88));
        }
        _ => unreachable!("digit classes are 0..10"),
    }
    p
}

/// Renders one sample. `index` and `tag` pick the jitter substream.
pub fn render(class: usize, index: u64, tag: u64) -> Vec<u8> {
    let mut rng = substream(CORPUS_SEED, kind::SYNTH, index, tag);
    let angle: f64 = rng.gen_range(-ROT..ROT);
    let sx: f64 = rng.gen_range(SCALE_LO..SCALE_HI);
    let sy: f64 = rng.gen_range(SCALE_LO..SCALE_HI);
    let tx: f64 = rng.gen_range(-SHIFT..SHIFT);
    let ty: f64 = rng.gen_range(-SHIFT..SHIFT);
    let sigma: f64 = rng.gen_range(SIGMA_LO..SIGMA_HI);
    let ink: f64 = rng.gen_range(0.75..1.0);
    let (sin, cos) = angle.sin_cos();

    let mut img = vec![0.0f64; SIDE * SIDE];
    let half = SIDE as f64 / 2.0;
    let span = SIDE as f64 * 0.82;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (px, py) in skeleton(class) {
        let (cx, cy) = ((px - 0.5) * span, (py - 0.5) * span);
        let x = half + (cx * cos - cy * sin) * sx + tx;
        let y = half + (cx * sin + cy * cos) * sy + ty;
        let (x0, y0) = (x.floor() as isize, y.floor() as isize);
        for gy in y0 - 2..=y0 + 2 {
            for gx in x0 - 2..=x0 + 2 {
                if gx < 0 || gy < 0 || gx >= SIDE as isize || gy >= SIDE as isize {
                    continue;
                }
                let d2 = (gx as f64 + 0.5 - x).powi(2) + (gy as f64 + 0.5 - y).powi(2);
                let cell = &mut img[gy as usize * SIDE + gx as usize];
                *cell = cell.max(ink * (-d2 * inv2s2).exp());
            }
        }
    }
    img.iter()
        .map(|&v| {
            let noisy = v + rng.gen_range(0.0..NOISE);
            (noisy.min(1.0) * 255.0) as u8
        })
        .collect()
}

/// Materializes `count` samples for a split. Labels are drawn uniformly
/// from the sample's own substream, so any prefix of a split is stable.
pub fn dataset(count: usize, tag: u64) -> Dataset {
    let mut pixels = Vec::with_capacity(count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = substream(CORPUS_SEED, kind::SYNTH, i as u64, tag ^ 0xffff);
        let class = rng.gen_range(0..CLASSES);
        pixels.extend_from_slice(&render(class, i as u64, tag));
        labels.push(class as u8);
    }
    Dataset::new(pixels, labels, SIDE, SIDE).expect("generator output is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Samples;

    #[test]
    fn generation_is_deterministic_and_tag_sensitive() {
        let a = dataset(50, TAG_TRAIN);
        let b = dataset(50, TAG_TRAIN);
        let c = dataset(50, TAG_TEST);
        assert_eq!(a.pixels(), b.pixels());
        assert_eq!(a.labels(), b.labels());
        assert_ne!(a.pixels(), c.pixels());
    }

    #[test]
    fn prefix_stability() {
        let small = dataset(20, TAG_TRAIN);
        let big = dataset(60, TAG_TRAIN);
        assert_eq!(small.pixels(), &big.pixels()[..20 * SIDE * SIDE]);
        assert_eq!(small.labels(), &big.labels()[..20]);
    }

    #[test]
    fn labels_cover_all_classes_roughly_evenly() {
        let d = dataset(2000, TAG_TRAIN);
        let mut counts = [0usize; CLASSES];
        for &l in d.labels() {
            counts[l as usize] += 1;
        }
        for (c, &n) in counts.iter().enumerate() {
            assert!(n > 120, "class {c} has only {n} of 2000 samples");
        }
    }

    #[test]
    fn images_have_ink_and_background() {
        let d = dataset(100, TAG_TRAIN);
        for i in 0..d.len() {
            let img = &d.pixels()[i * SIDE * SIDE..(i + 1) * SIDE * SIDE];
            let bright = img.iter().filter(|&&p| p > 140).count();
            let dark = img.iter().filter(|&&p| p < 60).count();
            assert!(bright > 15, "sample {i} has almost no ink");
            assert!(dark > 300, "sample {i} has almost no background");
        }
    }

    #[test]
    fn classes_are_separable_by_nearest_centroid() {
        // A weak classifier clearing 60% on held-out samples is strong
        // evidence the classes carry signal a network can learn.
        let train = dataset(800, TAG_TRAIN);
        let test = dataset(400, TAG_TEST);
        let dim = SIDE * SIDE;
        let mut centroid = vec![[0.0f64; 784]; CLASSES];
        let mut counts = [0usize; CLASSES];
        let mut buf = vec![0.0; dim];
        for i in 0..train.len() {
            train.write_input(i, &mut buf);
            let c = train.label(i);
            counts[c] += 1;
            for (acc, &v) in centroid[c].iter_mut().zip(&buf) {
                *acc += v;
            }
        }
        for (c, n) in counts.iter().enumerate() {
            for v in centroid[c].iter_mut() {
                *v /= *n as f64;
            }
        }
        let mut correct = 0;
        for i in 0..test.len() {
            test.write_input(i, &mut buf);
            let mut best = (f64::INFINITY, 0);
            for (c, cent) in centroid.iter().enumerate() {
                let d: f64 = cent.iter().zip(&buf).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            if best.1 == test.label(i) {
                correct += 1;
            }
        }
        let acc = correct as f64 / test.len() as f64;
        assert!(acc > 0.6, "nearest-centroid accuracy {acc} too low");
    }
}
