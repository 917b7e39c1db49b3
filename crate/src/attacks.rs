//! Data poisoning: label-flipping strategies and malicious-client
//! placement. Poisoning rewrites the label copies inside the affected
//! clients' shards once, before the first training round; pixel data and
//! benign clients' copies are never touched.

use std::collections::BTreeSet;

use crate::data::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::nn::{predict, train, Architecture, Model, Samples, SliceSamples, TrainSpec};
use crate::rng::{self, kind};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AttackKind {
    None,
    /// Uniform random relabel, keyed on sample content so colluding
    /// clients holding the same sample pick the same label.
    RandomLabelFlip,
    /// Class c becomes classes-1-c; applying it twice is the identity.
    StaticLabelFlip,
    /// Only `source` labels change, to `target`.
    TargetedLabelFlip { source: u8, target: u8 },
    /// A surrogate model trained on the attackers' pooled data picks the
    /// least likely class per sample.
    DynamicLabelFlip,
}

impl AttackKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::RandomLabelFlip => "rlf",
            AttackKind::StaticLabelFlip => "slf",
            AttackKind::TargetedLabelFlip { .. } => "tlf",
            AttackKind::DynamicLabelFlip => "dlf",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Placement {
    /// Spread malicious clients evenly over clusters.
    EquallyDistributed,
    /// Fill clusters one by one, each up to just below half its members.
    Focused,
    /// Fill whole clusters before moving on.
    ClusterFocused,
}

impl Placement {
    pub fn label(&self) -> &'static str {
        match self {
            Placement::EquallyDistributed => "equal",
            Placement::Focused => "focused",
            Placement::ClusterFocused => "clusterFocused",
        }
    }
}

/// Number of malicious clients for a rate, rounded half away from zero.
pub fn malicious_count(rate: f64, total: usize) -> usize {
    (rate * total as f64).round() as usize
}

/// Picks the malicious client set. `clusters` lists each cluster's member
/// ids. The choice depends only on (seed, placement, membership).
pub fn place_malicious(
    clusters: &[Vec<u64>],
    count: usize,
    placement: Placement,
    seed: u64,
) -> Result<BTreeSet<u64>> {
    use rand::seq::SliceRandom;
    let total: usize = clusters.iter().map(|c| c.len()).sum();
    let capacity = match placement {
        Placement::EquallyDistributed | Placement::ClusterFocused => total,
        // Stay strictly below half of each cluster.
        Placement::Focused => clusters.iter().map(|c| c.len().div_ceil(2) - 1).sum(),
    };
    if count > capacity {
        return Err(Error::PlacementInfeasible { malicious: count, capacity });
    }

    let mut picked = BTreeSet::new();
    match placement {
        Placement::EquallyDistributed => {
            // Per-cluster quotas differing by at most one, random members.
            let k = clusters.len();
            for (i, members) in clusters.iter().enumerate() {
                let quota = count / k + usize::from(i < count % k);
                if quota > members.len() {
                    return Err(Error::PlacementInfeasible {
                        malicious: count,
                        capacity: count / k * k + (count % k) * members.len().min(1),
                    });
                }
                let mut shuffled = members.clone();
                let mut rng = rng::substream(seed, kind::ATTACK, i as u64, 0);
                shuffled.shuffle(&mut rng);
                picked.extend(shuffled.into_iter().take(quota));
            }
        }
        Placement::Focused => {
            let mut left = count;
            for members in clusters {
                let cap = (members.len().div_ceil(2) - 1).min(left);
                picked.extend(members.iter().take(cap));
                left -= cap;
                if left == 0 {
                    break;
                }
            }
        }
        Placement::ClusterFocused => {
            let mut left = count;
            for members in clusters {
                let take = members.len().min(left);
                picked.extend(members.iter().take(take));
                left -= take;
                if left == 0 {
                    break;
                }
            }
        }
    }
    debug_assert_eq!(picked.len(), count);
    Ok(picked)
}

/// Content-keyed uniform label: the same pixels under the same seed always
/// flip to the same class, independent of which attacker holds them.
pub fn content_keyed_label(seed: u64, pixels: &[u8], classes: usize) -> u8 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(pixels);
    let mut h = rng::fnv1a(&bytes);
    h = rng::splitmix(&mut h);
    (h % classes as u64) as u8
}

/// Hyperparameters of the surrogate the dynamic flip trains: heavy-ball
/// SGD with weight decay.
pub fn surrogate_spec() -> TrainSpec {
    TrainSpec { epochs: 50, batch_size: 128, lr: 0.05, momentum: 0.9, weight_decay: 5e-4 }
}

/// Applies `kind` to every malicious client's label copies. Returns how
/// many labels changed. The surrogate for the dynamic flip trains on the
/// union of the attackers' clean data in float mode.
pub fn poison_shards(
    shards: &mut [ClientShard],
    malicious: &BTreeSet<u64>,
    kind: AttackKind,
    data: &Dataset,
    arch: &Architecture,
    classes: usize,
    seed: u64,
) -> Result<usize> {
    if malicious.is_empty() || kind == AttackKind::None {
        return Ok(0);
    }
    let surrogate = match kind {
        AttackKind::DynamicLabelFlip => Some(train_surrogate(shards, malicious, data, arch, seed)?),
        _ => None,
    };
    let mut flipped = 0;
    let input_len = data.input_len();
    let mut buf = vec![0.0f64; input_len];
    for shard in shards.iter_mut().filter(|s| malicious.contains(&s.client_id)) {
        for (slot, &idx) in shard.indices.iter().enumerate() {
            let old = shard.labels[slot];
            let new = match kind {
                AttackKind::None => old,
                AttackKind::RandomLabelFlip => {
                    let pixels = &data.pixels()[idx * input_len..(idx + 1) * input_len];
                    content_keyed_label(seed, pixels, classes)
                }
                AttackKind::StaticLabelFlip => (classes as u8) - old - 1,
                AttackKind::TargetedLabelFlip { source, target } => {
                    if old == source {
                        target
                    } else {
                        old
                    }
                }
                AttackKind::DynamicLabelFlip => {
                    let model = surrogate.as_ref().expect("surrogate was trained");
                    data.write_input(idx, &mut buf);
                    let scores = predict(model, &buf)?;
                    argmin(&scores) as u8
                }
            };
            if new != old {
                shard.labels[slot] = new;
                flipped += 1;
            }
        }
    }
    Ok(flipped)
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = i;
        }
    }
    best
}

fn train_surrogate(
    shards: &[ClientShard],
    malicious: &BTreeSet<u64>,
    data: &Dataset,
    arch: &Architecture,
    seed: u64,
) -> Result<Model> {
    // Union of the attackers' samples, deduplicated by corpus index.
    let mut union: BTreeSet<usize> = BTreeSet::new();
    for shard in shards.iter().filter(|s| malicious.contains(&s.client_id)) {
        union.extend(shard.indices.iter().copied());
    }
    if union.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let input_len = data.input_len();
    let mut images = Vec::with_capacity(union.len() * input_len);
    let mut labels = Vec::with_capacity(union.len());
    let mut buf = vec![0.0f64; input_len];
    for &idx in &union {
        data.write_input(idx, &mut buf);
        images.extend_from_slice(&buf);
        labels.push(data.label(idx));
    }
    let mut model = Model::init(arch.clone(), seed ^ 0xa77ac2)?;
    let view = SliceSamples { images: &images, labels: &labels, input_len };
    let mut rng = rng::substream(seed, kind::ATTACK, u64::MAX, 0);
    train(&mut model, &view, &surrogate_spec(), &mut rng)?;
    Ok(model)
}
