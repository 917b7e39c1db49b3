//! Sample storage, client shards, per-round sampling, and the training
//! pool each cluster accumulates.

pub mod idx;
pub mod synth;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::Samples;
use crate::rng::{kind, substream};

/// Labeled images, pixels raw u8, one label byte per sample.
#[derive(Clone, Debug)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
}

impl Dataset {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>, rows: usize, cols: usize) -> Result<Self> {
        if pixels.len() != labels.len() * rows * cols {
            return Err(Error::Idx(format!(
                "{} pixels do not match {} samples of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { pixels, labels, rows, cols })
    }

    pub fn from_idx_files(images: &Path, labels: &Path) -> Result<Self> {
        let (pixels, count, rows, cols) = idx::read_idx_images(images)?;
        let labels = idx::read_idx_labels(labels)?;
        if labels.len() != count {
            return Err(Error::Idx(format!(
                "{count} images but {} labels",
                labels.len()
            )));
        }
        Self::new(pixels, labels, rows, cols)
    }

    pub fn write_idx_files(&self, images: &Path, labels: &Path) -> Result<()> {
        idx::write_idx_images(images, &self.pixels, self.labels.len(), self.rows, self.cols)?;
        idx::write_idx_labels(labels, &self.labels)
    }

    pub fn input_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn set_label(&mut self, idx: usize, label: u8) {
        self.labels[idx] = label;
    }

    /// The first `n` samples as an owned dataset.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::NotEnough { requested: n, available: self.len() });
        }
        let d = self.input_len();
        Dataset::new(
            self.pixels[..n * d].to_vec(),
            self.labels[..n].to_vec(),
            self.rows,
            self.cols,
        )
    }
}

impl Samples for Dataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn write_input(&self, idx: usize, out: &mut [f64]) {
        let d = self.input_len();
        for (o, &p) in out.iter_mut().zip(&self.pixels[idx * d..(idx + 1) * d]) {
            *o = p as f64 / 255.0;
        }
    }

    fn label(&self, idx: usize) -> usize {
        self.labels[idx] as usize
    }
}

/// A subset of a dataset addressed by sample indices.
pub struct IndexView<'a> {
    pub data: &'a Dataset,
    pub indices: &'a [usize],
}

impl Samples for IndexView<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }
    fn write_input(&self, idx: usize, out: &mut [f64]) {
        self.data.write_input(self.indices[idx], out);
    }
    fn label(&self, idx: usize) -> usize {
        self.data.label(self.indices[idx])
    }
}

/// One client's local holding: distinct sample indices into the shared
/// corpus, plus the client's own copy of the labels. Different clients may
/// hold the same sample; label tampering by one never leaks into another.
#[derive(Clone, Debug)]
pub struct ClientShard {
    pub client_id: u64,
    pub indices: Vec<usize>,
    pub labels: Vec<u8>,
}

/// Deals every client a shard of `shard_size` distinct samples, sampled
/// independently per client from its own substream.
pub fn shard_clients(
    data: &Dataset,
    clients: usize,
    shard_size: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if shard_size > data.len() {
        return Err(Error::NotEnough { requested: shard_size, available: data.len() });
    }
    Ok((0..clients as u64)
        .map(|client_id| {
            let mut rng = substream(seed, kind::SHARD, client_id, 0);
            let indices = rand::seq::index::sample(&mut rng, data.len(), shard_size).into_vec();
            let labels = indices.iter().map(|&i| data.labels()[i]).collect();
            ClientShard { client_id, indices, labels }
        })
        .collect())
}

/// Draws `count` distinct clients from `eligible` for one cluster-round.
/// The result is sorted by id; the draw depends only on
/// (seed, cluster, round).
pub fn sample_clients(
    eligible: &[u64],
    count: usize,
    seed: u64,
    cluster: u64,
    round: u64,
) -> Result<Vec<u64>> {
    if count > eligible.len() {
        return Err(Error::NotEnough { requested: count, available: eligible.len() });
    }
    let mut rng = substream(seed, kind::SAMPLE, cluster, round);
    let mut picked: Vec<u64> = rand::seq::index::sample(&mut rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Clone, Debug)]
struct PoolEntry {
    round: u64,
    indices: Vec<usize>,
    labels: Vec<u8>,
}

/// Training pool of one cluster: the union over rounds of contributed
/// shards, keyed by client id. Re-contribution replaces the old entry, so
/// a client sampled twice does not double its weight. An optional sample
/// cap evicts whole entries, oldest round first (lowest id breaking ties),
/// keeping at least the newest contribution.
#[derive(Clone, Debug, Default)]
pub struct ClusterPool {
    entries: BTreeMap<u64, PoolEntry>,
    cap: Option<usize>,
}

impl ClusterPool {
    pub fn new(cap: Option<usize>) -> Self {
        Self { entries: BTreeMap::new(), cap }
    }

    pub fn contribute(&mut self, shard: &ClientShard, round: u64) {
        self.entries.insert(
            shard.client_id,
            PoolEntry { round, indices: shard.indices.clone(), labels: shard.labels.clone() },
        );
        if let Some(cap) = self.cap {
            while self.sample_count() > cap && self.entries.len() > 1 {
                let victim = self
                    .entries
                    .iter()
                    .min_by_key(|(id, e)| (e.round, **id))
                    .map(|(id, _)| *id)
                    .expect("pool is non-empty");
                self.entries.remove(&victim);
            }
        }
    }

    pub fn client_count(&self) -> usize {
        self.entries.len()
    }

    pub fn sample_count(&self) -> usize {
        self.entries.values().map(|e| e.indices.len()).sum()
    }

    pub fn contains(&self, client_id: u64) -> bool {
        self.entries.contains_key(&client_id)
    }

    /// Materialized training view in ascending client-id order; identical
    /// pools give identical views regardless of insertion history.
    pub fn view<'a>(&self, data: &'a Dataset) -> PoolSamples<'a> {
        let mut indices = Vec::with_capacity(self.sample_count());
        let mut labels = Vec::with_capacity(self.sample_count());
        for e in self.entries.values() {
            indices.extend_from_slice(&e.indices);
            labels.extend_from_slice(&e.labels);
        }
        PoolSamples { data, indices, labels }
    }
}

/// Pool contents flattened for training: pixels come from the shared
/// corpus, labels from the contributing clients' own copies.
pub struct PoolSamples<'a> {
    data: &'a Dataset,
    indices: Vec<usize>,
    labels: Vec<u8>,
}

impl Samples for PoolSamples<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }
    fn write_input(&self, idx: usize, out: &mut [f64]) {
        self.data.write_input(self.indices[idx], out);
    }
    fn label(&self, idx: usize) -> usize {
        self.labels[idx] as usize
    }
}

/// Bundles the fixed corpus splits one experiment uses.
#[derive(Clone)]
pub struct Corpus {
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    pub root: Arc<Dataset>,
}

impl Corpus {
    /// Synthesizes train/test/root splits of the standard corpus.
    pub fn synthetic(train: usize, test: usize, root: usize) -> Self {
        Self {
            train: Arc::new(synth::dataset(train, synth::TAG_TRAIN)),
            test: Arc::new(synth::dataset(test, synth::TAG_TEST)),
            root: Arc::new(synth::dataset(root, synth::TAG_ROOT)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        synth::dataset(300, synth::TAG_TRAIN)
    }

    #[test]
    fn shards_are_distinct_within_and_shared_across() {
        let data = tiny();
        let shards = shard_clients(&data, 40, 60, 7).unwrap();
        assert_eq!(shards.len(), 40);
        for s in &shards {
            assert_eq!(s.indices.len(), 60);
            let mut sorted = s.indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 60, "client {} repeats a sample", s.client_id);
        }
        // 40 clients x 60 of 300 samples: the pigeonhole forces overlap
        // across clients, which is allowed.
        let all: std::collections::HashSet<usize> =
            shards.iter().flat_map(|s| s.indices.iter().copied()).collect();
        assert!(all.len() < 40 * 60);

        let again = shard_clients(&data, 40, 60, 7).unwrap();
        assert_eq!(shards[3].indices, again[3].indices);
        let other = shard_clients(&data, 40, 60, 8).unwrap();
        assert_ne!(shards[3].indices, other[3].indices);
    }

    #[test]
    fn shard_size_cannot_exceed_corpus() {
        let data = tiny();
        assert!(matches!(
            shard_clients(&data, 2, 301, 1),
            Err(Error::NotEnough { .. })
        ));
    }

    #[test]
    fn client_sampling_is_per_cluster_round_deterministic() {
        let eligible: Vec<u64> = (100..160).collect();
        let a = sample_clients(&eligible, 10, 5, 2, 30).unwrap();
        let b = sample_clients(&eligible, 10, 5, 2, 30).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]), "sorted and distinct");
        assert!(a.iter().all(|id| eligible.contains(id)));

        assert_ne!(a, sample_clients(&eligible, 10, 5, 2, 31).unwrap());
        assert_ne!(a, sample_clients(&eligible, 10, 5, 3, 30).unwrap());
        assert!(matches!(
            sample_clients(&eligible, 61, 5, 0, 0),
            Err(Error::NotEnough { .. })
        ));
    }

    fn shard(client_id: u64, indices: Vec<usize>) -> ClientShard {
        let labels = indices.iter().map(|&i| (i % 10) as u8).collect();
        ClientShard { client_id, indices, labels }
    }

    #[test]
    fn pool_union_is_keyed_by_client() {
        let mut pool = ClusterPool::new(None);
        for c in 0..10u64 {
            pool.contribute(&shard(c, vec![c as usize; 200]), 1);
        }
        assert_eq!(pool.sample_count(), 2000);
        for c in 10..20u64 {
            pool.contribute(&shard(c, vec![c as usize; 200]), 2);
        }
        assert_eq!(pool.sample_count(), 4000);
        // Re-contribution replaces instead of duplicating.
        pool.contribute(&shard(3, vec![3; 200]), 3);
        assert_eq!(pool.sample_count(), 4000);
        assert_eq!(pool.client_count(), 20);
    }

    #[test]
    fn pool_view_is_insertion_order_independent() {
        let data = Dataset::new(vec![0; 30], vec![7; 30], 1, 1).unwrap();
        let mut a = ClusterPool::new(None);
        let mut b = ClusterPool::new(None);
        a.contribute(&shard(1, vec![10, 11]), 1);
        a.contribute(&shard(2, vec![20]), 1);
        b.contribute(&shard(2, vec![20]), 1);
        b.contribute(&shard(1, vec![10, 11]), 1);
        assert_eq!(a.view(&data).indices, b.view(&data).indices);
        assert_eq!(a.view(&data).indices, vec![10, 11, 20]);
        // Labels come from the shard copies, not the corpus.
        assert_eq!(a.view(&data).label(0), 0);
        assert_eq!(data.label(10), 7);
    }

    #[test]
    fn pool_cap_evicts_oldest_rounds_first() {
        let mut pool = ClusterPool::new(Some(5));
        pool.contribute(&shard(1, vec![1, 2]), 1);
        pool.contribute(&shard(2, vec![3, 4]), 2);
        pool.contribute(&shard(3, vec![5, 6]), 3);
        // 6 samples > 5: round-1 entry goes.
        assert!(!pool.contains(1));
        assert!(pool.contains(2) && pool.contains(3));
        assert_eq!(pool.sample_count(), 4);

        // An oversized single entry survives; the pool never evicts the
        // newest contribution below one entry.
        let mut pool = ClusterPool::new(Some(3));
        pool.contribute(&shard(7, vec![0; 10]), 1);
        assert_eq!(pool.client_count(), 1);
        pool.contribute(&shard(8, vec![0; 4]), 2);
        assert!(pool.contains(8) && !pool.contains(7));
    }

    #[test]
    fn dataset_normalizes_pixels_for_training() {
        let data = Dataset::new(vec![0, 51, 102, 255], vec![0, 1], 1, 2).unwrap();
        let mut buf = [0.0; 2];
        data.write_input(1, &mut buf);
        assert!((buf[0] - 0.4).abs() < 1e-12);
        assert!((buf[1] - 1.0).abs() < 1e-12);
        let view = IndexView { data: &data, indices: &[1] };
        assert_eq!(view.len(), 1);
        assert_eq!(view.label(0), 1);
    }

    #[test]
    fn take_keeps_a_prefix() {
        let data = tiny();
        let head = data.take(10).unwrap();
        assert_eq!(head.len(), 10);
        assert_eq!(head.labels(), &data.labels()[..10]);
        assert_eq!(head.pixels(), &data.pixels()[..10 * data.input_len()]);
        assert!(matches!(data.take(0), Err(Error::NotEnough { .. })));
        assert!(matches!(data.take(301), Err(Error::NotEnough { .. })));
    }

    #[test]
    fn idx_files_roundtrip_through_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth::dataset(25, synth::TAG_TEST);
        let img = dir.path().join("img.idx");
        let lbl = dir.path().join("lbl.idx");
        d.write_idx_files(&img, &lbl).unwrap();
        let back = Dataset::from_idx_files(&img, &lbl).unwrap();
        assert_eq!(back.pixels(), d.pixels());
        assert_eq!(back.labels(), d.labels());

        // Count mismatch between the two files is rejected.
        idx::write_idx_labels(&lbl, &[1, 2, 3]).unwrap();
        assert!(matches!(Dataset::from_idx_files(&img, &lbl), Err(Error::Idx(_))));
    }
}
