//! Run configuration: a flat dotted-key text format, defaults matching the
//! reference parameter tables, and the desk-scale presets the scenarios
//! use.
//!
//! A config file is `key = value` lines; `#` starts a comment, blank lines
//! are skipped, and every key may appear at most once. `topology.mode` (or
//! the shorthand `mode`) is read first because the defaults differ between
//! flat and clustered runs; all other keys override in file order. The
//! `data.*` sizing keys apply to the data source selected by
//! `data.source`, so that key belongs before them.
//!
//! [`RunConfig::echo`] renders a config back out in canonical order;
//! parsing the echo reproduces the config exactly, which is what lets an
//! output directory double as a rerun recipe.

use std::path::{Path, PathBuf};

use crate::agg::Aggregator;
use crate::attacks::{AttackKind, Placement};
use crate::data::{Corpus, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Architecture, LayerSpec, TrainSpec};
use crate::orchestrator::{configure, Mode, RunPlan};
use crate::sharing::{BackendKind, CostModel};
use std::sync::Arc;

/// Aggregation rule by name; the trim/trust parameters live in their own
/// keys and are assembled into an [`Aggregator`] by [`RunConfig::plan`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RuleKind {
    FedAvg,
    TrimmedMean,
    TmVariant,
    FlTrust,
}

impl RuleKind {
    pub fn label(self) -> &'static str {
        match self {
            RuleKind::FedAvg => "fedAvg",
            RuleKind::TrimmedMean => "trimmedMean",
            RuleKind::TmVariant => "tmVariant",
            RuleKind::FlTrust => "flTrust",
        }
    }

    pub fn parse(s: &str) -> Result<RuleKind> {
        match s {
            "fedAvg" => Ok(RuleKind::FedAvg),
            "trimmedMean" => Ok(RuleKind::TrimmedMean),
            "tmVariant" => Ok(RuleKind::TmVariant),
            "flTrust" => Ok(RuleKind::FlTrust),
            other => Err(Error::Config {
                key: "agg.rule".into(),
                reason: format!("unknown rule {other}"),
            }),
        }
    }
}

/// Attack by name; the targeted flip's source/target classes live in
/// `attack.source` / `attack.target`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AttackName {
    None,
    Rlf,
    Slf,
    Tlf,
    Dlf,
}

impl AttackName {
    pub fn label(self) -> &'static str {
        match self {
            AttackName::None => "none",
            AttackName::Rlf => "rlf",
            AttackName::Slf => "slf",
            AttackName::Tlf => "tlf",
            AttackName::Dlf => "dlf",
        }
    }

    pub fn parse(s: &str) -> Result<AttackName> {
        match s {
            "none" => Ok(AttackName::None),
            "rlf" => Ok(AttackName::Rlf),
            "slf" => Ok(AttackName::Slf),
            "tlf" => Ok(AttackName::Tlf),
            "dlf" => Ok(AttackName::Dlf),
            other => Err(Error::Config {
                key: "attack.kind".into(),
                reason: format!("unknown attack {other}"),
            }),
        }
    }
}

fn parse_placement(s: &str) -> Result<Placement> {
    match s {
        "equal" => Ok(Placement::EquallyDistributed),
        "focused" => Ok(Placement::Focused),
        "clusterFocused" => Ok(Placement::ClusterFocused),
        other => Err(Error::Config {
            key: "attack.placement".into(),
            reason: format!("unknown placement {other}"),
        }),
    }
}

fn parse_backend(s: &str) -> Result<BackendKind> {
    match s {
        "float" => Ok(BackendKind::Float),
        "fixedSim" => Ok(BackendKind::FixedSim),
        "multiPartyInProcess" => Ok(BackendKind::MultiPartyInProcess),
        other => Err(Error::Config {
            key: "backend".into(),
            reason: format!("unknown backend {other}"),
        }),
    }
}

/// Where the corpus comes from: the built-in generator with split sizes,
/// or IDX image/label file pairs on disk. The trust-root split is sized by
/// `trust.root` either way; file-backed corpora carve it off the head of
/// the training split.
#[derive(Clone, PartialEq, Debug)]
pub enum DataSource {
    Synthetic { train: usize, test: usize },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

/// One experiment, fully keyed. Field for field this mirrors the config
/// file; [`RunConfig::plan`] turns it into the orchestrator's input.
#[derive(Clone, PartialEq, Debug)]
pub struct RunConfig {
    pub mode: Mode,
    pub clients: usize,
    pub clusters: usize,
    /// Clients per cluster per round (clustered) or per round overall
    /// (flat); see [`configure`].
    pub sampled: usize,
    pub rounds: u64,
    pub backend: BackendKind,
    pub frac_bits: u32,
    pub arch: Architecture,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub rule: RuleKind,
    pub on_deltas: bool,
    /// Models trimmed per side by the robust rules.
    pub alpha: usize,
    /// Coordinates the sampled trim variant looks at.
    pub beta: usize,
    /// Size of the clean root split backing the trust scores.
    pub root_size: usize,
    pub attack: AttackName,
    pub rate: f64,
    pub placement: Placement,
    pub source: u8,
    pub target: u8,
    pub data: DataSource,
    pub shard: usize,
    /// Per-cluster pool cap in samples; 0 means unbounded.
    pub pool_cap: usize,
    /// Cross-check accuracy through fixed-point inference every this many
    /// rounds; 0 disables.
    pub fixed_every: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub parallel: bool,
}

impl RunConfig {
    /// Full-scale defaults from the reference parameter tables: 1000
    /// clients in 10 clusters, shards of 200, five local epochs, and the
    /// batch/learning-rate pairing that differs between flat runs (8 /
    /// 0.005, trim 20) and clustered runs (80 / 0.05, trim 2).
    pub fn paper(mode: Mode) -> RunConfig {
        let flat = mode.is_flat();
        RunConfig {
            mode,
            clients: 1000,
            clusters: 10,
            sampled: if flat { 100 } else { 10 },
            rounds: 2000,
            backend: BackendKind::FixedSim,
            frac_bits: 22,
            arch: Architecture::lenet(),
            epochs: 5,
            batch: if flat { 8 } else { 80 },
            lr: if flat { 0.005 } else { 0.05 },
            momentum: 0.0,
            weight_decay: 0.0,
            rule: RuleKind::FedAvg,
            on_deltas: true,
            alpha: if flat { 20 } else { 2 },
            beta: 100,
            root_size: 200,
            attack: AttackName::None,
            rate: 0.0,
            placement: Placement::EquallyDistributed,
            source: 0,
            target: 1,
            data: DataSource::Synthetic { train: 60_000, test: 10_000 },
            shard: 200,
            pool_cap: 0,
            fixed_every: 10,
            seed: 42,
            out_dir: PathBuf::from("runs/out"),
            parallel: true,
        }
    }

    /// Desk-scale preset: 200 clients, 10 clusters, 20 participating
    /// clients per round, an MLP instead of the convolutional net, 100
    /// rounds over a 2000-sample corpus. Every scenario builds on this;
    /// full scale is a flag away. The batch/learning-rate pairing keeps
    /// the tenfold scaling of the big tables, and the trim width shrinks
    /// with the flat participant count (20 of 100 becomes 4 of 20).
    pub fn desk(mode: Mode) -> RunConfig {
        let flat = mode.is_flat();
        RunConfig {
            sampled: if flat { 20 } else { 2 },
            rounds: 100,
            backend: BackendKind::Float,
            arch: Architecture::mlp(&[784, 128, 10]),
            clients: 200,
            batch: if flat { 8 } else { 80 },
            lr: if flat { 0.02 } else { 0.2 },
            alpha: if flat { 4 } else { 2 },
            data: DataSource::Synthetic { train: 2000, test: 1000 },
            shard: 10,
            ..RunConfig::paper(mode)
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses a config document on top of the full-scale defaults and
    /// validates the result. An empty document is the clustered default
    /// table verbatim.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let pairs = split_pairs(text)?;
        let mode = match pairs.iter().find(|(k, _)| k == "mode" || k == "topology.mode") {
            Some((_, v)) => Mode::parse(v)?,
            None => Mode::Hyfl,
        };
        let mut cfg = RunConfig::paper(mode);
        for (key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" | "topology.mode" => self.mode = Mode::parse(value)?,
            "topology.clients" => self.clients = want(key, value)?,
            "topology.clusters" => self.clusters = want(key, value)?,
            "topology.sampled" => self.sampled = want(key, value)?,
            "rounds" => self.rounds = want(key, value)?,
            "backend" => self.backend = parse_backend(value)?,
            "frac_bits" => self.frac_bits = want(key, value)?,
            "model.arch" => self.arch = parse_arch(value)?,
            "train.epochs" => self.epochs = want(key, value)?,
            "train.batch" => self.batch = want(key, value)?,
            "train.lr" => self.lr = want(key, value)?,
            "train.momentum" => self.momentum = want(key, value)?,
            "train.weight_decay" => self.weight_decay = want(key, value)?,
            "agg.rule" => self.rule = RuleKind::parse(value)?,
            "agg.deltas" => self.on_deltas = want(key, value)?,
            "trim.alpha" => self.alpha = want(key, value)?,
            "trim.beta" => self.beta = want(key, value)?,
            "trust.root" => self.root_size = want(key, value)?,
            "attack.kind" => self.attack = AttackName::parse(value)?,
            "attack.rate" => self.rate = want(key, value)?,
            "attack.placement" => self.placement = parse_placement(value)?,
            "attack.source" => self.source = want(key, value)?,
            "attack.target" => self.target = want(key, value)?,
            "data.source" => {
                self.data = match value {
                    "synthetic" => DataSource::Synthetic { train: 60_000, test: 10_000 },
                    "idx" => DataSource::Idx {
                        train_images: PathBuf::new(),
                        train_labels: PathBuf::new(),
                        test_images: PathBuf::new(),
                        test_labels: PathBuf::new(),
                    },
                    other => {
                        return Err(Error::Config {
                            key: key.into(),
                            reason: format!("unknown source {other}"),
                        })
                    }
                }
            }
            "data.train" => match &mut self.data {
                DataSource::Synthetic { train, .. } => *train = want(key, value)?,
                _ => return Err(synthetic_only(key)),
            },
            "data.test" => match &mut self.data {
                DataSource::Synthetic { test, .. } => *test = want(key, value)?,
                _ => return Err(synthetic_only(key)),
            },
            "data.train_images" => *idx_path(&mut self.data, 0, key)? = value.into(),
            "data.train_labels" => *idx_path(&mut self.data, 1, key)? = value.into(),
            "data.test_images" => *idx_path(&mut self.data, 2, key)? = value.into(),
            "data.test_labels" => *idx_path(&mut self.data, 3, key)? = value.into(),
            "data.shard" => self.shard = want(key, value)?,
            "pool.cap" => self.pool_cap = want(key, value)?,
            "eval.fixed_every" => self.fixed_every = want(key, value)?,
            "seed" => self.seed = want(key, value)?,
            "output" => self.out_dir = value.into(),
            "parallel" => self.parallel = want(key, value)?,
            other => return Err(Error::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Cross-field constraints, each error naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Error::Config { key: key.into(), reason };
        // Topology feasibility; a more-than-three-layer hierarchy parses
        // but only fails once something tries to build it.
        if self.mode != Mode::Hierarchical {
            configure(self.mode, self.clients, self.clusters, self.sampled)?;
        }
        if !(1..=30).contains(&self.frac_bits) {
            return Err(bad("frac_bits", format!("{} is outside 1..=30", self.frac_bits)));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(bad("train.epochs", "epochs and batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("train.lr", format!("{} is not a positive rate", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(bad("attack.rate", format!("{} is outside [0, 1]", self.rate)));
        }
        if self.attack == AttackName::Tlf {
            let classes = self.arch.classes() as u8;
            if self.source == self.target || self.source >= classes || self.target >= classes {
                return Err(bad(
                    "attack.source",
                    format!(
                        "flip {} -> {} needs two distinct classes below {classes}",
                        self.source, self.target
                    ),
                ));
            }
        }
        let m = self.model_count();
        if matches!(self.rule, RuleKind::TrimmedMean | RuleKind::TmVariant) && 2 * self.alpha >= m
        {
            return Err(bad(
                "trim.alpha",
                format!("2*alpha = {} must stay below the {m} aggregated models", 2 * self.alpha),
            ));
        }
        if self.rule == RuleKind::TmVariant
            && !(1..=self.arch.param_count()).contains(&self.beta)
        {
            return Err(bad(
                "trim.beta",
                format!("{} is outside 1..={} model coordinates", self.beta, self.arch.param_count()),
            ));
        }
        if self.root_size == 0 && self.rule == RuleKind::FlTrust {
            return Err(bad("trust.root", "trust scoring needs a non-empty root split".into()));
        }
        if self.shard == 0 {
            return Err(bad("data.shard", "shards must hold at least one sample".into()));
        }
        match &self.data {
            DataSource::Synthetic { train, test } => {
                if *test == 0 {
                    return Err(bad("data.test", "the test split cannot be empty".into()));
                }
                if self.shard > *train {
                    return Err(bad(
                        "data.shard",
                        format!("shard of {} exceeds the {train}-sample training split", self.shard),
                    ));
                }
            }
            DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
                for (key, p) in [
                    ("data.train_images", train_images),
                    ("data.train_labels", train_labels),
                    ("data.test_images", test_images),
                    ("data.test_labels", test_labels),
                ] {
                    if p.as_os_str().is_empty() {
                        return Err(bad(key, "required for data.source = idx".into()));
                    }
                }
            }
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(bad("output", "output directory cannot be empty".into()));
        }
        Ok(())
    }

    /// How many models the global committee aggregates per round.
    pub fn model_count(&self) -> usize {
        if self.mode.is_flat() {
            self.sampled
        } else {
            self.clusters
        }
    }

    pub fn aggregator(&self) -> Aggregator {
        match self.rule {
            RuleKind::FedAvg => Aggregator::FedAvg,
            RuleKind::TrimmedMean => Aggregator::TrimmedMean { alpha: self.alpha },
            RuleKind::TmVariant => Aggregator::TmVariant { alpha: self.alpha, beta: self.beta },
            RuleKind::FlTrust => Aggregator::FlTrust,
        }
    }

    pub fn attack_kind(&self) -> AttackKind {
        match self.attack {
            AttackName::None => AttackKind::None,
            AttackName::Rlf => AttackKind::RandomLabelFlip,
            AttackName::Slf => AttackKind::StaticLabelFlip,
            AttackName::Tlf => {
                AttackKind::TargetedLabelFlip { source: self.source, target: self.target }
            }
            AttackName::Dlf => AttackKind::DynamicLabelFlip,
        }
    }

    /// Validates and assembles the orchestrator's input.
    pub fn plan(&self) -> Result<RunPlan> {
        self.validate()?;
        Ok(RunPlan {
            mode: self.mode,
            backend: self.backend,
            frac_bits: self.frac_bits,
            cost: CostModel::default(),
            rounds: self.rounds,
            clients: self.clients,
            clusters: self.clusters,
            sampled: self.sampled,
            shard_size: self.shard,
            pool_cap: (self.pool_cap > 0).then_some(self.pool_cap),
            arch: self.arch.clone(),
            train: TrainSpec {
                epochs: self.epochs,
                batch_size: self.batch,
                lr: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
            aggregator: self.aggregator(),
            on_deltas: self.on_deltas,
            attack: self.attack_kind(),
            attack_rate: self.rate,
            placement: self.placement,
            seed: self.seed,
            fixed_check_every: self.fixed_every,
            parallel: self.parallel,
        })
    }

    /// Materializes the corpus splits. File-backed corpora donate their
    /// first `trust.root` training samples as the clean root split.
    pub fn corpus(&self) -> Result<Corpus> {
        match &self.data {
            DataSource::Synthetic { train, test } => {
                use crate::data::synth;
                Ok(Corpus {
                    train: Arc::new(synth::dataset(*train, synth::TAG_TRAIN)),
                    test: Arc::new(synth::dataset(*test, synth::TAG_TEST)),
                    root: Arc::new(synth::dataset(self.root_size, synth::TAG_ROOT)),
                })
            }
            DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
                let train = Dataset::from_idx_files(train_images, train_labels)?;
                let test = Dataset::from_idx_files(test_images, test_labels)?;
                let root = train.take(self.root_size)?;
                Ok(Corpus { train: Arc::new(train), test: Arc::new(test), root: Arc::new(root) })
            }
        }
    }

    /// Canonical text form; `parse(echo(c)) == c`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("topology.mode", self.mode.label().into());
        line("topology.clients", self.clients.to_string());
        line("topology.clusters", self.clusters.to_string());
        line("topology.sampled", self.sampled.to_string());
        line("rounds", self.rounds.to_string());
        line("backend", self.backend.label().into());
        line("frac_bits", self.frac_bits.to_string());
        line("model.arch", arch_key(&self.arch));
        line("train.epochs", self.epochs.to_string());
        line("train.batch", self.batch.to_string());
        line("train.lr", self.lr.to_string());
        line("train.momentum", self.momentum.to_string());
        line("train.weight_decay", self.weight_decay.to_string());
        line("agg.rule", self.rule.label().into());
        line("agg.deltas", self.on_deltas.to_string());
        line("trim.alpha", self.alpha.to_string());
        line("trim.beta", self.beta.to_string());
        line("trust.root", self.root_size.to_string());
        line("attack.kind", self.attack.label().into());
        line("attack.rate", self.rate.to_string());
        line("attack.placement", self.placement.label().into());
        line("attack.source", self.source.to_string());
        line("attack.target", self.target.to_string());
        match &self.data {
            DataSource::Synthetic { train, test } => {
                line("data.source", "synthetic".into());
                line("data.train", train.to_string());
                line("data.test", test.to_string());
            }
            DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
                line("data.source", "idx".into());
                line("data.train_images", train_images.display().to_string());
                line("data.train_labels", train_labels.display().to_string());
                line("data.test_images", test_images.display().to_string());
                line("data.test_labels", test_labels.display().to_string());
            }
        }
        line("data.shard", self.shard.to_string());
        line("pool.cap", self.pool_cap.to_string());
        line("eval.fixed_every", self.fixed_every.to_string());
        line("seed", self.seed.to_string());
        line("output", self.out_dir.display().to_string());
        line("parallel", self.parallel.to_string());
        out
    }
}

/// Strips comments, splits `key = value` lines, rejects repeats.
fn split_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            key: format!("line {}", no + 1),
            reason: format!("expected key = value, got {line:?}"),
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if pairs.iter().any(|(seen, _)| *seen == k) {
            return Err(Error::Config {
                key: k,
                reason: "assigned more than once".into(),
            });
        }
        pairs.push((k, v));
    }
    Ok(pairs)
}

fn want<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        key: key.into(),
        reason: format!("cannot read {value:?} as {}", std::any::type_name::<T>()),
    })
}

fn synthetic_only(key: &str) -> Error {
    Error::Config {
        key: key.into(),
        reason: "only meaningful after data.source = synthetic".into(),
    }
}

fn idx_path<'a>(data: &'a mut DataSource, slot: usize, key: &str) -> Result<&'a mut PathBuf> {
    match data {
        DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
            Ok(match slot {
                0 => train_images,
                1 => train_labels,
                2 => test_images,
                _ => test_labels,
            })
        }
        _ => Err(Error::Config {
            key: key.into(),
            reason: "only meaningful after data.source = idx".into(),
        }),
    }
}

/// Accepts `lenet`, `mlp:784,128,10`, or a full layer descriptor
/// (anything containing `|`).
pub fn parse_arch(value: &str) -> Result<Architecture> {
    let bad = |reason: String| Error::Config { key: "model.arch".into(), reason };
    if value == "lenet" {
        return Ok(Architecture::lenet());
    }
    if let Some(dims) = value.strip_prefix("mlp:") {
        let dims: Vec<usize> = dims
            .split(',')
            .map(|d| d.trim().parse().map_err(|_| bad(format!("bad dimension in {value:?}"))))
            .collect::<Result<_>>()?;
        if dims.len() < 2 || dims[0] != 784 {
            return Err(bad("an mlp needs 784 inputs and at least one output layer".into()));
        }
        return Ok(Architecture::mlp(&dims));
    }
    if value.contains('|') {
        return Architecture::parse(value)
            .map_err(|e| bad(format!("bad descriptor: {e}")));
    }
    Err(bad(format!("unknown architecture {value:?}")))
}

/// Renders the shortest name [`parse_arch`] maps back to the same
/// architecture.
pub fn arch_key(arch: &Architecture) -> String {
    if *arch == Architecture::lenet() {
        return "lenet".into();
    }
    if let Some(dims) = mlp_dims(arch) {
        if Architecture::mlp(&dims) == *arch {
            let dims: Vec<String> = dims.iter().map(usize::to_string).collect();
            return format!("mlp:{}", dims.join(","));
        }
    }
    arch.descriptor()
}

fn mlp_dims(arch: &Architecture) -> Option<Vec<usize>> {
    let mut layers = arch.layers.iter();
    if !matches!(layers.next(), Some(LayerSpec::Flatten)) {
        return None;
    }
    let mut dims = Vec::new();
    for (i, l) in layers.filter(|l| !matches!(l, LayerSpec::Relu)).enumerate() {
        match l {
            LayerSpec::Dense { input, output } => {
                if i == 0 {
                    dims.push(*input);
                }
                dims.push(*output);
            }
            _ => return None,
        }
    }
    (dims.len() >= 2).then_some(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_clustered_default_table() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::paper(Mode::Hyfl));
        assert_eq!(
            (c.clients, c.clusters, c.sampled, c.shard),
            (1000, 10, 10, 200)
        );
        assert_eq!((c.epochs, c.batch, c.lr), (5, 80, 0.05));
        assert_eq!((c.alpha, c.root_size), (2, 200));
        let short = RunConfig::parse("mode = HyFL").unwrap();
        assert_eq!(short, c);
    }

    #[test]
    fn flat_defaults_pair_the_small_batch_with_the_small_rate() {
        let c = RunConfig::parse("topology.mode = FlatFL-SingleS").unwrap();
        assert_eq!((c.batch, c.lr), (8, 0.005));
        assert_eq!(c.sampled, 100);
        assert_eq!(c.alpha, 20);
        // The clustered config scales both tenfold.
        let h = RunConfig::parse("").unwrap();
        assert_eq!((h.batch, h.lr), (10 * c.batch, 10.0 * c.lr));
    }

    #[test]
    fn overrides_apply_regardless_of_mode_key_position() {
        let a = RunConfig::parse("train.lr = 0.1\ntopology.mode = FlatFL-MultiS").unwrap();
        let b = RunConfig::parse("topology.mode = FlatFL-MultiS\ntrain.lr = 0.1").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lr, 0.1);
        assert_eq!(a.batch, 8, "non-overridden fields keep the flat default");
    }

    #[test]
    fn bad_input_names_the_offending_key() {
        let wide = RunConfig::parse("agg.rule = trimmedMean\ntrim.alpha = 5").unwrap_err();
        match wide {
            Error::Config { key, reason } => {
                assert_eq!(key, "trim.alpha");
                assert!(reason.contains("10 aggregated models"), "{reason}");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(matches!(
            RunConfig::parse("rounds = soon"),
            Err(Error::Config { key, .. }) if key == "rounds"
        ));
        assert!(matches!(
            RunConfig::parse("totally.unknown = 1"),
            Err(Error::UnknownKey(k)) if k == "totally.unknown"
        ));
        assert!(matches!(
            RunConfig::parse("rounds = 5\nrounds = 6"),
            Err(Error::Config { key, .. }) if key == "rounds"
        ));
        assert!(matches!(
            RunConfig::parse("rounds"),
            Err(Error::Config { key, .. }) if key == "line 1"
        ));
    }

    #[test]
    fn comments_and_spacing_are_cosmetic() {
        let c = RunConfig::parse(
            "# a run\n\n  rounds=7   # short\n\ttrain.lr = 0.25\n",
        )
        .unwrap();
        assert_eq!(c.rounds, 7);
        assert_eq!(c.lr, 0.25);
    }

    #[test]
    fn echo_roundtrips_exactly() {
        let mut tweaked = RunConfig::desk(Mode::FlatMulti);
        tweaked.rule = RuleKind::TmVariant;
        tweaked.alpha = 3;
        tweaked.beta = 55;
        tweaked.attack = AttackName::Tlf;
        tweaked.rate = 0.1;
        tweaked.source = 3;
        tweaked.target = 6;
        tweaked.pool_cap = 400;
        tweaked.data = DataSource::Idx {
            train_images: "d/tri.idx".into(),
            train_labels: "d/trl.idx".into(),
            test_images: "d/tei.idx".into(),
            test_labels: "d/tel.idx".into(),
        };
        for cfg in [
            RunConfig::paper(Mode::Hyfl),
            RunConfig::paper(Mode::FlatSingle),
            RunConfig::desk(Mode::Hyfl),
            RunConfig::desk(Mode::FlatSingle),
            tweaked,
        ] {
            let back = RunConfig::parse(&cfg.echo()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn arch_names_cover_all_three_forms() {
        assert_eq!(parse_arch("lenet").unwrap(), Architecture::lenet());
        assert_eq!(
            parse_arch("mlp:784,64,10").unwrap(),
            Architecture::mlp(&[784, 64, 10])
        );
        let lenet = Architecture::lenet();
        assert_eq!(parse_arch(&lenet.descriptor()).unwrap(), lenet);
        assert_eq!(arch_key(&lenet), "lenet");
        assert_eq!(arch_key(&Architecture::mlp(&[784, 128, 10])), "mlp:784,128,10");
        assert!(parse_arch("mlp:10,10").is_err());
        assert!(parse_arch("resnet").is_err());
    }

    #[test]
    fn plan_assembles_the_parameterized_rules() {
        let mut c = RunConfig::desk(Mode::Hyfl);
        c.rule = RuleKind::TmVariant;
        c.beta = 17;
        let plan = c.plan().unwrap();
        assert_eq!(plan.aggregator, Aggregator::TmVariant { alpha: 2, beta: 17 });
        assert_eq!(plan.train.batch_size, 80);
        assert_eq!(plan.pool_cap, None);

        c.attack = AttackName::Tlf;
        c.rate = 0.2;
        c.source = 0;
        c.target = 1;
        let plan = c.plan().unwrap();
        assert_eq!(plan.attack, AttackKind::TargetedLabelFlip { source: 0, target: 1 });

        c.target = 0;
        assert!(matches!(
            c.plan(),
            Err(Error::Config { key, .. }) if key == "attack.source"
        ));
    }

    #[test]
    fn hierarchy_parses_but_never_builds() {
        let c = RunConfig::parse("topology.mode = Hierarchical").unwrap();
        assert_eq!(c.mode, Mode::Hierarchical);
        let err = crate::orchestrator::Session::new(c.plan().unwrap(), c.corpus_tiny())
            .map(|_| ())
            .unwrap_err();
        assert!(matches!(err, Error::NotImplemented(_)));
    }

    #[test]
    fn file_backed_corpus_carves_the_root_split() {
        let dir = tempfile::tempdir().unwrap();
        let train = crate::data::synth::dataset(40, crate::data::synth::TAG_TRAIN);
        let test = crate::data::synth::dataset(12, crate::data::synth::TAG_TEST);
        let paths: Vec<PathBuf> =
            ["tri", "trl", "tei", "tel"].iter().map(|n| dir.path().join(n)).collect();
        train.write_idx_files(&paths[0], &paths[1]).unwrap();
        test.write_idx_files(&paths[2], &paths[3]).unwrap();

        let mut c = RunConfig::desk(Mode::Hyfl);
        c.data = DataSource::Idx {
            train_images: paths[0].clone(),
            train_labels: paths[1].clone(),
            test_images: paths[2].clone(),
            test_labels: paths[3].clone(),
        };
        c.root_size = 5;
        let corpus = c.corpus().unwrap();
        assert_eq!(corpus.train.labels(), train.labels());
        assert_eq!(corpus.test.labels(), test.labels());
        assert_eq!(corpus.root.labels(), &train.labels()[..5]);

        let missing = RunConfig::parse("data.source = idx");
        assert!(matches!(missing, Err(Error::Config { key, .. }) if key == "data.train_images"));
    }

    #[test]
    fn sizing_keys_require_their_source() {
        assert!(matches!(
            RunConfig::parse("data.source = idx\ndata.train = 9"),
            Err(Error::Config { key, .. }) if key == "data.train"
        ));
        assert!(matches!(
            RunConfig::parse("data.train_images = x.idx"),
            Err(Error::Config { key, .. }) if key == "data.train_images"
        ));
    }

    impl RunConfig {
        /// Small corpus for tests that only need `Session::new` to run.
        fn corpus_tiny(&self) -> Corpus {
            Corpus::synthetic(60, 20, 10)
        }
    }
}
