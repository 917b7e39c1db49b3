//! The training round loop and the post-training inference service.
//!
//! One [`Session`] owns the sharing engine, the client shards, the per
//! cluster data pools and the current global model shares. Each round:
//! the global committee reshares the model down to every active cluster,
//! the cluster samples clients, new clients share their data shard into
//! the cluster pool, the cluster trains behind the functionality boundary,
//! reshares the result up, and the global committee aggregates. The model
//! never exists in the clear anywhere except inside that boundary and at
//! the metrics sink.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::agg::{
    self, carrier_for, network::schedule_depth, network::sort_schedule, Aggregator,
};
use crate::attacks::{malicious_count, place_malicious, poison_shards, AttackKind, Placement};
use crate::data::{sample_clients, shard_clients, ClientShard, ClusterPool, Corpus};
use crate::error::{Error, Result};
use crate::nn::{
    argmax, evaluate, predict_counted, train, Architecture, Model, TrainSpec, TrainStats,
};
use crate::rng::{kind, substream};
use crate::fixed::FixedVec;
use crate::sharing::{
    charge_beaver, charge_compare, charge_share, engine_for, BackendKind, Boundary, Carrier,
    Committee, CostModel, CostSnapshot, RevealSink, ShareEngine, ShareSet,
};

/// Who trains where.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// One plain server; every client trains its own model in the clear
    /// and uploads it.
    FlatSingle,
    /// Clients still train alone, but the aggregation layer is a
    /// multi-party committee.
    FlatMulti,
    /// More than three layers. Recognized, never built.
    Hierarchical,
    /// Clients share data into multi-party training clusters under a
    /// multi-party global committee.
    Hyfl,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::FlatSingle => "FlatFL-SingleS",
            Mode::FlatMulti => "FlatFL-MultiS",
            Mode::Hierarchical => "Hierarchical",
            Mode::Hyfl => "HyFL",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "FlatFL-SingleS" => Ok(Mode::FlatSingle),
            "FlatFL-MultiS" => Ok(Mode::FlatMulti),
            "Hierarchical" => Ok(Mode::Hierarchical),
            "HyFL" => Ok(Mode::Hyfl),
            other => Err(Error::Config {
                key: "topology.mode".into(),
                reason: format!("unknown mode {other}"),
            }),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Mode::FlatSingle | Mode::FlatMulti)
    }
}

/// Cluster membership and per-round sampling shape.
#[derive(Clone, Debug)]
pub struct Topology {
    pub mode: Mode,
    /// Client ids per cluster. Flat modes degenerate to singletons.
    pub clusters: Vec<Vec<u64>>,
    /// Clients drawn inside each active cluster per round.
    pub sampled_per_cluster: usize,
    /// Clusters active per round: all of them in clustered mode, a fresh
    /// draw of this many in flat mode.
    pub active_per_round: usize,
}

impl Topology {
    pub fn cluster_of(&self, client: u64) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&client))
    }
}

/// Builds the degenerate or full topology for a mode.
///
/// `sampled` means "clients per cluster per round" in clustered mode and
/// "clients selected per round overall" in the flat modes, matching how
/// flat training is usually parameterized.
pub fn configure(mode: Mode, clients: usize, clusters: usize, sampled: usize) -> Result<Topology> {
    if clients == 0 || sampled == 0 {
        return Err(Error::Config {
            key: "topology".into(),
            reason: "clients and sampled must be positive".into(),
        });
    }
    match mode {
        Mode::Hierarchical => {
            Err(Error::NotImplemented("hierarchical topologies beyond three layers".into()))
        }
        Mode::FlatSingle | Mode::FlatMulti => {
            if sampled > clients {
                return Err(Error::NotEnough { requested: sampled, available: clients });
            }
            Ok(Topology {
                mode,
                clusters: (0..clients as u64).map(|id| vec![id]).collect(),
                sampled_per_cluster: 1,
                active_per_round: sampled,
            })
        }
        Mode::Hyfl => {
            if clusters == 0 || clusters > clients {
                return Err(Error::Config {
                    key: "topology.clusters".into(),
                    reason: format!("cannot split {clients} clients into {clusters} clusters"),
                });
            }
            // spread the remainder over the leading clusters
            let base = clients / clusters;
            let extra = clients % clusters;
            let mut groups = Vec::with_capacity(clusters);
            let mut next = 0u64;
            for k in 0..clusters {
                let size = base + usize::from(k < extra);
                groups.push((next..next + size as u64).collect::<Vec<u64>>());
                next += size as u64;
            }
            let smallest = groups.iter().map(Vec::len).min().unwrap_or(0);
            if sampled > smallest {
                return Err(Error::NotEnough { requested: sampled, available: smallest });
            }
            Ok(Topology {
                mode,
                clusters: groups,
                sampled_per_cluster: sampled,
                active_per_round: clusters,
            })
        }
    }
}

/// Everything one run needs. Preset constructors live in [`crate::config`].
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub mode: Mode,
    pub backend: BackendKind,
    pub frac_bits: u32,
    pub cost: CostModel,
    pub rounds: u64,
    pub clients: usize,
    pub clusters: usize,
    /// See [`configure`] for what this counts per mode.
    pub sampled: usize,
    pub shard_size: usize,
    pub pool_cap: Option<usize>,
    pub arch: Architecture,
    pub train: TrainSpec,
    pub aggregator: Aggregator,
    /// Aggregate model deltas against the previous global model instead of
    /// raw parameters.
    pub on_deltas: bool,
    pub attack: AttackKind,
    pub attack_rate: f64,
    pub placement: Placement,
    pub seed: u64,
    /// Also evaluate through the fixed-point path every this many rounds;
    /// 0 disables the cross-check.
    pub fixed_check_every: u64,
    /// Run cluster tasks on the thread pool. The result is identical
    /// either way; see `parallel_and_sequential_agree`.
    pub parallel: bool,
}

/// What one round left behind.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    /// Top-1 accuracy of the revealed model on the test split, float path.
    pub accuracy: f64,
    /// Same model pushed through fixed-point inference, at the configured
    /// cadence.
    pub fixed_accuracy: Option<f64>,
    pub excluded: Vec<u64>,
    pub scores: Vec<f64>,
    /// Meter movement of the aggregation step alone.
    pub agg_cost: CostSnapshot,
    /// Meter movement of the whole round.
    pub round_cost: CostSnapshot,
}

const GLOBAL: &str = "g";

fn cluster_committee(k: usize) -> String {
    format!("e{k}")
}

fn client_label(id: u64) -> String {
    format!("client:{id}")
}

/// A configured run: engine, data, pools and the secret-shared model.
pub struct Session {
    plan: RunPlan,
    corpus: Corpus,
    topology: Topology,
    engine: Mutex<Box<dyn ShareEngine>>,
    shards: Vec<ClientShard>,
    pools: Vec<ClusterPool>,
    malicious: BTreeSet<u64>,
    poisoned_labels: usize,
    global: Option<ShareSet>,
    /// Model copies parked at cluster committees for inference.
    served: BTreeMap<usize, ShareSet>,
}

impl Session {
    pub fn new(plan: RunPlan, corpus: Corpus) -> Result<Session> {
        let topology = configure(plan.mode, plan.clients, plan.clusters, plan.sampled)?;
        let mut engine = engine_for(plan.backend, plan.frac_bits, plan.cost, plan.seed);

        let global_committee = match plan.mode {
            Mode::FlatSingle => Committee::solo(GLOBAL, None),
            _ => Committee::standard(GLOBAL),
        };
        engine.register(global_committee)?;
        for (k, members) in topology.clusters.iter().enumerate() {
            let c = match plan.mode {
                Mode::Hyfl => Committee::standard(cluster_committee(k)),
                // a flat client is its own training committee
                _ => Committee::solo(cluster_committee(k), Some(client_label(members[0]))),
            };
            engine.register(c)?;
        }

        let mut shards =
            shard_clients(&corpus.train, plan.clients, plan.shard_size, plan.seed)?;
        let count = malicious_count(plan.attack_rate, plan.clients);
        let malicious = place_malicious(&topology.clusters, count, plan.placement, plan.seed)?;
        let poisoned_labels = poison_shards(
            &mut shards,
            &malicious,
            plan.attack,
            &corpus.train,
            &plan.arch,
            plan.arch.classes(),
            plan.seed,
        )?;

        // The starting model is derived from the public seed, so it is
        // common knowledge: a trivial sharing costs nothing.
        let m0 = Model::init(plan.arch.clone(), plan.seed)?;
        let init = carrier_for(plan.backend, plan.frac_bits, &m0.params.to_f64_vec())?;
        let global = engine.constant(&init, GLOBAL)?;

        let pools = vec![ClusterPool::new(plan.pool_cap); topology.clusters.len()];
        Ok(Session {
            plan,
            corpus,
            topology,
            engine: Mutex::new(engine),
            shards,
            pools,
            malicious,
            poisoned_labels,
            global: Some(global),
            served: BTreeMap::new(),
        })
    }

    pub fn plan(&self) -> &RunPlan {
        &self.plan
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn malicious(&self) -> &BTreeSet<u64> {
        &self.malicious
    }

    pub fn poisoned_labels(&self) -> usize {
        self.poisoned_labels
    }

    pub fn reveal_log(&self) -> Vec<RevealSink> {
        self.engine.lock().unwrap().reveal_log().to_vec()
    }

    pub fn meter_snapshot(&self) -> CostSnapshot {
        self.engine.lock().unwrap().meter().snapshot()
    }

    /// Reveal a copy of the current model toward the metrics sink. This is
    /// the one place training state leaves the share domain.
    pub fn metrics_model(&mut self) -> Result<Model> {
        let e = self.engine.get_mut().unwrap();
        let global = self.global.as_ref().expect("model always present");
        let params = e.reveal(global, RevealSink::Metrics)?;
        Model::from_params(self.plan.arch.clone(), params)
    }

    /// The global model as each committee member holds it, one labeled
    /// carrier per member, for checkpointing. Nothing is revealed: every
    /// multi-member file is a uniform masking on its own. The in-process
    /// parties hand out their actual share vectors; the carried fixed
    /// backend synthesizes an equivalent fresh sharing; the float lane is
    /// a cleartext reference and writes one plain copy.
    pub fn checkpoint_shares(&mut self) -> Result<Vec<(String, Carrier)>> {
        use rand::RngCore;
        let e: &mut dyn ShareEngine = self.engine.get_mut().unwrap().as_mut();
        let global = self.global.as_ref().expect("model always present");
        let members = e.committee(GLOBAL)?.compute;
        let label = |p: usize| format!("{GLOBAL}-{p}");
        match self.plan.backend {
            BackendKind::MultiPartyInProcess => (0..members)
                .map(|p| {
                    let raw = e.inspect_share(global, p)?;
                    Ok((label(p), Carrier::Fixed(FixedVec::from_raw(raw, self.plan.frac_bits))))
                })
                .collect(),
            BackendKind::FixedSim => {
                let value = e.functionality_input(global, Boundary(()))?;
                let mut rest = value.as_fixed().expect("fixed backend").raw().to_vec();
                let mut rng = substream(self.plan.seed, kind::SHARE, u64::MAX - 2, u64::MAX);
                let mut out = Vec::with_capacity(members);
                for p in 1..members {
                    let mask: Vec<u64> = rest.iter().map(|_| rng.next_u64()).collect();
                    for (r, m) in rest.iter_mut().zip(&mask) {
                        *r = r.wrapping_sub(*m);
                    }
                    out.push((label(p), Carrier::Fixed(FixedVec::from_raw(mask, self.plan.frac_bits))));
                }
                out.insert(0, (label(0), Carrier::Fixed(FixedVec::from_raw(rest, self.plan.frac_bits))));
                Ok(out)
            }
            BackendKind::Float => {
                let value = e.functionality_input(global, Boundary(()))?;
                Ok(vec![(label(0), value)])
            }
        }
    }

    /// Runs all configured rounds.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        self.run_with(|_| {})
    }

    /// Runs all configured rounds, calling `progress` after each one.
    pub fn run_with(
        &mut self,
        mut progress: impl FnMut(&RoundRecord),
    ) -> Result<Vec<RoundRecord>> {
        (1..=self.plan.rounds)
            .map(|t| {
                let r = self.round(t)?;
                progress(&r);
                Ok(r)
            })
            .collect()
    }

    /// Clusters active in round t. All of them in clustered mode; a seeded
    /// draw of singletons in flat mode.
    fn active_clusters(&self, t: u64) -> Result<BTreeSet<usize>> {
        let m = self.topology.clusters.len();
        if self.topology.mode.is_flat() {
            let ids: Vec<u64> = (0..m as u64).collect();
            // cluster id u64::MAX marks the global selection stream
            let picked = sample_clients(
                &ids,
                self.topology.active_per_round,
                self.plan.seed,
                u64::MAX,
                t,
            )?;
            Ok(picked.into_iter().map(|k| k as usize).collect())
        } else {
            Ok((0..m).collect())
        }
    }

    /// One full round: distribute, sample, pool, train, collect, aggregate,
    /// evaluate.
    pub fn round(&mut self, t: u64) -> Result<RoundRecord> {
        let active = self.active_clusters(t)?;
        let round_start = self.meter_snapshot();

        let results = self.cluster_phase(t, &active)?;

        let e = self.engine.get_mut().unwrap();
        let agg_start = e.meter().snapshot();
        let previous = self.global.take().expect("model always present");
        let (next, excluded, scores) =
            aggregate_at_global(e.as_mut(), &self.plan, &previous, results, &self.corpus, t)?;
        e.free(previous);
        let agg_cost = e.meter().snapshot().minus(agg_start);
        self.global = Some(next);
        // any parked inference copies are stale now
        let stale: Vec<ShareSet> = std::mem::take(&mut self.served).into_values().collect();
        for s in stale {
            e.free(s);
        }

        let model = self.metrics_model()?;
        let accuracy = evaluate(&model.to_float(), &*self.corpus.test)?;
        let cadence = self.plan.fixed_check_every;
        let fixed_accuracy = if model.is_fixed() && cadence > 0 && t % cadence == 0 {
            Some(evaluate(&model, &*self.corpus.test)?)
        } else {
            None
        };

        let round_cost = self.meter_snapshot().minus(round_start);
        Ok(RoundRecord {
            round: t,
            accuracy,
            fixed_accuracy,
            excluded,
            scores,
            agg_cost,
            round_cost,
        })
    }

    /// Per-cluster work, optionally on the thread pool. Returns the
    /// uploaded model of every active cluster in ascending cluster order,
    /// with its pool weight.
    fn cluster_phase(&mut self, t: u64, active: &BTreeSet<usize>) -> Result<Vec<ClusterResult>> {
        let pools = &mut self.pools;
        let plan = &self.plan;
        let corpus = &self.corpus;
        let topology = &self.topology;
        let engine = &self.engine;
        let shards = &self.shards;
        let global = self.global.as_ref().expect("model always present");

        let work = |(k, pool): (usize, &mut ClusterPool)| -> Result<ClusterResult> {
            cluster_round(plan, corpus, topology, engine, shards, global, k, pool, t)
        };

        let mut results: Vec<ClusterResult> = if plan.parallel {
            pools
                .par_iter_mut()
                .enumerate()
                .filter(|(k, _)| active.contains(k))
                .map(work)
                .collect::<Result<_>>()?
        } else {
            pools
                .iter_mut()
                .enumerate()
                .filter(|(k, _)| active.contains(k))
                .map(work)
                .collect::<Result<_>>()?
        };
        // canonical order at the aggregation barrier
        results.sort_by_key(|r| r.cluster);
        Ok(results)
    }

    /// Label a query batch with the secret-shared model. The query is
    /// shared to the committee of the client's own cluster, the forward
    /// pass runs on shares, and only the labels are revealed, only to the
    /// querying client.
    pub fn infer(&mut self, client: u64, queries: &[f64]) -> Result<Vec<usize>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let input_len = self.plan.arch.input_len();
        if queries.len() % input_len != 0 {
            return Err(Error::LengthMismatch { left: queries.len(), right: input_len });
        }
        let k = self
            .topology
            .cluster_of(client)
            .ok_or(Error::NotEnough { requested: client as usize + 1, available: 0 })?;
        let home = cluster_committee(k);
        let e = self.engine.get_mut().unwrap();

        // park a model copy at the serving cluster once
        if !self.served.contains_key(&k) {
            let dup = e.duplicate(self.global.as_ref().expect("model always present"))?;
            let mut rng = substream(self.plan.seed, kind::SHARE, k as u64, u64::MAX);
            self.served.insert(k, e.reshare(dup, &home, &mut rng)?);
        }
        let model_shares = &self.served[&k];

        let mut rng = substream(self.plan.seed, kind::SHARE, client, u64::MAX - 1);
        let query = carrier_for(self.plan.backend, self.plan.frac_bits, queries)?;
        let shared_q = e.share(&query, &client_label(client), &home, &mut rng)?;

        let params = e.functionality_input(model_shares, Boundary(()))?;
        let q = e.functionality_input(&shared_q, Boundary(()))?;
        let model = Model::from_params(self.plan.arch.clone(), params)?;
        let (logits, ops) = predict_counted(&model, &q.to_f64_vec())?;
        let classes = self.plan.arch.classes();
        let batch = queries.len() / input_len;
        let labels: Vec<usize> =
            (0..batch).map(|i| argmax(&logits[i * classes..(i + 1) * classes])).collect();

        let c = e.committee(&home)?.clone();
        if c.compute > 1 && ops.mults > 0 {
            let model_cost = *e.cost_model();
            let meter = e.meter_mut();
            charge_beaver(meter, &model_cost, &c, ops.mults as usize);
            // forward comparisons plus the oblivious argmax over the logits
            let picks = ops.comparisons as usize + batch * (classes - 1);
            charge_compare(meter, &model_cost, &c, picks);
        }
        e.free(shared_q);

        let out = carrier_for(self.plan.backend, self.plan.frac_bits, &labels
            .iter()
            .map(|&l| l as f64)
            .collect::<Vec<f64>>())?;
        let mut rng = substream(self.plan.seed, kind::SHARE, client, u64::MAX - 2);
        let label_shares = e.functionality_output(out, &home, &mut rng, Boundary(()))?;
        let revealed = e.reveal(&label_shares, RevealSink::InferenceClient(client))?;
        e.free(label_shares);
        Ok(revealed.to_f64_vec().iter().map(|&v| v.round() as usize).collect())
    }
}

struct ClusterResult {
    cluster: usize,
    uploaded: ShareSet,
    pool_weight: f64,
}

/// The whole per-cluster slice of a round. Engine access is serialized
/// through the mutex; the training itself runs outside it.
#[allow(clippy::too_many_arguments)]
fn cluster_round(
    plan: &RunPlan,
    corpus: &Corpus,
    topology: &Topology,
    engine: &Mutex<Box<dyn ShareEngine>>,
    shards: &[ClientShard],
    global: &ShareSet,
    k: usize,
    pool: &mut ClusterPool,
    t: u64,
) -> Result<ClusterResult> {
    let home = cluster_committee(k);
    let members = &topology.clusters[k];
    let picked = sample_clients(members, topology.sampled_per_cluster, plan.seed, k as u64, t)?;

    let (params, weight) = {
        let mut guard = engine.lock().unwrap();
        let e: &mut dyn ShareEngine = guard.as_mut();

        let mut rng = substream(plan.seed, kind::SHARE, k as u64, t);
        let dup = e.duplicate(global)?;
        let down = e.reshare(dup, &home, &mut rng)?;

        // Newly sampled clients share their shard; data already pooled
        // from an earlier round stays and costs nothing again.
        let c = e.committee(&home)?.clone();
        let sample_words = plan.arch.input_len() + 1; // pixels plus label
        let rounds_before = e.meter().rounds;
        for &id in &picked {
            let already = pool.contains(id);
            pool.contribute(&shards[id as usize], t);
            if !already {
                let model_cost = *e.cost_model();
                charge_share(
                    e.meter_mut(),
                    &model_cost,
                    &client_label(id),
                    &c,
                    plan.shard_size * sample_words,
                );
            }
        }
        // the uploads are concurrent: one round, not one per client
        let gained = e.meter().rounds - rounds_before;
        if gained > 1 {
            e.meter_mut().rounds -= gained - 1;
        }

        let params = e.functionality_input(&down, Boundary(()))?;
        e.free(down);
        (params, pool.sample_count() as f64)
    };

    let mut model = Model::from_params(plan.arch.clone(), params)?;
    let view = pool.view(&corpus.train);
    let mut rng = substream(plan.seed, kind::BATCH, k as u64, t);
    let stats = train(&mut model, &view, &plan.train, &mut rng)?;

    let mut guard = engine.lock().unwrap();
    let e: &mut dyn ShareEngine = guard.as_mut();
    let mut rng = substream(plan.seed, kind::TRIPLE, k as u64, t);
    let trained = e.functionality_output(model.params, &home, &mut rng, Boundary(()))?;
    charge_training(e, &home, &stats)?;
    let uploaded = e.reshare(trained, GLOBAL, &mut rng)?;
    Ok(ClusterResult { cluster: k, uploaded, pool_weight: weight })
}

/// Price a training pass as its secure execution: every ring
/// multiplication consumes a precomputed triple and two openings, every
/// comparison the flat per-element price. One optimizer step costs one
/// multiplication depth plus one comparison depth in rounds; layer depth
/// inside a step is not modeled. A solo committee trains in the clear:
/// local work, nothing metered.
fn charge_training(e: &mut dyn ShareEngine, committee: &str, stats: &TrainStats) -> Result<()> {
    let c = e.committee(committee)?.clone();
    // a solo committee trains in the clear, and the float reference lane
    // counts no ring operations at all
    if c.compute <= 1 || (stats.ops.mults == 0 && stats.ops.comparisons == 0) {
        return Ok(());
    }
    let model = *e.cost_model();
    let meter = e.meter_mut();
    let per_step = 1 + model.comparison_rounds;
    if stats.ops.mults > 0 {
        charge_beaver(meter, &model, &c, stats.ops.mults as usize);
        meter.rounds -= 1;
    }
    if stats.ops.comparisons > 0 {
        charge_compare(meter, &model, &c, stats.ops.comparisons as usize);
        meter.rounds -= model.comparison_rounds;
    }
    meter.rounds += stats.steps * per_step;
    Ok(())
}

/// The aggregation barrier: turn uploads into deltas if configured,
/// dispatch the aggregation rule, and rebuild the next global model.
fn aggregate_at_global(
    e: &mut dyn ShareEngine,
    plan: &RunPlan,
    previous: &ShareSet,
    results: Vec<ClusterResult>,
    corpus: &Corpus,
    t: u64,
) -> Result<(ShareSet, Vec<u64>, Vec<f64>)> {
    let ids: Vec<u64> = results.iter().map(|r| r.cluster as u64).collect();
    let weights: Vec<f64> = results.iter().map(|r| r.pool_weight).collect();

    let mut inputs = Vec::with_capacity(results.len());
    for r in results {
        if plan.on_deltas {
            let delta = e.sub(&r.uploaded, previous)?;
            e.free(r.uploaded);
            inputs.push(delta);
        } else {
            inputs.push(r.uploaded);
        }
    }

    let (combined, excluded, scores) = match plan.aggregator {
        Aggregator::FedAvg => {
            (agg::fed_avg(e, &inputs, Some(&weights))?, Vec::new(), Vec::new())
        }
        Aggregator::TrimmedMean { alpha } => {
            (agg::trimmed_mean(e, &inputs, alpha)?, Vec::new(), Vec::new())
        }
        Aggregator::TmVariant { alpha, beta } => {
            let out = agg::trimmed_mean_variant(
                e,
                &inputs,
                &ids,
                Some(&weights),
                alpha,
                beta,
                plan.seed,
                t,
            )?;
            (out.aggregated, out.excluded, out.scores)
        }
        Aggregator::FlTrust => {
            let root = root_update(e, plan, previous, corpus, t)?;
            let neutral = if plan.on_deltas {
                e.constant(
                    &carrier_for(plan.backend, plan.frac_bits, &vec![0.0; previous.len()])?,
                    GLOBAL,
                )?
            } else {
                e.duplicate(previous)?
            };
            let mut rng = substream(plan.seed, kind::TRIPLE, u64::MAX, t);
            let (out, scores) = agg::fl_trust(e, &inputs, &root, &neutral, &mut rng)?;
            e.free(root);
            e.free(neutral);
            (out, Vec::new(), scores)
        }
    };
    for s in inputs {
        e.free(s);
    }

    let next = if plan.on_deltas {
        let next = e.add(previous, &combined)?;
        e.free(combined);
        next
    } else {
        combined
    };
    Ok((next, excluded, scores))
}

/// The global committee's own training pass on the root split, producing
/// the reference update that trust scores measure against.
fn root_update(
    e: &mut dyn ShareEngine,
    plan: &RunPlan,
    previous: &ShareSet,
    corpus: &Corpus,
    t: u64,
) -> Result<ShareSet> {
    let params = e.functionality_input(previous, Boundary(()))?;
    let before = params.to_f64_vec();
    let mut model = Model::from_params(plan.arch.clone(), params)?;
    let mut rng = substream(plan.seed, kind::ROOT, 0, t);
    let stats = train(&mut model, &*corpus.root, &plan.train, &mut rng)?;
    charge_training(e, GLOBAL, &stats)?;
    let after = model.params.to_f64_vec();
    let update: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
    let out = carrier_for(plan.backend, plan.frac_bits, &update)?;
    let mut rng = substream(plan.seed, kind::TRIPLE, u64::MAX - 1, t);
    e.functionality_output(out, GLOBAL, &mut rng, Boundary(()))
}

/// Expected oblivious-sort comparisons for an aggregation of `m` inputs of
/// length `len`: the whole point of the sampled variant is that `len` is
/// beta instead of gamma.
pub fn sort_comparisons(m: usize, len: usize) -> u64 {
    (sort_schedule(m).len() * len) as u64
}

/// Matching round count for the same sort.
pub fn sort_rounds(m: usize, comparison_rounds: u64) -> u64 {
    let s = sort_schedule(m);
    schedule_depth(&s, m) as u64 * comparison_rounds
}
