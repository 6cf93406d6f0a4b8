//! Discrete-event simulator driving both federated schedules over virtual
//! time.
//!
//! The synchronous schedule runs each round serially: sampled clients
//! train a fixed number of local iterations from the fresh global model,
//! upload, the server averages once every upload has arrived, and the
//! round closes when the last client has downloaded the result.
//!
//! The overlapped schedule hides communication behind computation. At a
//! round barrier every client snapshots its locally trained weights, puts
//! the snapshot on the wire, and immediately keeps training on the model
//! it spliced in at the barrier. The server therefore always aggregates
//! weights that were trained from the previous round's global model; the
//! aggregation restores those stale updates against that basis, exactly
//! one round behind. A client keeps training until its download of the
//! freshly aggregated model arrives, so the local iteration count adapts
//! to the communication-to-computation ratio, capped by the configured
//! maximum (see [`adaptive_interval`]). The very first round has nothing
//! useful in flight, so it acts as a pipeline bubble: the global model
//! comes back unchanged.
//!
//! Everything here is deterministic. Events at equal times process in a
//! fixed kind-then-client order, aggregation consumes updates in client
//! order regardless of arrival order, and every random draw comes from a
//! named seeded stream. Two runs of the same config produce byte-identical
//! metric logs.

use std::cmp::Ordering;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::aggregation::{self, ClientUpdate, ServerState};
use crate::config::{DatasetSource, ExperimentConfig, Strategy};
use crate::data::{self, ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, RoundMetrics};
use crate::model::{self, Batch, ModelSpec};
use crate::param::ParamVector;
use crate::rng::{self, STREAM_BATCH_ORDER, STREAM_JITTER};

// ── network ─────────────────────────────────────────────────────────────

/// Which direction a transfer moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    Upload = 0,
    Download = 1,
}

/// Point-to-point link between each client and the server.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    /// One-way latency in virtual seconds.
    pub latency: f64,
    /// Bytes per virtual second.
    pub bandwidth: f64,
    /// Each leg's transit is scaled by a seeded factor in
    /// `[1 − jitter_frac, 1 + jitter_frac]`; zero leaves the link flat.
    pub jitter_frac: f64,
    pub jitter_seed: u64,
}

impl NetworkModel {
    pub fn validate(&self) -> Result<()> {
        if !self.latency.is_finite() || self.latency < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "latency must be finite and >= 0, got {}",
                self.latency
            )));
        }
        if !self.bandwidth.is_finite() || self.bandwidth <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be finite and > 0, got {}",
                self.bandwidth
            )));
        }
        if !self.jitter_frac.is_finite() || !(0.0..1.0).contains(&self.jitter_frac) {
            return Err(Error::InvalidArgument(format!(
                "jitter_frac must lie in [0, 1), got {}",
                self.jitter_frac
            )));
        }
        Ok(())
    }

    /// Virtual seconds a `size_bytes` transfer spends in flight. The
    /// jitter factor is drawn from a stream keyed by round, client, and
    /// leg, so every transfer jitters independently yet reproducibly.
    pub fn transit_time(&self, size_bytes: f64, round: u64, client: usize, leg: Leg) -> f64 {
        let base = self.latency + size_bytes / self.bandwidth;
        if self.jitter_frac == 0.0 {
            return base;
        }
        let mut stream =
            rng::stream(&[self.jitter_seed, STREAM_JITTER, round, client as u64, leg as u64]);
        let u: f64 = stream.gen();
        base * (1.0 + self.jitter_frac * (2.0 * u - 1.0))
    }
}

/// Bytes one model transfer occupies on the wire. Parameters travel as
/// 32-bit floats regardless of the f64 arithmetic inside the simulation.
pub fn payload_bytes(spec: &ModelSpec) -> f64 {
    (4 * spec.param_count()) as f64
}

// ── adaptive local iteration count ──────────────────────────────────────

/// Local iterations the overlapped schedule runs while one aggregate-and
/// -return takes `t_comm` virtual seconds:
/// `min(e_max, max(1, ceil(t_comm / t_train)))`.
///
/// The event core reproduces this closed form: a client trains until the
/// first iteration boundary at or past its download arrival, at least one
/// iteration, never more than the cap.
pub fn adaptive_interval(t_train: f64, t_comm: f64, e_max: u32) -> Result<u32> {
    if !t_train.is_finite() || t_train <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "t_train must be finite and > 0, got {t_train}"
        )));
    }
    if !t_comm.is_finite() || t_comm < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "t_comm must be finite and >= 0, got {t_comm}"
        )));
    }
    if e_max == 0 {
        return Err(Error::InvalidArgument("e_max must be >= 1".into()));
    }
    let needed = (t_comm / t_train).ceil().max(1.0);
    Ok(needed.min(e_max as f64) as u32)
}

// ── event queue ─────────────────────────────────────────────────────────

/// Event kinds in their tie-breaking order: at equal times an iteration
/// boundary resolves before an upload arrival, which resolves before a
/// download arrival, which resolves before a round close.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    IterComplete,
    UploadArrive,
    DownloadArrive,
    RoundClose,
}

/// One scheduled occurrence. `seq` carries the 1-based iteration index for
/// `IterComplete` events and is zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    pub client: usize,
    pub seq: u32,
    pub round: u64,
}

#[derive(Debug, Clone, Copy)]
struct Queued(SimEvent);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .time
            .total_cmp(&other.0.time)
            .then_with(|| self.0.kind.cmp(&other.0.kind))
            .then_with(|| self.0.client.cmp(&other.0.client))
            .then_with(|| self.0.seq.cmp(&other.0.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<Queued>>,
}

impl EventQueue {
    fn new() -> Self {
        EventQueue { heap: BinaryHeap::new() }
    }

    fn push(&mut self, ev: SimEvent) {
        self.heap.push(Reverse(Queued(ev)));
    }

    fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|Reverse(Queued(ev))| ev)
    }
}

// ── batch plans ─────────────────────────────────────────────────────────

/// The mini-batch plan one client follows during one round: its shard
/// indices shuffled by a stream keyed on (client, round), cut into
/// `batch_size` chunks. Iteration `i` of the round consumes chunk
/// `i mod plan.len()`. Public so a replay harness can reproduce exactly
/// the batches the simulator fed.
pub fn round_batches(
    shard_indices: &[usize],
    batch_size: usize,
    sampling_seed: u64,
    client: usize,
    round: u64,
) -> Result<Vec<Vec<usize>>> {
    if shard_indices.is_empty() {
        return Err(Error::Empty("shard_indices"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut order = shard_indices.to_vec();
    let mut stream = rng::stream(&[sampling_seed, STREAM_BATCH_ORDER, client as u64, round]);
    order.shuffle(&mut stream);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

// ── shared run scaffolding ──────────────────────────────────────────────

/// A finished run: the metric log, the full processed-event trace, and
/// the global model as it stood after each round's aggregation.
#[derive(Debug)]
pub struct RunOutput {
    pub log: MetricsLog,
    pub trace: Vec<SimEvent>,
    pub round_models: Vec<ParamVector>,
}

struct SimContext {
    cfg: ExperimentConfig,
    spec: ModelSpec,
    train: Dataset,
    train_batch: Batch,
    eval: Dataset,
    shards: Vec<ClientShard>,
    t_train: Vec<f64>,
    net: NetworkModel,
    payload: f64,
    log: MetricsLog,
    trace: Vec<SimEvent>,
    round_models: Vec<ParamVector>,
}

impl SimContext {
    fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.model;
        let full = match &cfg.dataset.source {
            DatasetSource::Generate { n_samples, input_dim, class_count, cluster_spread } => {
                data::generate_classification(
                    cfg.seeds.data,
                    *n_samples,
                    *input_dim,
                    *class_count,
                    *cluster_spread,
                )?
            }
            DatasetSource::Idx { images, labels } => {
                let ds =
                    data::load_idx(std::path::Path::new(images), std::path::Path::new(labels))?;
                if ds.input_dim() != spec.input_dim {
                    return Err(Error::Config(format!(
                        "IDX corpus has input_dim {} but model.input_dim is {}",
                        ds.input_dim(),
                        spec.input_dim
                    )));
                }
                if ds.class_count() > spec.output_dim {
                    return Err(Error::Config(format!(
                        "IDX corpus has {} classes but model.output_dim is {}",
                        ds.class_count(),
                        spec.output_dim
                    )));
                }
                ds
            }
        };
        let (train, eval) =
            data::split_holdout(&full, cfg.dataset.holdout_fraction, cfg.seeds.data)?;
        let shards = data::partition_noniid(
            &train,
            cfg.partition.n_clients,
            cfg.partition.label_alpha,
            cfg.partition.size_alpha,
            cfg.seeds.partition,
        )?;
        let t_train = match &cfg.compute.per_client {
            Some(per) => per.clone(),
            None => vec![cfg.compute.t_train; cfg.partition.n_clients],
        };
        let net = NetworkModel {
            latency: cfg.network.latency,
            bandwidth: cfg.network.bandwidth,
            jitter_frac: cfg.network.jitter_frac,
            jitter_seed: cfg.seeds.jitter,
        };
        net.validate()?;
        let train_batch = train.full_batch(spec.loss)?;
        Ok(SimContext {
            spec,
            train_batch,
            shards,
            t_train,
            net,
            payload: payload_bytes(&spec),
            log: MetricsLog::new(cfg.fingerprint(), cfg.task_fingerprint(), cfg.strategy.name()),
            trace: Vec::new(),
            round_models: Vec::new(),
            train,
            eval,
            cfg: cfg.clone(),
        })
    }

    fn sgd_step(
        &self,
        w: ParamVector,
        plan: &[Vec<usize>],
        iter_index_1based: u32,
        eta: f64,
    ) -> Result<ParamVector> {
        let chunk = &plan[(iter_index_1based as usize - 1) % plan.len()];
        let batch = self.train.batch_of(chunk, self.spec.loss)?;
        model::local_sgd_step(&self.spec, &w, &batch, eta)
    }

    fn record_round(
        &mut self,
        round: u64,
        close_time: f64,
        round_start: f64,
        global: &ParamVector,
        per_client_e: Vec<u32>,
        busy: &[f64],
    ) -> Result<()> {
        let duration = close_time - round_start;
        let participants: Vec<usize> =
            (0..per_client_e.len()).filter(|k| per_client_e[*k] > 0).collect();
        let utilization = if participants.is_empty() || duration <= 0.0 {
            0.0
        } else {
            participants.iter().map(|k| busy[*k] / duration).sum::<f64>()
                / participants.len() as f64
        };
        let train_loss = model::loss(&self.spec, global, &self.train_batch)?;
        let eval_metric =
            model::accuracy(&self.spec, global, self.eval.inputs(), self.eval.labels())?;
        self.round_models.push(global.clone());
        self.log.push(RoundMetrics {
            round,
            virtual_time: close_time,
            train_loss,
            eval_metric,
            utilization,
            per_client_e,
        })
    }
}

/// Runs the configured experiment and returns its metric log.
pub fn run(cfg: &ExperimentConfig) -> Result<MetricsLog> {
    Ok(run_traced(cfg)?.log)
}

/// Like [`run`], also returning every processed event for inspection.
/// Skipped stale events (iterations cancelled by an exactly coincident
/// download) never appear in the trace.
pub fn run_traced(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut ctx = SimContext::build(cfg)?;
    let w0 = model::init_params(&ctx.spec, cfg.seeds.init)?;
    match cfg.strategy {
        Strategy::FedAvg => run_fedavg(&mut ctx, w0)?,
        Strategy::Overlap => run_overlap(&mut ctx, w0)?,
    }
    Ok(RunOutput { log: ctx.log, trace: ctx.trace, round_models: ctx.round_models })
}

// ── synchronous schedule ────────────────────────────────────────────────

fn run_fedavg(ctx: &mut SimContext, w0: ParamVector) -> Result<()> {
    let n = ctx.shards.len();
    let e_fixed = ctx.cfg.optimizer.e_max;
    let mut global = w0;
    let mut now = 0.0f64;

    for round in 0..ctx.cfg.rounds {
        let round_start = now;
        let eta = ctx.cfg.eta_at(round);
        let round_seed = rng::mix(&[ctx.cfg.seeds.sampling, round]);
        let sampled = aggregation::sample_clients(n, ctx.cfg.optimizer.fraction_c, round_seed)?;

        let mut plans: Vec<Option<Vec<Vec<usize>>>> = vec![None; n];
        let mut locals: Vec<Option<ParamVector>> = vec![None; n];
        for &k in &sampled {
            plans[k] = Some(round_batches(
                &ctx.shards[k].indices,
                ctx.cfg.dataset.batch_size,
                ctx.cfg.seeds.sampling,
                k,
                round,
            )?);
            locals[k] = Some(global.clone());
        }

        let mut queue = EventQueue::new();
        for &k in &sampled {
            queue.push(SimEvent {
                time: round_start + ctx.t_train[k],
                kind: EventKind::IterComplete,
                client: k,
                seq: 1,
                round,
            });
        }

        let mut iters = vec![0u32; n];
        let mut last_boundary = vec![round_start; n];
        let mut uploads_pending = sampled.len();
        let mut downloads_pending = 0usize;
        let mut arrived: Vec<ClientUpdate> = Vec::with_capacity(sampled.len());
        let mut close_time = None;

        while let Some(ev) = queue.pop() {
            ctx.trace.push(ev);
            let k = ev.client;
            match ev.kind {
                EventKind::IterComplete => {
                    let i = ev.seq;
                    let plan = plans[k].as_ref().expect("sampled client has a plan");
                    let w = locals[k].take().expect("sampled client has weights");
                    locals[k] = Some(ctx.sgd_step(w, plan, i, eta)?);
                    iters[k] = i;
                    last_boundary[k] = ev.time;
                    if i < e_fixed {
                        queue.push(SimEvent {
                            time: round_start + (i + 1) as f64 * ctx.t_train[k],
                            kind: EventKind::IterComplete,
                            client: k,
                            seq: i + 1,
                            round,
                        });
                    } else {
                        let transit = ctx.net.transit_time(ctx.payload, round, k, Leg::Upload);
                        queue.push(SimEvent {
                            time: ev.time + transit,
                            kind: EventKind::UploadArrive,
                            client: k,
                            seq: 0,
                            round,
                        });
                    }
                }
                EventKind::UploadArrive => {
                    let w = locals[k].clone().expect("uploading client has weights");
                    arrived.push(ClientUpdate::new(k, w, ctx.shards[k].p_k, 0)?);
                    uploads_pending -= 1;
                    if uploads_pending == 0 {
                        // Aggregation is instantaneous on the virtual
                        // clock and consumes updates in client order, so
                        // arrival order cannot perturb the sum.
                        arrived.sort_by_key(|u| u.client_id);
                        global = aggregation::fedavg_aggregate(&arrived)?;
                        downloads_pending = n;
                        for j in 0..n {
                            let transit =
                                ctx.net.transit_time(ctx.payload, round, j, Leg::Download);
                            queue.push(SimEvent {
                                time: ev.time + transit,
                                kind: EventKind::DownloadArrive,
                                client: j,
                                seq: 0,
                                round,
                            });
                        }
                    }
                }
                EventKind::DownloadArrive => {
                    downloads_pending -= 1;
                    if downloads_pending == 0 {
                        queue.push(SimEvent {
                            time: ev.time,
                            kind: EventKind::RoundClose,
                            client: 0,
                            seq: 0,
                            round,
                        });
                    }
                }
                EventKind::RoundClose => {
                    close_time = Some(ev.time);
                    break;
                }
            }
        }

        let close = close_time.ok_or(Error::InvalidArgument(
            "round never closed; event queue drained early".into(),
        ))?;
        now = close;
        let busy: Vec<f64> = (0..n).map(|k| last_boundary[k] - round_start).collect();
        ctx.record_round(round, close, round_start, &global, iters, &busy)?;
    }
    Ok(())
}

// ── overlapped schedule ─────────────────────────────────────────────────

fn run_overlap(ctx: &mut SimContext, w0: ParamVector) -> Result<()> {
    let n = ctx.shards.len();
    let e_max = ctx.cfg.optimizer.e_max;
    let opt = ctx.cfg.optimizer.clone();
    let mut server = ServerState::new(
        w0.clone(),
        opt.eta,
        opt.lambda,
        opt.beta,
        opt.nag_mode,
        opt.compensation,
    )?;
    // Locally trained weights, one per client; everyone starts at w0.
    let mut locals: Vec<ParamVector> = vec![w0; n];
    let mut now = 0.0f64;

    for round in 0..ctx.cfg.rounds {
        let round_start = now;
        let eta_train = ctx.cfg.eta_at(round);
        // Uploads consumed this round were trained during the previous
        // one, so restoration and the server step both use that round's
        // rate. Round zero consumes untrained snapshots whose restored
        // gradients are zero, making the choice immaterial there.
        let eta_consumed = ctx.cfg.eta_at(round.saturating_sub(1));

        // Barrier: snapshot what local training produced, put it on the
        // wire, then splice in the current global model and keep training
        // from it. The snapshot order is what makes every upload exactly
        // one round stale.
        let upload_w: Vec<ParamVector> = locals.clone();
        for w in locals.iter_mut() {
            *w = server.w_t.clone();
        }

        let mut plans: Vec<Vec<Vec<usize>>> = Vec::with_capacity(n);
        for k in 0..n {
            plans.push(round_batches(
                &ctx.shards[k].indices,
                ctx.cfg.dataset.batch_size,
                ctx.cfg.seeds.sampling,
                k,
                round,
            )?);
        }

        let mut queue = EventQueue::new();
        for (k, t) in ctx.t_train.iter().enumerate() {
            let transit = ctx.net.transit_time(ctx.payload, round, k, Leg::Upload);
            queue.push(SimEvent {
                time: round_start + transit,
                kind: EventKind::UploadArrive,
                client: k,
                seq: 0,
                round,
            });
            queue.push(SimEvent {
                time: round_start + t,
                kind: EventKind::IterComplete,
                client: k,
                seq: 1,
                round,
            });
        }

        let mut iters = vec![0u32; n];
        let mut last_boundary = vec![round_start; n];
        // Iteration index past which a client must not train this round;
        // set once its download arrival pins the stopping point.
        let mut stop_after: Vec<Option<u32>> = vec![None; n];
        let mut ready = vec![false; n];
        let mut ready_count = 0usize;
        let mut uploads_pending = n;
        let mut arrived: Vec<ClientUpdate> = Vec::with_capacity(n);
        let mut close_time = None;

        macro_rules! mark_ready {
            ($queue:expr, $k:expr, $time:expr) => {
                if !ready[$k] {
                    ready[$k] = true;
                    ready_count += 1;
                    if ready_count == n {
                        $queue.push(SimEvent {
                            time: $time,
                            kind: EventKind::RoundClose,
                            client: 0,
                            seq: 0,
                            round,
                        });
                    }
                }
            };
        }

        while let Some(ev) = queue.pop() {
            let k = ev.client;
            match ev.kind {
                EventKind::IterComplete => {
                    let i = ev.seq;
                    // A stale boundary: the download landed exactly on the
                    // previous boundary and cancelled this iteration.
                    if let Some(stop) = stop_after[k] {
                        if i > stop {
                            continue;
                        }
                    }
                    ctx.trace.push(ev);
                    let w = std::mem::replace(&mut locals[k], ParamVector::zeros(1)?);
                    locals[k] = ctx.sgd_step(w, &plans[k], i, eta_train)?;
                    iters[k] = i;
                    last_boundary[k] = ev.time;
                    match stop_after[k] {
                        Some(stop) if i >= stop => {
                            // Download already here; this boundary was the
                            // splice point.
                            mark_ready!(queue, k, ev.time);
                        }
                        Some(_) => unreachable!("stop points are never beyond the next boundary"),
                        None if i < e_max => {
                            queue.push(SimEvent {
                                time: round_start + (i + 1) as f64 * ctx.t_train[k],
                                kind: EventKind::IterComplete,
                                client: k,
                                seq: i + 1,
                                round,
                            });
                        }
                        None => {
                            // Cap reached with the download still in
                            // flight: the client idles until it lands.
                        }
                    }
                }
                EventKind::UploadArrive => {
                    ctx.trace.push(ev);
                    arrived.push(ClientUpdate::new(k, upload_w[k].clone(), ctx.shards[k].p_k, 1)?);
                    uploads_pending -= 1;
                    if uploads_pending == 0 {
                        arrived.sort_by_key(|u| u.client_id);
                        server.eta = eta_consumed;
                        server.eta_restore = eta_consumed;
                        server = aggregation::phi(&server, &arrived)?;
                        for j in 0..n {
                            let transit =
                                ctx.net.transit_time(ctx.payload, round, j, Leg::Download);
                            queue.push(SimEvent {
                                time: ev.time + transit,
                                kind: EventKind::DownloadArrive,
                                client: j,
                                seq: 0,
                                round,
                            });
                        }
                    }
                }
                EventKind::DownloadArrive => {
                    ctx.trace.push(ev);
                    if iters[k] == 0 {
                        // Still inside the very first iteration: finish it,
                        // then splice.
                        stop_after[k] = Some(1);
                    } else if iters[k] >= e_max {
                        // Idling at the cap; the download releases the
                        // client immediately.
                        stop_after[k] = Some(iters[k]);
                        mark_ready!(queue, k, ev.time);
                    } else if last_boundary[k] == ev.time {
                        // The download landed exactly on a boundary. The
                        // boundary processed first (kind order), so the
                        // next iteration is already scheduled; cancel it
                        // and splice here.
                        stop_after[k] = Some(iters[k]);
                        mark_ready!(queue, k, ev.time);
                    } else {
                        // Mid-iteration: the one in flight finishes and
                        // becomes the splice point.
                        stop_after[k] = Some(iters[k] + 1);
                    }
                }
                EventKind::RoundClose => {
                    ctx.trace.push(ev);
                    close_time = Some(ev.time);
                    break;
                }
            }
        }

        let close = close_time.ok_or(Error::InvalidArgument(
            "round never closed; event queue drained early".into(),
        ))?;
        now = close;
        let busy: Vec<f64> = (0..n).map(|k| last_boundary[k] - round_start).collect();
        let global = server.w_t.clone();
        ctx.record_round(round, close, round_start, &global, iters, &busy)?;
    }
    Ok(())
}

// ── tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    fn flat_net(latency: f64, bandwidth: f64) -> NetworkModel {
        NetworkModel { latency, bandwidth, jitter_frac: 0.0, jitter_seed: 9 }
    }

    #[test]
    fn transit_time_is_latency_plus_serialization() {
        let net = flat_net(0.5, 100.0);
        assert!((net.transit_time(200.0, 0, 0, Leg::Upload) - 2.5).abs() < 1e-15);
        let zero = flat_net(0.0, 100.0);
        assert_eq!(zero.transit_time(0.0, 0, 0, Leg::Download), 0.0);
    }

    #[test]
    fn jitter_is_bounded_seeded_and_leg_specific() {
        let net = NetworkModel { latency: 1.0, bandwidth: 100.0, jitter_frac: 0.3, jitter_seed: 4 };
        let base = 1.0 + 200.0 / 100.0;
        let up = net.transit_time(200.0, 7, 3, Leg::Upload);
        let down = net.transit_time(200.0, 7, 3, Leg::Download);
        assert!(up >= base * 0.7 && up <= base * 1.3);
        assert!(down >= base * 0.7 && down <= base * 1.3);
        assert_ne!(up, down, "legs draw independent factors");
        assert_eq!(up, net.transit_time(200.0, 7, 3, Leg::Upload), "same key, same factor");
        assert_ne!(up, net.transit_time(200.0, 8, 3, Leg::Upload), "round changes the draw");
    }

    #[test]
    fn adaptive_interval_matches_hand_values() {
        assert_eq!(adaptive_interval(1.0, 3.5, 5).unwrap(), 4);
        assert_eq!(adaptive_interval(1.0, 3.0, 5).unwrap(), 3);
        assert_eq!(adaptive_interval(1.0, 0.0, 5).unwrap(), 1);
        assert_eq!(adaptive_interval(1.0, 100.0, 5).unwrap(), 5, "cap binds");
        assert_eq!(adaptive_interval(2.0, 1.0, 5).unwrap(), 1);
        assert!(adaptive_interval(0.0, 1.0, 5).is_err());
        assert!(adaptive_interval(1.0, -1.0, 5).is_err());
        assert!(adaptive_interval(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn event_ordering_breaks_ties_by_kind_then_client() {
        let mut q = EventQueue::new();
        let at = |time, kind, client| SimEvent { time, kind, client, seq: 0, round: 0 };
        q.push(at(2.0, EventKind::RoundClose, 0));
        q.push(at(2.0, EventKind::IterComplete, 5));
        q.push(at(2.0, EventKind::DownloadArrive, 1));
        q.push(at(2.0, EventKind::IterComplete, 2));
        q.push(at(2.0, EventKind::UploadArrive, 9));
        q.push(at(1.0, EventKind::RoundClose, 7));
        let order: Vec<(EventKind, usize)> =
            std::iter::from_fn(|| q.pop()).map(|e| (e.kind, e.client)).collect();
        assert_eq!(
            order,
            vec![
                (EventKind::RoundClose, 7),
                (EventKind::IterComplete, 2),
                (EventKind::IterComplete, 5),
                (EventKind::UploadArrive, 9),
                (EventKind::DownloadArrive, 1),
                (EventKind::RoundClose, 0),
            ]
        );
    }

    #[test]
    fn round_batches_cover_the_shard_and_depend_on_round() {
        let shard: Vec<usize> = (10..25).collect();
        let a = round_batches(&shard, 4, 77, 2, 0).unwrap();
        let b = round_batches(&shard, 4, 77, 2, 1).unwrap();
        assert_eq!(a.len(), 4, "15 samples in chunks of 4");
        let mut seen: Vec<usize> = a.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, shard, "every index exactly once");
        assert_ne!(a, b, "different rounds shuffle differently");
        assert_eq!(a, round_batches(&shard, 4, 77, 2, 0).unwrap(), "deterministic");
        assert!(round_batches(&[], 4, 77, 2, 0).is_err());
    }

    /// A small flat-network config tests can mutate freely.
    fn tiny_config(strategy: Strategy) -> ExperimentConfig {
        let mut cfg = preset(match strategy {
            Strategy::Overlap => "light",
            Strategy::FedAvg => "light-fedavg",
        })
        .unwrap();
        cfg.model = ModelSpec::logistic_regression(4, 3).unwrap();
        cfg.dataset.source = DatasetSource::Generate {
            n_samples: 120,
            input_dim: 4,
            class_count: 3,
            cluster_spread: 0.8,
        };
        cfg.dataset.batch_size = 8;
        cfg.partition.n_clients = 4;
        cfg.partition.label_alpha = 5.0;
        cfg.optimizer.eta = 0.3;
        cfg.optimizer.eta_decay = 0.0;
        cfg.optimizer.lambda = 0.0;
        cfg.optimizer.beta = 0.0;
        cfg.optimizer.e_max = 5;
        cfg.rounds = 6;
        // One iteration takes 1 s; a model transfer takes 1 s each way.
        cfg.compute.t_train = 1.0;
        cfg.network.latency = 0.0;
        cfg.network.bandwidth = payload_bytes(&cfg.model);
        cfg
    }

    #[test]
    fn fedavg_round_timing_matches_the_serial_formula() {
        let mut cfg = tiny_config(Strategy::FedAvg);
        cfg.optimizer.e_max = 5;
        let log = run(&cfg).unwrap();
        // Each round: 5 iterations of 1 s, then 1 s up, 1 s down.
        for (i, row) in log.rounds.iter().enumerate() {
            let expected = 7.0 * (i + 1) as f64;
            assert!(
                (row.virtual_time - expected).abs() < 1e-9,
                "round {i}: {} vs {expected}",
                row.virtual_time
            );
            assert_eq!(row.per_client_e, vec![5, 5, 5, 5]);
            assert!((row.utilization - 5.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_adapts_iterations_to_the_communication_ratio() {
        // t_comm (round trip) is 2 s against 1 s iterations, so clients
        // fit exactly two iterations per round and stay fully busy.
        let cfg = tiny_config(Strategy::Overlap);
        let log = run(&cfg).unwrap();
        for row in &log.rounds {
            assert_eq!(row.per_client_e, vec![2, 2, 2, 2]);
            assert_eq!(row.utilization, 1.0, "compute-bound rounds are fully utilized");
        }
        assert!((log.total_virtual_time() - 12.0).abs() < 1e-9, "six 2 s rounds");
    }

    #[test]
    fn overlap_download_on_exact_boundary_cancels_the_pending_iteration() {
        let mut cfg = tiny_config(Strategy::Overlap);
        // Round trip 3.0 s on 1 s iterations: boundary tie at t = 3.
        cfg.network.bandwidth = payload_bytes(&cfg.model) / 1.5;
        let out = run_traced(&cfg).unwrap();
        for row in &out.log.rounds {
            assert_eq!(row.per_client_e, vec![3, 3, 3, 3]);
        }
        let round0_iters =
            out.trace.iter().filter(|e| e.round == 0 && e.kind == EventKind::IterComplete).count();
        assert_eq!(round0_iters, 12, "4 clients, 3 boundaries each, none past the tie");
    }

    #[test]
    fn overlap_mid_iteration_download_rounds_up() {
        let mut cfg = tiny_config(Strategy::Overlap);
        // Round trip 3.5 s on 1 s iterations: ceil gives 4 iterations.
        cfg.network.bandwidth = payload_bytes(&cfg.model) / 1.75;
        let log = run(&cfg).unwrap();
        let expected = adaptive_interval(1.0, 3.5, 5).unwrap();
        for row in &log.rounds {
            assert_eq!(row.per_client_e, vec![expected; 4]);
        }
        assert!((log.rounds[0].virtual_time - 4.0).abs() < 1e-9, "round closes at the boundary");
    }

    #[test]
    fn overlap_cap_stalls_the_round_on_communication() {
        let mut cfg = tiny_config(Strategy::Overlap);
        cfg.optimizer.e_max = 2;
        // Round trip 3.5 s but at most 2 iterations: idle 1.5 s per round.
        cfg.network.bandwidth = payload_bytes(&cfg.model) / 1.75;
        let log = run(&cfg).unwrap();
        for row in &log.rounds {
            assert_eq!(row.per_client_e, vec![2, 2, 2, 2]);
            assert!((row.utilization - 2.0 / 3.5).abs() < 1e-12, "stall shows as idle time");
        }
        assert!((log.rounds[0].virtual_time - 3.5).abs() < 1e-9);
    }

    #[test]
    fn overlap_download_before_first_boundary_still_runs_one_iteration() {
        let mut cfg = tiny_config(Strategy::Overlap);
        // Round trip 0.25 s against 1 s iterations.
        cfg.network.bandwidth = payload_bytes(&cfg.model) / 0.125;
        let log = run(&cfg).unwrap();
        for row in &log.rounds {
            assert_eq!(row.per_client_e, vec![1, 1, 1, 1], "at least one iteration always runs");
        }
        assert!((log.rounds[0].virtual_time - 1.0).abs() < 1e-9, "round waits for the boundary");
    }

    #[test]
    fn overlap_first_round_is_a_pipeline_bubble() {
        let cfg = tiny_config(Strategy::Overlap);
        let w0 = model::init_params(&cfg.model, cfg.seeds.init).unwrap();
        let ctx = SimContext::build(&cfg).unwrap();
        let loss0 = model::loss(&cfg.model, &w0, &ctx.train_batch).unwrap();
        let log = run(&cfg).unwrap();
        assert!(
            (log.rounds[0].train_loss - loss0).abs() < 1e-12,
            "round 0 returns the initial model unchanged"
        );
        assert!(log.rounds[1].train_loss < loss0, "round 1 starts learning");
    }

    #[test]
    fn runs_are_deterministic() {
        for strategy in [Strategy::FedAvg, Strategy::Overlap] {
            let mut cfg = tiny_config(strategy);
            cfg.network.jitter_frac = 0.2;
            let a = run(&cfg).unwrap();
            let b = run(&cfg).unwrap();
            assert_eq!(a.to_csv(), b.to_csv(), "byte-identical reruns");
            cfg.seeds.jitter += 1;
            let c = run(&cfg).unwrap();
            assert_ne!(a.to_csv(), c.to_csv(), "jitter seed matters");
        }
    }

    #[test]
    fn fedavg_subsampling_trains_only_the_sampled_clients() {
        let mut cfg = tiny_config(Strategy::FedAvg);
        cfg.optimizer.fraction_c = 0.5;
        let log = run(&cfg).unwrap();
        for row in &log.rounds {
            let active = row.per_client_e.iter().filter(|e| **e > 0).count();
            assert_eq!(active, 2, "ceil(0.5 * 4) clients participate");
            assert!((row.mean_e() - 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn per_client_compute_heterogeneity_shows_up_in_utilization() {
        let mut cfg = tiny_config(Strategy::FedAvg);
        cfg.compute.per_client = Some(vec![1.0, 1.0, 1.0, 2.0]);
        let log = run(&cfg).unwrap();
        // Slowest client finishes at 10 s; round closes at 12 s.
        let row = &log.rounds[0];
        assert!((row.virtual_time - 12.0).abs() < 1e-9);
        let expected = (5.0 / 12.0 * 3.0 + 10.0 / 12.0) / 4.0;
        assert!((row.utilization - expected).abs() < 1e-12);
    }

    #[test]
    fn losses_fall_under_both_schedules() {
        for strategy in [Strategy::FedAvg, Strategy::Overlap] {
            let mut cfg = tiny_config(strategy);
            cfg.rounds = 30;
            let log = run(&cfg).unwrap();
            let first = log.rounds.first().unwrap().train_loss;
            let last = log.rounds.last().unwrap().train_loss;
            assert!(
                last < 0.7 * first,
                "{}: loss should fall substantially, got {first} -> {last}",
                cfg.strategy.name()
            );
            let acc = log.rounds.last().unwrap().eval_metric;
            assert!(acc > 0.5, "{}: holdout accuracy {acc}", cfg.strategy.name());
        }
    }

    #[test]
    fn jittered_downloads_desynchronize_iteration_counts() {
        let mut cfg = tiny_config(Strategy::Overlap);
        cfg.network.bandwidth = payload_bytes(&cfg.model) / 1.6;
        cfg.network.jitter_frac = 0.4;
        let log = run(&cfg).unwrap();
        let distinct: std::collections::BTreeSet<u32> =
            log.rounds.iter().flat_map(|r| r.per_client_e.iter().copied()).collect();
        assert!(distinct.len() > 1, "jitter should vary E across clients and rounds");
        for row in &log.rounds {
            for e in &row.per_client_e {
                assert!((1..=5).contains(e));
            }
        }
    }
}
