//! Event-driven orchestration shared by every framework variant.
//!
//! One `MultiSim` owns a single-threaded engine plus one or more cluster
//! states. A cluster runs its clients through per-iteration event chains
//! (device forward -> lossy uplink -> server step -> lossy downlink ->
//! device backward), with mode-specific round/aggregation logic on top:
//!
//! - `Sync`: lockstep rounds, barrier every round, FedAvg every period
//! - `FreeRun`: clients pace themselves, barrier + FedAvg every period
//!   (three-tier chains; the upper hop is a lossless wired link)
//! - `Async`: threshold aggregation of the whole buffer once k updates
//!   arrive; contributors wait for their broadcast, others keep training
//!   on their base and accrue staleness
//! - `Sequential`: one client at a time; a turn timeout skips the client
//!
//! Numeric work happens inside event handlers, so shared server-side
//! segments see client updates in simulated-time order.

use std::ops::ControlFlow;

use crate::adapt::{quantize_uniform, QuantizerConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::frameworks::aggregate::{fedavg, Update};
use crate::frameworks::distill::{distill_loss, probs_to_pseudo_logits, soft_probs};
use crate::netphys::{
    compute_energy, compute_time, link_rate_bps, packet_delivered, Arena, ChannelParams,
    DeviceProfile,
};
use crate::nn::{self, ForwardCache, ModelParams, ModelSpec};
use crate::rng::RngStream;
use crate::sim::{Engine, Event, EventKind, Stop};
use crate::split::{partition, SplitPlan};
use crate::tensor::Tensor;

/// Lossless edge-to-cloud backhaul.
#[derive(Debug, Clone, PartialEq)]
pub struct WiredLink {
    pub rate_bps: f64,
    pub latency_s: f64,
}

impl Default for WiredLink {
    fn default() -> Self {
        WiredLink {
            rate_bps: 1e9,
            latency_s: 5e-3,
        }
    }
}

/// One robot: compute profile plus its private data shard.
#[derive(Debug, Clone)]
pub struct ClientSetup {
    pub profile: DeviceProfile,
    pub shard: Dataset,
}

/// Physical environment shared by all clusters of a run.
#[derive(Debug, Clone)]
pub struct Physics {
    pub channel: ChannelParams,
    pub arena: Arena,
    pub wired: WiredLink,
    pub server: DeviceProfile,
    /// Quantize smashed activations and cut gradients to this many bits.
    pub quantizer_bits: Option<u32>,
    pub max_retransmissions: Option<u32>,
}

/// Everything one cluster needs: model, split, members, test set, and the
/// RNG identity (`seed` + `label_prefix`) its streams derive from.
#[derive(Debug, Clone)]
pub struct ClusterWorld {
    pub spec: ModelSpec,
    pub plan: SplitPlan,
    pub clients: Vec<ClientSetup>,
    pub test: Dataset,
    pub label_prefix: String,
    pub seed: u64,
}

/// Cloud distillation settings for heterogeneous runs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSettings {
    pub period_rounds: u64,
    pub temperature: f64,
    pub weight: f64,
    pub public_set_size: usize,
}

impl Default for DistillSettings {
    fn default() -> Self {
        DistillSettings {
            period_rounds: 25,
            temperature: 2.0,
            weight: 0.5,
            public_set_size: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameworkKind {
    Sync,
    Sequential,
    AsyncThreshold,
    Hierarchical,
    Heterogeneous,
}

impl FrameworkKind {
    pub fn tag(self) -> &'static str {
        match self {
            FrameworkKind::Sync => "sync",
            FrameworkKind::Sequential => "sequential",
            FrameworkKind::AsyncThreshold => "async",
            FrameworkKind::Hierarchical => "hierarchical",
            FrameworkKind::Heterogeneous => "heterogeneous",
        }
    }
}

/// Framework-level knobs of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: FrameworkKind,
    pub k: usize,
    pub aggregation_period_rounds: u64,
    pub local_iters: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub staleness_exponent: f64,
    pub rounds: u64,
    pub eval_every: u64,
    pub time_budget_s: Option<f64>,
    pub distill: DistillSettings,
    pub trace: bool,
}

/// One evaluation record (untagged; the workbench adds framework/seed).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub round: u64,
    pub sim_time_s: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub bits_tx: u64,
    pub energy_j: f64,
    pub max_staleness: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub bits_tx: u64,
    pub energy_j: f64,
    pub smashed_up_bits: u64,
    pub max_staleness: u64,
    pub rounds_completed: u64,
    pub final_time_s: f64,
    /// Transmission chains cut off by a deadline or retry cap.
    pub stall_events: u64,
    /// Per-batch training losses in simulated processing order.
    pub iteration_losses: Vec<f64>,
}

/// Final stitched model of one cluster.
#[derive(Debug, Clone)]
pub struct FinalModel {
    pub spec: ModelSpec,
    pub params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<RunRow>,
    pub stats: RunStats,
    pub finals: Vec<FinalModel>,
    pub trace: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Sync,
    FreeRun,
    Async,
    Sequential,
}

#[derive(Debug, Clone)]
enum Msg {
    DevFwd { k: usize, ci: usize, gen: u64 },
    SmashedUp { k: usize, ci: usize, gen: u64 },
    WiredUp { k: usize, ci: usize, gen: u64 },
    WiredDown { k: usize, ci: usize, gen: u64 },
    CutGrad { k: usize, ci: usize, gen: u64 },
    BlockEnd { k: usize, ci: usize, gen: u64 },
    ParamUp { k: usize, ci: usize, gen: u64 },
    ParamDown { k: usize, ci: usize, gen: u64 },
    Aggregate { k: usize },
    SeqTimeout { k: usize, ci: usize, gen: u64 },
    Eval { round: u64 },
    DistillLogits { k: usize },
    DistillApply { k: usize },
}

struct Client {
    profile: DeviceProfile,
    rate_bps: f64,
    shard: Dataset,
    device_params: ModelParams,
    batch_stream: RngStream,
    up_stream: RngStream,
    down_stream: RngStream,
    gen: u64,
    iter: u32,
    blocks_done: u64,
    base_round: u64,
    in_flight: bool,
    // in-flight broadcast for this client
    pending_params: Option<ModelParams>,
    pending_base: u64,
    // per-iteration stash
    labels: Vec<usize>,
    dev_cache: Option<ForwardCache>,
    smashed: Option<Tensor>,
    cut_grad: Option<Tensor>,
    edge_cache: Option<ForwardCache>,
    edge_io: Option<Tensor>,
}

struct UpperTier {
    spec: ModelSpec,
    params: ModelParams,
    fwd_flops: f64,
    bwd_flops: f64,
}

struct ClusterState {
    mode: Mode,
    full_spec: ModelSpec,
    device_spec: ModelSpec,
    uppers: Vec<UpperTier>,
    clients: Vec<Client>,
    subject_offset: u64,
    // per-batch flop/payload constants
    dev_fwd_flops: f64,
    dev_bwd_flops: f64,
    smashed_bits: f64,
    wired_bits: f64,
    dev_param_bits: f64,
    // round state
    round: u64,
    sync_done: usize,
    uploads: Vec<Option<(ModelParams, u64)>>,
    async_buffer: Vec<Update>,
    async_global: Option<ModelParams>,
    broadcast_pending: usize,
    seq_chain: ModelParams,
    seq_turn: usize,
    seq_timeout_at: f64,
    seq_turn_times: Vec<f64>,
    // distillation rendezvous
    distill_waiting: bool,
    distill_logits: Option<Tensor>,
    // accounting
    bits_tx: u64,
    energy_j: f64,
    smashed_up_bits: u64,
    max_tau: u64,
    stall_events: u64,
    test: Dataset,
}

pub(crate) struct MultiSim<'a> {
    cfg: &'a RunConfig,
    physics: &'a Physics,
    clusters: Vec<ClusterState>,
    public_set: Option<Dataset>,
    distill_arrivals: usize,
    rows: Vec<RunRow>,
    loss_sum: f64,
    loss_count: u64,
    last_train_loss: f64,
    eval_scheduled_to: u64,
    iteration_losses: Vec<f64>,
}

/// Bernoulli retransmission chain. Returns attempts made and the delivery
/// time, or None when the deadline or retry cap cuts the chain off before
/// a successful attempt could complete.
fn wireless_tx(
    stream: &mut RngStream,
    loss_rate: f64,
    start: f64,
    t_one: f64,
    deadline: f64,
    max_attempts: Option<u32>,
) -> (u32, Option<f64>) {
    if loss_rate >= 1.0 && deadline.is_infinite() && max_attempts.is_none() {
        return (0, None);
    }
    let mut attempts = 0u32;
    loop {
        if let Some(max) = max_attempts {
            if attempts >= max {
                return (attempts, None);
            }
        }
        if start + (attempts + 1) as f64 * t_one > deadline {
            return (attempts, None);
        }
        attempts += 1;
        if packet_delivered(stream, loss_rate) {
            return (attempts, Some(start + attempts as f64 * t_one));
        }
    }
}

fn segment_flops(spec: &ModelSpec, batch: usize) -> (f64, f64) {
    let f: u64 = spec.layers().iter().map(|l| l.flops_fwd()).sum();
    let b: u64 = spec.layers().iter().map(|l| l.flops_bwd()).sum();
    (f as f64 * batch as f64, b as f64 * batch as f64)
}

impl<'a> MultiSim<'a> {
    pub(crate) fn new(
        cfg: &'a RunConfig,
        physics: &'a Physics,
        worlds: Vec<(Mode, ClusterWorld)>,
        public_set: Option<Dataset>,
    ) -> Result<Self> {
        physics.channel.validate()?;
        physics.arena.validate()?;
        physics.server.validate()?;
        if cfg.local_iters == 0 || cfg.batch_size == 0 || cfg.eval_every == 0 {
            return Err(Error::validation(
                "local_iters, batch_size, and eval_every must be positive",
            ));
        }
        if cfg.aggregation_period_rounds == 0 {
            return Err(Error::validation("aggregation period must be positive"));
        }
        let precision: u32 = physics.quantizer_bits.unwrap_or(64);
        let mut clusters = Vec::new();
        let mut offset = 0u64;
        for (mode, world) in worlds {
            let cuts = world.plan.cuts().to_vec();
            match mode {
                Mode::FreeRun if cuts.len() != 2 => {
                    return Err(Error::validation("hierarchical runs need exactly 2 cuts"))
                }
                Mode::Sync | Mode::Async | Mode::Sequential if cuts.len() != 1 => {
                    return Err(Error::validation("two-tier runs need exactly 1 cut"))
                }
                _ => {}
            }
            world.plan.validate_for(&world.spec)?;
            if world.clients.is_empty() {
                return Err(Error::validation("cluster has no clients"));
            }

            let init = nn::init_params(&world.spec, world.seed);
            let segments = partition(&world.spec, &init, &world.plan)?;
            let device_seg = &segments[0];
            let (dev_f, dev_b) = segment_flops(&device_seg.spec, cfg.batch_size);
            let uppers: Vec<UpperTier> = segments[1..]
                .iter()
                .map(|s| {
                    let (f, b) = segment_flops(&s.spec, cfg.batch_size);
                    UpperTier {
                        spec: s.spec.clone(),
                        params: s.params.clone(),
                        fwd_flops: f,
                        bwd_flops: b,
                    }
                })
                .collect();

            let smashed_bits =
                (cfg.batch_size * world.spec.width_at_cut(cuts[0])?) as f64 * precision as f64;
            let wired_bits = if cuts.len() == 2 {
                (cfg.batch_size * world.spec.width_at_cut(cuts[1])?) as f64 * 64.0
            } else {
                0.0
            };
            let dev_param_bits = device_seg.params.count() as f64 * 64.0;

            let mut clients = Vec::new();
            for (i, setup) in world.clients.iter().enumerate() {
                setup.profile.validate()?;
                if setup.shard.is_empty() {
                    return Err(Error::validation(format!("client {i} has an empty shard")));
                }
                let distance = setup
                    .profile
                    .distance_to(physics.arena.server_pos_m)
                    .max(physics.channel.ref_dist_m);
                let rate = link_rate_bps(&physics.channel, distance)?;
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::Infeasible(format!(
                        "client {i} link rate is unusable at {distance} m"
                    )));
                }
                let label = |what: &str| format!("{}{}.{}", world.label_prefix, what, i);
                clients.push(Client {
                    profile: setup.profile.clone(),
                    rate_bps: rate,
                    shard: setup.shard.clone(),
                    device_params: device_seg.params.clone(),
                    batch_stream: RngStream::new(world.seed, &label("batch"))?,
                    up_stream: RngStream::new(world.seed, &label("loss.up"))?,
                    down_stream: RngStream::new(world.seed, &label("loss.down"))?,
                    gen: 0,
                    iter: 0,
                    blocks_done: 0,
                    base_round: 0,
                    in_flight: false,
                    pending_params: None,
                    pending_base: 0,
                    labels: Vec::new(),
                    dev_cache: None,
                    smashed: None,
                    cut_grad: None,
                    edge_cache: None,
                    edge_io: None,
                });
            }
            let n = clients.len();
            let mut state = ClusterState {
                mode,
                full_spec: world.spec.clone(),
                device_spec: device_seg.spec.clone(),
                uppers,
                clients,
                subject_offset: offset,
                dev_fwd_flops: dev_f,
                dev_bwd_flops: dev_b,
                smashed_bits,
                wired_bits,
                dev_param_bits,
                round: 0,
                sync_done: 0,
                uploads: vec![None; n],
                async_buffer: Vec::new(),
                async_global: None,
                broadcast_pending: 0,
                seq_chain: device_seg.params.clone(),
                seq_turn: 0,
                seq_timeout_at: f64::INFINITY,
                seq_turn_times: Vec::new(),
                distill_waiting: false,
                distill_logits: None,
                bits_tx: 0,
                energy_j: 0.0,
                smashed_up_bits: 0,
                max_tau: 0,
                stall_events: 0,
                test: world.test.clone(),
            };
            if mode == Mode::Sequential {
                state.seq_turn_times = state.expected_turn_times(cfg, physics);
            }
            offset += n as u64;
            clusters.push(state);
        }
        Ok(MultiSim {
            cfg,
            physics,
            clusters,
            public_set,
            distill_arrivals: 0,
            rows: Vec::new(),
            loss_sum: 0.0,
            loss_count: 0,
            last_train_loss: f64::NAN,
            eval_scheduled_to: 0,
            iteration_losses: Vec::new(),
        })
    }

    fn budget(&self) -> f64 {
        self.cfg.time_budget_s.unwrap_or(f64::INFINITY)
    }

    fn deadline(&self, k: usize) -> f64 {
        if self.clusters[k].mode == Mode::Sequential {
            self.budget().min(self.clusters[k].seq_timeout_at)
        } else {
            self.budget()
        }
    }

    fn subject(&self, k: usize, ci: usize) -> u64 {
        self.clusters[k].subject_offset + ci as u64
    }

    /// Quantizes a tier-crossing tensor when a quantizer is configured;
    /// the receiver sees the dequantized values.
    fn maybe_quantize(&self, t: Tensor) -> Result<Tensor> {
        match self.physics.quantizer_bits {
            None => Ok(t),
            Some(bits) => {
                let q = QuantizerConfig::calibrate(bits, &t)?;
                let (_, dequant, _) = quantize_uniform(&t, &q)?;
                Ok(dequant)
            }
        }
    }

    // ---- iteration chain --------------------------------------------------

    fn start_block(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize, t: f64) -> Result<()> {
        self.clusters[k].clients[ci].iter = 0;
        self.start_iteration(eng, k, ci, t)
    }

    fn start_iteration(
        &mut self,
        eng: &mut Engine<Msg>,
        k: usize,
        ci: usize,
        t: f64,
    ) -> Result<()> {
        let subject = self.subject(k, ci);
        let batch = self.cfg.batch_size;
        let (dev_out, cache, labels) = {
            let cluster = &mut self.clusters[k];
            let c = &mut cluster.clients[ci];
            let idx: Vec<usize> =
                (0..batch).map(|_| c.batch_stream.below(c.shard.len())).collect();
            let sub = c.shard.subset(&idx)?;
            let (out, cache) = nn::forward(&cluster.device_spec, &c.device_params, &sub.features)?;
            (out, cache, sub.labels)
        };
        let smashed = self.maybe_quantize(dev_out)?;
        let (dt, gen) = {
            let cluster = &mut self.clusters[k];
            let flops = cluster.dev_fwd_flops;
            cluster.energy_j += compute_energy(&cluster.clients[ci].profile, flops);
            let dt = compute_time(&cluster.clients[ci].profile, flops);
            let c = &mut cluster.clients[ci];
            c.labels = labels;
            c.dev_cache = Some(cache);
            c.smashed = Some(smashed);
            (dt, c.gen)
        };
        eng.schedule(t + dt, EventKind::ComputeDone, subject, Msg::DevFwd { k, ci, gen })
    }

    /// Runs the lossy wireless chain; accounts every attempt. Returns the
    /// delivery time, or None when the deadline (or retry cap) cut it off.
    fn wireless_chain(
        &mut self,
        k: usize,
        ci: usize,
        start: f64,
        bits: f64,
        up: bool,
        smashed: bool,
    ) -> Option<f64> {
        let deadline = self.deadline(k);
        let loss = self.physics.channel.packet_loss_rate;
        let power_w = self.physics.channel.tx_power_w();
        let max_attempts = self.physics.max_retransmissions;
        let cluster = &mut self.clusters[k];
        let c = &mut cluster.clients[ci];
        let t_one = bits / c.rate_bps;
        let stream = if up { &mut c.up_stream } else { &mut c.down_stream };
        let (attempts, arrival) = wireless_tx(stream, loss, start, t_one, deadline, max_attempts);
        cluster.bits_tx += attempts as u64 * bits as u64;
        cluster.energy_j += attempts as f64 * power_w * t_one;
        if up && smashed {
            cluster.smashed_up_bits += attempts as u64 * bits as u64;
        }
        if arrival.is_none() {
            cluster.stall_events += 1;
        }
        arrival
    }

    fn wired_time(&self, bits: f64) -> f64 {
        self.physics.wired.latency_s + bits / self.physics.wired.rate_bps
    }

    fn on_dev_fwd(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize) -> Result<()> {
        let t = eng.clock();
        let subject = self.subject(k, ci);
        let bits = self.clusters[k].smashed_bits;
        let gen = self.clusters[k].clients[ci].gen;
        if let Some(arrival) = self.wireless_chain(k, ci, t, bits, true, true) {
            eng.schedule(arrival, EventKind::UplinkDone, subject, Msg::SmashedUp { k, ci, gen })?;
        }
        Ok(())
    }

    fn on_smashed_up(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize) -> Result<()> {
        let t = eng.clock();
        let subject = self.subject(k, ci);
        if self.clusters[k].uppers.len() == 1 {
            // Two-tier: the server runs forward + loss + backward + step
            // atomically against its current shared segment.
            let (loss, cut_grad, srv_flops, gen) = {
                let cluster = &mut self.clusters[k];
                let smashed = cluster.clients[ci].smashed.take().expect("smashed present");
                let labels = std::mem::take(&mut cluster.clients[ci].labels);
                let upper = &mut cluster.uppers[0];
                let (logits, cache) = nn::forward(&upper.spec, &upper.params, &smashed)?;
                let (loss, lgrad) = nn::softmax_cross_entropy(&logits, &labels)?;
                let (grads, cut_grad) = nn::backward(&upper.spec, &upper.params, &cache, &lgrad)?;
                upper.params = nn::sgd_step(&upper.params, &grads, self.cfg.lr)?;
                (loss, cut_grad, upper.fwd_flops + upper.bwd_flops, cluster.clients[ci].gen)
            };
            self.record_loss(loss);
            let srv_dt = compute_time(&self.physics.server, srv_flops);
            self.clusters[k].energy_j += compute_energy(&self.physics.server, srv_flops);
            let cut_grad = self.maybe_quantize(cut_grad)?;
            self.clusters[k].clients[ci].cut_grad = Some(cut_grad);
            let bits = self.clusters[k].smashed_bits;
            if let Some(arrival) = self.wireless_chain(k, ci, t + srv_dt, bits, false, false) {
                eng.schedule(
                    arrival,
                    EventKind::DownlinkDone,
                    subject,
                    Msg::CutGrad { k, ci, gen },
                )?;
            }
            Ok(())
        } else {
            // Three-tier: edge forward now, then the wired hop to the cloud.
            let (edge_fwd_flops, gen) = {
                let cluster = &mut self.clusters[k];
                let smashed = cluster.clients[ci].smashed.take().expect("smashed present");
                let edge = &mut cluster.uppers[0];
                let (out, cache) = nn::forward(&edge.spec, &edge.params, &smashed)?;
                cluster.clients[ci].edge_cache = Some(cache);
                cluster.clients[ci].edge_io = Some(out);
                (edge.fwd_flops, cluster.clients[ci].gen)
            };
            let dt = compute_time(&self.physics.server, edge_fwd_flops);
            self.clusters[k].energy_j += compute_energy(&self.physics.server, edge_fwd_flops);
            let wired_bits = self.clusters[k].wired_bits;
            self.clusters[k].bits_tx += wired_bits as u64;
            let wt = self.wired_time(wired_bits);
            eng.schedule(t + dt + wt, EventKind::UplinkDone, subject, Msg::WiredUp { k, ci, gen })
        }
    }

    fn on_wired_up(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize) -> Result<()> {
        let t = eng.clock();
        let subject = self.subject(k, ci);
        // Cloud: forward + loss + backward + step, atomically.
        let (loss, edge_grad, cloud_flops, gen) = {
            let cluster = &mut self.clusters[k];
            let x = cluster.clients[ci].edge_io.take().expect("edge output");
            let labels = std::mem::take(&mut cluster.clients[ci].labels);
            let cloud = &mut cluster.uppers[1];
            let (logits, cache) = nn::forward(&cloud.spec, &cloud.params, &x)?;
            let (loss, lgrad) = nn::softmax_cross_entropy(&logits, &labels)?;
            let (grads, edge_grad) = nn::backward(&cloud.spec, &cloud.params, &cache, &lgrad)?;
            cloud.params = nn::sgd_step(&cloud.params, &grads, self.cfg.lr)?;
            (loss, edge_grad, cloud.fwd_flops + cloud.bwd_flops, cluster.clients[ci].gen)
        };
        self.record_loss(loss);
        let dt = compute_time(&self.physics.server, cloud_flops);
        self.clusters[k].energy_j += compute_energy(&self.physics.server, cloud_flops);
        let wired_bits = self.clusters[k].wired_bits;
        self.clusters[k].bits_tx += wired_bits as u64;
        let wt = self.wired_time(wired_bits);
        self.clusters[k].clients[ci].edge_io = Some(edge_grad);
        eng.schedule(t + dt + wt, EventKind::DownlinkDone, subject, Msg::WiredDown { k, ci, gen })
    }

    fn on_wired_down(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize) -> Result<()> {
        let t = eng.clock();
        let subject = self.subject(k, ci);
        // Edge backward against its current (possibly advanced) params.
        let (cut_grad, edge_bwd_flops, gen) = {
            let cluster = &mut self.clusters[k];
            let grad_out = cluster.clients[ci].edge_io.take().expect("edge grad");
            let cache = cluster.clients[ci].edge_cache.take().expect("edge cache");
            let edge = &mut cluster.uppers[0];
            let (grads, cut_grad) = nn::backward(&edge.spec, &edge.params, &cache, &grad_out)?;
            edge.params = nn::sgd_step(&edge.params, &grads, self.cfg.lr)?;
            (cut_grad, edge.bwd_flops, cluster.clients[ci].gen)
        };
        let dt = compute_time(&self.physics.server, edge_bwd_flops);
        self.clusters[k].energy_j += compute_energy(&self.physics.server, edge_bwd_flops);
        let cut_grad = self.maybe_quantize(cut_grad)?;
        self.clusters[k].clients[ci].cut_grad = Some(cut_grad);
        let bits = self.clusters[k].smashed_bits;
        if let Some(arrival) = self.wireless_chain(k, ci, t + dt, bits, false, false) {
            eng.schedule(arrival, EventKind::DownlinkDone, subject, Msg::CutGrad { k, ci, gen })?;
        }
        Ok(())
    }

    fn on_cut_grad(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize) -> Result<()> {
        let t = eng.clock();
        let subject = self.subject(k, ci);
        let (bwd_dt, block_done, gen) = {
            let cluster = &mut self.clusters[k];
            let flops = cluster.dev_bwd_flops;
            let c = &mut cluster.clients[ci];
            let grad = c.cut_grad.take().expect("cut grad");
            let cache = c.dev_cache.take().expect("device cache");
            let (grads, _) = nn::backward(&cluster.device_spec, &c.device_params, &cache, &grad)?;
            c.device_params = nn::sgd_step(&c.device_params, &grads, self.cfg.lr)?;
            c.iter += 1;
            cluster.energy_j += compute_energy(&c.profile, flops);
            (compute_time(&c.profile, flops), c.iter >= self.cfg.local_iters, c.gen)
        };
        if block_done {
            eng.schedule(
                t + bwd_dt,
                EventKind::ComputeDone,
                subject,
                Msg::BlockEnd { k, ci, gen },
            )
        } else {
            self.start_iteration(eng, k, ci, t + bwd_dt)
        }
    }

    // ---- block completion and aggregation ----------------------------------

    fn on_block_end(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize) -> Result<()> {
        let t = eng.clock();
        self.clusters[k].clients[ci].blocks_done += 1;
        match self.clusters[k].mode {
            Mode::Sync => {
                self.clusters[k].sync_done += 1;
                if self.clusters[k].sync_done == self.clusters[k].clients.len() {
                    self.finish_sync_round(eng, k, t)?;
                }
                Ok(())
            }
            Mode::FreeRun => {
                let blocks = self.clusters[k].clients[ci].blocks_done;
                if blocks % self.cfg.aggregation_period_rounds == 0 {
                    self.start_param_up(eng, k, ci, t)
                } else {
                    self.freerun_advance(eng, k)?;
                    if blocks < self.cfg.rounds {
                        self.start_block(eng, k, ci, t)?;
                    }
                    Ok(())
                }
            }
            Mode::Async | Mode::Sequential => self.start_param_up(eng, k, ci, t),
        }
    }

    /// FreeRun round counter = min blocks completed across clients.
    fn freerun_advance(&mut self, eng: &mut Engine<Msg>, k: usize) -> Result<()> {
        let min_blocks = self.clusters[k]
            .clients
            .iter()
            .map(|c| c.blocks_done)
            .min()
            .unwrap_or(0);
        if min_blocks > self.clusters[k].round {
            self.clusters[k].round = min_blocks;
            self.maybe_eval(eng)?;
        }
        Ok(())
    }

    fn finish_sync_round(&mut self, eng: &mut Engine<Msg>, k: usize, t: f64) -> Result<()> {
        let completing = self.clusters[k].round + 1;
        if completing % self.cfg.aggregation_period_rounds == 0 {
            for ci in 0..self.clusters[k].clients.len() {
                self.start_param_up(eng, k, ci, t)?;
            }
            Ok(())
        } else {
            self.complete_round(eng, k, t)
        }
    }

    fn complete_round(&mut self, eng: &mut Engine<Msg>, k: usize, t: f64) -> Result<()> {
        {
            let cluster = &mut self.clusters[k];
            cluster.round += 1;
            cluster.sync_done = 0;
        }
        self.maybe_eval(eng)?;
        if self.clusters[k].round < self.cfg.rounds {
            for ci in 0..self.clusters[k].clients.len() {
                self.start_block(eng, k, ci, t)?;
            }
        }
        Ok(())
    }

    fn start_param_up(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize, t: f64) -> Result<()> {
        let subject = self.subject(k, ci);
        let bits = self.clusters[k].dev_param_bits;
        let gen = self.clusters[k].clients[ci].gen;
        if let Some(arrival) = self.wireless_chain(k, ci, t, bits, true, false) {
            eng.schedule(arrival, EventKind::UplinkDone, subject, Msg::ParamUp { k, ci, gen })?;
        }
        Ok(())
    }

    fn on_param_up(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize) -> Result<()> {
        let t = eng.clock();
        match self.clusters[k].mode {
            Mode::Sync | Mode::FreeRun => {
                let cluster = &mut self.clusters[k];
                let n = cluster.clients[ci].shard.len() as u64;
                cluster.uploads[ci] = Some((cluster.clients[ci].device_params.clone(), n));
                if cluster.uploads.iter().all(|u| u.is_some()) {
                    eng.schedule(t, EventKind::AggregationDue, k as u64, Msg::Aggregate { k })?;
                }
                Ok(())
            }
            Mode::Async => {
                let cluster = &mut self.clusters[k];
                debug_assert!(!cluster.clients[ci].in_flight, "double upload");
                let n = cluster.clients[ci].shard.len() as u64;
                let base = cluster.clients[ci].base_round;
                cluster.clients[ci].in_flight = true;
                cluster.async_buffer.push(Update {
                    client: ci,
                    params: cluster.clients[ci].device_params.clone(),
                    sample_count: n,
                    // Holds base_round until aggregation computes the true tau.
                    staleness: base,
                });
                if cluster.async_buffer.len() >= self.cfg.k {
                    eng.schedule(t, EventKind::AggregationDue, k as u64, Msg::Aggregate { k })?;
                }
                Ok(())
            }
            Mode::Sequential => {
                {
                    let cluster = &mut self.clusters[k];
                    cluster.clients[ci].gen += 1; // cancels the pending turn timeout
                    cluster.seq_timeout_at = f64::INFINITY;
                    cluster.seq_chain = cluster.clients[ci].device_params.clone();
                    cluster.round += 1;
                }
                self.maybe_eval(eng)?;
                self.seq_next_turn(eng, k, t)
            }
        }
    }

    fn on_aggregate(&mut self, eng: &mut Engine<Msg>, k: usize) -> Result<()> {
        let t = eng.clock();
        match self.clusters[k].mode {
            Mode::Sync | Mode::FreeRun => {
                let agg = {
                    let cluster = &mut self.clusters[k];
                    let updates: Vec<Update> = cluster
                        .uploads
                        .iter_mut()
                        .enumerate()
                        .map(|(ci, u)| {
                            let (params, n) = u.take().expect("all uploads present");
                            Update {
                                client: ci,
                                params,
                                sample_count: n,
                                staleness: 0,
                            }
                        })
                        .collect();
                    fedavg(&updates, self.cfg.staleness_exponent)?
                };
                let base = self.clusters[k].round + 1;
                self.stash_broadcast_all(k, agg, base);
                if self.distill_due(k) {
                    self.register_distill(eng, k)
                } else {
                    self.broadcast_all(eng, k, t)
                }
            }
            Mode::Async => {
                if self.clusters[k].async_buffer.len() < self.cfg.k {
                    return Ok(()); // consumed by an earlier aggregation at this instant
                }
                let (agg, contributors, new_round) = {
                    let cluster = &mut self.clusters[k];
                    let mut updates: Vec<Update> = std::mem::take(&mut cluster.async_buffer);
                    for u in &mut updates {
                        let tau = cluster.round - u.staleness; // field held base_round
                        u.staleness = tau;
                        cluster.max_tau = cluster.max_tau.max(tau);
                    }
                    let agg = fedavg(&updates, self.cfg.staleness_exponent)?;
                    cluster.round += 1;
                    let contributors: Vec<usize> = updates.iter().map(|u| u.client).collect();
                    (agg, contributors, cluster.round)
                };
                self.clusters[k].async_global = Some(agg.clone());
                self.maybe_eval(eng)?;
                for ci in contributors {
                    let c = &mut self.clusters[k].clients[ci];
                    c.pending_params = Some(agg.clone());
                    c.pending_base = new_round;
                    self.start_param_down(eng, k, ci, t)?;
                }
                Ok(())
            }
            Mode::Sequential => Ok(()),
        }
    }

    fn stash_broadcast_all(&mut self, k: usize, params: ModelParams, base: u64) {
        let cluster = &mut self.clusters[k];
        cluster.broadcast_pending = cluster.clients.len();
        for c in &mut cluster.clients {
            c.pending_params = Some(params.clone());
            c.pending_base = base;
        }
    }

    fn broadcast_all(&mut self, eng: &mut Engine<Msg>, k: usize, t: f64) -> Result<()> {
        for ci in 0..self.clusters[k].clients.len() {
            self.start_param_down(eng, k, ci, t)?;
        }
        Ok(())
    }

    fn start_param_down(
        &mut self,
        eng: &mut Engine<Msg>,
        k: usize,
        ci: usize,
        t: f64,
    ) -> Result<()> {
        let subject = self.subject(k, ci);
        let bits = self.clusters[k].dev_param_bits;
        let gen = self.clusters[k].clients[ci].gen;
        if let Some(arrival) = self.wireless_chain(k, ci, t, bits, false, false) {
            eng.schedule(arrival, EventKind::DownlinkDone, subject, Msg::ParamDown { k, ci, gen })?;
        }
        Ok(())
    }

    fn on_param_down(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize) -> Result<()> {
        let t = eng.clock();
        match self.clusters[k].mode {
            Mode::Sync => {
                let all_delivered = {
                    let cluster = &mut self.clusters[k];
                    let c = &mut cluster.clients[ci];
                    c.device_params = c.pending_params.take().expect("broadcast params");
                    c.base_round = c.pending_base;
                    cluster.broadcast_pending -= 1;
                    cluster.broadcast_pending == 0
                };
                if all_delivered {
                    self.complete_round(eng, k, t)?;
                }
                Ok(())
            }
            Mode::FreeRun => {
                let resume = {
                    let cluster = &mut self.clusters[k];
                    let c = &mut cluster.clients[ci];
                    c.device_params = c.pending_params.take().expect("broadcast params");
                    c.base_round = c.pending_base;
                    cluster.broadcast_pending -= 1;
                    c.blocks_done < self.cfg.rounds
                };
                self.freerun_advance(eng, k)?;
                if resume {
                    self.start_block(eng, k, ci, t)?;
                }
                Ok(())
            }
            Mode::Async => {
                let resume = {
                    let cluster = &mut self.clusters[k];
                    let c = &mut cluster.clients[ci];
                    c.device_params = c.pending_params.take().expect("broadcast params");
                    c.base_round = c.pending_base;
                    c.in_flight = false;
                    cluster.round < self.cfg.rounds
                };
                if resume {
                    self.start_block(eng, k, ci, t)?;
                }
                Ok(())
            }
            Mode::Sequential => {
                let cluster = &mut self.clusters[k];
                cluster.clients[ci].device_params = cluster.seq_chain.clone();
                self.start_block(eng, k, ci, t)
            }
        }
    }

    // ---- sequential turns ----------------------------------------------------

    fn seq_next_turn(&mut self, eng: &mut Engine<Msg>, k: usize, t: f64) -> Result<()> {
        if self.clusters[k].round >= self.cfg.rounds {
            return Ok(());
        }
        let (ci, timeout_at, gen, subject) = {
            let cluster = &mut self.clusters[k];
            let ci = cluster.seq_turn;
            cluster.seq_turn = (ci + 1) % cluster.clients.len();
            // Timeout: 5x the p=0 expected turn duration for this client.
            let timeout_at = t + 5.0 * cluster.seq_turn_times[ci];
            cluster.seq_timeout_at = timeout_at;
            (ci, timeout_at, cluster.clients[ci].gen, cluster.subject_offset + ci as u64)
        };
        eng.schedule(timeout_at, EventKind::Timeout, subject, Msg::SeqTimeout { k, ci, gen })?;
        self.start_param_down(eng, k, ci, t)
    }

    fn on_seq_timeout(&mut self, eng: &mut Engine<Msg>, k: usize, ci: usize) -> Result<()> {
        let t = eng.clock();
        {
            let cluster = &mut self.clusters[k];
            cluster.clients[ci].gen += 1; // invalidate the turn's in-flight events
            cluster.seq_timeout_at = f64::INFINITY;
            cluster.round += 1; // the skipped turn still consumed a round
        }
        self.maybe_eval(eng)?;
        self.seq_next_turn(eng, k, t)
    }

    // ---- distillation rendezvous ----------------------------------------------

    fn distill_due(&self, k: usize) -> bool {
        self.public_set.is_some()
            && self.cfg.distill.weight > 0.0
            && self.cfg.distill.period_rounds > 0
            && (self.clusters[k].round + 1) % self.cfg.distill.period_rounds == 0
    }

    fn register_distill(&mut self, eng: &mut Engine<Msg>, k: usize) -> Result<()> {
        self.clusters[k].distill_waiting = true;
        if !self.clusters.iter().all(|c| c.distill_waiting) {
            return Ok(());
        }
        // All clusters have aggregated up to the distillation boundary:
        // each forwards the public set and ships logits to the cloud.
        let t = eng.clock();
        for k in 0..self.clusters.len() {
            let (logits, fwd_flops) = self.cluster_public_logits(k)?;
            self.clusters[k].distill_logits = Some(logits);
            let dt = compute_time(&self.physics.server, fwd_flops);
            self.clusters[k].energy_j += compute_energy(&self.physics.server, fwd_flops);
            let bits = self.distill_payload_bits(k);
            self.clusters[k].bits_tx += bits as u64;
            let wt = self.wired_time(bits);
            eng.schedule(t + dt + wt, EventKind::UplinkDone, k as u64, Msg::DistillLogits { k })?;
        }
        Ok(())
    }

    fn distill_payload_bits(&self, k: usize) -> f64 {
        let pubset = self.public_set.as_ref().expect("public set");
        (pubset.len() * self.clusters[k].full_spec.num_classes()) as f64 * 64.0
    }

    /// Logits of the cluster's post-aggregation model on the public set.
    fn cluster_public_logits(&self, k: usize) -> Result<(Tensor, f64)> {
        let pubset = self.public_set.as_ref().expect("public set");
        let (spec, params) = self.distill_model(k)?;
        let (logits, _) = nn::forward(&spec, &params, &pubset.features)?;
        let flops: u64 = spec.layers().iter().map(|l| l.flops_fwd()).sum();
        Ok((logits, flops as f64 * pubset.len() as f64))
    }

    /// The model distillation operates on: freshly aggregated device
    /// segment stitched with the shared upper tier.
    fn distill_model(&self, k: usize) -> Result<(ModelSpec, ModelParams)> {
        let cluster = &self.clusters[k];
        let device = cluster.clients[0]
            .pending_params
            .as_ref()
            .expect("aggregated params stashed")
            .clone();
        let mut dense = device.dense;
        for u in &cluster.uppers {
            dense.extend(u.params.dense.iter().cloned());
        }
        Ok((cluster.full_spec.clone(), ModelParams { dense }))
    }

    fn on_distill_logits(&mut self, eng: &mut Engine<Msg>, _k: usize) -> Result<()> {
        // One arrival per cluster; the cloud acts once the last one lands.
        self.distill_arrivals += 1;
        if self.distill_arrivals < self.clusters.len() {
            return Ok(());
        }
        self.distill_arrivals = 0;
        let t = eng.clock();
        for k in 0..self.clusters.len() {
            let bits = self.distill_payload_bits(k);
            self.clusters[k].bits_tx += bits as u64;
            let wt = self.wired_time(bits);
            eng.schedule(t + wt, EventKind::DistillDue, k as u64, Msg::DistillApply { k })?;
        }
        Ok(())
    }

    fn on_distill_apply(&mut self, eng: &mut Engine<Msg>, k: usize) -> Result<()> {
        let t = eng.clock();
        let temperature = self.cfg.distill.temperature;
        // Cloud-averaged soft labels of the other clusters, re-encoded as
        // pseudo-logits so the distillation loss recovers them exactly.
        let teacher = {
            let pubset = self.public_set.as_ref().expect("public set");
            let n = pubset.len();
            let classes = self.clusters[k].full_spec.num_classes();
            let mut acc = vec![0.0; n * classes];
            let mut count = 0.0;
            for (j, cl) in self.clusters.iter().enumerate() {
                if j == k {
                    continue;
                }
                let probs = soft_probs(cl.distill_logits.as_ref().expect("logits"), temperature);
                for (a, p) in acc.iter_mut().zip(probs.data()) {
                    *a += p;
                }
                count += 1.0;
            }
            for a in &mut acc {
                *a /= count;
            }
            probs_to_pseudo_logits(&Tensor::new(vec![n, classes], acc)?, temperature)?
        };

        // Gradient steps on the distillation objective over the stitched
        // model, then split back into device + server tiers.
        let (spec, mut params) = self.distill_model(k)?;
        let pub_x = self.public_set.as_ref().expect("public set").features.clone();
        let per_step: u64 = spec.layers().iter().map(|l| l.flops_fwd() + l.flops_bwd()).sum();
        let mut flops = 0.0;
        for _ in 0..self.cfg.local_iters {
            let (logits, cache) = nn::forward(&spec, &params, &pub_x)?;
            let (_, lgrad) =
                distill_loss(&logits, &teacher, None, temperature, self.cfg.distill.weight)?;
            let (grads, _) = nn::backward(&spec, &params, &cache, &lgrad)?;
            params = nn::sgd_step(&params, &grads, self.cfg.lr)?;
            flops += per_step as f64 * pub_x.rows() as f64;
        }
        let dt = compute_time(&self.physics.server, flops);
        self.clusters[k].energy_j += compute_energy(&self.physics.server, flops);

        let cut = self.clusters[k].device_spec.layer_count();
        let plan = SplitPlan::new(vec![cut])?;
        let segs = partition(&spec, &params, &plan)?;
        {
            let cluster = &mut self.clusters[k];
            cluster.uppers[0].params = segs[1].params.clone();
            for c in &mut cluster.clients {
                c.pending_params = Some(segs[0].params.clone());
            }
            // Logits stay until every cluster has read its teachers; the
            // next rendezvous overwrites them.
            cluster.distill_waiting = false;
        }
        self.broadcast_all(eng, k, t + dt)
    }

    // ---- evaluation and rows ------------------------------------------------

    fn record_loss(&mut self, loss: f64) {
        self.loss_sum += loss;
        self.loss_count += 1;
        self.iteration_losses.push(loss);
    }

    /// Virtual global model of one cluster: aggregated (or averaged)
    /// device segment stitched with the shared upper tiers.
    fn stitched(&self, k: usize) -> Result<(ModelSpec, ModelParams)> {
        let cluster = &self.clusters[k];
        let device = match cluster.mode {
            Mode::Sequential => cluster.seq_chain.clone(),
            Mode::Async => match &cluster.async_global {
                Some(p) => p.clone(),
                None => cluster.clients[0].device_params.clone(),
            },
            Mode::Sync | Mode::FreeRun => {
                let updates: Vec<Update> = cluster
                    .clients
                    .iter()
                    .enumerate()
                    .map(|(ci, c)| Update {
                        client: ci,
                        params: c.device_params.clone(),
                        sample_count: c.shard.len() as u64,
                        staleness: 0,
                    })
                    .collect();
                fedavg(&updates, self.cfg.staleness_exponent)?
            }
        };
        let mut dense = device.dense;
        for u in &cluster.uppers {
            dense.extend(u.params.dense.iter().cloned());
        }
        Ok((cluster.full_spec.clone(), ModelParams { dense }))
    }

    fn min_round(&self) -> u64 {
        self.clusters.iter().map(|c| c.round).min().unwrap_or(0)
    }

    /// Schedules an Eval event for every eval_every multiple newly crossed
    /// by the slowest cluster.
    fn maybe_eval(&mut self, eng: &mut Engine<Msg>) -> Result<()> {
        let reached = self.min_round();
        while self.eval_scheduled_to < reached {
            self.eval_scheduled_to += 1;
            let r = self.eval_scheduled_to;
            if r % self.cfg.eval_every == 0 {
                eng.schedule(eng.clock(), EventKind::EvalDue, 0, Msg::Eval { round: r })?;
            }
        }
        Ok(())
    }

    fn emit_row(&mut self, round: u64, t: f64) -> Result<()> {
        let mut acc_sum = 0.0;
        for k in 0..self.clusters.len() {
            let (spec, params) = self.stitched(k)?;
            let test = &self.clusters[k].test;
            acc_sum += nn::evaluate(&spec, &params, &test.features, &test.labels)?;
        }
        let test_acc = acc_sum / self.clusters.len() as f64;
        let train_loss = if self.loss_count > 0 {
            self.loss_sum / self.loss_count as f64
        } else {
            self.last_train_loss
        };
        self.last_train_loss = train_loss;
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.rows.push(RunRow {
            round,
            sim_time_s: t,
            train_loss,
            test_acc,
            bits_tx: self.clusters.iter().map(|c| c.bits_tx).sum(),
            energy_j: self.clusters.iter().map(|c| c.energy_j).sum(),
            max_staleness: self.clusters.iter().map(|c| c.max_tau).max().unwrap_or(0),
        });
        Ok(())
    }

    // ---- main loop --------------------------------------------------------------

    fn handle(&mut self, eng: &mut Engine<Msg>, ev: Event<Msg>) -> Result<ControlFlow<()>> {
        // Stale-generation events (cancelled sequential turns) are dropped.
        let live = |s: &Self, k: usize, ci: usize, gen: u64| s.clusters[k].clients[ci].gen == gen;
        match ev.payload {
            Msg::DevFwd { k, ci, gen } if live(self, k, ci, gen) => self.on_dev_fwd(eng, k, ci)?,
            Msg::SmashedUp { k, ci, gen } if live(self, k, ci, gen) => {
                self.on_smashed_up(eng, k, ci)?
            }
            Msg::WiredUp { k, ci, gen } if live(self, k, ci, gen) => self.on_wired_up(eng, k, ci)?,
            Msg::WiredDown { k, ci, gen } if live(self, k, ci, gen) => {
                self.on_wired_down(eng, k, ci)?
            }
            Msg::CutGrad { k, ci, gen } if live(self, k, ci, gen) => self.on_cut_grad(eng, k, ci)?,
            Msg::BlockEnd { k, ci, gen } if live(self, k, ci, gen) => {
                self.on_block_end(eng, k, ci)?
            }
            Msg::ParamUp { k, ci, gen } if live(self, k, ci, gen) => self.on_param_up(eng, k, ci)?,
            Msg::ParamDown { k, ci, gen } if live(self, k, ci, gen) => {
                self.on_param_down(eng, k, ci)?
            }
            Msg::Aggregate { k } => self.on_aggregate(eng, k)?,
            Msg::SeqTimeout { k, ci, gen } if live(self, k, ci, gen) => {
                self.on_seq_timeout(eng, k, ci)?
            }
            Msg::Eval { round } => self.emit_row(round, ev.time_s)?,
            Msg::DistillLogits { k } => self.on_distill_logits(eng, k)?,
            Msg::DistillApply { k } => self.on_distill_apply(eng, k)?,
            _ => {} // stale generation
        }
        Ok(ControlFlow::Continue(()))
    }

    pub(crate) fn run(self) -> Result<RunOutput> {
        let mut sim = self;
        let mut eng: Engine<Msg> = Engine::new();
        if sim.cfg.trace {
            eng.enable_trace();
        }
        for k in 0..sim.clusters.len() {
            match sim.clusters[k].mode {
                Mode::Sequential => sim.seq_next_turn(&mut eng, k, 0.0)?,
                _ => {
                    for ci in 0..sim.clusters[k].clients.len() {
                        sim.start_block(&mut eng, k, ci, 0.0)?;
                    }
                }
            }
        }
        let stop = match sim.cfg.time_budget_s {
            Some(b) => Stop::TimeBudget(b),
            None => Stop::QueueEmpty,
        };
        let final_clock = {
            let sim_ref = &mut sim;
            eng.run_until(stop, |eng, ev| sim_ref.handle(eng, ev))?
        };

        // Final row if the run ended between evaluations.
        let round = sim.min_round();
        if sim.rows.is_empty()
            || sim.rows.last().map(|r| (r.round, r.sim_time_s)) != Some((round, final_clock))
        {
            sim.emit_row(round, final_clock)?;
        }

        let finals: Vec<FinalModel> = (0..sim.clusters.len())
            .map(|k| sim.stitched(k).map(|(spec, params)| FinalModel { spec, params }))
            .collect::<Result<_>>()?;
        let stats = RunStats {
            bits_tx: sim.clusters.iter().map(|c| c.bits_tx).sum(),
            energy_j: sim.clusters.iter().map(|c| c.energy_j).sum(),
            smashed_up_bits: sim.clusters.iter().map(|c| c.smashed_up_bits).sum(),
            max_staleness: sim.clusters.iter().map(|c| c.max_tau).max().unwrap_or(0),
            rounds_completed: round,
            final_time_s: final_clock,
            stall_events: sim.clusters.iter().map(|c| c.stall_events).sum(),
            iteration_losses: std::mem::take(&mut sim.iteration_losses),
        };
        Ok(RunOutput {
            rows: std::mem::take(&mut sim.rows),
            stats,
            finals,
            trace: if sim.cfg.trace { Some(eng.trace_dump()) } else { None },
        })
    }
}

impl ClusterState {
    /// Expected p=0 turn duration per client (param down + E iterations +
    /// param up), the base of the sequential turn timeout.
    fn expected_turn_times(&self, cfg: &RunConfig, physics: &Physics) -> Vec<f64> {
        let upper = &self.uppers[0];
        let srv_dt = compute_time(&physics.server, upper.fwd_flops + upper.bwd_flops);
        self.clients
            .iter()
            .map(|c| {
                let t_sm = self.smashed_bits / c.rate_bps;
                let t_pp = self.dev_param_bits / c.rate_bps;
                let iter = compute_time(&c.profile, self.dev_fwd_flops)
                    + t_sm
                    + srv_dt
                    + t_sm
                    + compute_time(&c.profile, self.dev_bwd_flops);
                t_pp + cfg.local_iters as f64 * iter + t_pp
            })
            .collect()
    }
}
