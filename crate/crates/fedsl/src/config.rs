//! Experiment configuration: JSON schema, defaults, and validation.
//!
//! Unknown keys are rejected at parse time; semantic violations are
//! reported with the JSON pointer of the offending field.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frameworks::FrameworkKind;
use crate::nn::ModelSpec;

fn d_n_clients() -> usize {
    10
}
fn d_k() -> usize {
    5
}
fn d_period() -> u64 {
    25
}
fn d_local_iters() -> u32 {
    5
}
fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    0.001
}
fn d_staleness() -> f64 {
    0.5
}
fn d_rounds() -> u64 {
    200
}
fn d_eval_every() -> u64 {
    5
}
fn d_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindSection {
    Sync,
    Sequential,
    AsyncThreshold,
    Hierarchical,
    Heterogeneous,
}

impl KindSection {
    pub fn to_kind(self) -> FrameworkKind {
        match self {
            KindSection::Sync => FrameworkKind::Sync,
            KindSection::Sequential => FrameworkKind::Sequential,
            KindSection::AsyncThreshold => FrameworkKind::AsyncThreshold,
            KindSection::Hierarchical => FrameworkKind::Hierarchical,
            KindSection::Heterogeneous => FrameworkKind::Heterogeneous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    #[serde(default = "d_period")]
    pub period_rounds: u64,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    #[serde(default = "d_weight")]
    pub weight: f64,
    #[serde(default = "d_public")]
    pub public_set_size: usize,
}
fn d_temperature() -> f64 {
    2.0
}
fn d_weight() -> f64 {
    0.5
}
fn d_public() -> usize {
    512
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            period_rounds: d_period(),
            temperature: d_temperature(),
            weight: d_weight(),
            public_set_size: d_public(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub members: usize,
    #[serde(default = "d_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "d_cuts")]
    pub cuts: Vec<usize>,
    /// Give this cluster its own task (fresh blob means) instead of a
    /// shard of the shared dataset.
    #[serde(default)]
    pub distinct_task: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameworkSection {
    pub kind: KindSection,
    #[serde(default = "d_n_clients")]
    pub n_clients: usize,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_period")]
    pub aggregation_period_rounds: u64,
    #[serde(default = "d_local_iters")]
    pub local_iters: u32,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_staleness")]
    pub staleness_exponent: f64,
    #[serde(default)]
    pub max_retransmissions: Option<u32>,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub clusters: Vec<ClusterSection>,
}

fn d_hidden() -> Vec<usize> {
    vec![64, 64, 32]
}
fn d_cuts() -> Vec<usize> {
    vec![2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_hidden")]
    pub hidden_dims: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dims: d_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "d_cuts")]
    pub cuts: Vec<usize>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { cuts: d_cuts() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(default = "d_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "d_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "d_noise")]
    pub noise_dbm: f64,
    /// Read `noise_dbm` as dBm/Hz instead of total in-band power.
    #[serde(default)]
    pub noise_is_psd: bool,
    #[serde(default = "d_pl0")]
    pub pl0_db: f64,
    #[serde(default = "d_ref_dist")]
    pub ref_dist_m: f64,
    #[serde(default = "d_pl_exp")]
    pub pl_exponent: f64,
    #[serde(default)]
    pub packet_loss_rate: f64,
}
fn d_bandwidth() -> f64 {
    1e7
}
fn d_tx_power() -> f64 {
    23.0
}
fn d_noise() -> f64 {
    -85.0
}
fn d_pl0() -> f64 {
    40.0
}
fn d_ref_dist() -> f64 {
    1.0
}
fn d_pl_exp() -> f64 {
    3.0
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            bandwidth_hz: d_bandwidth(),
            tx_power_dbm: d_tx_power(),
            noise_dbm: d_noise(),
            noise_is_psd: false,
            pl0_db: d_pl0(),
            ref_dist_m: d_ref_dist(),
            pl_exponent: d_pl_exp(),
            packet_loss_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    #[serde(default = "d_cpu_freq")]
    pub cpu_freq_hz: f64,
    #[serde(default = "d_cpf")]
    pub cycles_per_flop: f64,
    #[serde(default = "d_kappa")]
    pub kappa: f64,
    #[serde(default = "d_f_min")]
    pub f_min_hz: f64,
    #[serde(default = "d_f_max")]
    pub f_max_hz: f64,
    /// Log-uniform speed factor range [1, heterogeneity]; 1 = uniform fleet.
    #[serde(default = "d_het")]
    pub heterogeneity: f64,
    #[serde(default = "d_server_freq")]
    pub server_freq_hz: f64,
}
fn d_cpu_freq() -> f64 {
    1e9
}
fn d_cpf() -> f64 {
    1.0
}
fn d_kappa() -> f64 {
    1e-28
}
fn d_f_min() -> f64 {
    1e6
}
fn d_f_max() -> f64 {
    1e12
}
fn d_het() -> f64 {
    1.0
}
fn d_server_freq() -> f64 {
    1e10
}

impl Default for DeviceSection {
    fn default() -> Self {
        DeviceSection {
            cpu_freq_hz: d_cpu_freq(),
            cycles_per_flop: d_cpf(),
            kappa: d_kappa(),
            f_min_hz: d_f_min(),
            f_max_hz: d_f_max(),
            heterogeneity: d_het(),
            server_freq_hz: d_server_freq(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArenaSection {
    #[serde(default = "d_arena_side")]
    pub width_m: f64,
    #[serde(default = "d_arena_side")]
    pub height_m: f64,
    /// Server position; defaults to the arena center.
    #[serde(default)]
    pub server_pos_m: Option<(f64, f64)>,
}
fn d_arena_side() -> f64 {
    50.0
}

impl Default for ArenaSection {
    fn default() -> Self {
        ArenaSection {
            width_m: d_arena_side(),
            height_m: d_arena_side(),
            server_pos_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WiredSection {
    #[serde(default = "d_wired_rate")]
    pub rate_bps: f64,
    #[serde(default = "d_wired_latency")]
    pub latency_s: f64,
}
fn d_wired_rate() -> f64 {
    1e9
}
fn d_wired_latency() -> f64 {
    5e-3
}

impl Default for WiredSection {
    fn default() -> Self {
        WiredSection {
            rate_bps: d_wired_rate(),
            latency_s: d_wired_latency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionSection {
    Uniform,
    Dirichlet { alpha: f64 },
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection::Uniform
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "d_n_train")]
    pub n_train: usize,
    #[serde(default = "d_n_test")]
    pub n_test: usize,
    #[serde(default = "d_dims")]
    pub dims: usize,
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_spread")]
    pub spread: f64,
    #[serde(default)]
    pub partition: PartitionSection,
}
fn d_n_train() -> usize {
    4000
}
fn d_n_test() -> usize {
    1000
}
fn d_dims() -> usize {
    32
}
fn d_classes() -> usize {
    4
}
fn d_spread() -> f64 {
    0.1
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_train: d_n_train(),
            n_test: d_n_test(),
            dims: d_dims(),
            classes: d_classes(),
            spread: d_spread(),
            partition: PartitionSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSection {
    pub bits: u32,
}

/// A complete, validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub framework: FrameworkSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub devices: DeviceSection,
    #[serde(default)]
    pub arena: ArenaSection,
    #[serde(default)]
    pub wired: WiredSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub quantizer: Option<QuantizerSection>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_rounds")]
    pub rounds: u64,
    #[serde(default = "d_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub time_budget_s: Option<f64>,
}

fn bad(pointer: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::config(pointer, detail)
}

fn check_mlp(pointer: &str, dims: usize, hidden: &[usize], classes: usize) -> Result<ModelSpec> {
    if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
        return Err(bad(pointer, "hidden dims must be nonempty and positive"));
    }
    ModelSpec::mlp(dims, hidden, classes)
        .map_err(|e| bad(pointer, format!("invalid model: {e}")))
}

fn check_cuts(pointer: &str, cuts: &[usize], layer_count: usize, want: usize) -> Result<()> {
    if cuts.len() != want {
        return Err(bad(pointer, format!("expected {want} cut(s), got {}", cuts.len())));
    }
    for w in cuts.windows(2) {
        if w[0] >= w[1] {
            return Err(bad(pointer, "cuts must be strictly increasing"));
        }
    }
    for &c in cuts {
        if c == 0 || c >= layer_count {
            return Err(bad(
                pointer,
                format!("cut {c} out of range for {layer_count}-layer model"),
            ));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// The monolithic model implied by the data and model sections.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        check_mlp(
            "/model/hidden_dims",
            self.data.dims,
            &self.model.hidden_dims,
            self.data.classes,
        )
    }

    pub fn cluster_model_spec(&self, cluster: &ClusterSection) -> Result<ModelSpec> {
        check_mlp(
            "/framework/clusters/hidden_dims",
            self.data.dims,
            &cluster.hidden_dims,
            self.data.classes,
        )
    }

    /// Full semantic validation; every violation names a JSON pointer.
    pub fn validate(&self) -> Result<()> {
        let f = &self.framework;
        if f.n_clients == 0 {
            return Err(bad("/framework/n_clients", "must be at least 1"));
        }
        if f.kind == KindSection::AsyncThreshold && (f.k < 2 || f.k > f.n_clients) {
            return Err(bad(
                "/framework/k",
                format!("k={} must satisfy 1 < k <= n_clients={}", f.k, f.n_clients),
            ));
        }
        if f.local_iters == 0 {
            return Err(bad("/framework/local_iters", "must be at least 1"));
        }
        if f.batch_size == 0 {
            return Err(bad("/framework/batch_size", "must be at least 1"));
        }
        if !(f.lr > 0.0 && f.lr.is_finite()) {
            return Err(bad("/framework/lr", "must be positive and finite"));
        }
        if !(f.staleness_exponent >= 0.0 && f.staleness_exponent.is_finite()) {
            return Err(bad("/framework/staleness_exponent", "must be >= 0"));
        }
        if f.aggregation_period_rounds == 0 {
            return Err(bad("/framework/aggregation_period_rounds", "must be >= 1"));
        }
        if !(f.distill.temperature > 0.0) {
            return Err(bad("/framework/distill/temperature", "must be positive"));
        }
        if !(0.0..=1.0).contains(&f.distill.weight) {
            return Err(bad("/framework/distill/weight", "must be in [0, 1]"));
        }
        if f.distill.public_set_size == 0 {
            return Err(bad("/framework/distill/public_set_size", "must be >= 1"));
        }

        if f.kind == KindSection::Heterogeneous {
            if f.clusters.len() < 2 {
                return Err(bad("/framework/clusters", "need at least 2 clusters"));
            }
            let members: usize = f.clusters.iter().map(|c| c.members).sum();
            if members != f.n_clients {
                return Err(bad(
                    "/framework/clusters",
                    format!("cluster members sum to {members}, n_clients is {}", f.n_clients),
                ));
            }
            for (i, c) in f.clusters.iter().enumerate() {
                if c.members == 0 {
                    return Err(bad(
                        format!("/framework/clusters/{i}/members"),
                        "must be >= 1",
                    ));
                }
                let spec = self.cluster_model_spec(c)?;
                check_cuts(
                    &format!("/framework/clusters/{i}/cuts"),
                    &c.cuts,
                    spec.layer_count(),
                    1,
                )?;
            }
            if f.distill.weight > 0.0
                && f.distill.period_rounds % f.aggregation_period_rounds != 0
            {
                return Err(bad(
                    "/framework/distill/period_rounds",
                    "must be a multiple of the aggregation period",
                ));
            }
        } else {
            if !f.clusters.is_empty() {
                return Err(bad(
                    "/framework/clusters",
                    "clusters are only valid for the heterogeneous framework",
                ));
            }
            let spec = self.model_spec()?;
            let want = if f.kind == KindSection::Hierarchical { 2 } else { 1 };
            check_cuts("/split/cuts", &self.split.cuts, spec.layer_count(), want)?;
        }

        let ch = &self.channel;
        if !(ch.bandwidth_hz > 0.0) {
            return Err(bad("/channel/bandwidth_hz", "must be positive"));
        }
        if !(0.0..=1.0).contains(&ch.packet_loss_rate) {
            return Err(bad("/channel/packet_loss_rate", "must be in [0, 1]"));
        }
        if !(ch.ref_dist_m > 0.0) {
            return Err(bad("/channel/ref_dist_m", "must be positive"));
        }

        let dv = &self.devices;
        if !(dv.cpu_freq_hz > 0.0 && dv.server_freq_hz > 0.0) {
            return Err(bad("/devices/cpu_freq_hz", "frequencies must be positive"));
        }
        if !(dv.cycles_per_flop > 0.0) {
            return Err(bad("/devices/cycles_per_flop", "must be positive"));
        }
        if !(dv.kappa > 0.0) {
            return Err(bad("/devices/kappa", "must be positive"));
        }
        if !(dv.heterogeneity >= 1.0 && dv.heterogeneity.is_finite()) {
            return Err(bad("/devices/heterogeneity", "must be >= 1"));
        }
        if !(dv.f_min_hz > 0.0 && dv.f_min_hz <= dv.cpu_freq_hz / dv.heterogeneity) {
            return Err(bad(
                "/devices/f_min_hz",
                "must satisfy 0 < f_min <= slowest fleet frequency",
            ));
        }
        if dv.f_max_hz < dv.cpu_freq_hz || dv.f_max_hz < dv.server_freq_hz {
            return Err(bad("/devices/f_max_hz", "must be >= configured frequencies"));
        }

        if !(self.arena.width_m > 0.0 && self.arena.height_m > 0.0) {
            return Err(bad("/arena/width_m", "arena dimensions must be positive"));
        }
        if let Some((x, y)) = self.arena.server_pos_m {
            if !(0.0..=self.arena.width_m).contains(&x) || !(0.0..=self.arena.height_m).contains(&y)
            {
                return Err(bad("/arena/server_pos_m", "server must be inside the arena"));
            }
        }

        if !(self.wired.rate_bps > 0.0) {
            return Err(bad("/wired/rate_bps", "must be positive"));
        }
        if !(self.wired.latency_s >= 0.0) {
            return Err(bad("/wired/latency_s", "must be non-negative"));
        }

        let d = &self.data;
        if d.classes < 2 {
            return Err(bad("/data/classes", "need at least 2 classes"));
        }
        if d.dims < 2 {
            return Err(bad("/data/dims", "need at least 2 dimensions"));
        }
        if d.n_train < f.n_clients {
            return Err(bad("/data/n_train", "need at least one sample per client"));
        }
        if d.n_test == 0 {
            return Err(bad("/data/n_test", "must be >= 1"));
        }
        if !(d.spread >= 0.0 && d.spread.is_finite()) {
            return Err(bad("/data/spread", "must be non-negative"));
        }
        if let PartitionSection::Dirichlet { alpha } = d.partition {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(bad("/data/partition/alpha", "must be positive"));
            }
        }

        if let Some(q) = &self.quantizer {
            if !(1..=16).contains(&q.bits) {
                return Err(bad("/quantizer/bits", "must be in [1, 16]"));
            }
        }

        if self.rounds == 0 {
            return Err(bad("/rounds", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(bad("/eval_every", "must be >= 1"));
        }
        if let Some(t) = self.time_budget_s {
            if !(t > 0.0 && t.is_finite()) {
                return Err(bad("/time_budget_s", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Parses and validates a config file. Parse errors carry serde_json's
/// line/column; semantic errors carry a JSON pointer.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_config_str(&text)
}

pub fn load_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| Error::config("/", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
