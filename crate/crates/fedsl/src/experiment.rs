//! Experiment driver: builds the simulated world from a config, dispatches
//! to the framework runners, and assembles metrics tables and sweeps.

use rayon::prelude::*;

use crate::config::{ExperimentConfig, KindSection, PartitionSection};
use crate::data::{gen_blobs, partition_dirichlet, partition_uniform, Dataset};
use crate::error::{Error, Result};
use crate::frameworks::{
    self, ClientSetup, ClusterWorld, DistillSettings, Physics, RunConfig, RunOutput, WiredLink,
};
use crate::metrics::{MetricsRow, MetricsTable};
use crate::netphys::{Arena, ChannelParams, DeviceProfile};
use crate::rng::{derive_seed, RngStream};
use crate::split::SplitPlan;

fn physics_of(cfg: &ExperimentConfig) -> Physics {
    Physics {
        channel: ChannelParams {
            bandwidth_hz: cfg.channel.bandwidth_hz,
            tx_power_dbm: cfg.channel.tx_power_dbm,
            noise_dbm: cfg.channel.noise_dbm,
            noise_is_psd: cfg.channel.noise_is_psd,
            pl0_db: cfg.channel.pl0_db,
            ref_dist_m: cfg.channel.ref_dist_m,
            pl_exponent: cfg.channel.pl_exponent,
            packet_loss_rate: cfg.channel.packet_loss_rate,
        },
        arena: Arena {
            width_m: cfg.arena.width_m,
            height_m: cfg.arena.height_m,
            server_pos_m: cfg
                .arena
                .server_pos_m
                .unwrap_or((cfg.arena.width_m / 2.0, cfg.arena.height_m / 2.0)),
        },
        wired: WiredLink {
            rate_bps: cfg.wired.rate_bps,
            latency_s: cfg.wired.latency_s,
        },
        server: DeviceProfile {
            position_m: cfg
                .arena
                .server_pos_m
                .unwrap_or((cfg.arena.width_m / 2.0, cfg.arena.height_m / 2.0)),
            cpu_freq_hz: cfg.devices.server_freq_hz,
            cycles_per_flop: cfg.devices.cycles_per_flop,
            kappa: cfg.devices.kappa,
            f_min_hz: cfg.devices.f_min_hz,
            f_max_hz: cfg.devices.f_max_hz,
        },
        quantizer_bits: cfg.quantizer.as_ref().map(|q| q.bits),
        max_retransmissions: cfg.framework.max_retransmissions,
    }
}

fn run_config_of(cfg: &ExperimentConfig, trace: bool) -> RunConfig {
    RunConfig {
        kind: cfg.framework.kind.to_kind(),
        k: cfg.framework.k,
        aggregation_period_rounds: cfg.framework.aggregation_period_rounds,
        local_iters: cfg.framework.local_iters,
        batch_size: cfg.framework.batch_size,
        lr: cfg.framework.lr,
        staleness_exponent: cfg.framework.staleness_exponent,
        rounds: cfg.rounds,
        eval_every: cfg.eval_every,
        time_budget_s: cfg.time_budget_s,
        distill: DistillSettings {
            period_rounds: cfg.framework.distill.period_rounds,
            temperature: cfg.framework.distill.temperature,
            weight: cfg.framework.distill.weight,
            public_set_size: cfg.framework.distill.public_set_size,
        },
        trace,
    }
}

/// Positions and speed-scaled profiles for the whole fleet, drawn from the
/// "positions" and "speed" streams of the experiment seed.
fn build_profiles(cfg: &ExperimentConfig, seed: u64, arena: &Arena) -> Result<Vec<DeviceProfile>> {
    let n = cfg.framework.n_clients;
    let mut pos_stream = RngStream::new(seed, "positions")?;
    let mut speed_stream = RngStream::new(seed, "speed")?;
    let mut profiles = Vec::with_capacity(n);
    for _ in 0..n {
        let x = pos_stream.next_f64() * arena.width_m;
        let y = pos_stream.next_f64() * arena.height_m;
        let factor = (speed_stream.next_f64() * cfg.devices.heterogeneity.ln()).exp();
        profiles.push(DeviceProfile {
            position_m: (x, y),
            cpu_freq_hz: cfg.devices.cpu_freq_hz / factor,
            cycles_per_flop: cfg.devices.cycles_per_flop,
            kappa: cfg.devices.kappa,
            f_min_hz: cfg.devices.f_min_hz,
            f_max_hz: cfg.devices.f_max_hz,
        });
    }
    Ok(profiles)
}

fn partition_shards(cfg: &ExperimentConfig, ds: &Dataset, n: usize, seed: u64) -> Result<Vec<Dataset>> {
    match cfg.data.partition {
        PartitionSection::Uniform => partition_uniform(ds, n, seed),
        PartitionSection::Dirichlet { alpha } => partition_dirichlet(ds, n, alpha, seed),
    }
}

/// Builds the single-cluster world for sync/sequential/async/hierarchical.
fn build_world(cfg: &ExperimentConfig, seed: u64, physics: &Physics) -> Result<ClusterWorld> {
    let spec = cfg.model_spec()?;
    let data = gen_blobs(
        seed,
        cfg.data.n_train + cfg.data.n_test,
        cfg.data.dims,
        cfg.data.classes,
        cfg.data.spread,
    )?;
    let (train, test) = data.split_at(cfg.data.n_train)?;
    let shards = partition_shards(cfg, &train, cfg.framework.n_clients, seed)?;
    let profiles = build_profiles(cfg, seed, &physics.arena)?;
    let clients = profiles
        .into_iter()
        .zip(shards)
        .map(|(profile, shard)| ClientSetup { profile, shard })
        .collect();
    Ok(ClusterWorld {
        spec,
        plan: SplitPlan::new(cfg.split.cuts.clone())?,
        clients,
        test,
        label_prefix: String::new(),
        seed,
    })
}

/// Builds per-cluster worlds plus the shared public set for heterogeneous
/// runs. Clients keep their global fleet positions/speeds; cluster i's RNG
/// identity is (derived seed, "c{i}." prefix).
fn build_cluster_worlds(
    cfg: &ExperimentConfig,
    seed: u64,
    physics: &Physics,
) -> Result<(Vec<ClusterWorld>, Dataset)> {
    let profiles = build_profiles(cfg, seed, &physics.arena)?;
    let n_clusters = cfg.framework.clusters.len();
    let total_members = cfg.framework.n_clients;

    // Shared-task clusters shard one common dataset.
    let shared_pool = if cfg.framework.clusters.iter().any(|c| !c.distinct_task) {
        let data = gen_blobs(
            seed,
            cfg.data.n_train + cfg.data.n_test,
            cfg.data.dims,
            cfg.data.classes,
            cfg.data.spread,
        )?;
        let (train, test) = data.split_at(cfg.data.n_train)?;
        let shards = partition_shards(cfg, &train, total_members, seed)?;
        Some((shards, test))
    } else {
        None
    };

    let mut worlds = Vec::new();
    let mut member_cursor = 0usize;
    for (ci, cluster) in cfg.framework.clusters.iter().enumerate() {
        let spec = cfg.cluster_model_spec(cluster)?;
        let cluster_seed = derive_seed(seed, 100 + ci as u64);
        let member_profiles =
            profiles[member_cursor..member_cursor + cluster.members].to_vec();

        let (shards, test) = if cluster.distinct_task {
            let n_train = (cfg.data.n_train * cluster.members).div_ceil(total_members);
            let data = gen_blobs(
                cluster_seed,
                n_train + cfg.data.n_test,
                cfg.data.dims,
                cfg.data.classes,
                cfg.data.spread,
            )?;
            let (train, test) = data.split_at(n_train)?;
            (
                partition_shards(cfg, &train, cluster.members, cluster_seed)?,
                test,
            )
        } else {
            let (all_shards, test) = shared_pool.as_ref().expect("shared pool built");
            (
                all_shards[member_cursor..member_cursor + cluster.members].to_vec(),
                test.clone(),
            )
        };

        worlds.push(ClusterWorld {
            spec,
            plan: SplitPlan::new(cluster.cuts.clone())?,
            clients: member_profiles
                .into_iter()
                .zip(shards)
                .map(|(profile, shard)| ClientSetup { profile, shard })
                .collect(),
            test,
            label_prefix: format!("c{ci}."),
            seed: cluster_seed,
        });
        member_cursor += cluster.members;
    }

    // Public unlabeled set: an even mixture of every cluster's generative
    // distribution, held out from all shards.
    let size = cfg.framework.distill.public_set_size;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let share = size / n_clusters;
    let extra = size % n_clusters;
    for ci in 0..n_clusters {
        let take = share + usize::from(ci < extra);
        if take == 0 {
            continue;
        }
        let pub_seed = derive_seed(seed, 5000 + ci as u64);
        let part = gen_blobs(pub_seed, take, cfg.data.dims, cfg.data.classes, cfg.data.spread)?;
        features.extend_from_slice(part.features.data());
        labels.extend_from_slice(&part.labels);
    }
    let public = Dataset::new(
        crate::tensor::Tensor::new(vec![size, cfg.data.dims], features)?,
        labels,
        cfg.data.classes,
    )?;
    Ok((worlds, public))
}

/// Runs one experiment and returns the tagged metrics rows plus the raw
/// framework output (stats, final models, optional trace).
pub fn run_experiment_full(
    cfg: &ExperimentConfig,
    seed_override: Option<u64>,
    trace: bool,
) -> Result<(MetricsTable, RunOutput)> {
    cfg.validate()?;
    let seed = seed_override.unwrap_or(cfg.seed);
    let physics = physics_of(cfg);
    let run_cfg = run_config_of(cfg, trace);
    let output = match cfg.framework.kind {
        KindSection::Sync => {
            frameworks::run_sync(&run_cfg, &physics, build_world(cfg, seed, &physics)?)?
        }
        KindSection::Sequential => {
            frameworks::run_sequential(&run_cfg, &physics, build_world(cfg, seed, &physics)?)?
        }
        KindSection::AsyncThreshold => {
            frameworks::run_async(&run_cfg, &physics, build_world(cfg, seed, &physics)?)?
        }
        KindSection::Hierarchical => {
            frameworks::run_hierarchical(&run_cfg, &physics, build_world(cfg, seed, &physics)?)?
        }
        KindSection::Heterogeneous => {
            let (worlds, public) = build_cluster_worlds(cfg, seed, &physics)?;
            frameworks::run_heterogeneous(&run_cfg, &physics, worlds, public)?
        }
    };
    let tag = cfg.framework.kind.to_kind().tag().to_string();
    let rows = output
        .rows
        .iter()
        .map(|r| MetricsRow {
            framework: tag.clone(),
            seed,
            axis_value: None,
            round: r.round,
            sim_time_s: r.sim_time_s,
            train_loss: r.train_loss,
            test_acc: r.test_acc,
            bits_tx: r.bits_tx,
            energy_j: r.energy_j,
            max_staleness: r.max_staleness,
        })
        .collect();
    Ok((MetricsTable { rows }, output))
}

/// Runs one experiment; deterministic in (config, seed).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    run_experiment_full(cfg, None, false).map(|(table, _)| table)
}

/// Applies `value` at the JSON pointer `axis` and revalidates.
pub fn apply_axis(cfg: &ExperimentConfig, axis: &str, value: f64) -> Result<ExperimentConfig> {
    let mut tree = serde_json::to_value(cfg)
        .map_err(|e| Error::config("/", format!("serialize: {e}")))?;
    let slot = tree
        .pointer_mut(axis)
        .ok_or_else(|| Error::config(axis, "unknown axis path"))?;
    *slot = serde_json::Number::from_f64(value)
        .map(serde_json::Value::Number)
        .ok_or_else(|| Error::config(axis, format!("non-finite axis value {value}")))?;
    let new_cfg: ExperimentConfig = serde_json::from_value(tree)
        .map_err(|e| Error::config(axis, format!("value rejected: {e}")))?;
    new_cfg.validate()?;
    Ok(new_cfg)
}

/// Cartesian product of axis values and seeds, each an independent
/// `run_experiment`; rows are tagged with the axis value and sorted, so
/// the result is invariant to execution order.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: &str,
    values: &[f64],
    seeds: &[u64],
) -> Result<MetricsTable> {
    cfg.validate()?;
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::validation("sweep needs at least one value and seed"));
    }
    // Validate the axis once up front so bad pointers fail fast.
    apply_axis(cfg, axis, values[0])?;

    let cells: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let tables: Vec<Result<MetricsTable>> = cells
        .par_iter()
        .map(|&(value, seed)| {
            let cell_cfg = apply_axis(cfg, axis, value)?;
            let (mut table, _) = run_experiment_full(&cell_cfg, Some(seed), false)?;
            for row in &mut table.rows {
                row.axis_value = Some(value);
            }
            Ok(table)
        })
        .collect();
    let mut merged = MetricsTable::new();
    for t in tables {
        merged.rows.extend(t?.rows);
    }
    merged.sort();
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config_str;

    fn tiny_cfg(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "framework": {{ "kind": "sync", "n_clients": 2, "local_iters": 1, "batch_size": 4 }},
                "model": {{ "hidden_dims": [8] }},
                "data": {{ "n_train": 40, "n_test": 20, "dims": 4, "classes": 2, "spread": 0.2 }},
                "split": {{ "cuts": [1] }},
                "rounds": 4,
                "eval_every": 2
                {extra}
            }}"#
        );
        load_config_str(&text).unwrap()
    }

    #[test]
    fn repeat_runs_are_byte_identical() {
        let cfg = tiny_cfg("");
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn row_count_follows_eval_cadence() {
        let cfg = tiny_cfg("");
        let table = run_experiment(&cfg).unwrap();
        // rounds=4, eval_every=2 -> rows at rounds 2 and 4.
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].round, 2);
        assert_eq!(table.rows[1].round, 4);
    }

    #[test]
    fn sweep_is_order_invariant_and_tagged() {
        let cfg = tiny_cfg("");
        let values = [0.0, 0.2];
        let seeds = [1, 2];
        let a = sweep(&cfg, "/channel/packet_loss_rate", &values, &seeds).unwrap();
        let b = sweep(&cfg, "/channel/packet_loss_rate", &values, &seeds).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 4 * 2); // 4 cells x 2 rows each
        assert!(a.rows.iter().all(|r| r.axis_value.is_some()));
    }

    #[test]
    fn unknown_axis_is_rejected() {
        let cfg = tiny_cfg("");
        match sweep(&cfg, "/channel/no_such_field", &[0.1], &[1]) {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/channel/no_such_field"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn single_cell_sweep_matches_run_experiment() {
        let cfg = tiny_cfg("");
        let swept = sweep(&cfg, "/channel/packet_loss_rate", &[0.0], &[cfg.seed]).unwrap();
        let direct = run_experiment(&cfg).unwrap();
        // Strip the axis tag; everything else must coincide.
        let untagged: Vec<_> = swept
            .rows
            .iter()
            .map(|r| (r.round, r.sim_time_s, r.train_loss, r.test_acc, r.bits_tx))
            .collect();
        let expect: Vec<_> = direct
            .rows
            .iter()
            .map(|r| (r.round, r.sim_time_s, r.train_loss, r.test_acc, r.bits_tx))
            .collect();
        assert_eq!(untagged, expect);
    }
}
