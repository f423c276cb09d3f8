//! The federated split learning orchestrations: synchronous, sequential,
//! threshold-asynchronous, hierarchical, and heterogeneous, plus their
//! aggregation and distillation primitives.

mod aggregate;
mod distill;
mod runtime;

pub use aggregate::{fedavg, staleness_weight, Update};
pub use distill::{distill_loss, probs_to_pseudo_logits, soft_probs};
pub use runtime::{
    ClientSetup, ClusterWorld, DistillSettings, FinalModel, FrameworkKind, Physics, RunConfig,
    RunOutput, RunRow, RunStats, WiredLink,
};

use runtime::{Mode, MultiSim};

use crate::data::Dataset;
use crate::error::{Error, Result};

fn expect_kind(cfg: &RunConfig, want: FrameworkKind) -> Result<()> {
    if cfg.kind != want {
        return Err(Error::validation(format!(
            "config kind is {} but {} was requested",
            cfg.kind.tag(),
            want.tag()
        )));
    }
    Ok(())
}

/// Lockstep rounds; all clients must finish before the round closes, and
/// device-side models are averaged every `aggregation_period_rounds`.
pub fn run_sync(cfg: &RunConfig, physics: &Physics, world: ClusterWorld) -> Result<RunOutput> {
    expect_kind(cfg, FrameworkKind::Sync)?;
    MultiSim::new(cfg, physics, vec![(Mode::Sync, world)], None)?.run()
}

/// Strict round-robin: one client trains per turn; a timed-out turn is
/// skipped after 5x its expected duration.
pub fn run_sequential(
    cfg: &RunConfig,
    physics: &Physics,
    world: ClusterWorld,
) -> Result<RunOutput> {
    expect_kind(cfg, FrameworkKind::Sequential)?;
    MultiSim::new(cfg, physics, vec![(Mode::Sequential, world)], None)?.run()
}

/// Threshold aggregation: the server averages the buffered updates as soon
/// as `k` have arrived, weighting by staleness; only contributors receive
/// the result.
pub fn run_async(cfg: &RunConfig, physics: &Physics, world: ClusterWorld) -> Result<RunOutput> {
    expect_kind(cfg, FrameworkKind::AsyncThreshold)?;
    let n = world.clients.len();
    if !(cfg.k > 1 && cfg.k <= n) {
        return Err(Error::validation(format!(
            "async threshold k={} must satisfy 1 < k <= {}",
            cfg.k, n
        )));
    }
    MultiSim::new(cfg, physics, vec![(Mode::Async, world)], None)?.run()
}

/// Three-tier device/edge/cloud pipeline; clients pace themselves between
/// the periodic device-model aggregations at the edge.
pub fn run_hierarchical(
    cfg: &RunConfig,
    physics: &Physics,
    world: ClusterWorld,
) -> Result<RunOutput> {
    expect_kind(cfg, FrameworkKind::Hierarchical)?;
    if world.plan.cuts().len() != 2 {
        return Err(Error::validation(
            "hierarchical framework needs a 2-cut split plan",
        ));
    }
    MultiSim::new(cfg, physics, vec![(Mode::FreeRun, world)], None)?.run()
}

/// Independent synchronous clusters with periodic cloud distillation over
/// a shared public set. Reported accuracy is the mean over clusters on
/// their own tasks.
pub fn run_heterogeneous(
    cfg: &RunConfig,
    physics: &Physics,
    clusters: Vec<ClusterWorld>,
    public_set: Dataset,
) -> Result<RunOutput> {
    expect_kind(cfg, FrameworkKind::Heterogeneous)?;
    if clusters.len() < 2 {
        return Err(Error::validation(
            "heterogeneous framework needs at least 2 clusters",
        ));
    }
    if cfg.distill.weight > 0.0 {
        if cfg.distill.period_rounds == 0
            || cfg.distill.period_rounds % cfg.aggregation_period_rounds != 0
        {
            return Err(Error::validation(
                "distillation period must be a positive multiple of the aggregation period",
            ));
        }
        let dims: Vec<usize> = clusters.iter().map(|c| c.spec.input_dim()).collect();
        let classes: Vec<usize> = clusters.iter().map(|c| c.spec.num_classes()).collect();
        if dims.iter().any(|&d| d != public_set.dims())
            || classes.iter().any(|&c| c != clusters[0].spec.num_classes())
        {
            return Err(Error::validation(
                "distillation needs a shared input space and class count",
            ));
        }
    }
    let worlds = clusters.into_iter().map(|w| (Mode::Sync, w)).collect();
    let public = if cfg.distill.weight > 0.0 {
        Some(public_set)
    } else {
        None
    };
    MultiSim::new(cfg, physics, worlds, public)?.run()
}

/// Convenience: a `RunConfig` with the workflow defaults used throughout
/// the tests (callers override what they need).
impl RunConfig {
    pub fn defaults(kind: FrameworkKind) -> Self {
        RunConfig {
            kind,
            k: 5,
            aggregation_period_rounds: 25,
            local_iters: 5,
            batch_size: 32,
            lr: 0.001,
            staleness_exponent: 0.5,
            rounds: 200,
            eval_every: 5,
            time_budget_s: None,
            distill: DistillSettings::default(),
            trace: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, partition_uniform};
    use crate::netphys::{Arena, ChannelParams, DeviceProfile};
    use crate::nn::{self, ModelSpec};
    use crate::rng::RngStream;
    use crate::split::SplitPlan;

    fn quiet_physics(loss_rate: f64) -> Physics {
        Physics {
            channel: ChannelParams {
                packet_loss_rate: loss_rate,
                ..ChannelParams::default()
            },
            arena: Arena::default(),
            wired: WiredLink::default(),
            server: DeviceProfile {
                position_m: (25.0, 25.0),
                cpu_freq_hz: 1e10,
                f_max_hz: 1e11,
                ..DeviceProfile::default()
            },
            quantizer_bits: None,
            max_retransmissions: None,
        }
    }

    fn small_world(n_clients: usize, seed: u64, cuts: Vec<usize>) -> ClusterWorld {
        let spec = ModelSpec::mlp(8, &[12, 6], 3).unwrap(); // 5 layers
        let data = gen_blobs(seed, 400, 8, 3, 0.15).unwrap();
        let (train, test) = data.split_at(300).unwrap();
        let shards = partition_uniform(&train, n_clients, seed).unwrap();
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(i, shard)| ClientSetup {
                profile: DeviceProfile {
                    position_m: (10.0 + i as f64, 20.0),
                    ..DeviceProfile::default()
                },
                shard,
            })
            .collect();
        ClusterWorld {
            spec,
            plan: SplitPlan::new(cuts).unwrap(),
            clients,
            test,
            label_prefix: String::new(),
            seed,
        }
    }

    fn short_cfg(kind: FrameworkKind) -> RunConfig {
        RunConfig {
            rounds: 8,
            eval_every: 2,
            local_iters: 2,
            batch_size: 8,
            aggregation_period_rounds: 4,
            ..RunConfig::defaults(kind)
        }
    }

    #[test]
    fn sync_run_is_deterministic() {
        let cfg = short_cfg(FrameworkKind::Sync);
        let physics = quiet_physics(0.1);
        let a = run_sync(&cfg, &physics, small_world(3, 5, vec![2])).unwrap();
        let b = run_sync(&cfg, &physics, small_world(3, 5, vec![2])).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.stats.bits_tx, b.stats.bits_tx);
        assert_eq!(
            a.finals[0].params.max_abs_diff(&b.finals[0].params),
            0.0
        );
    }

    #[test]
    fn sync_rejects_wrong_kind() {
        let cfg = short_cfg(FrameworkKind::AsyncThreshold);
        let physics = quiet_physics(0.0);
        assert!(run_sync(&cfg, &physics, small_world(2, 1, vec![2])).is_err());
    }

    #[test]
    fn sync_single_client_matches_centralized_sgd_bitwise() {
        let mut cfg = short_cfg(FrameworkKind::Sync);
        cfg.aggregation_period_rounds = 3;
        let physics = quiet_physics(0.0);
        let world = small_world(1, 11, vec![2]);
        let spec = world.spec.clone();
        let shard = world.clients[0].shard.clone();
        let out = run_sync(&cfg, &physics, world).unwrap();

        // Centralized oracle: monolithic SGD over the same batch stream.
        let mut params = nn::init_params(&spec, 11);
        let mut stream = RngStream::new(11, "batch.0").unwrap();
        let mut losses = Vec::new();
        for _ in 0..cfg.rounds * cfg.local_iters as u64 {
            let idx: Vec<usize> =
                (0..cfg.batch_size).map(|_| stream.below(shard.len())).collect();
            let sub = shard.subset(&idx).unwrap();
            let (loss, lgrad, cache) =
                nn::loss_and_grad(&spec, &params, &sub.features, &sub.labels).unwrap();
            let (grads, _) = nn::backward(&spec, &params, &cache, &lgrad).unwrap();
            params = nn::sgd_step(&params, &grads, cfg.lr).unwrap();
            losses.push(loss);
        }
        assert_eq!(out.stats.iteration_losses, losses);
        assert_eq!(out.finals[0].params, params);
    }

    #[test]
    fn async_with_k_equal_n_matches_sync_period_one() {
        // Identical positions and speeds, p = 0: the threshold mode with
        // k = N must reproduce per-round synchronous aggregation exactly.
        let make_world = |seed: u64| {
            let mut w = small_world(4, seed, vec![2]);
            for c in &mut w.clients {
                c.profile.position_m = (15.0, 25.0);
            }
            w
        };
        let physics = quiet_physics(0.0);

        let mut sync_cfg = short_cfg(FrameworkKind::Sync);
        sync_cfg.aggregation_period_rounds = 1;
        let sync_out = run_sync(&sync_cfg, &physics, make_world(3)).unwrap();

        let mut async_cfg = short_cfg(FrameworkKind::AsyncThreshold);
        async_cfg.aggregation_period_rounds = 1;
        async_cfg.k = 4;
        let async_out = run_async(&async_cfg, &physics, make_world(3)).unwrap();

        let diff = sync_out.finals[0]
            .params
            .max_abs_diff(&async_out.finals[0].params);
        assert!(diff <= 1e-12, "final model diff {diff}");
        assert_eq!(sync_out.stats.iteration_losses, async_out.stats.iteration_losses);
        assert_eq!(async_out.stats.max_staleness, 0);
    }

    #[test]
    fn async_slow_client_accrues_staleness() {
        let mut world = small_world(4, 7, vec![2]);
        world.clients[3].profile.cpu_freq_hz = 1e8; // 10x slower
        let mut cfg = short_cfg(FrameworkKind::AsyncThreshold);
        cfg.k = 2;
        cfg.rounds = 12;
        let physics = quiet_physics(0.0);
        let out = run_async(&cfg, &physics, world).unwrap();
        assert!(out.stats.max_staleness >= 1, "slow client never stale");
    }

    #[test]
    fn async_rejects_bad_threshold() {
        let cfg = RunConfig {
            k: 5,
            ..short_cfg(FrameworkKind::AsyncThreshold)
        };
        let physics = quiet_physics(0.0);
        assert!(run_async(&cfg, &physics, small_world(4, 1, vec![2])).is_err());
        let cfg1 = RunConfig {
            k: 1,
            ..short_cfg(FrameworkKind::AsyncThreshold)
        };
        assert!(run_async(&cfg1, &physics, small_world(4, 1, vec![2])).is_err());
    }

    #[test]
    fn sequential_chain_matches_rotating_centralized_sgd() {
        // Two clients, p = 0: the chain model must evolve exactly like one
        // model trained E iterations per turn with each client's batches.
        let mut cfg = short_cfg(FrameworkKind::Sequential);
        cfg.rounds = 6;
        let physics = quiet_physics(0.0);
        let world = small_world(2, 21, vec![2]);
        let spec = world.spec.clone();
        let shards: Vec<_> = world.clients.iter().map(|c| c.shard.clone()).collect();
        let out = run_sequential(&cfg, &physics, world).unwrap();

        let mut params = nn::init_params(&spec, 21);
        let mut streams = vec![
            RngStream::new(21, "batch.0").unwrap(),
            RngStream::new(21, "batch.1").unwrap(),
        ];
        let mut losses = Vec::new();
        for turn in 0..cfg.rounds as usize {
            let ci = turn % 2;
            for _ in 0..cfg.local_iters {
                let idx: Vec<usize> = (0..cfg.batch_size)
                    .map(|_| streams[ci].below(shards[ci].len()))
                    .collect();
                let sub = shards[ci].subset(&idx).unwrap();
                let (loss, lgrad, cache) =
                    nn::loss_and_grad(&spec, &params, &sub.features, &sub.labels).unwrap();
                let (grads, _) = nn::backward(&spec, &params, &cache, &lgrad).unwrap();
                params = nn::sgd_step(&params, &grads, cfg.lr).unwrap();
                losses.push(loss);
            }
        }
        assert_eq!(out.stats.iteration_losses, losses);
        assert_eq!(out.finals[0].params, params);
    }

    #[test]
    fn sequential_offline_client_times_out_and_others_progress() {
        let mut cfg = short_cfg(FrameworkKind::Sequential);
        cfg.rounds = 4;
        // Per-client packet loss is not modeled; emulate a dead link with
        // total loss and a retry cap so the turn must hit its timeout.
        let mut physics = quiet_physics(1.0);
        physics.max_retransmissions = None;
        let world = small_world(2, 31, vec![2]);
        let out = run_sequential(&cfg, &physics, world).unwrap();
        // All turns time out under p=1; rounds still advance.
        assert_eq!(out.stats.rounds_completed, 4);
        assert!(out.stats.stall_events > 0);
        assert!(out.stats.final_time_s > 0.0);
    }

    #[test]
    fn hierarchical_needs_two_cuts_and_runs() {
        let cfg = short_cfg(FrameworkKind::Hierarchical);
        let physics = quiet_physics(0.0);
        assert!(run_hierarchical(&cfg, &physics, small_world(2, 1, vec![2])).is_err());
        let out = run_hierarchical(&cfg, &physics, small_world(2, 1, vec![2, 4])).unwrap();
        assert_eq!(out.stats.rounds_completed, 8);
        assert_eq!(out.stats.max_staleness, 0);
    }

    #[test]
    fn heterogeneous_lambda_zero_equals_independent_syncs() {
        let physics = quiet_physics(0.0);
        let mut cfg = short_cfg(FrameworkKind::Heterogeneous);
        cfg.distill.weight = 0.0;

        let cluster = |prefix: &str, seed: u64| {
            let mut w = small_world(2, seed, vec![2]);
            w.label_prefix = prefix.to_string();
            w
        };
        let het = run_heterogeneous(
            &cfg,
            &physics,
            vec![cluster("c0.", 41), cluster("c1.", 42)],
            gen_blobs(99, 64, 8, 3, 0.15).unwrap(),
        )
        .unwrap();

        let mut sync_cfg = short_cfg(FrameworkKind::Sync);
        sync_cfg.aggregation_period_rounds = cfg.aggregation_period_rounds;
        let solo0 = run_sync(&sync_cfg, &physics, cluster("c0.", 41)).unwrap();
        let solo1 = run_sync(&sync_cfg, &physics, cluster("c1.", 42)).unwrap();

        let d0 = het.finals[0].params.max_abs_diff(&solo0.finals[0].params);
        let d1 = het.finals[1].params.max_abs_diff(&solo1.finals[0].params);
        assert!(d0 <= 1e-12 && d1 <= 1e-12, "cluster diffs {d0} {d1}");
    }

    #[test]
    fn heterogeneous_distillation_runs_and_reports_mean_accuracy() {
        let physics = quiet_physics(0.0);
        let mut cfg = short_cfg(FrameworkKind::Heterogeneous);
        cfg.rounds = 8;
        cfg.aggregation_period_rounds = 4;
        cfg.distill = DistillSettings {
            period_rounds: 4,
            temperature: 2.0,
            weight: 0.5,
            public_set_size: 64,
        };
        let mut c0 = small_world(2, 51, vec![2]);
        c0.label_prefix = "c0.".into();
        let mut c1 = small_world(2, 52, vec![2]);
        c1.label_prefix = "c1.".into();
        let public = gen_blobs(999, 64, 8, 3, 0.15).unwrap();
        let out = run_heterogeneous(&cfg, &physics, vec![c0, c1], public).unwrap();
        assert_eq!(out.finals.len(), 2);
        let last = out.rows.last().unwrap();
        assert!(last.test_acc > 0.0 && last.test_acc <= 1.0);
    }

    #[test]
    fn sync_straggler_dominates_round_latency() {
        // One 10x slower client; with p=0 the round time equals its block
        // time, visible as the gap between evaluation timestamps.
        let mut world = small_world(3, 61, vec![2]);
        for c in &mut world.clients {
            c.profile.position_m = (20.0, 25.0);
        }
        world.clients[2].profile.cpu_freq_hz = 1e8;
        let mut cfg = short_cfg(FrameworkKind::Sync);
        cfg.eval_every = 1;
        cfg.aggregation_period_rounds = 100; // no aggregation in this window
        cfg.rounds = 3;
        let physics = quiet_physics(0.0);
        let out = run_sync(&cfg, &physics, world.clone()).unwrap();

        // Expected block time of the slow client at p=0.
        let spec = &world.spec;
        let dev_layers = &spec.layers()[..2];
        let fwd: u64 = dev_layers.iter().map(|l| l.flops_fwd()).sum();
        let bwd: u64 = dev_layers.iter().map(|l| l.flops_bwd()).sum();
        let srv_f: u64 = spec.layers()[2..].iter().map(|l| l.flops_fwd() + l.flops_bwd()).sum();
        let b = cfg.batch_size as f64;
        let slow = &world.clients[2].profile;
        let d = slow.distance_to(physics.arena.server_pos_m);
        let rate = crate::netphys::link_rate_bps(&physics.channel, d).unwrap();
        let smashed_bits = (cfg.batch_size * spec.width_at_cut(2).unwrap()) as f64 * 64.0;
        let iter = b * fwd as f64 / slow.cpu_freq_hz
            + smashed_bits / rate
            + b * srv_f as f64 / physics.server.cpu_freq_hz
            + smashed_bits / rate
            + b * bwd as f64 / slow.cpu_freq_hz;
        let expected_round = cfg.local_iters as f64 * iter;

        let t1 = out.rows.iter().find(|r| r.round == 1).unwrap().sim_time_s;
        let t2 = out.rows.iter().find(|r| r.round == 2).unwrap().sim_time_s;
        assert!(
            ((t2 - t1) - expected_round).abs() <= 1e-9 * expected_round,
            "round gap {} vs straggler bound {}",
            t2 - t1,
            expected_round
        );
    }
}
