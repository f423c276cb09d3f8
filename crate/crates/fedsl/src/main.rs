//! Command-line front end for the federated split learning simulator.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime error, 3 check failure.
//! `FEDSL_TRACE=1` dumps the event trace (`time_s,kind,subject` lines) to
//! stderr during `run`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsl::adapt::{select_split_layer, SplitObjective};
use fedsl::config::load_config;
use fedsl::error::Error;
use fedsl::experiment::{run_experiment_full, sweep};
use fedsl::metrics::write_csv;
use fedsl::netphys::DeviceProfile;
use fedsl::rng::RngStream;

#[derive(Parser)]
#[command(name = "fedsl", about = "Federated split learning simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv to the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a parameter sweep: Cartesian product of axis values and seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Axis as <json-pointer>=<v1,v2,...>, e.g. /channel/packet_loss_rate=0,0.1,0.3
        #[arg(long)]
        axis: String,
        /// Seed count ("5" -> seeds 0..4) or explicit list ("3,7,11").
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the per-cut split cost table as CSV.
    OptimizeSplit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the finite-difference gradient suite; exits 3 on failure.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Parse and validate a config file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Validation(_) | Error::Io { .. } => 1,
        _ => 2,
    }
}

fn cmd_run(config: PathBuf, out: PathBuf, seed: Option<u64>) -> Result<(), (u8, String)> {
    let cfg = load_config(&config).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let trace = std::env::var("FEDSL_TRACE").map(|v| v == "1").unwrap_or(false);
    let (table, output) =
        run_experiment_full(&cfg, seed, trace).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    if let Some(t) = &output.trace {
        eprint!("{t}");
    }
    std::fs::create_dir_all(&out)
        .map_err(|e| (2, format!("cannot create {}: {e}", out.display())))?;
    let path = out.join("metrics.csv");
    write_csv(&table, &path).map_err(|e| (2, e.to_string()))?;
    println!(
        "wrote {} ({} rows, {} rounds, sim time {:.3} s)",
        path.display(),
        table.rows.len(),
        output.stats.rounds_completed,
        output.stats.final_time_s
    );
    Ok(())
}

fn parse_axis(axis: &str) -> Result<(String, Vec<f64>), String> {
    let (pointer, values) = axis
        .split_once('=')
        .ok_or_else(|| "axis must look like <json-pointer>=<v1,v2,...>".to_string())?;
    let values: Result<Vec<f64>, _> = values.split(',').map(str::parse::<f64>).collect();
    let values = values.map_err(|e| format!("bad axis value: {e}"))?;
    if values.is_empty() {
        return Err("axis needs at least one value".into());
    }
    Ok((pointer.to_string(), values))
}

fn parse_seeds(seeds: &str) -> Result<Vec<u64>, String> {
    if seeds.contains(',') {
        seeds
            .split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|e| format!("bad seed: {e}")))
            .collect()
    } else {
        let n: u64 = seeds.trim().parse().map_err(|e| format!("bad seed count: {e}"))?;
        if n == 0 {
            return Err("need at least one seed".into());
        }
        Ok((0..n).collect())
    }
}

fn cmd_sweep(config: PathBuf, axis: String, seeds: String, out: PathBuf) -> Result<(), (u8, String)> {
    let cfg = load_config(&config).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let (pointer, values) = parse_axis(&axis).map_err(|m| (1, m))?;
    let seed_list = parse_seeds(&seeds).map_err(|m| (1, m))?;
    let table =
        sweep(&cfg, &pointer, &values, &seed_list).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    std::fs::create_dir_all(&out)
        .map_err(|e| (2, format!("cannot create {}: {e}", out.display())))?;
    let path = out.join("sweep.csv");
    write_csv(&table, &path).map_err(|e| (2, e.to_string()))?;
    println!(
        "wrote {} ({} rows over {} runs)",
        path.display(),
        table.rows.len(),
        values.len() * seed_list.len()
    );
    Ok(())
}

fn cmd_optimize_split(config: PathBuf) -> Result<(), (u8, String)> {
    let cfg = load_config(&config).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let spec = cfg.model_spec().map_err(|e| (1, e.to_string()))?;
    // Evaluate at client 0's seeded placement, the fleet's representative.
    let arena_w = cfg.arena.width_m;
    let arena_h = cfg.arena.height_m;
    let server_pos = cfg.arena.server_pos_m.unwrap_or((arena_w / 2.0, arena_h / 2.0));
    let mut pos_stream = RngStream::new(cfg.seed, "positions").map_err(|e| (2, e.to_string()))?;
    let x = pos_stream.next_f64() * arena_w;
    let y = pos_stream.next_f64() * arena_h;
    let dev = DeviceProfile {
        position_m: (x, y),
        cpu_freq_hz: cfg.devices.cpu_freq_hz,
        cycles_per_flop: cfg.devices.cycles_per_flop,
        kappa: cfg.devices.kappa,
        f_min_hz: cfg.devices.f_min_hz,
        f_max_hz: cfg.devices.f_max_hz,
    };
    let server = DeviceProfile {
        cpu_freq_hz: cfg.devices.server_freq_hz,
        ..dev.clone()
    };
    let channel = fedsl::netphys::ChannelParams {
        bandwidth_hz: cfg.channel.bandwidth_hz,
        tx_power_dbm: cfg.channel.tx_power_dbm,
        noise_dbm: cfg.channel.noise_dbm,
        noise_is_psd: cfg.channel.noise_is_psd,
        pl0_db: cfg.channel.pl0_db,
        ref_dist_m: cfg.channel.ref_dist_m,
        pl_exponent: cfg.channel.pl_exponent,
        packet_loss_rate: cfg.channel.packet_loss_rate,
    };
    let d = dev
        .distance_to(server_pos)
        .max(cfg.channel.ref_dist_m);
    let precision = cfg.quantizer.as_ref().map(|q| q.bits).unwrap_or(64);
    let (best, table) = select_split_layer(
        &spec,
        &dev,
        &server,
        &channel,
        d,
        cfg.framework.batch_size,
        precision,
        SplitObjective::Latency,
    )
    .map_err(|e| (2, e.to_string()))?;
    println!("cut,device_s,uplink_s,downlink_s,server_s,total_s,total_j");
    for row in &table {
        println!(
            "{},{},{},{},{},{},{}",
            row.cut, row.device_s, row.uplink_s, row.downlink_s, row.server_s, row.total_s,
            row.total_j
        );
    }
    eprintln!("best cut (latency objective): {best}");
    Ok(())
}

fn cmd_grad_check(trials: usize) -> Result<(), (u8, String)> {
    let max_err = fedsl::gradcheck::run_suite(trials).map_err(|e| (2, e.to_string()))?;
    println!("gradient check: {trials} trials, max relative error {max_err:.3e}");
    if max_err > 1e-6 {
        return Err((3, format!("gradient check failed: {max_err:.3e} > 1e-6")));
    }
    Ok(())
}

fn cmd_validate(config: PathBuf) -> Result<(), (u8, String)> {
    let cfg = load_config(&config).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    println!(
        "ok: {} framework, {} clients, {} rounds",
        cfg.framework.kind.to_kind().tag(),
        cfg.framework.n_clients,
        cfg.rounds
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(config, out, seed),
        Command::Sweep {
            config,
            axis,
            seeds,
            out,
        } => cmd_sweep(config, axis, seeds, out),
        Command::OptimizeSplit { config } => cmd_optimize_split(config),
        Command::GradCheck { trials } => cmd_grad_check(trials),
        Command::Validate { config } => cmd_validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
