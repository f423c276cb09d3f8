//! Adaptive optimization: uniform quantization of smashed data, exhaustive
//! split-layer selection, deadline-constrained frequency allocation, and
//! completion-time-equalizing bandwidth allocation.

use crate::error::{Error, Result};
use crate::netphys::{self, ChannelParams, DeviceProfile};
use crate::nn::ModelSpec;
use crate::tensor::Tensor;

/// Uniform quantizer over the symmetric range `[-clip, +clip]` with
/// `2^bits` levels (grid endpoints included).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerConfig {
    pub bits: u32,
    pub clip: f64,
}

impl QuantizerConfig {
    pub fn new(bits: u32, clip: f64) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::validation("quantizer bits must be in [1, 16]"));
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::validation("quantizer clip range must be positive"));
        }
        Ok(QuantizerConfig { bits, clip })
    }

    /// Clip range from the symmetric 99.9th percentile of a calibration
    /// tensor's magnitudes.
    pub fn calibrate(bits: u32, calibration: &Tensor) -> Result<Self> {
        let mut mags: Vec<f64> = calibration.data().iter().map(|v| v.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let idx = ((0.999 * mags.len() as f64).ceil() as usize)
            .saturating_sub(1)
            .min(mags.len() - 1);
        let clip = mags[idx].max(1e-12);
        QuantizerConfig::new(bits, clip)
    }

    fn levels(&self) -> u32 {
        1u32 << self.bits
    }

    /// Grid spacing: `2^bits - 1` steps across `[-clip, clip]`.
    pub fn step(&self) -> f64 {
        2.0 * self.clip / (self.levels() - 1) as f64
    }
}

/// Quantized payload: level indices plus the metadata to dequantize.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub codes: Vec<u16>,
    pub shape: Vec<usize>,
    pub bits: u32,
    pub clip: f64,
}

fn level_value(clip: f64, code: u32, last: u32) -> f64 {
    // Multiplying clip last keeps the grid endpoints exactly at +/-clip.
    clip * (2.0 * code as f64 / last as f64 - 1.0)
}

/// Clips, snaps to the nearest level (ties to even), and dequantizes.
/// Returns the codes, the dequantized tensor, and the payload bits.
pub fn quantize_uniform(t: &Tensor, q: &QuantizerConfig) -> Result<(Quantized, Tensor, u64)> {
    QuantizerConfig::new(q.bits, q.clip)?;
    let last = q.levels() - 1;
    let mut codes = Vec::with_capacity(t.len());
    let mut dequant = Vec::with_capacity(t.len());
    for &x in t.data() {
        let clipped = x.clamp(-q.clip, q.clip);
        let code = ((clipped + q.clip) / (2.0 * q.clip) * last as f64).round_ties_even() as u32;
        let code = code.min(last);
        codes.push(code as u16);
        dequant.push(level_value(q.clip, code, last));
    }
    let payload_bits = t.len() as u64 * q.bits as u64;
    Ok((
        Quantized {
            codes,
            shape: t.shape().to_vec(),
            bits: q.bits,
            clip: q.clip,
        },
        Tensor::new(t.shape().to_vec(), dequant)?,
        payload_bits,
    ))
}

/// Per-cut cost table entry produced by [`select_split_layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct CutCost {
    pub cut: usize,
    pub device_s: f64,
    pub uplink_s: f64,
    pub downlink_s: f64,
    pub server_s: f64,
    pub total_s: f64,
    /// Device-side energy: local compute plus uplink radio.
    pub total_j: f64,
}

/// Pure per-cut FLOP and payload profile of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub cut: usize,
    pub device_flops: u64,
    pub server_flops: u64,
    pub up_bits: u64,
    pub down_bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostProfile {
    pub rows: Vec<CostRow>,
}

/// Derives the cost profile from the layer table alone.
pub fn cost_profile(spec: &ModelSpec, batch: usize, precision_bits: u32) -> Result<CostProfile> {
    if spec.layer_count() < 2 {
        return Err(Error::validation("need at least 2 layers to split"));
    }
    let total: u64 = spec
        .layers()
        .iter()
        .map(|l| (l.flops_fwd() + l.flops_bwd()) * batch as u64)
        .sum();
    let mut rows = Vec::new();
    let mut dev = 0u64;
    for cut in 1..spec.layer_count() {
        let l = &spec.layers()[cut - 1];
        dev += (l.flops_fwd() + l.flops_bwd()) * batch as u64;
        let bits = crate::split::smashed_payload_bits(spec, cut, batch, precision_bits)?;
        rows.push(CostRow {
            cut,
            device_flops: dev,
            server_flops: total - dev,
            up_bits: bits,
            down_bits: bits,
        });
    }
    Ok(CostProfile { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitObjective {
    Latency,
    Energy,
    /// Blend of latency and energy, each normalized by its max over cuts.
    Weighted(f64),
}

/// Exhaustively evaluates every valid cut and returns the argmin (lowest
/// index wins ties) together with the full cost table.
pub fn select_split_layer(
    spec: &ModelSpec,
    dev: &DeviceProfile,
    server: &DeviceProfile,
    ch: &ChannelParams,
    d_m: f64,
    batch: usize,
    precision_bits: u32,
    objective: SplitObjective,
) -> Result<(usize, Vec<CutCost>)> {
    let profile = cost_profile(spec, batch, precision_bits)?;
    let mut table = Vec::with_capacity(profile.rows.len());
    for row in &profile.rows {
        let device_s = netphys::compute_time(dev, row.device_flops as f64);
        let server_s = netphys::compute_time(server, row.server_flops as f64);
        let (uplink_s, up_j) = netphys::tx_time_energy(ch, d_m, row.up_bits as f64)?;
        let (downlink_s, _) = netphys::tx_time_energy(ch, d_m, row.down_bits as f64)?;
        let total_s = device_s + uplink_s + downlink_s + server_s;
        let total_j = netphys::compute_energy(dev, row.device_flops as f64) + up_j;
        table.push(CutCost {
            cut: row.cut,
            device_s,
            uplink_s,
            downlink_s,
            server_s,
            total_s,
            total_j,
        });
    }
    let max_s = table.iter().map(|c| c.total_s).fold(f64::MIN, f64::max);
    let max_j = table.iter().map(|c| c.total_j).fold(f64::MIN, f64::max);
    let score = |c: &CutCost| match objective {
        SplitObjective::Latency => c.total_s,
        SplitObjective::Energy => c.total_j,
        SplitObjective::Weighted(alpha) => {
            alpha * c.total_s / max_s.max(f64::MIN_POSITIVE)
                + (1.0 - alpha) * c.total_j / max_j.max(f64::MIN_POSITIVE)
        }
    };
    let mut best = 0usize;
    for i in 1..table.len() {
        if score(&table[i]) < score(&table[best]) {
            best = i;
        }
    }
    Ok((table[best].cut, table))
}

/// Energy-minimal frequency meeting the deadline: `clamp(C/T, f_min, f_max)`.
pub fn allocate_frequency(cycles: f64, deadline_s: f64, dev: &DeviceProfile) -> Result<f64> {
    if !(cycles > 0.0 && deadline_s > 0.0) {
        return Err(Error::validation("cycles and deadline must be positive"));
    }
    let required = cycles / deadline_s;
    if required > dev.f_max_hz {
        return Err(Error::Infeasible(format!(
            "deadline needs {required:.3e} Hz, above f_max {:.3e}",
            dev.f_max_hz
        )));
    }
    Ok(required.max(dev.f_min_hz))
}

/// Splits `total_hz` so every client finishes at the same time:
/// `b_i = B * (L_i/se_i) / sum_j (L_j/se_j)`. The last share is computed
/// as the remainder, so shares sum to `total_hz` exactly.
pub fn allocate_bandwidth(demands: &[(f64, f64)], total_hz: f64) -> Result<Vec<f64>> {
    if demands.is_empty() {
        return Err(Error::validation("no clients to allocate bandwidth to"));
    }
    if !(total_hz > 0.0) {
        return Err(Error::validation("total bandwidth must be positive"));
    }
    for &(bits, se) in demands {
        if !(bits > 0.0 && se > 0.0) {
            return Err(Error::validation(
                "payload and spectral efficiency must be positive",
            ));
        }
    }
    let weights: Vec<f64> = demands.iter().map(|&(bits, se)| bits / se).collect();
    let sum: f64 = weights.iter().sum();
    let mut shares: Vec<f64> = weights
        .iter()
        .take(demands.len() - 1)
        .map(|w| total_hz * w / sum)
        .collect();
    let used: f64 = shares.iter().sum();
    shares.push(total_hz - used);
    // Correction passes pin the left-to-right sum to total_hz when the
    // remainder subtraction was inexact. The adjustment goes to the
    // smallest share: with n >= 2 it is at most total_hz/2, so its ulp is
    // fine enough to reach the exact sum.
    let smallest = shares
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty");
    for pass in 0..128 {
        let total: f64 = shares.iter().sum();
        if total == total_hz {
            break;
        }
        let share = &mut shares[smallest];
        if pass == 0 {
            let corrected = *share + (total_hz - total);
            if corrected != *share {
                *share = corrected;
                continue;
            }
        }
        // Single-ulp walk: the smallest share's grid is at least twice as
        // fine as the total's, so some value lands the sum exactly.
        *share = if total < total_hz { share.next_up() } else { share.next_down() };
    }
    Ok(shares)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use crate::rng::RngStream;

    #[test]
    fn eight_bit_grid_hand_value() {
        let q = QuantizerConfig::new(8, 1.0).unwrap();
        let t = Tensor::new(vec![1], vec![0.5]).unwrap();
        let (codes, dq, bits) = quantize_uniform(&t, &q).unwrap();
        // (0.5 + 1) / (2/255) = 191.25 -> level 191 -> -1 + 191 * 2/255
        assert_eq!(codes.codes, vec![191]);
        assert_eq!(dq.data()[0], 0.4980392156862745);
        assert_eq!(bits, 8);
    }

    #[test]
    fn grid_endpoints_are_exact() {
        for bits in [1u32, 4, 8, 12] {
            for clip in [1.0, 0.1, 3.7] {
                let q = QuantizerConfig::new(bits, clip).unwrap();
                let t = Tensor::new(vec![3], vec![-clip, clip, clip * 10.0]).unwrap();
                let (_, dq, _) = quantize_uniform(&t, &q).unwrap();
                assert_eq!(dq.data()[0], -clip);
                assert_eq!(dq.data()[1], clip);
                assert_eq!(dq.data()[2], clip, "overrange clips to +R");
            }
        }
    }

    #[test]
    fn one_bit_snaps_to_nearest_endpoint() {
        let q = QuantizerConfig::new(1, 1.0).unwrap();
        let t = Tensor::new(vec![2], vec![0.2, -0.8]).unwrap();
        let (_, dq, _) = quantize_uniform(&t, &q).unwrap();
        assert_eq!(dq.data(), &[1.0, -1.0]);
    }

    #[test]
    fn bits_out_of_range_rejected() {
        assert!(QuantizerConfig::new(0, 1.0).is_err());
        assert!(QuantizerConfig::new(17, 1.0).is_err());
    }

    #[test]
    fn round_trip_is_idempotent() {
        let mut s = RngStream::new(5, "quant").unwrap();
        let q = QuantizerConfig::new(6, 2.5).unwrap();
        let t = Tensor::new(vec![500], (0..500).map(|_| s.uniform(-3.0, 3.0)).collect()).unwrap();
        let (codes1, dq1, _) = quantize_uniform(&t, &q).unwrap();
        let (codes2, dq2, _) = quantize_uniform(&dq1, &q).unwrap();
        assert_eq!(codes1, codes2);
        assert_eq!(dq1, dq2);
    }

    #[test]
    fn rmse_tracks_step_over_sqrt12() {
        let mut s = RngStream::new(8, "rmse").unwrap();
        let n = 100_000;
        let xs = Tensor::new(vec![n], (0..n).map(|_| s.uniform(-1.0, 1.0)).collect()).unwrap();
        let mut last_rmse = f64::MAX;
        for bits in [4u32, 8] {
            let q = QuantizerConfig::new(bits, 1.0).unwrap();
            let (_, dq, _) = quantize_uniform(&xs, &q).unwrap();
            let mse: f64 = xs
                .data()
                .iter()
                .zip(dq.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n as f64;
            let rmse = mse.sqrt();
            let expected = q.step() / 12f64.sqrt();
            assert!(
                (rmse - expected).abs() <= 0.1 * expected,
                "bits {bits}: rmse {rmse} vs {expected}"
            );
            assert!(rmse < last_rmse);
            last_rmse = rmse;
        }
    }

    #[test]
    fn calibration_uses_high_percentile() {
        let mut data = vec![0.1; 999];
        data.push(100.0);
        let t = Tensor::new(vec![1000], data).unwrap();
        let q = QuantizerConfig::calibrate(8, &t).unwrap();
        // The single outlier sits exactly at the 99.9th percentile index.
        assert!(q.clip <= 100.0 && q.clip >= 0.1);
    }

    fn synthetic_channel_rate_1e6() -> ChannelParams {
        // SNR is exactly 0 dB at the reference distance: rate == bandwidth.
        ChannelParams {
            bandwidth_hz: 1e6,
            tx_power_dbm: 40.0,
            noise_dbm: -85.0,
            pl0_db: 125.0,
            ..ChannelParams::default()
        }
    }

    #[test]
    fn split_selection_hand_case() {
        // Model D(8,4) D(4,2) D(2,2); batch 2, 64-bit payloads, 1e6 bps link.
        // device cumulative fwd+bwd flops: cut1: 2*6*8*4=384, cut2: +2*6*4*2=480
        // payload per direction: cut1 2*4*64=512 bits, cut2 2*2*64=256 bits
        // dev f=1e6 Hz, srv f=1e7 Hz:
        //   cut1: 384e-6 + 512e-6 + 512e-6 + 14.4e-6 = 1.4224e-3 s
        //   cut2: 480e-6 + 256e-6 + 256e-6 +  4.8e-6 = 0.9968e-3 s
        let spec = ModelSpec::new(vec![
            LayerSpec::dense(8, 4),
            LayerSpec::dense(4, 2),
            LayerSpec::dense(2, 2),
        ])
        .unwrap();
        let dev = DeviceProfile {
            cpu_freq_hz: 1e6,
            f_min_hz: 1e5,
            f_max_hz: 1e9,
            ..DeviceProfile::default()
        };
        let server = DeviceProfile {
            cpu_freq_hz: 1e7,
            f_min_hz: 1e5,
            f_max_hz: 1e9,
            ..DeviceProfile::default()
        };
        let ch = synthetic_channel_rate_1e6();
        let (cut, table) =
            select_split_layer(&spec, &dev, &server, &ch, 0.5, 2, 64, SplitObjective::Latency)
                .unwrap();
        assert_eq!(cut, 2);
        assert!((table[0].total_s - 1.4224e-3).abs() < 1e-12, "{}", table[0].total_s);
        assert!((table[1].total_s - 0.9968e-3).abs() < 1e-12, "{}", table[1].total_s);
    }

    #[test]
    fn infinitely_fast_channel_and_server_pick_cut_one() {
        let spec = ModelSpec::mlp(8, &[6, 4], 3).unwrap();
        let dev = DeviceProfile::default();
        let server = DeviceProfile {
            cpu_freq_hz: 1e18,
            f_max_hz: 1e18,
            ..DeviceProfile::default()
        };
        let ch = ChannelParams {
            bandwidth_hz: 1e18,
            ..synthetic_channel_rate_1e6()
        };
        let (cut, _) =
            select_split_layer(&spec, &dev, &server, &ch, 0.5, 4, 64, SplitObjective::Latency)
                .unwrap();
        assert_eq!(cut, 1);
    }

    #[test]
    fn cost_profile_is_cumulative_and_nondecreasing() {
        let spec = ModelSpec::mlp(16, &[12, 8], 4).unwrap();
        let profile = cost_profile(&spec, 3, 64).unwrap();
        for w in profile.rows.windows(2) {
            assert!(w[1].device_flops > w[0].device_flops);
            assert!(w[1].server_flops < w[0].server_flops);
        }
        let total = profile.rows[0].device_flops + profile.rows[0].server_flops;
        for r in &profile.rows {
            assert_eq!(r.device_flops + r.server_flops, total);
            assert_eq!(r.up_bits, r.down_bits);
        }
    }

    #[test]
    fn frequency_allocation_hand_values() {
        let dev = DeviceProfile {
            f_min_hz: 1e8,
            f_max_hz: 2e9,
            ..DeviceProfile::default()
        };
        assert_eq!(allocate_frequency(1e9, 2.0, &dev).unwrap(), 5e8);
        // A very loose deadline clamps to f_min.
        assert_eq!(allocate_frequency(1e9, 1e12, &dev).unwrap(), 1e8);
        let fast = DeviceProfile {
            f_max_hz: 5e9,
            ..dev
        };
        assert!(matches!(
            allocate_frequency(1e10, 1.0, &fast),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn bandwidth_allocation_hand_values() {
        let b = 1e7;
        let single = allocate_bandwidth(&[(5e5, 2.0)], b).unwrap();
        assert_eq!(single, vec![b]);

        let shares = allocate_bandwidth(&[(1e6, 1.0), (2e6, 1.0)], b).unwrap();
        assert!((shares[0] - b / 3.0).abs() < 1e-6);
        assert!((shares[1] - 2.0 * b / 3.0).abs() < 1e-6);

        let shares = allocate_bandwidth(&[(1e6, 1.0), (1e6, 2.0)], b).unwrap();
        assert!((shares[0] - 2.0 * b / 3.0).abs() < 1e-6);
        assert!((shares[1] - b / 3.0).abs() < 1e-6);
    }

    #[test]
    fn bandwidth_shares_sum_exactly_and_equalize_times() {
        let mut s = RngStream::new(2, "bw").unwrap();
        for _ in 0..50 {
            let n = 1 + s.below(8);
            let demands: Vec<(f64, f64)> = (0..n)
                .map(|_| (s.uniform(1e3, 1e7), s.uniform(0.1, 10.0)))
                .collect();
            let b = s.uniform(1e6, 1e8);
            let shares = allocate_bandwidth(&demands, b).unwrap();
            assert_eq!(shares.iter().sum::<f64>(), b, "exact remainder sum");
            let times: Vec<f64> = demands
                .iter()
                .zip(&shares)
                .map(|(&(bits, se), &bw)| bits / (bw * se))
                .collect();
            let t0 = times[0];
            for &t in &times {
                assert!((t - t0).abs() <= 1e-9 * t0, "completion spread");
            }
        }
    }

    #[test]
    fn empty_bandwidth_request_rejected() {
        assert!(allocate_bandwidth(&[], 1e6).is_err());
    }
}
