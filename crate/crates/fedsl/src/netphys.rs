//! Wireless and compute physics: log-distance path loss, Shannon rate,
//! transmission time/energy, Bernoulli packet loss, and the DVFS
//! compute time/energy model.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Radio link parameters.
///
/// `noise_dbm` is the total in-band noise power by default; set
/// `noise_is_psd` to read it as dBm per Hz instead (the two readings of
/// a "-85 dBm noise power spectral density" figure).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub noise_is_psd: bool,
    pub pl0_db: f64,
    pub ref_dist_m: f64,
    pub pl_exponent: f64,
    pub packet_loss_rate: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            bandwidth_hz: 1e7,
            tx_power_dbm: 23.0,
            noise_dbm: -85.0,
            noise_is_psd: false,
            pl0_db: 40.0,
            ref_dist_m: 1.0,
            pl_exponent: 3.0,
            packet_loss_rate: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::validation("bandwidth must be positive"));
        }
        if !(0.0..=1.0).contains(&self.packet_loss_rate) {
            return Err(Error::validation("packet_loss_rate must be in [0, 1]"));
        }
        if !(self.ref_dist_m > 0.0) {
            return Err(Error::validation("reference distance must be positive"));
        }
        for v in [self.tx_power_dbm, self.noise_dbm, self.pl0_db, self.pl_exponent] {
            if !v.is_finite() {
                return Err(Error::validation("channel parameter is not finite"));
            }
        }
        Ok(())
    }

    fn noise_total_dbm(&self) -> f64 {
        if self.noise_is_psd {
            self.noise_dbm + 10.0 * self.bandwidth_hz.log10()
        } else {
            self.noise_dbm
        }
    }

    /// Transmit power in watts.
    pub fn tx_power_w(&self) -> f64 {
        10f64.powf((self.tx_power_dbm - 30.0) / 10.0)
    }
}

/// Log-distance path loss; distances inside the reference clamp to `pl0_db`.
pub fn path_loss_db(ch: &ChannelParams, d_m: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::validation("distance must be positive"));
    }
    if d_m < ch.ref_dist_m {
        return Ok(ch.pl0_db);
    }
    Ok(ch.pl0_db + 10.0 * ch.pl_exponent * (d_m / ch.ref_dist_m).log10())
}

/// Shannon rate of the link at distance `d_m`.
pub fn link_rate_bps(ch: &ChannelParams, d_m: f64) -> Result<f64> {
    let snr_db = ch.tx_power_dbm - path_loss_db(ch, d_m)? - ch.noise_total_dbm();
    let snr = 10f64.powf(snr_db / 10.0);
    Ok(ch.bandwidth_hz * (1.0 + snr).log2())
}

/// Time and radio energy to move `bits` over the link once.
pub fn tx_time_energy(ch: &ChannelParams, d_m: f64, bits: f64) -> Result<(f64, f64)> {
    if !(bits >= 0.0 && bits.is_finite()) {
        return Err(Error::validation("bits must be non-negative"));
    }
    if bits == 0.0 {
        return Ok((0.0, 0.0));
    }
    let rate = link_rate_bps(ch, d_m)?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Infeasible(format!(
            "link rate {rate} bps at {d_m} m cannot carry traffic"
        )));
    }
    let t = bits / rate;
    Ok((t, ch.tx_power_w() * t))
}

/// One Bernoulli delivery trial: true with probability `1 - loss_rate`.
pub fn packet_delivered(stream: &mut RngStream, loss_rate: f64) -> bool {
    debug_assert!((0.0..=1.0).contains(&loss_rate));
    stream.next_f64() >= loss_rate
}

/// Compute capability of one device (or server tier).
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub position_m: (f64, f64),
    pub cpu_freq_hz: f64,
    pub cycles_per_flop: f64,
    pub kappa: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
}

impl Default for DeviceProfile {
    fn default() -> Self {
        DeviceProfile {
            position_m: (0.0, 0.0),
            cpu_freq_hz: 1e9,
            cycles_per_flop: 1.0,
            kappa: 1e-28,
            f_min_hz: 1e8,
            f_max_hz: 2e9,
        }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min_hz > 0.0 && self.f_min_hz <= self.cpu_freq_hz && self.cpu_freq_hz <= self.f_max_hz)
        {
            return Err(Error::validation(
                "device frequency must satisfy 0 < f_min <= f <= f_max",
            ));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::validation("kappa must be positive"));
        }
        if !(self.cycles_per_flop > 0.0) {
            return Err(Error::validation("cycles_per_flop must be positive"));
        }
        Ok(())
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        let dx = self.position_m.0 - p.0;
        let dy = self.position_m.1 - p.1;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Seconds to execute `flops` at the profile's frequency.
pub fn compute_time(dev: &DeviceProfile, flops: f64) -> f64 {
    debug_assert!(flops >= 0.0);
    flops * dev.cycles_per_flop / dev.cpu_freq_hz
}

/// Dynamic DVFS energy: kappa * cycles * f^2.
pub fn compute_energy(dev: &DeviceProfile, flops: f64) -> f64 {
    debug_assert!(flops >= 0.0);
    let cycles = flops * dev.cycles_per_flop;
    dev.kappa * cycles * dev.cpu_freq_hz * dev.cpu_freq_hz
}

/// The simulated floor plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Arena {
    pub width_m: f64,
    pub height_m: f64,
    pub server_pos_m: (f64, f64),
}

impl Default for Arena {
    fn default() -> Self {
        Arena {
            width_m: 50.0,
            height_m: 50.0,
            server_pos_m: (25.0, 25.0),
        }
    }
}

impl Arena {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return Err(Error::validation("arena dimensions must be positive"));
        }
        Ok(())
    }

    pub fn diagonal_m(&self) -> f64 {
        (self.width_m * self.width_m + self.height_m * self.height_m).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn path_loss_hand_values() {
        let ch = ChannelParams::default();
        assert_eq!(path_loss_db(&ch, 1.0).unwrap(), 40.0);
        assert!((path_loss_db(&ch, 10.0).unwrap() - 70.0).abs() < 1e-12);
        assert!((path_loss_db(&ch, 100.0).unwrap() - 100.0).abs() < 1e-12);
        assert!(path_loss_db(&ch, 0.0).is_err());
        assert_eq!(path_loss_db(&ch, 0.5).unwrap(), 40.0);
    }

    #[test]
    fn rate_at_ten_meters_matches_link_budget() {
        let ch = ChannelParams::default();
        // SNR = 23 - 70 + 85 = 38 dB
        let rate = link_rate_bps(&ch, 10.0).unwrap();
        let expected = 1e7 * (1.0 + 10f64.powf(3.8)).log2();
        assert!(rel_close(rate, expected, 1e-12));
        assert!(rel_close(rate, 1.2624e8, 1e-3), "rate {rate}");
    }

    #[test]
    fn zero_db_snr_gives_rate_equal_to_bandwidth() {
        let ch = ChannelParams {
            tx_power_dbm: 40.0,
            pl0_db: 125.0,
            noise_dbm: -85.0,
            ..ChannelParams::default()
        };
        let rate = link_rate_bps(&ch, 1.0).unwrap();
        assert!((rate - ch.bandwidth_hz).abs() < 1e-6);
    }

    #[test]
    fn rate_is_monotone_in_distance() {
        let ch = ChannelParams::default();
        let r5 = link_rate_bps(&ch, 5.0).unwrap();
        let r10 = link_rate_bps(&ch, 10.0).unwrap();
        let r50 = link_rate_bps(&ch, 50.0).unwrap();
        assert!(r5 > r10 && r10 > r50);
    }

    #[test]
    fn tx_time_energy_hand_values() {
        let ch = ChannelParams::default();
        assert_eq!(tx_time_energy(&ch, 10.0, 0.0).unwrap(), (0.0, 0.0));
        let (t, e) = tx_time_energy(&ch, 10.0, 1e6).unwrap();
        assert!(rel_close(t, 7.921e-3, 1e-3), "t {t}");
        assert!(rel_close(e, 1.580e-3, 1e-3), "e {e}");
        let (t2, e2) = tx_time_energy(&ch, 10.0, 2e6).unwrap();
        assert!(rel_close(t2, 2.0 * t, 1e-12));
        assert!(rel_close(e2, 2.0 * e, 1e-12));
    }

    #[test]
    fn tx_power_watts() {
        let ch = ChannelParams::default();
        assert!(rel_close(ch.tx_power_w(), 0.19953, 1e-4));
    }

    #[test]
    fn packet_delivery_extremes_and_rate() {
        let mut s = RngStream::new(9, "loss").unwrap();
        assert!((0..100).all(|_| packet_delivered(&mut s, 0.0)));
        assert!((0..100).all(|_| !packet_delivered(&mut s, 1.0)));
        let n = 100_000;
        let lost = (0..n).filter(|_| !packet_delivered(&mut s, 0.3)).count();
        let rate = lost as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.005, "loss rate {rate}");
    }

    #[test]
    fn compute_time_and_energy_hand_values() {
        let dev = DeviceProfile::default();
        assert_eq!(compute_time(&dev, 0.0), 0.0);
        assert_eq!(compute_energy(&dev, 0.0), 0.0);
        assert!((compute_time(&dev, 2e8) - 0.2).abs() < 1e-15);
        assert!(rel_close(compute_energy(&dev, 2e8), 0.02, 1e-12));
        let half = DeviceProfile {
            cpu_freq_hz: 5e8,
            ..DeviceProfile::default()
        };
        assert!(rel_close(compute_time(&half, 2e8), 0.4, 1e-12));
        // At fixed cycles, doubling f quadruples energy.
        let double = DeviceProfile {
            cpu_freq_hz: 2e9,
            ..DeviceProfile::default()
        };
        assert!(rel_close(
            compute_energy(&double, 2e8),
            4.0 * compute_energy(&dev, 2e8),
            1e-12
        ));
    }

    #[test]
    fn default_link_is_finite_across_the_arena() {
        let ch = ChannelParams::default();
        let arena = Arena::default();
        let diag = arena.diagonal_m();
        assert!(diag <= 71.0);
        for d in [0.1, 1.0, 5.0, 25.0, 50.0, diag] {
            let rate = link_rate_bps(&ch, d).unwrap();
            assert!(rate.is_finite() && rate > 0.0);
            let (t, e) = tx_time_energy(&ch, d, 1e7).unwrap();
            assert!(t.is_finite() && t > 0.0 && e.is_finite() && e > 0.0);
            // Payloads up to 10 Mbit cross in under a second.
            assert!(t <= 1.0, "tx time {t} at {d} m");
        }
    }
}
