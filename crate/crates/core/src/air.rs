//! The shared medium: log-distance path loss with shadowing, RSS to SNR
//! conversion and collision arbitration between concurrent uplinks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phy::{symbol_time, LoRaParams, ReceiverTables};
use crate::scalar::Real;

/// Thermal noise density at room temperature, dBm/Hz.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

/// Power advantage a packet needs to capture the receiver from a co-SF contender.
pub const CAPTURE_THRESHOLD_DB: f64 = 6.0;

/// Preamble symbols the receiver needs to lock onto a frame.
pub const LOCK_SYMBOLS: u16 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig<T> {
    /// Reference distance in meters.
    pub d0: T,
    /// Path loss at the reference distance, dB.
    pub pl_d0: T,
    /// Path-loss exponent.
    pub n: T,
    /// Shadowing standard deviation, dB.
    pub sigma: T,
    pub indoor_penetration_db: T,
    pub noise_figure_db: T,
}

impl<T: Real> Default for PropagationConfig<T> {
    fn default() -> Self {
        let c = |v: f64| T::from_f64(v).unwrap();
        PropagationConfig {
            d0: c(1000.0),
            pl_d0: c(128.95),
            n: c(2.32),
            sigma: c(7.8),
            indoor_penetration_db: T::zero(),
            noise_figure_db: c(6.0),
        }
    }
}

impl<T: Real> PropagationConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let fail = |k: &str, m: &str| Err(Error::config(format!("propagation.{k}"), m));
        if !(self.d0 > T::zero()) {
            return fail("d0", "must be positive");
        }
        if !(self.n > T::zero()) {
            return fail("n", "must be positive");
        }
        if !(self.sigma >= T::zero()) {
            return fail("sigma", "must be non-negative");
        }
        if !(self.indoor_penetration_db >= T::zero()) {
            return fail("indoor_penetration_db", "must be non-negative");
        }
        Ok(())
    }

    /// Path loss at `distance` for a given shadowing realisation.
    pub fn path_loss(&self, distance: T, shadowing_draw: T) -> Result<T> {
        if !(distance > T::zero()) {
            return Err(Error::param("distance must be positive"));
        }
        let ten = T::from_f64(10.0).unwrap();
        Ok(self.pl_d0
            + ten * self.n * (distance / self.d0).log10()
            + shadowing_draw
            + self.indoor_penetration_db)
    }
}

/// Noise power in `bw_hz` of bandwidth for a receiver with the given noise figure.
pub fn noise_floor<T: Real>(bw_hz: T, noise_figure_db: T) -> Result<T> {
    if !(bw_hz > T::zero()) {
        return Err(Error::param("bandwidth must be positive"));
    }
    Ok(T::from_f64(THERMAL_NOISE_DBM_HZ).unwrap()
        + T::from_f64(10.0).unwrap() * bw_hz.log10()
        + noise_figure_db)
}

pub fn snr<T: Real>(tx_power_dbm: T, path_loss: T, bw_hz: T, noise_figure_db: T) -> Result<T> {
    Ok(tx_power_dbm - path_loss - noise_floor(bw_hz, noise_figure_db)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pending,
    Received,
    Collided,
    UnderSensitivity,
}

/// One over-the-air transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub node_id: usize,
    /// Application payload bytes (MAC framing excluded).
    pub payload_len: usize,
    /// Node-local sequence number of the application frame; shared by retransmissions.
    pub frame_seq: u64,
    pub params: LoRaParams,
    pub freq_hz: u32,
    pub start: f64,
    pub airtime: f64,
    pub rss_dbm: f64,
    pub snr_db: f64,
    pub direction: Direction,
    pub confirmed: bool,
    /// Node asks the network to answer so it can confirm its ADR settings.
    pub adr_ack_req: bool,
    pub attempt: u8,
    pub outcome: Outcome,
}

impl Packet {
    pub fn end(&self) -> f64 {
        self.start + self.airtime
    }

    /// Start of the part of the frame that must be interference-free: the last
    /// preamble symbols the receiver locks on, and everything after.
    pub fn critical_section_start(&self) -> f64 {
        let t_sym: f64 = symbol_time(self.params.sf, f64::from(self.params.bw_hz)).unwrap_or(0.0);
        let unprotected = self.params.preamble_len.saturating_sub(LOCK_SYMBOLS);
        self.start + f64::from(unprotected) * t_sym
    }

    pub fn overlaps(&self, other: &Packet) -> bool {
        self.start < other.end() && other.start < self.end()
    }

    /// Sets the final outcome; a packet is resolved exactly once.
    pub fn resolve(&mut self, outcome: Outcome) -> Result<()> {
        if self.outcome != Outcome::Pending || outcome == Outcome::Pending {
            return Err(Error::invariant(format!(
                "packet {} moved from {:?} to {:?}",
                self.id, self.outcome, outcome
            )));
        }
        self.outcome = outcome;
        Ok(())
    }
}

/// Whether two packets can disturb each other at all: same channel, same SF,
/// and the earlier one still on air when the later one's critical section starts.
fn interferes(a: &Packet, b: &Packet) -> bool {
    if a.freq_hz != b.freq_hz || a.params.sf != b.params.sf {
        return false;
    }
    let a_hits_b = b.start >= a.start && a.end() > b.critical_section_start();
    let b_hits_a = a.start >= b.start && b.end() > a.critical_section_start();
    a_hits_b || b_hits_a
}

/// Whether `victim` is destroyed by `other`.
fn destroyed_by(victim: &Packet, other: &Packet) -> bool {
    interferes(victim, other) && other.rss_dbm > victim.rss_dbm - CAPTURE_THRESHOLD_DB
}

/// Decides the outcome of every packet in `in_flight`.
///
/// A packet is collided if any interfering contender is not at least
/// [`CAPTURE_THRESHOLD_DB`] weaker. Surviving packets below the gateway
/// sensitivity or demodulation SNR floor are under sensitivity. The result
/// depends only on the set of packets, not on their order.
pub fn arbitrate_collisions(in_flight: &[Packet], tables: &ReceiverTables) -> Result<Vec<Outcome>> {
    in_flight
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let collided = in_flight
                .iter()
                .enumerate()
                .any(|(j, q)| i != j && destroyed_by(p, q));
            if collided {
                return Ok(Outcome::Collided);
            }
            let sensitivity = tables.sensitivity(p.params.sf, p.params.bw_hz)?;
            let floor = tables.snr_demod_floor(p.params.sf)?;
            if p.rss_dbm < sensitivity || p.snr_db < floor {
                Ok(Outcome::UnderSensitivity)
            } else {
                Ok(Outcome::Received)
            }
        })
        .collect()
}
