//! LoRa PHY arithmetic: symbol time, time on air, duty-cycle off-time and the
//! per-SF receiver tables.
//!
//! The closed-form functions are generic over the float type so they can be
//! evaluated in `f32` on constrained targets; the simulator uses `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MIN_SF: u8 = 7;
pub const MAX_SF: u8 = 12;
pub const BW_125K: u32 = 125_000;
pub const MAX_PHY_PAYLOAD: usize = 255;

/// LoRaWAN MAC framing added to every application payload (MHDR, FHDR, FPort, MIC).
pub const MAC_OVERHEAD: usize = 13;

/// Transmit power states supported by the modelled radio, in dBm.
pub const TX_POWER_LEVELS: [i8; 5] = [2, 5, 8, 11, 14];

fn check_sf(sf: u8) -> Result<()> {
    if (MIN_SF..=MAX_SF).contains(&sf) {
        Ok(())
    } else {
        Err(Error::param(format!(
            "spreading factor {sf} outside 7..=12"
        )))
    }
}

/// Duration of one chirp symbol: `2^sf / bw`.
pub fn symbol_time<T: Real>(sf: u8, bw_hz: T) -> Result<T> {
    check_sf(sf)?;
    if !(bw_hz > T::zero()) {
        return Err(Error::param("bandwidth must be positive"));
    }
    Ok(T::from_u32(1u32 << sf).unwrap() / bw_hz)
}

/// Time on air of a frame with `phy_payload` bytes of PHY payload.
pub fn airtime<T: Real>(params: &LoRaParams, phy_payload: usize) -> Result<T> {
    params.validate()?;
    if phy_payload > MAX_PHY_PAYLOAD {
        return Err(Error::param(format!(
            "payload of {phy_payload} bytes exceeds {MAX_PHY_PAYLOAD}"
        )));
    }
    let t_sym = symbol_time(params.sf, T::from_u32(params.bw_hz).unwrap())?;
    let n = |v: i64| T::from_i64(v).unwrap();

    let sf = i64::from(params.sf);
    let crc = i64::from(params.crc_on);
    let ih = i64::from(!params.explicit_header);
    let de = i64::from(params.low_dr_opt);

    let num = n(8 * phy_payload as i64 - 4 * sf + 28 + 16 * crc - 20 * ih);
    let den = n(4 * (sf - 2 * de));
    let blocks = (num / den).ceil() * n(i64::from(params.cr) + 4);
    let payload_symbols = n(8) + blocks.max(T::zero());
    let preamble_symbols = T::from_u16(params.preamble_len).unwrap() + T::from_f64(4.25).unwrap();

    Ok((preamble_symbols + payload_symbols) * t_sym)
}

/// Time on air of a LoRaWAN data frame carrying `app_payload` application bytes.
pub fn frame_airtime<T: Real>(params: &LoRaParams, app_payload: usize) -> Result<T> {
    airtime(params, app_payload + MAC_OVERHEAD)
}

/// Off-time a transmitter must observe after sending for `airtime` under a
/// duty-cycle limit.
pub fn time_off<T: Real>(airtime: T, duty_cycle_limit: T) -> Result<T> {
    if !(duty_cycle_limit > T::zero() && duty_cycle_limit <= T::one()) {
        return Err(Error::param("duty cycle limit must lie in (0, 1]"));
    }
    if airtime < T::zero() {
        return Err(Error::param("airtime must be non-negative"));
    }
    Ok(airtime / duty_cycle_limit - airtime)
}

/// LoRaWAN EU868 data-rate index; DR0 is SF12 and DR5 is SF7, all at 125 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DataRate(u8);

impl DataRate {
    pub const MIN: DataRate = DataRate(0);
    pub const MAX: DataRate = DataRate(5);

    pub fn new(index: u8) -> Result<Self> {
        if index <= Self::MAX.0 {
            Ok(DataRate(index))
        } else {
            Err(Error::param(format!(
                "data rate DR{index} outside DR0..=DR5"
            )))
        }
    }

    pub fn from_sf(sf: u8) -> Result<Self> {
        check_sf(sf)?;
        Ok(DataRate(MAX_SF - sf))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn sf(self) -> u8 {
        MAX_SF - self.0
    }

    pub fn faster(self) -> Option<Self> {
        (self < Self::MAX).then(|| DataRate(self.0 + 1))
    }

    pub fn slower(self) -> Option<Self> {
        (self > Self::MIN).then(|| DataRate(self.0 - 1))
    }
}

impl TryFrom<u8> for DataRate {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        DataRate::new(v)
    }
}

impl From<DataRate> for u8 {
    fn from(dr: DataRate) -> u8 {
        dr.0
    }
}

impl std::fmt::Display for DataRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DR{}", self.0)
    }
}

/// The governable PHY parameter set of one transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoRaParams {
    pub sf: u8,
    pub bw_hz: u32,
    /// Coding rate offset: the code rate is 4/(4+cr).
    pub cr: u8,
    pub preamble_len: u16,
    pub explicit_header: bool,
    pub crc_on: bool,
    pub low_dr_opt: bool,
    pub tx_power_dbm: i8,
}

impl LoRaParams {
    /// Uplink defaults at 125 kHz: CR 4/5, 8 preamble symbols, explicit header, CRC on.
    pub fn uplink(dr: DataRate, tx_power_dbm: i8) -> Self {
        let sf = dr.sf();
        LoRaParams {
            sf,
            bw_hz: BW_125K,
            cr: 1,
            preamble_len: 8,
            explicit_header: true,
            crc_on: true,
            low_dr_opt: mandates_low_dr_opt(sf, BW_125K),
            tx_power_dbm,
        }
    }

    /// Downlinks are sent without a payload CRC.
    pub fn downlink(dr: DataRate, tx_power_dbm: i8) -> Self {
        LoRaParams {
            crc_on: false,
            ..Self::uplink(dr, tx_power_dbm)
        }
    }

    pub fn data_rate(&self) -> Result<DataRate> {
        DataRate::from_sf(self.sf)
    }

    /// Changes the spreading factor and keeps the low-data-rate flag consistent.
    pub fn set_data_rate(&mut self, dr: DataRate) {
        self.sf = dr.sf();
        self.low_dr_opt = mandates_low_dr_opt(self.sf, self.bw_hz);
    }

    pub fn validate(&self) -> Result<()> {
        check_sf(self.sf)?;
        if self.bw_hz == 0 {
            return Err(Error::param("bandwidth must be positive"));
        }
        if !(1..=4).contains(&self.cr) {
            return Err(Error::param(format!(
                "coding rate offset {} outside 1..=4",
                self.cr
            )));
        }
        if self.preamble_len < 6 {
            return Err(Error::param(format!(
                "preamble of {} symbols is shorter than 6",
                self.preamble_len
            )));
        }
        if !TX_POWER_LEVELS.contains(&self.tx_power_dbm) {
            return Err(Error::param(format!(
                "tx power {} dBm is not a supported power state",
                self.tx_power_dbm
            )));
        }
        if mandates_low_dr_opt(self.sf, self.bw_hz) && !self.low_dr_opt {
            return Err(Error::param(format!(
                "low data rate optimization is mandatory at SF{} / {} Hz",
                self.sf, self.bw_hz
            )));
        }
        Ok(())
    }
}

pub fn mandates_low_dr_opt(sf: u8, bw_hz: u32) -> bool {
    sf >= 11 && bw_hz == BW_125K
}

/// One tx power step below `dbm` in the supported power table.
pub fn lower_power_step(dbm: i8) -> Option<i8> {
    let idx = TX_POWER_LEVELS.iter().position(|&p| p == dbm)?;
    idx.checked_sub(1).map(|i| TX_POWER_LEVELS[i])
}

/// Per-SF receiver limits at 125 kHz, indexed SF7..=SF12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverTables {
    /// Gateway sensitivity in dBm.
    pub sensitivity_dbm: [f64; 6],
    /// Minimum SNR the demodulator needs, in dB.
    pub snr_floor_db: [f64; 6],
}

impl Default for ReceiverTables {
    fn default() -> Self {
        ReceiverTables {
            sensitivity_dbm: [-126.5, -129.0, -131.5, -134.0, -136.5, -139.5],
            snr_floor_db: [-7.5, -10.0, -12.5, -15.0, -17.5, -20.0],
        }
    }
}

impl ReceiverTables {
    pub fn sensitivity(&self, sf: u8, bw_hz: u32) -> Result<f64> {
        check_sf(sf)?;
        if bw_hz != BW_125K {
            return Err(Error::param(format!(
                "no sensitivity entry for SF{sf} at {bw_hz} Hz"
            )));
        }
        Ok(self.sensitivity_dbm[usize::from(sf - MIN_SF)])
    }

    pub fn snr_demod_floor(&self, sf: u8) -> Result<f64> {
        check_sf(sf)?;
        Ok(self.snr_floor_db[usize::from(sf - MIN_SF)])
    }

    pub fn validate(&self) -> Result<()> {
        let strictly_decreasing = |t: &[f64; 6]| t.windows(2).all(|w| w[1] < w[0]);
        if !strictly_decreasing(&self.sensitivity_dbm) {
            return Err(Error::config(
                "receiver.sensitivity_dbm",
                "must be strictly decreasing from SF7 to SF12",
            ));
        }
        if !strictly_decreasing(&self.snr_floor_db) {
            return Err(Error::config(
                "receiver.snr_floor_db",
                "must be strictly decreasing from SF7 to SF12",
            ));
        }
        Ok(())
    }
}

/// A regulatory sub-band and its duty-cycle ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub id: String,
    pub duty_cycle_limit: f64,
    pub channels: Vec<u32>,
    pub last_tx_end: f64,
    pub next_allowed_tx: f64,
}

impl Band {
    pub fn new(id: impl Into<String>, duty_cycle_limit: f64, channels: Vec<u32>) -> Result<Self> {
        if !(duty_cycle_limit > 0.0 && duty_cycle_limit <= 1.0) {
            return Err(Error::param("duty cycle limit must lie in (0, 1]"));
        }
        Ok(Band {
            id: id.into(),
            duty_cycle_limit,
            channels,
            last_tx_end: 0.0,
            next_allowed_tx: 0.0,
        })
    }

    pub fn contains(&self, freq_hz: u32) -> bool {
        self.channels.contains(&freq_hz)
    }

    pub fn permits(&self, at: f64) -> bool {
        at >= self.next_allowed_tx
    }

    /// Books a transmission and pushes the next allowed start out by the off-time.
    pub fn record(&mut self, start: f64, airtime: f64) -> Result<()> {
        if !self.permits(start) {
            return Err(Error::invariant(format!(
                "band {} used at {start:.6} s before {:.6} s",
                self.id, self.next_allowed_tx
            )));
        }
        self.last_tx_end = start + airtime;
        self.next_allowed_tx = self.last_tx_end + time_off(airtime, self.duty_cycle_limit)?;
        Ok(())
    }
}
