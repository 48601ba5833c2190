//! Per-state power model of a Class-A end device and the ledger that
//! integrates it over a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phy::symbol_time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyState {
    Sleep,
    Processing,
    TxPrep,
    Tx,
    WaitRx1,
    WaitRx2,
    RxPrep,
    Rx1,
    Rx2,
    RxPost,
}

impl EnergyState {
    pub const ALL: [EnergyState; 10] = [
        EnergyState::Sleep,
        EnergyState::Processing,
        EnergyState::TxPrep,
        EnergyState::Tx,
        EnergyState::WaitRx1,
        EnergyState::WaitRx2,
        EnergyState::RxPrep,
        EnergyState::Rx1,
        EnergyState::Rx2,
        EnergyState::RxPost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnergyState::Sleep => "sleep",
            EnergyState::Processing => "processing",
            EnergyState::TxPrep => "tx_prep",
            EnergyState::Tx => "tx",
            EnergyState::WaitRx1 => "wait_rx1",
            EnergyState::WaitRx2 => "wait_rx2",
            EnergyState::RxPrep => "rx_prep",
            EnergyState::Rx1 => "rx1",
            EnergyState::Rx2 => "rx2",
            EnergyState::RxPost => "rx_post",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxPowerLevel {
    pub dbm: i8,
    pub mw: f64,
}

/// Radio consumption for each supported transmit power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxPowerTable(pub Vec<TxPowerLevel>);

impl Default for TxPowerTable {
    fn default() -> Self {
        TxPowerTable(
            [(2, 91.8), (5, 95.9), (8, 101.6), (11, 120.8), (14, 146.5)]
                .into_iter()
                .map(|(dbm, mw)| TxPowerLevel { dbm, mw })
                .collect(),
        )
    }
}

impl TxPowerTable {
    pub fn consumption_mw(&self, dbm: i8) -> Result<f64> {
        self.0
            .iter()
            .find(|l| l.dbm == dbm)
            .map(|l| l.mw)
            .ok_or_else(|| Error::param(format!("no consumption entry for {dbm} dBm")))
    }

    fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::config("energy.tx_power", "table is empty"));
        }
        let increasing = self
            .0
            .windows(2)
            .all(|w| w[1].dbm > w[0].dbm && w[1].mw > w[0].mw);
        if !increasing {
            return Err(Error::config(
                "energy.tx_power",
                "dBm keys and consumption must both be strictly increasing",
            ));
        }
        Ok(())
    }
}

/// Power draw (mW) and fixed durations (s) of the node's operating states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyProfile {
    pub sleep_mw: f64,
    pub processing_mw: f64,
    pub processing_s: f64,
    pub tx_prep_mw: f64,
    pub tx_prep_s: f64,
    pub tx_power: TxPowerTable,
    /// Power while waiting for a receive window to open.
    pub wait_mw: f64,
    /// Delay between the end of the uplink and RX1, and between RX1 and RX2.
    pub rx_delay_s: f64,
    pub rx_prep_mw: f64,
    pub rx_prep_s: f64,
    pub rx1_mw: f64,
    pub rx2_mw: f64,
    pub rx_post_mw: f64,
    pub rx_post_s: f64,
    /// Symbols an empty receive window stays open looking for a preamble.
    pub rx_timeout_symbols: f64,
}

impl Default for EnergyProfile {
    fn default() -> Self {
        EnergyProfile {
            sleep_mw: 5.7e-3,
            processing_mw: 15.0,
            processing_s: 5e-3,
            tx_prep_mw: 12.5,
            tx_prep_s: 40e-3,
            tx_power: TxPowerTable::default(),
            wait_mw: 5.7e-3,
            rx_delay_s: 1.0,
            rx_prep_mw: 8.25,
            rx_prep_s: 3.4e-3,
            rx1_mw: 36.96,
            rx2_mw: 34.65,
            rx_post_mw: 8.3,
            rx_post_s: 10.7e-3,
            rx_timeout_symbols: 6.0,
        }
    }
}

impl EnergyProfile {
    pub fn validate(&self) -> Result<()> {
        self.tx_power.validate()?;
        let powers = [
            ("sleep_mw", self.sleep_mw),
            ("processing_mw", self.processing_mw),
            ("tx_prep_mw", self.tx_prep_mw),
            ("wait_mw", self.wait_mw),
            ("rx_prep_mw", self.rx_prep_mw),
            ("rx1_mw", self.rx1_mw),
            ("rx2_mw", self.rx2_mw),
            ("rx_post_mw", self.rx_post_mw),
        ];
        for (key, p) in powers {
            if !(p >= 0.0) {
                return Err(Error::config(
                    format!("energy.{key}"),
                    "must be non-negative",
                ));
            }
            if p < self.sleep_mw {
                return Err(Error::config(
                    format!("energy.{key}"),
                    "must not be below the sleep power",
                ));
            }
        }
        let durations = [
            ("processing_s", self.processing_s),
            ("tx_prep_s", self.tx_prep_s),
            ("rx_delay_s", self.rx_delay_s),
            ("rx_prep_s", self.rx_prep_s),
            ("rx_post_s", self.rx_post_s),
            ("rx_timeout_symbols", self.rx_timeout_symbols),
        ];
        for (key, d) in durations {
            if !(d > 0.0) {
                return Err(Error::config(format!("energy.{key}"), "must be positive"));
            }
        }
        Ok(())
    }

    /// How long an empty receive window listens at the given modulation.
    pub fn rx_timeout_s(&self, sf: u8, bw_hz: u32) -> Result<f64> {
        Ok(self.rx_timeout_symbols * symbol_time(sf, f64::from(bw_hz))?)
    }
}

/// Which Class-A window a downlink is delivered in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Rx1,
    Rx2,
}

/// Modulation of the two receive windows following one uplink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowModulation {
    pub rx1_sf: u8,
    pub rx2_sf: u8,
    pub bw_hz: u32,
}

/// State residencies the node goes through after an uplink, given where (if
/// anywhere) a downlink of `downlink_airtime` seconds arrives.
pub fn receive_sequence(
    profile: &EnergyProfile,
    windows: WindowModulation,
    downlink: Option<(Slot, f64)>,
) -> Result<Vec<(EnergyState, f64, f64)>> {
    let rx1_listen = match downlink {
        Some((Slot::Rx1, airtime)) => airtime,
        _ => profile.rx_timeout_s(windows.rx1_sf, windows.bw_hz)?,
    };
    let mut seq = vec![
        (EnergyState::WaitRx1, profile.wait_mw, profile.rx_delay_s),
        (EnergyState::RxPrep, profile.rx_prep_mw, profile.rx_prep_s),
        (EnergyState::Rx1, profile.rx1_mw, rx1_listen),
    ];
    if !matches!(downlink, Some((Slot::Rx1, _))) {
        let rx2_listen = match downlink {
            Some((Slot::Rx2, airtime)) => airtime,
            _ => profile.rx_timeout_s(windows.rx2_sf, windows.bw_hz)?,
        };
        let wait = (profile.rx_delay_s - rx1_listen).max(0.0);
        seq.push((EnergyState::WaitRx2, profile.wait_mw, wait));
        seq.push((EnergyState::RxPrep, profile.rx_prep_mw, profile.rx_prep_s));
        seq.push((EnergyState::Rx2, profile.rx2_mw, rx2_listen));
    }
    if downlink.is_some() {
        seq.push((EnergyState::RxPost, profile.rx_post_mw, profile.rx_post_s));
    }
    Ok(seq)
}

/// Energy in mJ the node spends on its receive windows for one uplink.
pub fn receive_energy_mj(
    profile: &EnergyProfile,
    windows: WindowModulation,
    downlink: Option<(Slot, f64)>,
) -> Result<f64> {
    Ok(receive_sequence(profile, windows, downlink)?
        .iter()
        .map(|&(_, mw, s)| mw * s)
        .sum())
}

/// Accumulated residency (s) and energy (mJ) per state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    residency_s: [f64; 10],
    energy_mj: [f64; 10],
}

impl EnergyLedger {
    pub fn debit(&mut self, state: EnergyState, power_mw: f64, duration_s: f64) {
        debug_assert!(duration_s >= 0.0 && power_mw >= 0.0);
        self.residency_s[state.index()] += duration_s;
        self.energy_mj[state.index()] += power_mw * duration_s;
    }

    pub fn residency_s(&self, state: EnergyState) -> f64 {
        self.residency_s[state.index()]
    }

    pub fn energy_mj(&self, state: EnergyState) -> f64 {
        self.energy_mj[state.index()]
    }

    /// Time spent outside the sleep state.
    pub fn active_residency_s(&self) -> f64 {
        EnergyState::ALL
            .iter()
            .filter(|&&s| s != EnergyState::Sleep)
            .map(|&s| self.residency_s(s))
            .sum()
    }

    pub fn active_energy_mj(&self) -> f64 {
        EnergyState::ALL
            .iter()
            .filter(|&&s| s != EnergyState::Sleep)
            .map(|&s| self.energy_mj(s))
            .sum()
    }

    pub fn total_energy_mj(&self) -> f64 {
        self.energy_mj.iter().sum()
    }

    /// Books the remainder of `window_s` as sleep. Called once at the end of a run.
    pub fn close(&mut self, window_s: f64, sleep_mw: f64) -> Result<()> {
        let sleep = window_s - self.active_residency_s();
        if sleep < -1e-9 {
            return Err(Error::invariant(format!(
                "active residency {:.6} s exceeds accounting window {window_s:.6} s",
                self.active_residency_s()
            )));
        }
        self.debit(EnergyState::Sleep, sleep_mw, sleep.max(0.0));
        Ok(())
    }

    pub fn merge(&mut self, other: &EnergyLedger) {
        for i in 0..self.residency_s.len() {
            self.residency_s[i] += other.residency_s[i];
            self.energy_mj[i] += other.energy_mj[i];
        }
    }
}
