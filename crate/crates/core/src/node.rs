//! Class-A end device: traffic generation, channel selection under duty-cycle
//! limits, receive windows, confirmed-frame retransmission and ADR backoff.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::air::{Direction, Outcome, Packet};
use crate::energy::{EnergyLedger, EnergyProfile, EnergyState, Slot};
use crate::error::{Error, Result};
use crate::phy::{frame_airtime, Band, DataRate, LoRaParams, TX_POWER_LEVELS};

/// MAC timing and retry parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacConfig {
    /// Transmissions of a confirmed frame before it is dropped.
    pub max_retries: u8,
    pub ack_timeout_min_s: f64,
    pub ack_timeout_max_s: f64,
    /// Uplinks without any downlink before the node sets ADRACKReq.
    pub adr_ack_limit: u32,
    /// Further unanswered uplinks between node-side data-rate decreases.
    pub adr_ack_delay: u32,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            max_retries: 8,
            ack_timeout_min_s: 1.0,
            ack_timeout_max_s: 3.0,
            adr_ack_limit: 64,
            adr_ack_delay: 32,
        }
    }
}

impl MacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_retries == 0 {
            return Err(Error::config("mac.max_retries", "must be at least 1"));
        }
        if !(self.ack_timeout_min_s >= 0.0 && self.ack_timeout_max_s >= self.ack_timeout_min_s) {
            return Err(Error::config(
                "mac.ack_timeout_max_s",
                "ack timeout range must be non-negative and ordered",
            ));
        }
        if self.adr_ack_delay == 0 {
            return Err(Error::config("mac.adr_ack_delay", "must be at least 1"));
        }
        Ok(())
    }
}

/// An application payload waiting for (re)transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub seq: u64,
    pub payload_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ActiveFrame {
    frame: Frame,
    attempt: u8,
}

/// What the node does after a confirmed frame went unacknowledged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryDecision {
    Retransmit { attempt: u8 },
    GiveUp,
}

/// MAC content of a downlink as seen by the node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownlinkContent {
    pub ack: bool,
    /// Raw LinkADRReq fields: data-rate index and tx power in dBm.
    pub adr_command: Option<(u8, i8)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub unique_bytes_tx: u64,
    pub unique_frames_tx: u64,
    pub frames_tx: u64,
    pub retransmissions: u64,
    pub frames_unacked: u64,
    pub downlinks_rx: u64,
    pub adr_commands_applied: u64,
    pub malformed_commands: u64,
    pub adr_backoffs: u64,
}

/// Link budget of one transmission as seen at the gateway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub rss_dbm: f64,
    pub snr_db: f64,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: usize,
    pub location: (f64, f64),
    pub params: LoRaParams,
    pub adr_enabled: bool,
    pub confirmed: bool,
    pub lambda_bps: f64,
    pub payload_len: usize,
    /// One duty-cycle ledger per sub-band the node may use.
    pub bands: Vec<Band>,
    pub adr_ack_cnt: u32,
    /// Unanswered uplinks after which ADRACKReq is set.
    pub adr_ack_limit: u32,
    pub ledger: EnergyLedger,
    pub counters: NodeCounters,
    queue: VecDeque<Frame>,
    active: Option<ActiveFrame>,
    next_seq: u64,
    downlink_this_cycle: bool,
}

impl Node {
    pub fn new(
        id: usize,
        location: (f64, f64),
        params: LoRaParams,
        lambda_bps: f64,
        payload_len: usize,
        bands: Vec<Band>,
    ) -> Result<Self> {
        params.validate()?;
        if bands.iter().all(|b| b.channels.is_empty()) {
            return Err(Error::param("node needs at least one channel"));
        }
        Ok(Node {
            id,
            location,
            params,
            adr_enabled: false,
            confirmed: false,
            lambda_bps,
            payload_len,
            bands,
            adr_ack_cnt: 0,
            adr_ack_limit: MacConfig::default().adr_ack_limit,
            ledger: EnergyLedger::default(),
            counters: NodeCounters::default(),
            queue: VecDeque::new(),
            active: None,
            next_seq: 0,
            downlink_this_cycle: false,
        })
    }

    pub fn distance_to_origin(&self) -> f64 {
        self.location.0.hypot(self.location.1)
    }

    /// Mean spacing between application frames so that the node offers
    /// `lambda_bps` of payload on average.
    pub fn mean_interarrival_s(&self) -> f64 {
        self.payload_len as f64 * 8.0 / self.lambda_bps
    }

    /// Time of the next application frame; arrivals form a Poisson process.
    pub fn next_uplink_time<R: Rng + ?Sized>(&self, now: f64, rng: &mut R) -> f64 {
        let exp = Exp::new(1.0 / self.mean_interarrival_s()).expect("positive rate");
        now + exp.sample(rng)
    }

    pub fn enqueue_frame(&mut self) {
        let frame = Frame {
            seq: self.next_seq,
            payload_len: self.payload_len,
        };
        self.next_seq += 1;
        self.queue.push_back(frame);
    }

    pub fn is_busy(&self) -> bool {
        self.active.is_some()
    }

    pub fn queued_frames(&self) -> usize {
        self.queue.len()
    }

    /// Takes the next queued frame as the active one. Returns false if nothing is queued.
    pub fn activate_next(&mut self) -> bool {
        debug_assert!(self.active.is_none());
        match self.queue.pop_front() {
            Some(frame) => {
                self.active = Some(ActiveFrame { frame, attempt: 1 });
                true
            }
            None => false,
        }
    }

    pub fn active_attempt(&self) -> Option<u8> {
        self.active.map(|a| a.attempt)
    }

    fn band_of(&self, freq_hz: u32) -> Option<usize> {
        self.bands.iter().position(|b| b.contains(freq_hz))
    }

    /// The channel whose band frees up first, and when the frame can go out on it.
    /// Ties go to the lowest frequency.
    pub fn select_channel(&self, now: f64) -> (u32, f64) {
        let (freq, free_at) = self
            .bands
            .iter()
            .flat_map(|b| b.channels.iter().map(move |&f| (f, b.next_allowed_tx)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("node has at least one channel");
        (freq, free_at.max(now))
    }

    /// Puts the active frame on air. Debits processing, tx preparation and the
    /// transmission itself, and books the airtime on the band ledger.
    pub fn transmit(
        &mut self,
        packet_id: u64,
        freq_hz: u32,
        start: f64,
        link: LinkBudget,
        profile: &EnergyProfile,
    ) -> Result<Packet> {
        let active = self.active.ok_or_else(|| {
            Error::invariant(format!("node {} transmits without a frame", self.id))
        })?;
        let band = self.band_of(freq_hz).ok_or_else(|| {
            Error::invariant(format!("node {} has no band for {freq_hz} Hz", self.id))
        })?;
        let airtime: f64 = frame_airtime(&self.params, active.frame.payload_len)?;
        self.bands[band].record(start, airtime)?;

        let tx_mw = profile.tx_power.consumption_mw(self.params.tx_power_dbm)?;
        self.ledger.debit(
            EnergyState::Processing,
            profile.processing_mw,
            profile.processing_s,
        );
        self.ledger
            .debit(EnergyState::TxPrep, profile.tx_prep_mw, profile.tx_prep_s);
        self.ledger.debit(EnergyState::Tx, tx_mw, airtime);

        self.counters.frames_tx += 1;
        if active.attempt == 1 {
            self.counters.unique_frames_tx += 1;
            self.counters.unique_bytes_tx += active.frame.payload_len as u64;
        } else {
            self.counters.retransmissions += 1;
        }
        if self.adr_enabled {
            self.adr_ack_cnt += 1;
        }
        self.downlink_this_cycle = false;

        Ok(Packet {
            id: packet_id,
            node_id: self.id,
            payload_len: active.frame.payload_len,
            frame_seq: active.frame.seq,
            params: self.params,
            freq_hz,
            start,
            airtime,
            rss_dbm: link.rss_dbm,
            snr_db: link.snr_db,
            direction: Direction::Uplink,
            confirmed: self.confirmed,
            adr_ack_req: self.adr_enabled && self.adr_ack_cnt >= self.adr_ack_limit,
            attempt: active.attempt,
            outcome: Outcome::Pending,
        })
    }

    /// Debits RX1: the wait, the radio ramp-up and the listen time, which is the
    /// downlink airtime if one arrives in this window or the preamble timeout otherwise.
    pub fn open_rx1(&mut self, profile: &EnergyProfile, listen_s: f64) {
        self.ledger
            .debit(EnergyState::WaitRx1, profile.wait_mw, profile.rx_delay_s);
        self.ledger
            .debit(EnergyState::RxPrep, profile.rx_prep_mw, profile.rx_prep_s);
        self.ledger
            .debit(EnergyState::Rx1, profile.rx1_mw, listen_s);
    }

    /// Debits RX2; only called when RX1 stayed empty.
    pub fn open_rx2(&mut self, profile: &EnergyProfile, rx1_listen_s: f64, listen_s: f64) {
        let wait = (profile.rx_delay_s - rx1_listen_s).max(0.0);
        self.ledger
            .debit(EnergyState::WaitRx2, profile.wait_mw, wait);
        self.ledger
            .debit(EnergyState::RxPrep, profile.rx_prep_mw, profile.rx_prep_s);
        self.ledger
            .debit(EnergyState::Rx2, profile.rx2_mw, listen_s);
    }

    /// Processes a downlink received in either window. Returns true if it
    /// acknowledged the active frame, which then completes.
    pub fn receive_downlink(
        &mut self,
        profile: &EnergyProfile,
        content: DownlinkContent,
        _slot: Slot,
    ) -> bool {
        self.ledger
            .debit(EnergyState::RxPost, profile.rx_post_mw, profile.rx_post_s);
        self.counters.downlinks_rx += 1;
        self.adr_ack_cnt = 0;
        self.downlink_this_cycle = true;
        if let Some((dr, power)) = content.adr_command {
            self.apply_adr_command(dr, power);
        }
        if content.ack && self.confirmed {
            self.active = None;
            return true;
        }
        false
    }

    /// Adopts a network-issued LinkADRReq. Out-of-range values leave the
    /// parameters untouched and are counted as malformed.
    pub fn apply_adr_command(&mut self, dr_index: u8, power_dbm: i8) -> bool {
        let Ok(dr) = DataRate::new(dr_index) else {
            self.counters.malformed_commands += 1;
            return false;
        };
        if !TX_POWER_LEVELS.contains(&power_dbm) {
            self.counters.malformed_commands += 1;
            return false;
        }
        self.params.set_data_rate(dr);
        self.params.tx_power_dbm = power_dbm;
        self.counters.adr_commands_applied += 1;
        true
    }

    /// Node-initiated data-rate decrease; never goes up and stops at DR0.
    pub fn step_down_data_rate(&mut self) -> bool {
        let current = DataRate::from_sf(self.params.sf).expect("validated params");
        match current.slower() {
            Some(dr) => {
                self.params.set_data_rate(dr);
                true
            }
            None => false,
        }
    }

    /// Closes the receive windows of an unconfirmed uplink. Runs the ADR
    /// backoff when the network has stayed silent for too long.
    pub fn finish_unconfirmed(&mut self, mac: &MacConfig) {
        self.active = None;
        if !self.adr_enabled || self.downlink_this_cycle {
            return;
        }
        let first = mac.adr_ack_limit + mac.adr_ack_delay;
        if self.adr_ack_cnt >= first
            && (self.adr_ack_cnt - first).is_multiple_of(mac.adr_ack_delay)
            && self.step_down_data_rate()
        {
            self.counters.adr_backoffs += 1;
        }
    }

    /// Both windows of a confirmed uplink closed without an acknowledgement.
    pub fn handle_confirmed_timeout(&mut self, mac: &MacConfig) -> Result<RetryDecision> {
        let active = self.active.as_mut().ok_or_else(|| {
            Error::invariant(format!(
                "node {} timed out without an active frame",
                self.id
            ))
        })?;
        if active.attempt >= mac.max_retries {
            self.active = None;
            self.counters.frames_unacked += 1;
            return Ok(RetryDecision::GiveUp);
        }
        active.attempt += 1;
        let attempt = active.attempt;
        let retry = attempt - 1;
        if retry > 2 && retry % 2 == 1 {
            self.step_down_data_rate();
        }
        Ok(RetryDecision::Retransmit { attempt })
    }

    pub fn ack_timeout<R: Rng + ?Sized>(&self, mac: &MacConfig, rng: &mut R) -> f64 {
        if mac.ack_timeout_max_s > mac.ack_timeout_min_s {
            rng.gen_range(mac.ack_timeout_min_s..=mac.ack_timeout_max_s)
        } else {
            mac.ack_timeout_min_s
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::energy::EnergyState;

    const CHANNELS: [u32; 3] = [868_100_000, 868_300_000, 868_500_000];

    fn node(sf: u8, payload_len: usize) -> Node {
        let bands = CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &f)| Band::new(format!("g{i}"), 0.01, vec![f]).unwrap())
            .collect();
        let params = LoRaParams::uplink(DataRate::from_sf(sf).unwrap(), 14);
        Node::new(0, (500.0, 0.0), params, 0.02, payload_len, bands).unwrap()
    }

    const LINK: LinkBudget = LinkBudget {
        rss_dbm: -100.0,
        snr_db: 17.0,
    };

    fn send(n: &mut Node, at: f64) -> Packet {
        let (freq, start) = n.select_channel(at);
        n.transmit(0, freq, start, LINK, &EnergyProfile::default())
            .unwrap()
    }

    #[test]
    fn mean_interarrival() {
        assert_eq!(node(7, 9).mean_interarrival_s(), 3600.0);
        assert_eq!(node(7, 18).mean_interarrival_s(), 7200.0);
        for payload in [9, 18] {
            let n = node(7, payload);
            let mut rng = ChaCha8Rng::seed_from_u64(payload as u64);
            let mean = (0..100_000)
                .map(|_| n.next_uplink_time(0.0, &mut rng))
                .sum::<f64>()
                / 1e5;
            let expected = n.mean_interarrival_s();
            assert!((mean / expected - 1.0).abs() < 0.02, "{mean} vs {expected}");
        }
    }

    #[test]
    fn channel_selection() {
        let mut n = node(12, 51);
        assert_eq!(n.select_channel(5.0), (868_100_000, 5.0));

        for (band, free_at) in n.bands.iter_mut().zip([10.0, 5.0, 20.0]) {
            band.next_allowed_tx = free_at;
        }
        assert_eq!(n.select_channel(0.0), (868_300_000, 5.0));

        let mut n = node(12, 51);
        n.enqueue_frame();
        n.activate_next();
        let first = send(&mut n, 0.0);
        let (retry_freq, retry_start) = n.select_channel(first.end());
        assert_ne!(retry_freq, first.freq_hz);
        assert_eq!(retry_start, first.end());
    }

    // PHY payload 45 B at SF9: 12.25 + 8 + ceil(368 / 36) * 5 = 75.25 symbols of 4.096 ms.
    #[test]
    fn transmit_debits() {
        let mut n = node(9, 32);
        n.confirmed = true;
        n.enqueue_frame();
        n.activate_next();
        let p = send(&mut n, 0.0);
        assert_abs_diff_eq!(p.airtime, 0.308_224, epsilon = 1e-9);
        assert_abs_diff_eq!(
            n.ledger.energy_mj(EnergyState::Tx),
            45.154_816,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            n.ledger.energy_mj(EnergyState::TxPrep),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            n.ledger.energy_mj(EnergyState::Processing),
            0.075,
            epsilon = 1e-12
        );
        assert_eq!(n.counters.unique_bytes_tx, 32);
        assert!(p.confirmed);

        let mut low = node(9, 32);
        low.params.tx_power_dbm = 2;
        low.enqueue_frame();
        low.activate_next();
        send(&mut low, 0.0);
        let ratio = low.ledger.energy_mj(EnergyState::Tx) / n.ledger.energy_mj(EnergyState::Tx);
        assert_abs_diff_eq!(ratio, 91.8 / 146.5, epsilon = 1e-12);
    }

    #[test]
    fn duty_cycle_violation_is_an_error() {
        let mut n = node(12, 51);
        n.enqueue_frame();
        n.activate_next();
        send(&mut n, 0.0);
        let err = n.transmit(1, CHANNELS[0], 3.0, LINK, &EnergyProfile::default());
        assert!(matches!(err, Err(Error::Invariant(_))));
    }

    #[test]
    fn rx1_delivery_skips_rx2() {
        let profile = EnergyProfile::default();
        let mut n = node(7, 10);
        n.confirmed = true;
        n.enqueue_frame();
        n.activate_next();
        send(&mut n, 0.0);
        n.open_rx1(&profile, 0.04);
        let content = DownlinkContent {
            ack: true,
            adr_command: None,
        };
        assert!(n.receive_downlink(&profile, content, Slot::Rx1));
        assert_eq!(n.ledger.residency_s(EnergyState::Rx2), 0.0);
        assert_eq!(n.ledger.residency_s(EnergyState::WaitRx2), 0.0);
        assert_abs_diff_eq!(
            n.ledger.energy_mj(EnergyState::RxPost),
            8.3 * 10.7e-3,
            epsilon = 1e-12
        );
        assert!(!n.is_busy());
        assert_eq!(n.counters.unique_frames_tx, 1);
    }

    #[test]
    fn empty_windows_have_no_post_processing() {
        let profile = EnergyProfile::default();
        let mut n = node(7, 10);
        n.open_rx1(&profile, 0.01);
        n.open_rx2(&profile, 0.01, 0.02);
        assert_eq!(n.ledger.residency_s(EnergyState::RxPost), 0.0);
        assert_abs_diff_eq!(
            n.ledger.residency_s(EnergyState::WaitRx2),
            0.99,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            n.ledger.residency_s(EnergyState::RxPrep),
            2.0 * 3.4e-3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn retries_are_bounded() {
        let mac = MacConfig::default();
        let mut n = node(7, 10);
        n.confirmed = true;
        n.enqueue_frame();
        n.activate_next();
        let mut t = 0.0;
        let mut sent = 0;
        loop {
            let p = send(&mut n, t);
            sent += 1;
            t = p.end() + 10.0;
            if let RetryDecision::GiveUp = n.handle_confirmed_timeout(&mac).unwrap() {
                break;
            }
        }
        assert_eq!(sent, 8);
        assert_eq!(n.counters.frames_tx, 8);
        assert_eq!(n.counters.unique_bytes_tx, 10);
        assert_eq!(n.counters.retransmissions, 7);
        assert_eq!(n.counters.frames_unacked, 1);
        // Retries 3, 5 and 7 each slow the node down one data rate.
        assert_eq!(n.params.sf, 10);
        assert!(!n.is_busy());
    }

    #[test]
    fn adr_commands() {
        let mut n = node(12, 10);
        assert!(n.apply_adr_command(5, 2));
        assert_eq!((n.params.sf, n.params.tx_power_dbm), (7, 2));
        assert!(!n.params.low_dr_opt);
        let before = n.params;
        assert!(n.apply_adr_command(5, 2));
        assert_eq!(n.params, before);

        assert!(!n.apply_adr_command(6, 2));
        assert!(!n.apply_adr_command(3, 13));
        assert_eq!(n.params, before);
        assert_eq!(n.counters.malformed_commands, 2);
    }

    #[test]
    fn node_side_changes_only_slow_down() {
        let mut n = node(11, 10);
        assert!(n.step_down_data_rate());
        assert_eq!(n.params.sf, 12);
        assert!(!n.step_down_data_rate());
        assert_eq!(n.params.sf, 12);
    }

    #[test]
    fn adr_backoff_after_silence() {
        let mac = MacConfig::default();
        let mut n = node(7, 10);
        n.adr_enabled = true;
        let mut t = 0.0;
        let mut sfs = Vec::new();
        for _ in 0..160 {
            n.enqueue_frame();
            n.activate_next();
            let p = send(&mut n, t);
            t = p.end() + 1000.0;
            n.finish_unconfirmed(&mac);
            sfs.push(n.params.sf);
        }
        // Uplink 64 asks for an answer, uplink 96 drops a data rate, then every 32nd.
        assert_eq!(n.counters.adr_backoffs, 3);
        assert_eq!(sfs[94], 7);
        assert_eq!(sfs[95], 8);
        assert_eq!(sfs[127], 9);
        assert_eq!(sfs[159], 10);
        assert_eq!(n.params.tx_power_dbm, 14);

        n.enqueue_frame();
        n.activate_next();
        assert!(send(&mut n, t).adr_ack_req);
        n.receive_downlink(
            &EnergyProfile::default(),
            DownlinkContent {
                ack: false,
                adr_command: None,
            },
            Slot::Rx2,
        );
        assert_eq!(n.adr_ack_cnt, 0);
    }

    #[test]
    fn ack_timeout_range() {
        let mac = MacConfig::default();
        let n = node(7, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..10_000).map(|_| n.ack_timeout(&mac, &mut rng)).collect();
        assert!(draws.iter().all(|&d| (1.0..=3.0).contains(&d)));
        let mean = draws.iter().sum::<f64>() / 1e4;
        assert!((mean - 2.0).abs() < 0.03);
    }
}
