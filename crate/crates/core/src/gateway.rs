//! Gateway and network server: uplink acceptance, ADR over a sliding SNR
//! history, and downlink scheduling under the gateway's own duty cycle.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::air::{Direction, Outcome, Packet};
use crate::energy::{receive_energy_mj, EnergyProfile, Slot, WindowModulation};
use crate::error::{Error, Result};
use crate::node::DownlinkContent;
use crate::phy::{frame_airtime, lower_power_step, Band, DataRate, LoRaParams, ReceiverTables};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    /// Duty-cycle limit of the sub-band holding the uplink channels (RX1 replies).
    pub rx1_duty_cycle: f64,
    /// Duty-cycle limit of the sub-band holding the RX2 channel.
    pub rx2_duty_cycle: f64,
    pub tx_power_dbm: i8,
    /// Safety margin subtracted before converting SNR headroom into ADR steps.
    pub device_margin_db: f64,
    pub adr_step_db: f64,
    pub adr_history_len: usize,
    /// Reply with an empty downlink to uplinks carrying ADRACKReq.
    pub answer_adr_ack_req: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            rx1_duty_cycle: 0.01,
            rx2_duty_cycle: 0.10,
            tx_power_dbm: 14,
            device_margin_db: 10.0,
            adr_step_db: 3.0,
            adr_history_len: 20,
            answer_adr_ack_req: true,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, dc) in [
            ("rx1_duty_cycle", self.rx1_duty_cycle),
            ("rx2_duty_cycle", self.rx2_duty_cycle),
        ] {
            if !(dc > 0.0 && dc <= 1.0) {
                return Err(Error::config(
                    format!("gateway.{key}"),
                    "must lie in (0, 1]",
                ));
            }
        }
        if !(self.adr_step_db > 0.0) {
            return Err(Error::config("gateway.adr_step_db", "must be positive"));
        }
        if self.adr_history_len == 0 {
            return Err(Error::config(
                "gateway.adr_history_len",
                "must be at least 1",
            ));
        }
        LoRaParams::downlink(DataRate::MAX, self.tx_power_dbm)
            .validate()
            .map_err(|e| Error::config("gateway.tx_power_dbm", e.to_string()))
    }
}

/// The most recent uplink SNRs of one node, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdrHistory {
    samples: VecDeque<f64>,
    capacity: usize,
}

impl AdrHistory {
    pub fn new(capacity: usize) -> Self {
        AdrHistory {
            samples: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, snr_db: f64) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(snr_db);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    pub fn max(&self) -> Option<f64> {
        self.samples.iter().copied().reduce(f64::max)
    }

    pub fn oldest(&self) -> Option<f64> {
        self.samples.front().copied()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdrDecision {
    pub target_dr: DataRate,
    pub target_power: i8,
    /// Gateway-side count of frames accepted from the node when the decision was made.
    pub issued_at: u64,
}

/// Pure ADR step computation on a full history.
///
/// The best recent SNR minus the demodulation floor and the device margin is
/// converted into whole steps; each step first raises the data rate, then
/// lowers the transmit power. `None` when nothing would change.
pub fn adr_decision(
    history: &AdrHistory,
    current: &LoRaParams,
    tables: &ReceiverTables,
    cfg: &GatewayConfig,
    issued_at: u64,
) -> Result<Option<AdrDecision>> {
    if !history.is_full() {
        return Ok(None);
    }
    let best = history.max().expect("full history is non-empty");
    let margin = best - tables.snr_demod_floor(current.sf)? - cfg.device_margin_db;
    let mut steps = (margin / cfg.adr_step_db).floor().max(0.0) as u32;

    let mut dr = current.data_rate()?;
    let mut power = current.tx_power_dbm;
    while steps > 0 {
        let Some(next) = dr.faster() else { break };
        dr = next;
        steps -= 1;
    }
    while steps > 0 {
        let Some(next) = lower_power_step(power) else {
            break;
        };
        power = next;
        steps -= 1;
    }
    if dr == current.data_rate()? && power == current.tx_power_dbm {
        return Ok(None);
    }
    Ok(Some(AdrDecision {
        target_dr: dr,
        target_power: power,
        issued_at,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    Accepted { new_frame: bool },
    Rejected(Outcome),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledDownlink {
    pub slot: Slot,
    pub packet: Packet,
    pub content: DownlinkContent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DownlinkPlan {
    /// Nothing to say to the node.
    Silent,
    Scheduled(ScheduledDownlink),
    /// A downlink was due but neither window had duty-cycle budget left.
    Dropped,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayCounters {
    pub uplinks_accepted: u64,
    pub downlinks_sent: u64,
    pub downlinks_dropped: u64,
    pub adr_commands_sent: u64,
}

#[derive(Debug, Clone)]
pub struct Gateway {
    pub location: (f64, f64),
    pub cfg: GatewayConfig,
    pub tables: ReceiverTables,
    pub rx1_band: Band,
    pub rx2_band: Band,
    pub rx2_freq_hz: u32,
    pub rx2_dr: DataRate,
    pub counters: GatewayCounters,
    /// Dropped downlinks that carried an acknowledgement, per node.
    pub acks_dropped: Vec<u64>,
    /// Unique application bytes received, per node.
    pub unique_bytes_rx: Vec<u64>,
    histories: Vec<AdrHistory>,
    frames_accepted: Vec<u64>,
    last_seq: Vec<Option<u64>>,
    next_packet_id: u64,
}

impl Gateway {
    pub fn new(
        cfg: GatewayConfig,
        tables: ReceiverTables,
        uplink_channels: Vec<u32>,
        rx2_freq_hz: u32,
        rx2_dr: DataRate,
        num_nodes: usize,
    ) -> Result<Self> {
        let rx1_band = Band::new("gw-rx1", cfg.rx1_duty_cycle, uplink_channels)?;
        let rx2_band = Band::new("gw-rx2", cfg.rx2_duty_cycle, vec![rx2_freq_hz])?;
        Ok(Gateway {
            location: (0.0, 0.0),
            histories: vec![AdrHistory::new(cfg.adr_history_len); num_nodes],
            cfg,
            tables,
            rx1_band,
            rx2_band,
            rx2_freq_hz,
            rx2_dr,
            counters: GatewayCounters::default(),
            acks_dropped: vec![0; num_nodes],
            unique_bytes_rx: vec![0; num_nodes],
            frames_accepted: vec![0; num_nodes],
            last_seq: vec![None; num_nodes],
            next_packet_id: 1 << 62,
        })
    }

    pub fn history(&self, node_id: usize) -> &AdrHistory {
        &self.histories[node_id]
    }

    /// Takes an arbitrated uplink. Only received packets are accepted; a
    /// retransmission of a frame already delivered is accepted but not new.
    pub fn receive_uplink(&mut self, pkt: &Packet) -> Result<Reception> {
        match pkt.outcome {
            Outcome::Pending => Err(Error::invariant(format!(
                "gateway got packet {} before arbitration",
                pkt.id
            ))),
            Outcome::Received => {
                let n = pkt.node_id;
                self.counters.uplinks_accepted += 1;
                self.frames_accepted[n] += 1;
                self.histories[n].push(pkt.snr_db);
                let new_frame = self.last_seq[n] != Some(pkt.frame_seq);
                if new_frame {
                    self.last_seq[n] = Some(pkt.frame_seq);
                    self.unique_bytes_rx[n] += pkt.payload_len as u64;
                }
                Ok(Reception::Accepted { new_frame })
            }
            other => Ok(Reception::Rejected(other)),
        }
    }

    pub fn compute_adr(&self, node_id: usize, current: &LoRaParams) -> Result<Option<AdrDecision>> {
        adr_decision(
            &self.histories[node_id],
            current,
            &self.tables,
            &self.cfg,
            self.frames_accepted[node_id],
        )
    }

    fn downlink_params(&self, slot: Slot, uplink: &Packet) -> Result<(LoRaParams, u32)> {
        Ok(match slot {
            Slot::Rx1 => (
                LoRaParams::downlink(uplink.params.data_rate()?, self.cfg.tx_power_dbm),
                uplink.freq_hz,
            ),
            Slot::Rx2 => (
                LoRaParams::downlink(self.rx2_dr, self.cfg.tx_power_dbm),
                self.rx2_freq_hz,
            ),
        })
    }

    /// Node-side receive energy if the reply goes out in `slot`.
    pub fn slot_cost_mj(
        &self,
        slot: Slot,
        uplink: &Packet,
        profile: &EnergyProfile,
    ) -> Result<f64> {
        let (params, _) = self.downlink_params(slot, uplink)?;
        let airtime: f64 = frame_airtime(&params, 0)?;
        let windows = WindowModulation {
            rx1_sf: uplink.params.sf,
            rx2_sf: self.rx2_dr.sf(),
            bw_hz: uplink.params.bw_hz,
        };
        receive_energy_mj(profile, windows, Some((slot, airtime)))
    }

    /// Picks the receive window for a reply to `uplink`, if one is needed.
    ///
    /// The slot that costs the node less energy is tried first (RX1 on a tie);
    /// a slot is usable only if its band's duty-cycle ledger allows a
    /// transmission at the window's opening time.
    pub fn schedule_downlink(
        &mut self,
        uplink: &Packet,
        needs_ack: bool,
        adr: Option<AdrDecision>,
        profile: &EnergyProfile,
    ) -> Result<DownlinkPlan> {
        let answer_ack_req = self.cfg.answer_adr_ack_req && uplink.adr_ack_req;
        if !needs_ack && adr.is_none() && !answer_ack_req {
            return Ok(DownlinkPlan::Silent);
        }
        let rx1 = self.slot_cost_mj(Slot::Rx1, uplink, profile)?;
        let rx2 = self.slot_cost_mj(Slot::Rx2, uplink, profile)?;
        let order = if rx2 < rx1 {
            [Slot::Rx2, Slot::Rx1]
        } else {
            [Slot::Rx1, Slot::Rx2]
        };

        for slot in order {
            let open_at = uplink.end()
                + profile.rx_delay_s
                    * match slot {
                        Slot::Rx1 => 1.0,
                        Slot::Rx2 => 2.0,
                    };
            let (params, freq_hz) = self.downlink_params(slot, uplink)?;
            let band = match slot {
                Slot::Rx1 => &mut self.rx1_band,
                Slot::Rx2 => &mut self.rx2_band,
            };
            if !band.contains(freq_hz) {
                return Err(Error::invariant(format!(
                    "gateway has no band for downlink at {freq_hz} Hz"
                )));
            }
            if !band.permits(open_at) {
                continue;
            }
            let airtime: f64 = frame_airtime(&params, 0)?;
            band.record(open_at, airtime)?;

            let id = self.next_packet_id;
            self.next_packet_id += 1;
            self.counters.downlinks_sent += 1;
            if adr.is_some() {
                self.counters.adr_commands_sent += 1;
                // Samples gathered under the old settings no longer describe the link.
                self.histories[uplink.node_id].clear();
            }
            let packet = Packet {
                id,
                node_id: uplink.node_id,
                payload_len: 0,
                frame_seq: uplink.frame_seq,
                params,
                freq_hz,
                start: open_at,
                airtime,
                rss_dbm: f64::NAN,
                snr_db: f64::NAN,
                direction: Direction::Downlink,
                confirmed: false,
                adr_ack_req: false,
                attempt: 1,
                outcome: Outcome::Received,
            };
            let content = DownlinkContent {
                ack: needs_ack,
                adr_command: adr.map(|d| (d.target_dr.index(), d.target_power)),
            };
            return Ok(DownlinkPlan::Scheduled(ScheduledDownlink {
                slot,
                packet,
                content,
            }));
        }

        self.counters.downlinks_dropped += 1;
        if needs_ack {
            self.acks_dropped[uplink.node_id] += 1;
        }
        Ok(DownlinkPlan::Dropped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::air::tests::packet;

    fn gateway() -> Gateway {
        Gateway::new(
            GatewayConfig::default(),
            ReceiverTables::default(),
            vec![868_100_000, 868_300_000, 868_500_000],
            868_525_000,
            DataRate::new(3).unwrap(),
            4,
        )
        .unwrap()
    }

    fn full_history(snr: f64) -> AdrHistory {
        let mut h = AdrHistory::new(20);
        for _ in 0..20 {
            h.push(snr);
        }
        h
    }

    #[test]
    fn adr_hand_trace() {
        let cfg = GatewayConfig::default();
        let t = ReceiverTables::default();
        let params = LoRaParams::uplink(DataRate::MIN, 14);
        // 2.08 - (-20) - 10 = 12.08 dB -> 4 steps -> DR0 to DR4 at unchanged power.
        let d = adr_decision(&full_history(2.08), &params, &t, &cfg, 20)
            .unwrap()
            .unwrap();
        assert_eq!(d.target_dr, DataRate::new(4).unwrap());
        assert_eq!(d.target_power, 14);

        // Exactly floor + margin: zero steps.
        assert_eq!(
            adr_decision(&full_history(-10.0), &params, &t, &cfg, 20).unwrap(),
            None
        );

        // Saturated node.
        let fast = LoRaParams::uplink(DataRate::MAX, 2);
        assert_eq!(
            adr_decision(&full_history(30.0), &fast, &t, &cfg, 20).unwrap(),
            None
        );

        // 11 + 20 - 10 = 21 dB -> 7 steps: five to DR5, two power steps 14 -> 8 dBm.
        let d = adr_decision(&full_history(11.0), &params, &t, &cfg, 20)
            .unwrap()
            .unwrap();
        assert_eq!(d.target_dr, DataRate::MAX);
        assert_eq!(d.target_power, 8);
        // 17 dB: 9 steps, power bottoms out at 2 dBm.
        let d = adr_decision(&full_history(17.0), &params, &t, &cfg, 20)
            .unwrap()
            .unwrap();
        assert_eq!(d.target_power, 2);
    }

    #[test]
    fn adr_needs_full_history() {
        let mut h = AdrHistory::new(20);
        for _ in 0..19 {
            h.push(20.0);
        }
        let params = LoRaParams::uplink(DataRate::MIN, 14);
        let d = adr_decision(
            &h,
            &params,
            &ReceiverTables::default(),
            &GatewayConfig::default(),
            19,
        );
        assert_eq!(d.unwrap(), None);
    }

    #[test]
    fn history_is_a_bounded_window() {
        let mut gw = gateway();
        for i in 0..21 {
            let mut p = packet(i, 7, 868_100_000, i as f64 * 10.0, -100.0);
            p.node_id = 0;
            p.frame_seq = i;
            p.snr_db = i as f64;
            p.outcome = Outcome::Received;
            assert_eq!(
                gw.receive_uplink(&p).unwrap(),
                Reception::Accepted { new_frame: true }
            );
        }
        assert_eq!(gw.history(0).len(), 20);
        assert_eq!(gw.history(0).oldest(), Some(1.0));

        let mut lost = packet(99, 7, 868_100_000, 500.0, -100.0);
        lost.node_id = 0;
        lost.outcome = Outcome::Collided;
        assert_eq!(
            gw.receive_uplink(&lost).unwrap(),
            Reception::Rejected(Outcome::Collided)
        );
        assert_eq!(gw.history(0).len(), 20);
    }

    #[test]
    fn retransmissions_are_not_new_bytes() {
        let mut gw = gateway();
        let mut p = packet(1, 7, 868_100_000, 0.0, -100.0);
        p.node_id = 1;
        p.outcome = Outcome::Received;
        gw.receive_uplink(&p).unwrap();
        let mut again = p.clone();
        again.attempt = 2;
        assert_eq!(
            gw.receive_uplink(&again).unwrap(),
            Reception::Accepted { new_frame: false }
        );
        assert_eq!(gw.unique_bytes_rx[1], 10);
        let mut pending = p.clone();
        pending.outcome = Outcome::Pending;
        assert!(gw.receive_uplink(&pending).is_err());
    }

    #[test]
    fn sf12_ack_goes_to_rx2() {
        let mut gw = gateway();
        let profile = EnergyProfile::default();
        let up = packet(1, 12, 868_100_000, 0.0, -100.0);
        let plan = gw.schedule_downlink(&up, true, None, &profile).unwrap();
        let DownlinkPlan::Scheduled(dl) = plan else {
            panic!("expected a downlink")
        };
        assert_eq!(dl.slot, Slot::Rx2);
        assert_eq!(dl.packet.params.sf, 9);
        assert_eq!(dl.packet.freq_hz, 868_525_000);
        assert!((dl.packet.start - (up.end() + 2.0)).abs() < 1e-9);
    }

    #[test]
    fn sf9_ack_prefers_rx1() {
        let mut gw = gateway();
        let profile = EnergyProfile::default();
        let up = packet(1, 9, 868_300_000, 0.0, -100.0);
        let DownlinkPlan::Scheduled(dl) = gw.schedule_downlink(&up, true, None, &profile).unwrap()
        else {
            panic!("expected a downlink")
        };
        assert_eq!(dl.slot, Slot::Rx1);
        assert_eq!(dl.packet.freq_hz, 868_300_000);
    }

    #[test]
    fn chosen_slot_is_the_cheaper_permitted_one() {
        let profile = EnergyProfile::default();
        for sf in 7..=12 {
            let mut gw = gateway();
            let up = packet(1, sf, 868_100_000, 0.0, -100.0);
            let c1 = gw.slot_cost_mj(Slot::Rx1, &up, &profile).unwrap();
            let c2 = gw.slot_cost_mj(Slot::Rx2, &up, &profile).unwrap();
            let DownlinkPlan::Scheduled(dl) =
                gw.schedule_downlink(&up, true, None, &profile).unwrap()
            else {
                panic!("expected a downlink")
            };
            let chosen = gw.slot_cost_mj(dl.slot, &up, &profile).unwrap();
            assert!(chosen <= c1.min(c2) + 1e-12, "sf{sf}");
        }
    }

    #[test]
    fn exhausted_gateway_drops_the_ack() {
        let mut gw = gateway();
        let profile = EnergyProfile::default();
        gw.rx1_band.next_allowed_tx = 1e9;
        gw.rx2_band.next_allowed_tx = 1e9;
        let up = packet(1, 12, 868_100_000, 0.0, -100.0);
        assert_eq!(
            gw.schedule_downlink(&up, true, None, &profile).unwrap(),
            DownlinkPlan::Dropped
        );
        assert_eq!(gw.acks_dropped[1], 1);
        assert_eq!(gw.counters.downlinks_dropped, 1);
    }

    #[test]
    fn falls_back_to_the_other_window() {
        let mut gw = gateway();
        let profile = EnergyProfile::default();
        gw.rx2_band.next_allowed_tx = 1e9;
        let up = packet(1, 12, 868_100_000, 0.0, -100.0);
        let DownlinkPlan::Scheduled(dl) = gw.schedule_downlink(&up, true, None, &profile).unwrap()
        else {
            panic!("expected a downlink")
        };
        assert_eq!(dl.slot, Slot::Rx1);
        assert!(!gw.rx1_band.permits(up.end() + 1.5));
    }

    #[test]
    fn nothing_to_send() {
        let mut gw = gateway();
        let up = packet(1, 7, 868_100_000, 0.0, -100.0);
        let plan = gw
            .schedule_downlink(&up, false, None, &EnergyProfile::default())
            .unwrap();
        assert_eq!(plan, DownlinkPlan::Silent);
    }

    #[test]
    fn static_channel_adr_is_idempotent() {
        let cfg = GatewayConfig::default();
        let t = ReceiverTables::default();
        let mut params = LoRaParams::uplink(DataRate::MIN, 14);
        // With a static channel the SNR only moves with tx power.
        let snr_at_14 = 25.0;
        let d = adr_decision(&full_history(snr_at_14), &params, &t, &cfg, 20)
            .unwrap()
            .unwrap();
        params.set_data_rate(d.target_dr);
        params.tx_power_dbm = d.target_power;
        let snr_now = snr_at_14 - f64::from(14 - params.tx_power_dbm);
        assert_eq!(
            adr_decision(&full_history(snr_now), &params, &t, &cfg, 40).unwrap(),
            None
        );
    }
}
