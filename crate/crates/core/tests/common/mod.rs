//! Checks shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;

use lorasim::engine::{TxRecord, WindowRecord};
use lorasim::{
    DataRate, Direction, EnergyProfile, EnergyState, LoRaParams, Outcome, Packet, RunMetrics,
    SimulationConfig, Slot, Trace,
};

pub const CHANNELS: [u32; 2] = [868_100_000, 868_300_000];

pub fn packet(id: u64, sf: u8, channel: usize, start: f64, rss_dbm: f64) -> Packet {
    let params = LoRaParams::uplink(DataRate::from_sf(sf).unwrap(), 14);
    Packet {
        id,
        node_id: id as usize,
        payload_len: 10,
        frame_seq: 0,
        params,
        freq_hz: CHANNELS[channel],
        start,
        airtime: lorasim::frame_airtime(&params, 10).unwrap(),
        rss_dbm,
        snr_db: rss_dbm + 117.03,
        direction: Direction::Uplink,
        confirmed: false,
        adr_ack_req: false,
        attempt: 1,
        outcome: Outcome::Pending,
    }
}

/// Pairwise reference: the later packet's protected tail (everything after
/// its first three preamble symbols) must not overlap the earlier packet.
pub fn oracle(pkts: &[Packet]) -> Vec<Outcome> {
    let sensitivity = [-126.5, -129.0, -131.5, -134.0, -136.5, -139.5];
    let floor = [-7.5, -10.0, -12.5, -15.0, -17.5, -20.0];
    let protected_from = |p: &Packet| p.start + 3.0 * 2f64.powi(i32::from(p.params.sf)) / 125e3;
    pkts.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut lost = false;
            for (j, q) in pkts.iter().enumerate() {
                if i == j || p.freq_hz != q.freq_hz || p.params.sf != q.params.sf {
                    continue;
                }
                let (early, late) = if p.start <= q.start { (p, q) } else { (q, p) };
                let clash = early.start + early.airtime > protected_from(late);
                if clash && q.rss_dbm > p.rss_dbm - 6.0 {
                    lost = true;
                }
            }
            let k = usize::from(p.params.sf - 7);
            if lost {
                Outcome::Collided
            } else if p.rss_dbm < sensitivity[k] || p.snr_db < floor[k] {
                Outcome::UnderSensitivity
            } else {
                Outcome::Received
            }
        })
        .collect()
}

/// Largest airtime sum over any window of `w` seconds, minus the budget `d * w`.
fn worst_excess(txs: &[&TxRecord], d: f64, w: f64) -> (f64, f64) {
    let mut starts: Vec<(f64, f64)> = txs.iter().map(|t| (t.start, t.airtime)).collect();
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let max_airtime = starts.iter().map(|s| s.1).fold(0.0, f64::max);
    let mut worst = f64::NEG_INFINITY;
    for (i, &(t0, _)) in starts.iter().enumerate() {
        let used: f64 = starts[i..]
            .iter()
            .take_while(|s| s.0 < t0 + w)
            .map(|s| s.1)
            .sum();
        worst = worst.max(used - d * w);
    }
    (worst, max_airtime)
}

pub fn check_duty_cycle(cfg: &SimulationConfig, txs: &[TxRecord]) {
    let mut groups: BTreeMap<(Option<usize>, &str), Vec<&TxRecord>> = BTreeMap::new();
    for t in txs {
        let owner = (t.direction == Direction::Uplink).then_some(t.node_id);
        groups.entry((owner, t.band.as_str())).or_default().push(t);
    }
    for ((owner, band), list) in groups {
        let d = match (owner, band) {
            (Some(_), _) => cfg.node_duty_cycle,
            (None, "gw-rx1") => cfg.gateway.rx1_duty_cycle,
            (None, _) => cfg.gateway.rx2_duty_cycle,
        };
        for w in [60.0, 3600.0, 86_400.0] {
            let (excess, max_airtime) = worst_excess(&list, d, w);
            assert!(
                excess <= max_airtime + 1e-9,
                "{owner:?}/{band}: {excess} s over budget in a {w} s window"
            );
        }
    }
}

pub fn check_class_a(windows: &[WindowRecord], profile: &EnergyProfile) {
    for w in windows {
        let delay = match w.slot {
            Slot::Rx1 => profile.rx_delay_s,
            Slot::Rx2 => 2.0 * profile.rx_delay_s,
        };
        assert!((w.open_at - w.uplink_end - delay).abs() < 1e-9, "{w:?}");
    }
}

pub fn check_energy(cfg: &SimulationConfig, metrics: &RunMetrics, trace: &Trace) {
    let p = &cfg.energy;
    let tx_mw = |dbm: i8| p.tx_power.0.iter().find(|l| l.dbm == dbm).unwrap().mw;
    for node in &metrics.nodes {
        let ups: Vec<_> = trace
            .transmissions
            .iter()
            .filter(|t| t.direction == Direction::Uplink && t.node_id == node.node_id)
            .collect();
        let wins: Vec<_> = trace
            .windows
            .iter()
            .filter(|w| w.node_id == node.node_id)
            .collect();
        let e = &node.energy;
        let tx: f64 = ups.iter().map(|t| t.airtime * tx_mw(t.tx_power_dbm)).sum();
        let listen = |slot: Slot| -> f64 {
            wins.iter()
                .filter(|w| w.slot == slot)
                .map(|w| w.listen_s)
                .sum()
        };
        let delivered = wins.iter().filter(|w| w.downlink).count() as f64;

        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * b.abs().max(1.0);
        assert_eq!(ups.len() as u64, node.frames_tx);
        assert!(close(e.energy_mj(EnergyState::Tx), tx));
        assert!(close(
            e.energy_mj(EnergyState::TxPrep),
            ups.len() as f64 * p.tx_prep_mw * p.tx_prep_s
        ));
        assert!(close(
            e.energy_mj(EnergyState::Rx1),
            listen(Slot::Rx1) * p.rx1_mw
        ));
        assert!(close(
            e.energy_mj(EnergyState::Rx2),
            listen(Slot::Rx2) * p.rx2_mw
        ));
        assert!(close(
            e.residency_s(EnergyState::RxPrep),
            wins.len() as f64 * p.rx_prep_s
        ));
        assert!(close(
            e.residency_s(EnergyState::RxPost),
            delivered * p.rx_post_s
        ));
        assert!(close(
            e.residency_s(EnergyState::Sleep),
            node.window_s - e.active_residency_s()
        ));
        assert!(node.window_s >= metrics.horizon_s);
        let sum: f64 = EnergyState::ALL.iter().map(|&s| e.energy_mj(s)).sum();
        assert!(close(e.total_energy_mj(), sum));
    }
}

pub fn check_no_cross_sf_collisions(trace: &Trace) {
    let ups: Vec<_> = trace
        .transmissions
        .iter()
        .filter(|t| t.direction == Direction::Uplink)
        .collect();
    for t in ups.iter().filter(|t| t.outcome == Outcome::Collided) {
        let culprit = ups.iter().any(|o| {
            !std::ptr::eq(*o, *t)
                && o.freq_hz == t.freq_hz
                && o.sf == t.sf
                && o.start < t.start + t.airtime
                && t.start < o.start + o.airtime
        });
        assert!(
            culprit,
            "collision without a same-channel same-SF contender: {t:?}"
        );
    }
}
