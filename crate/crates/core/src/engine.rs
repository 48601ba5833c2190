//! Discrete-event loop for one replication, and the Monte-Carlo harness that
//! runs many replications in parallel with deterministic results.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::air::{arbitrate_collisions, snr, Direction, Outcome, Packet};
use crate::config::{Cell, ExperimentSpec, SimulationConfig};
use crate::energy::Slot;
use crate::error::{Error, Result};
use crate::gateway::{DownlinkPlan, Gateway, Reception};
use crate::metrics::{summarize, NodeMetrics, RunMetrics, Snapshot, Summary};
use crate::node::{LinkBudget, Node, RetryDecision};
use crate::phy::{Band, DataRate, LoRaParams, MAX_SF, MIN_SF};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Packets that ended this long ago can no longer overlap anything new.
const AIR_RETENTION_S: f64 = 16.0;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index`; distinct indices always give distinct seeds.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Placement = 0,
    Traffic = 1,
    Shadowing = 2,
    Timeout = 3,
}

fn stream_rng(seed: u64, node: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((node as u64) << 2) | stream as u64);
    rng
}

/// Area-uniform point in a disc of `radius` around the origin.
pub fn sample_disc<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> (f64, f64) {
    // 1 - u keeps the radius strictly positive.
    let r = radius * (1.0 - rng.gen::<f64>()).sqrt();
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    (r * theta.cos(), r * theta.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    FrameArrival(usize),
    UplinkStart(usize),
    UplinkEnd(usize),
    Rx1Open(usize),
    Rx2Open(usize),
    DownlinkEnd(usize),
    AckTimeout(usize),
    Measurement,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event; ties go by insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Event {
            time,
            seq: self.next_seq,
            kind,
        });
        self.next_seq += 1;
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

/// One transmission on air, by a node or by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub node_id: usize,
    pub direction: Direction,
    /// Duty-cycle band the transmission was booked on.
    pub band: String,
    pub freq_hz: u32,
    pub sf: u8,
    pub tx_power_dbm: i8,
    pub start: f64,
    pub airtime: f64,
    pub attempt: u8,
    pub outcome: Outcome,
}

/// One receive window opened by a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub node_id: usize,
    pub slot: Slot,
    pub uplink_end: f64,
    pub open_at: f64,
    pub listen_s: f64,
    pub downlink: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub transmissions: Vec<TxRecord>,
    pub windows: Vec<WindowRecord>,
}

#[derive(Debug, Clone, Default)]
struct Cycle {
    channel: u32,
    uplink: Option<Packet>,
    plan: Option<DownlinkPlan>,
    rx1_listen: f64,
    busy_until: f64,
    received: u64,
    collided: u64,
    under_sensitivity: u64,
}

struct Streams {
    traffic: ChaCha8Rng,
    shadowing: ChaCha8Rng,
    timeout: ChaCha8Rng,
}

/// Node positions for a replication: fixed if configured, otherwise drawn.
pub fn place_nodes(cfg: &SimulationConfig, placement_seed: u64) -> Vec<(f64, f64)> {
    if let Some(pos) = &cfg.positions {
        return pos.iter().map(|p| (p[0], p[1])).collect();
    }
    (0..cfg.num_nodes)
        .map(|n| {
            sample_disc(
                cfg.cell_radius_m,
                &mut stream_rng(placement_seed, n, Stream::Placement),
            )
        })
        .collect()
}

/// Starting spreading factor of node `n`: fixed if configured, otherwise uniform over SF7..=SF12.
fn initial_sf(cfg: &SimulationConfig, placement_seed: u64, n: usize) -> u8 {
    cfg.initial_sf.unwrap_or_else(|| {
        // The placement stream's first two draws went to the position.
        let mut rng = stream_rng(placement_seed, n, Stream::Placement);
        rng.set_word_pos(1 << 20);
        rng.gen_range(MIN_SF..=MAX_SF)
    })
}

/// A single replication in progress.
pub struct Simulation<'a> {
    cfg: &'a SimulationConfig,
    replication: u64,
    seed: u64,
    nodes: Vec<Node>,
    gateway: Gateway,
    streams: Vec<Streams>,
    cycles: Vec<Cycle>,
    queue: EventQueue,
    air: Vec<Packet>,
    now: f64,
    next_packet_id: u64,
    snapshots: Vec<Snapshot>,
    trace: Option<Trace>,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a SimulationConfig, replication: u64) -> Result<Self> {
        cfg.validate()?;
        let seed = replication_seed(cfg.seed, replication);
        let placement_seed = if cfg.redraw_placement {
            seed
        } else {
            replication_seed(cfg.seed, u64::MAX)
        };
        let locations = place_nodes(cfg, placement_seed);

        let mut nodes = Vec::with_capacity(cfg.num_nodes);
        let mut streams = Vec::with_capacity(cfg.num_nodes);
        for (id, &location) in locations.iter().enumerate() {
            let sf = initial_sf(cfg, placement_seed, id);
            let params = LoRaParams::uplink(DataRate::from_sf(sf)?, cfg.initial_tx_power_dbm);
            let bands = cfg
                .channels_hz
                .iter()
                .enumerate()
                .map(|(i, &f)| Band::new(format!("g{i}"), cfg.node_duty_cycle, vec![f]))
                .collect::<Result<Vec<_>>>()?;
            let mut node = Node::new(id, location, params, cfg.lambda_bps, cfg.payload_len, bands)?;
            node.adr_enabled = cfg.adr_enabled;
            node.confirmed = cfg.confirmed;
            node.adr_ack_limit = cfg.mac.adr_ack_limit;
            nodes.push(node);
            streams.push(Streams {
                traffic: stream_rng(seed, id, Stream::Traffic),
                shadowing: stream_rng(seed, id, Stream::Shadowing),
                timeout: stream_rng(seed, id, Stream::Timeout),
            });
        }
        let gateway = Gateway::new(
            cfg.gateway.clone(),
            cfg.receiver.clone(),
            cfg.channels_hz.clone(),
            cfg.rx2_freq_hz,
            cfg.rx2_dr,
            cfg.num_nodes,
        )?;

        let mut sim = Simulation {
            cfg,
            replication,
            seed,
            cycles: vec![Cycle::default(); nodes.len()],
            nodes,
            gateway,
            streams,
            queue: EventQueue::default(),
            air: Vec::new(),
            now: 0.0,
            next_packet_id: 0,
            snapshots: Vec::new(),
            trace: None,
        };
        for n in 0..sim.nodes.len() {
            let t = sim.nodes[n].next_uplink_time(0.0, &mut sim.streams[n].traffic);
            sim.schedule_arrival(n, t);
        }
        if let Some(dt) = cfg.measurement_interval_s {
            if dt <= cfg.horizon_s() {
                sim.queue.push(dt, EventKind::Measurement);
            }
        }
        Ok(sim)
    }

    /// Records every transmission and receive window for later inspection.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Trace::default());
        self
    }

    fn horizon(&self) -> f64 {
        self.cfg.horizon_s()
    }

    fn schedule_arrival(&mut self, n: usize, t: f64) {
        if t < self.horizon() {
            self.queue.push(t, EventKind::FrameArrival(n));
        }
    }

    /// Drains the event queue and returns the run's metrics.
    pub fn run(mut self) -> Result<(RunMetrics, Option<Trace>)> {
        while let Some(ev) = self.queue.pop() {
            if ev.time < self.now {
                return Err(Error::invariant(format!(
                    "event at {} s popped after {} s",
                    ev.time, self.now
                )));
            }
            self.now = ev.time;
            match ev.kind {
                EventKind::FrameArrival(n) => self.on_arrival(n)?,
                EventKind::UplinkStart(n) => self.on_uplink_start(n)?,
                EventKind::UplinkEnd(n) => self.on_uplink_end(n)?,
                EventKind::Rx1Open(n) => self.on_rx1(n)?,
                EventKind::Rx2Open(n) => self.on_rx2(n)?,
                EventKind::DownlinkEnd(n) => self.on_downlink_end(n)?,
                EventKind::AckTimeout(n) => self.on_ack_timeout(n)?,
                EventKind::Measurement => self.on_measurement(),
            }
        }
        self.finish()
    }

    fn on_arrival(&mut self, n: usize) -> Result<()> {
        let next = self.nodes[n].next_uplink_time(self.now, &mut self.streams[n].traffic);
        self.schedule_arrival(n, next);
        self.nodes[n].enqueue_frame();
        if !self.nodes[n].is_busy() {
            self.start_next_frame(n);
        }
        Ok(())
    }

    fn start_next_frame(&mut self, n: usize) {
        if self.nodes[n].activate_next() {
            self.plan_uplink(n);
        }
    }

    /// Waits for the first channel with duty-cycle budget. Nothing new goes on
    /// air after the horizon; the pending frame is simply abandoned.
    fn plan_uplink(&mut self, n: usize) {
        let (freq, start) = self.nodes[n].select_channel(self.now);
        if start >= self.horizon() {
            return;
        }
        self.cycles[n].channel = freq;
        self.queue.push(start, EventKind::UplinkStart(n));
    }

    fn on_uplink_start(&mut self, n: usize) -> Result<()> {
        let cfg = self.cfg;
        let node = &mut self.nodes[n];
        let draw: f64 = self.streams[n].shadowing.sample(StandardNormal);
        let pl = cfg
            .propagation
            .path_loss(node.distance_to_origin(), cfg.propagation.sigma * draw)?;
        let tx = f64::from(node.params.tx_power_dbm);
        let link = LinkBudget {
            rss_dbm: tx - pl,
            snr_db: snr(
                tx,
                pl,
                f64::from(node.params.bw_hz),
                cfg.propagation.noise_figure_db,
            )?,
        };
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        let pkt = node.transmit(id, self.cycles[n].channel, self.now, link, &cfg.energy)?;
        self.queue.push(pkt.end(), EventKind::UplinkEnd(n));
        let cycle = &mut self.cycles[n];
        cycle.busy_until = pkt.end();
        cycle.uplink = Some(pkt.clone());
        self.air.push(pkt);
        Ok(())
    }

    fn on_uplink_end(&mut self, n: usize) -> Result<()> {
        let id = self.cycles[n]
            .uplink
            .as_ref()
            .ok_or_else(|| Error::invariant(format!("uplink end without uplink for node {n}")))?
            .id;
        let idx = self
            .air
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| Error::invariant(format!("packet {id} missing from the air")))?;
        let mut contenders = vec![self.air[idx].clone()];
        contenders.extend(
            self.air
                .iter()
                .filter(|q| q.id != id && q.overlaps(&self.air[idx]))
                .cloned(),
        );
        let outcome = arbitrate_collisions(&contenders, &self.cfg.receiver)?[0];
        self.air[idx].resolve(outcome)?;
        let pkt = self.air[idx].clone();

        let cycle = &mut self.cycles[n];
        match outcome {
            Outcome::Received => cycle.received += 1,
            Outcome::Collided => cycle.collided += 1,
            Outcome::UnderSensitivity => cycle.under_sensitivity += 1,
            Outcome::Pending => unreachable!("arbitration never leaves a packet pending"),
        }
        if let Some(trace) = &mut self.trace {
            let band = self.nodes[n]
                .bands
                .iter()
                .find(|b| b.contains(pkt.freq_hz))
                .map(|b| b.id.clone())
                .unwrap_or_default();
            trace.transmissions.push(tx_record(&pkt, band));
        }

        let plan = match self.gateway.receive_uplink(&pkt)? {
            Reception::Accepted { .. } => {
                let adr = if self.nodes[n].adr_enabled {
                    self.gateway.compute_adr(n, &pkt.params)?
                } else {
                    None
                };
                self.gateway
                    .schedule_downlink(&pkt, pkt.confirmed, adr, &self.cfg.energy)?
            }
            Reception::Rejected(_) => DownlinkPlan::Silent,
        };
        if let (Some(trace), DownlinkPlan::Scheduled(dl)) = (&mut self.trace, &plan) {
            let band = match dl.slot {
                Slot::Rx1 => self.gateway.rx1_band.id.clone(),
                Slot::Rx2 => self.gateway.rx2_band.id.clone(),
            };
            trace.transmissions.push(tx_record(&dl.packet, band));
        }
        let cycle = &mut self.cycles[n];
        cycle.plan = Some(plan);
        cycle.uplink = Some(pkt.clone());
        self.queue.push(
            pkt.end() + self.cfg.energy.rx_delay_s,
            EventKind::Rx1Open(n),
        );

        let cutoff = self.now - AIR_RETENTION_S;
        self.air
            .retain(|p| p.outcome == Outcome::Pending || p.end() > cutoff);
        Ok(())
    }

    fn scheduled_in(&self, n: usize, slot: Slot) -> Option<f64> {
        match &self.cycles[n].plan {
            Some(DownlinkPlan::Scheduled(dl)) if dl.slot == slot => Some(dl.packet.airtime),
            _ => None,
        }
    }

    fn record_window(&mut self, n: usize, slot: Slot, listen_s: f64, downlink: bool) {
        let uplink_end = self.cycles[n].uplink.as_ref().map_or(0.0, Packet::end);
        if let Some(trace) = &mut self.trace {
            trace.windows.push(WindowRecord {
                node_id: n,
                slot,
                uplink_end,
                open_at: self.now,
                listen_s,
                downlink,
            });
        }
    }

    fn on_rx1(&mut self, n: usize) -> Result<()> {
        let profile = &self.cfg.energy;
        let sf = self.uplink(n)?.params.sf;
        let bw = self.uplink(n)?.params.bw_hz;
        let downlink = self.scheduled_in(n, Slot::Rx1);
        let listen = match downlink {
            Some(airtime) => airtime,
            None => profile.rx_timeout_s(sf, bw)?,
        };
        self.nodes[n].open_rx1(profile, listen);
        self.cycles[n].rx1_listen = listen;
        self.cycles[n].busy_until = self.now + profile.rx_prep_s + listen;
        self.record_window(n, Slot::Rx1, listen, downlink.is_some());
        match downlink {
            Some(airtime) => self
                .queue
                .push(self.now + airtime, EventKind::DownlinkEnd(n)),
            None => {
                let at = self.uplink(n)?.end() + 2.0 * profile.rx_delay_s;
                self.queue.push(at, EventKind::Rx2Open(n));
            }
        }
        Ok(())
    }

    fn on_rx2(&mut self, n: usize) -> Result<()> {
        let profile = &self.cfg.energy;
        let bw = self.uplink(n)?.params.bw_hz;
        let downlink = self.scheduled_in(n, Slot::Rx2);
        let listen = match downlink {
            Some(airtime) => airtime,
            None => profile.rx_timeout_s(self.gateway.rx2_dr.sf(), bw)?,
        };
        self.nodes[n].open_rx2(profile, self.cycles[n].rx1_listen, listen);
        self.cycles[n].busy_until = self.now + profile.rx_prep_s + listen;
        self.record_window(n, Slot::Rx2, listen, downlink.is_some());
        match downlink {
            Some(airtime) => self
                .queue
                .push(self.now + airtime, EventKind::DownlinkEnd(n)),
            None => self.end_cycle(n, self.now + listen),
        }
        Ok(())
    }

    fn on_downlink_end(&mut self, n: usize) -> Result<()> {
        let dl = match self.cycles[n].plan.take() {
            Some(DownlinkPlan::Scheduled(dl)) => dl,
            _ => {
                return Err(Error::invariant(format!(
                    "node {n} got an unscheduled downlink"
                )))
            }
        };
        self.nodes[n].receive_downlink(&self.cfg.energy, dl.content, dl.slot);
        self.cycles[n].busy_until = self.now + self.cfg.energy.rx_post_s;
        self.end_cycle(n, self.now);
        Ok(())
    }

    /// Both windows are over; the frame is done unless it still awaits an acknowledgement.
    fn end_cycle(&mut self, n: usize, at: f64) {
        self.cycles[n].plan = None;
        let node = &mut self.nodes[n];
        if node.confirmed && node.is_busy() {
            let wait = node.ack_timeout(&self.cfg.mac, &mut self.streams[n].timeout);
            self.queue.push(at + wait, EventKind::AckTimeout(n));
            return;
        }
        if !node.confirmed {
            node.finish_unconfirmed(&self.cfg.mac);
        }
        self.start_next_frame(n);
    }

    fn on_ack_timeout(&mut self, n: usize) -> Result<()> {
        match self.nodes[n].handle_confirmed_timeout(&self.cfg.mac)? {
            RetryDecision::Retransmit { .. } => self.plan_uplink(n),
            RetryDecision::GiveUp => self.start_next_frame(n),
        }
        Ok(())
    }

    fn on_measurement(&mut self) {
        self.snapshots.push(Snapshot {
            time_s: self.now,
            unique_bytes_tx: self.nodes.iter().map(|n| n.counters.unique_bytes_tx).sum(),
            unique_bytes_rx: self.gateway.unique_bytes_rx.iter().sum(),
            active_energy_mj: self.nodes.iter().map(|n| n.ledger.active_energy_mj()).sum(),
        });
        if let Some(dt) = self.cfg.measurement_interval_s {
            let next = self.now + dt;
            if next <= self.horizon() {
                self.queue.push(next, EventKind::Measurement);
            }
        }
    }

    fn uplink(&self, n: usize) -> Result<&Packet> {
        self.cycles[n]
            .uplink
            .as_ref()
            .ok_or_else(|| Error::invariant(format!("node {n} has no uplink in progress")))
    }

    fn finish(mut self) -> Result<(RunMetrics, Option<Trace>)> {
        if let Some(p) = self.air.iter().find(|p| p.outcome == Outcome::Pending) {
            return Err(Error::invariant(format!(
                "packet {} never arbitrated",
                p.id
            )));
        }
        let horizon = self.horizon();
        let sleep_mw = self.cfg.energy.sleep_mw;
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (node, cycle) in self.nodes.iter_mut().zip(&self.cycles) {
            let window = horizon.max(cycle.busy_until);
            node.ledger.close(window, sleep_mw)?;
            let n = node.id;
            let m = NodeMetrics {
                node_id: n,
                distance_m: node.distance_to_origin(),
                final_sf: node.params.sf,
                final_tx_power_dbm: node.params.tx_power_dbm,
                unique_frames_tx: node.counters.unique_frames_tx,
                unique_bytes_tx: node.counters.unique_bytes_tx,
                unique_bytes_rx: self.gateway.unique_bytes_rx[n],
                frames_tx: node.counters.frames_tx,
                frames_received: cycle.received,
                frames_collided: cycle.collided,
                frames_under_sensitivity: cycle.under_sensitivity,
                retransmissions: node.counters.retransmissions,
                frames_unacked: node.counters.frames_unacked,
                acks_dropped: self.gateway.acks_dropped[n],
                downlinks_rx: node.counters.downlinks_rx,
                adr_commands_applied: node.counters.adr_commands_applied,
                adr_backoffs: node.counters.adr_backoffs,
                window_s: window,
                energy: node.ledger.clone(),
            };
            m.validate()?;
            nodes.push(m);
        }
        let metrics = RunMetrics {
            replication: self.replication,
            seed: self.seed,
            horizon_s: horizon,
            nodes,
            gateway: self.gateway.counters.clone(),
            snapshots: self.snapshots,
        };
        Ok((metrics, self.trace))
    }
}

fn tx_record(pkt: &Packet, band: String) -> TxRecord {
    TxRecord {
        node_id: pkt.node_id,
        direction: pkt.direction,
        band,
        freq_hz: pkt.freq_hz,
        sf: pkt.params.sf,
        tx_power_dbm: pkt.params.tx_power_dbm,
        start: pkt.start,
        airtime: pkt.airtime,
        attempt: pkt.attempt,
        outcome: pkt.outcome,
    }
}

/// Runs replication `replication` of `cfg`.
pub fn run(cfg: &SimulationConfig, replication: u64) -> Result<RunMetrics> {
    Ok(Simulation::new(cfg, replication)?.run()?.0)
}

/// Like [`run`], also returning the transmission and receive-window trace.
pub fn run_traced(cfg: &SimulationConfig, replication: u64) -> Result<(RunMetrics, Trace)> {
    let (metrics, trace) = Simulation::new(cfg, replication)?.with_trace().run()?;
    Ok((metrics, trace.unwrap_or_default()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub runs: Vec<RunMetrics>,
    pub summary: Summary,
}

/// Runs `cfg.replications` independent replications on the current rayon
/// pool. Results are collected in replication order, so they do not depend
/// on the number of worker threads.
pub fn monte_carlo(cfg: &SimulationConfig) -> Result<MonteCarlo> {
    cfg.validate()?;
    let runs = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|i| run(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&runs);
    Ok(MonteCarlo { runs, summary })
}

/// Results of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub monte_carlo: MonteCarlo,
}

/// Runs every cell of an experiment, one after another, each on the rayon pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<CellResult>> {
    spec.validate()?;
    spec.cells()
        .into_iter()
        .map(|cell| {
            let monte_carlo = monte_carlo(&cell.config)?;
            Ok(CellResult { cell, monte_carlo })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(num_nodes: usize, days: f64) -> SimulationConfig {
        SimulationConfig {
            num_nodes,
            horizon_days: days,
            replications: 2,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn queue_orders_by_time_then_insertion() {
        let mut q = EventQueue::default();
        q.push(2.0, EventKind::Measurement);
        q.push(1.0, EventKind::FrameArrival(1));
        q.push(1.0, EventKind::FrameArrival(0));
        assert_eq!(q.pop().unwrap().kind, EventKind::FrameArrival(1));
        assert_eq!(q.pop().unwrap().kind, EventKind::FrameArrival(0));
        assert_eq!(q.pop().unwrap().kind, EventKind::Measurement);
        assert!(q.pop().is_none());
    }

    #[test]
    fn replication_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> =
            (0..10_000).map(|i| replication_seed(7, i)).collect();
        assert_eq!(seeds.len(), 10_000);
    }

    #[test]
    fn disc_sampling_is_area_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..100_000)
            .map(|_| sample_disc(1000.0, &mut rng))
            .collect();
        assert!(pts
            .iter()
            .all(|&(x, y)| x.hypot(y) <= 1000.0 && x.hypot(y) > 0.0));
        // Half the area lies within R / sqrt(2).
        let inner = pts
            .iter()
            .filter(|&&(x, y)| x.hypot(y) < 1000.0 / 2f64.sqrt())
            .count();
        assert!((inner as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn mean_distance_is_two_thirds_of_the_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mean = (0..100_000)
            .map(|_| {
                let (x, y) = sample_disc(1000.0, &mut rng);
                x.hypot(y)
            })
            .sum::<f64>()
            / 1e5;
        assert!((mean / (2000.0 / 3.0) - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn adding_a_node_keeps_the_others_in_place() {
        let a = place_nodes(&small(5, 1.0), 9);
        let b = place_nodes(&small(6, 1.0), 9);
        assert_eq!(a[..], b[..5]);
        let c = small(5, 1.0);
        let d = small(6, 1.0);
        assert!((0..5).all(|n| initial_sf(&c, 9, n) == initial_sf(&d, 9, n)));
    }

    #[test]
    fn zero_nodes_runs_empty() {
        let m = run(&small(0, 1.0), 0).unwrap();
        assert!(m.nodes.is_empty());
        assert_eq!(m.der().unwrap(), 1.0);
    }

    #[test]
    fn zero_horizon_sends_nothing() {
        let m = run(&small(10, 0.0), 0).unwrap();
        assert_eq!(m.frames_tx(), 0);
        assert!(m.nodes.iter().all(|n| n.energy.total_energy_mj() == 0.0));
    }

    #[test]
    fn replay_is_bit_identical() {
        let cfg = small(20, 2.0);
        assert_eq!(run(&cfg, 1).unwrap(), run(&cfg, 1).unwrap());
        assert_ne!(run(&cfg, 1).unwrap(), run(&cfg, 2).unwrap());
    }

    #[test]
    fn single_node_at_sf7_close_in_gets_everything() {
        let cfg = SimulationConfig {
            positions: Some(vec![[100.0, 0.0]]),
            initial_sf: Some(7),
            adr_enabled: false,
            ..small(1, 5.0)
        };
        let m = run(&cfg, 0).unwrap();
        let n = &m.nodes[0];
        assert!(n.frames_tx > 80, "{}", n.frames_tx);
        assert_eq!(n.frames_collided, 0);
        assert_eq!(n.der().unwrap(), 1.0);
    }

    #[test]
    fn measurement_snapshots() {
        let cfg = SimulationConfig {
            measurement_interval_s: Some(86_400.0),
            ..small(5, 3.0)
        };
        let m = run(&cfg, 0).unwrap();
        assert_eq!(m.snapshots.len(), 3);
        assert!(m
            .snapshots
            .windows(2)
            .all(|w| w[0].unique_bytes_tx <= w[1].unique_bytes_tx));
    }

    #[test]
    fn monte_carlo_is_thread_count_invariant() {
        let cfg = small(10, 1.0);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| monte_carlo(&cfg)).unwrap();
        let b = four.install(|| monte_carlo(&cfg)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 2);
    }
}
