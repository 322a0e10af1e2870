//! Discrete-event simulation of the full model: MAP arrivals with phase
//! dynamics, general service, resource vectors and the semi-Markov
//! environment with flush-and-repair.
//!
//! Every replication draws from its own set of ChaCha streams, one per
//! stochastic element, so estimates are reproducible for a fixed seed no
//! matter how replications are spread over threads.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::environment::SemiMarkovEnvironment;
use crate::error::{Error, Result};
use crate::model::Model;

/// Replications handled by one parallel work item.
const CHUNK: usize = 64;
/// Fewest regeneration cycles accepted for stationary estimates.
pub const MIN_CYCLES: usize = 30;

const ARRIVALS: u64 = 0;
const SERVICE: u64 = 1;
const ENVIRONMENT: u64 = 2;
const RESOURCE_IN: u64 = 3;
const RESOURCE_OUT: u64 = 4;
const PHASE: u64 = 5;
const SAMPLING: u64 = 6;
const STREAMS: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub replications: usize,
    pub seed: u64,
    pub warmup: f64,
    pub horizon: f64,
    pub t_points: Vec<f64>,
    pub z_points: Vec<f64>,
    pub cutoff: usize,
    /// Spacing of the stationary histogram samples.
    pub sample_spacing: f64,
    /// Environment state whose post-repair entries delimit cycles.
    pub reference_state: usize,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replications: 1000,
            seed: 1,
            warmup: 10.0,
            horizon: 1000.0,
            t_points: vec![1.0, 2.0, 3.0],
            z_points: vec![0.0, 0.5],
            cutoff: 30,
            sample_spacing: 1.0,
            reference_state: 0,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    /// Sojourn ends; the system is flushed and a repair toward `target` starts.
    Environment { target: usize },
    /// Repair ends; the environment enters `target`.
    Repair { target: usize },
    Service { slot: usize, epoch: u64 },
    /// MAP phase transition, possibly with an arrival.
    Phase { epoch: u64 },
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            Self::Environment { .. } => 0,
            Self::Repair { .. } => 1,
            Self::Service { .. } => 2,
            Self::Phase { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    event: SimEvent,
    seq: u64,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so that the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .event
            .time
            .total_cmp(&self.event.time)
            .then(other.event.kind.priority().cmp(&self.event.kind.priority()))
            .then(other.seq.cmp(&self.seq))
    }
}

/// One line of the optional event trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: String,
    pub detail: String,
}

/// Jump table of one MAP phase: cumulative rates with destination and
/// arrival type.
#[derive(Debug, Clone)]
struct PhaseRow {
    total: f64,
    cum: Vec<f64>,
    moves: Vec<(usize, Option<usize>)>,
}

fn phase_rows(model: &Model) -> Vec<Vec<PhaseRow>> {
    model
        .states()
        .iter()
        .map(|s| {
            let map = s.map();
            let m = map.order();
            (0..m)
                .map(|p| {
                    let mut cum = Vec::new();
                    let mut moves = Vec::new();
                    let mut acc = 0.0;
                    for q in 0..m {
                        if q != p && map.d0()[(p, q)] > 0.0 {
                            acc += map.d0()[(p, q)];
                            cum.push(acc);
                            moves.push((q, None));
                        }
                    }
                    for (r, d) in map.marks().iter().enumerate() {
                        for q in 0..m {
                            if d[(p, q)] > 0.0 {
                                acc += d[(p, q)];
                                cum.push(acc);
                                moves.push((q, Some(r)));
                            }
                        }
                    }
                    PhaseRow {
                        total: acc,
                        cum,
                        moves,
                    }
                })
                .collect()
        })
        .collect()
}

fn categorical<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn stream(seed: u64, rep: u64, element: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep * STREAMS + element);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EnvPhase {
    Working(usize),
    Repairing { target: usize },
}

#[derive(Debug, Clone)]
struct Customer {
    ty: usize,
    zeta: Vec<f64>,
}

/// State of one replication.
struct Engine<'a> {
    model: &'a Model,
    rows: &'a [Vec<PhaseRow>],
    arrivals_rng: ChaCha8Rng,
    service_rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
    res_in_rng: ChaCha8Rng,
    res_out_rng: ChaCha8Rng,
    phase_rng: ChaCha8Rng,
    heap: BinaryHeap<Queued>,
    seq: u64,
    clock: f64,
    env: EnvPhase,
    phase: usize,
    epoch: u64,
    slots: Vec<Option<Customer>>,
    free: Vec<usize>,
    in_service: Vec<u64>,
    /// `α` per type and component.
    alpha: Vec<Vec<f64>>,
    /// `β` per type and component, over the whole run.
    beta: Vec<Vec<f64>>,
    arrivals: Vec<u64>,
    served: Vec<u64>,
    destroyed: Vec<u64>,
    cycle_arrivals: Vec<u64>,
    cycle_served: Vec<u64>,
    cycle_destroyed: Vec<u64>,
    env_cycles: u64,
    checks: u64,
    hasher: Sha256,
    trace: Option<Vec<TraceRecord>>,
}

/// What the last processed event did, for the callers' bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Flushed,
    Entered(usize),
    Other,
}

impl<'a> Engine<'a> {
    fn new(model: &'a Model, rows: &'a [Vec<PhaseRow>], seed: u64, rep: u64, trace: bool) -> Self {
        let k = model.types();
        let kres = model.resources();
        let mut eng = Self {
            model,
            rows,
            arrivals_rng: stream(seed, rep, ARRIVALS),
            service_rng: stream(seed, rep, SERVICE),
            env_rng: stream(seed, rep, ENVIRONMENT),
            res_in_rng: stream(seed, rep, RESOURCE_IN),
            res_out_rng: stream(seed, rep, RESOURCE_OUT),
            phase_rng: stream(seed, rep, PHASE),
            heap: BinaryHeap::new(),
            seq: 0,
            clock: 0.0,
            env: EnvPhase::Working(0),
            phase: 0,
            epoch: 0,
            slots: Vec::new(),
            free: Vec::new(),
            in_service: vec![0; k],
            alpha: vec![vec![0.0; kres]; k],
            beta: vec![vec![0.0; kres]; k],
            arrivals: vec![0; k],
            served: vec![0; k],
            destroyed: vec![0; k],
            cycle_arrivals: vec![0; k],
            cycle_served: vec![0; k],
            cycle_destroyed: vec![0; k],
            env_cycles: 0,
            checks: 0,
            hasher: Sha256::new(),
            trace: trace.then(Vec::new),
        };
        let start = categorical(&mut eng.env_rng, model.environment().initial());
        eng.enter(start);
        eng
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Queued {
            event: SimEvent { time, kind },
            seq: self.seq,
        });
    }

    fn peek_time(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |q| q.event.time)
    }

    fn state(&self) -> Option<usize> {
        match self.env {
            EnvPhase::Working(i) => Some(i),
            EnvPhase::Repairing { .. } => None,
        }
    }

    /// Starts a sojourn in `i` with an empty system and a fresh phase.
    fn enter(&mut self, i: usize) {
        self.env = EnvPhase::Working(i);
        let pi = self.model.state(i).pi();
        self.phase = categorical(&mut self.phase_rng, pi);
        self.schedule_phase();
        let env = self.model.environment();
        if !env.is_absorbing() {
            let weights: Vec<f64> = env.kernel()[i].iter().map(|e| e.weight).collect();
            let target = categorical(&mut self.env_rng, &weights);
            let sojourn = env.kernel()[i][target].law.sample(&mut self.env_rng);
            self.push(self.clock + sojourn, EventKind::Environment { target });
        }
    }

    fn schedule_phase(&mut self) {
        let Some(i) = self.state() else { return };
        let rate = self.rows[i][self.phase].total;
        if rate > 0.0 {
            let dt = Exp::new(rate).expect("positive rate").sample(&mut self.arrivals_rng);
            self.push(self.clock + dt, EventKind::Phase { epoch: self.epoch });
        }
    }

    fn record(&mut self, code: u8, detail: u64, text: impl FnOnce() -> (String, String)) {
        self.hasher.update(self.clock.to_bits().to_le_bytes());
        self.hasher.update([code]);
        self.hasher.update(detail.to_le_bytes());
        if let Some(tr) = self.trace.as_mut() {
            let (kind, detail) = text();
            tr.push(TraceRecord {
                time: self.clock,
                kind,
                detail,
            });
        }
    }

    fn conservation(&mut self) -> Result<()> {
        for r in 0..self.in_service.len() {
            let accounted = self.cycle_served[r] + self.in_service[r] + self.cycle_destroyed[r];
            if self.cycle_arrivals[r] != accounted {
                return Err(Error::Numerical(format!(
                    "conservation violated for type {r} at t = {}: {} arrivals, {} served, {} in service, {} destroyed",
                    self.clock, self.cycle_arrivals[r], self.cycle_served[r], self.in_service[r], self.cycle_destroyed[r]
                )));
            }
        }
        self.checks += 1;
        Ok(())
    }

    fn process_next(&mut self) -> Result<Outcome> {
        let Some(q) = self.heap.pop() else {
            return Ok(Outcome::Other);
        };
        let ev = q.event;
        if ev.time < self.clock {
            return Err(Error::Numerical(format!(
                "event at {} processed after clock {}",
                ev.time, self.clock
            )));
        }
        self.clock = ev.time;
        match ev.kind {
            EventKind::Environment { target } => {
                // Flush: every customer in service is destroyed.
                let mut lost = Vec::with_capacity(self.in_service.len());
                for r in 0..self.in_service.len() {
                    self.destroyed[r] += self.in_service[r];
                    self.cycle_destroyed[r] += self.in_service[r];
                    lost.push(self.in_service[r]);
                    self.in_service[r] = 0;
                }
                self.conservation()?;
                for r in 0..self.in_service.len() {
                    self.cycle_arrivals[r] = 0;
                    self.cycle_served[r] = 0;
                    self.cycle_destroyed[r] = 0;
                    self.alpha[r].iter_mut().for_each(|a| *a = 0.0);
                }
                self.slots.clear();
                self.free.clear();
                self.epoch += 1;
                self.env_cycles += 1;
                self.env = EnvPhase::Repairing { target };
                let repair = self.model.environment().repair()[target].sample(&mut self.env_rng);
                self.push(self.clock + repair, EventKind::Repair { target });
                self.record(0, target as u64, || ("environment".into(), format!("target={target} lost={lost:?}")));
                Ok(Outcome::Flushed)
            }
            EventKind::Repair { target } => {
                self.record(1, target as u64, || ("repair".into(), format!("target={target}")));
                self.enter(target);
                Ok(Outcome::Entered(target))
            }
            EventKind::Service { slot, epoch } => {
                if epoch != self.epoch {
                    return Ok(Outcome::Other);
                }
                let c = self.slots[slot].take().expect("live customer");
                self.free.push(slot);
                let r = c.ty;
                self.in_service[r] -= 1;
                self.served[r] += 1;
                self.cycle_served[r] += 1;
                for (a, z) in self.alpha[r].iter_mut().zip(&c.zeta) {
                    *a -= z;
                }
                if self.in_service[r] == 0 {
                    self.alpha[r].iter_mut().for_each(|a| *a = 0.0);
                }
                let i = self.state().expect("service completes only while working");
                let sigma = self.model.state(i).departure_resources()[r].sample(&mut self.res_out_rng);
                for (b, s) in self.beta[r].iter_mut().zip(sigma) {
                    *b += s;
                }
                self.record(2, r as u64, || ("service".into(), format!("type={r}")));
                Ok(Outcome::Other)
            }
            EventKind::Phase { epoch } => {
                if epoch != self.epoch {
                    return Ok(Outcome::Other);
                }
                let i = self.state().expect("phase moves only while working");
                let row = &self.rows[i][self.phase];
                let u = self.arrivals_rng.random::<f64>() * row.total;
                let pick = row.cum.partition_point(|c| *c <= u).min(row.moves.len() - 1);
                let (dest, mark) = row.moves[pick];
                self.phase = dest;
                if let Some(r) = mark {
                    let st = self.model.state(i);
                    let service = st.service()[r].sample(&mut self.service_rng);
                    let zeta = st.arrival_resources()[r].sample(&mut self.res_in_rng);
                    for (a, z) in self.alpha[r].iter_mut().zip(&zeta) {
                        *a += z;
                    }
                    let c = Customer { ty: r, zeta };
                    let slot = match self.free.pop() {
                        Some(s) => {
                            self.slots[s] = Some(c);
                            s
                        }
                        None => {
                            self.slots.push(Some(c));
                            self.slots.len() - 1
                        }
                    };
                    self.in_service[r] += 1;
                    self.arrivals[r] += 1;
                    self.cycle_arrivals[r] += 1;
                    self.push(self.clock + service, EventKind::Service { slot, epoch: self.epoch });
                }
                self.record(3, mark.map_or(u64::MAX, |r| r as u64), || {
                    ("phase".into(), format!("to={dest} arrival={mark:?}"))
                });
                self.schedule_phase();
                debug_assert!(self.alpha_consistent());
                Ok(Outcome::Other)
            }
        }
    }

    fn alpha_consistent(&self) -> bool {
        let kres = self.model.resources();
        let mut sums = vec![vec![0.0; kres]; self.in_service.len()];
        for c in self.slots.iter().flatten() {
            for (s, z) in sums[c.ty].iter_mut().zip(&c.zeta) {
                *s += z;
            }
        }
        sums.iter()
            .zip(&self.alpha)
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs())))
    }

    fn total_in_service(&self) -> u64 {
        self.in_service.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub key: String,
    pub mean: f64,
    pub stderr: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub cutoff: usize,
    /// Joint counts on `n_r <= cutoff`, type 0 the slowest index.
    pub counts: Vec<u64>,
    pub overflow: u64,
    pub samples: u64,
}

impl Histogram {
    /// Total-variation distance to a distribution on the same box; mass of
    /// either side outside the box counts fully.
    pub fn tv_distance(&self, p: &[f64]) -> f64 {
        let n = self.samples as f64;
        let inside: f64 = self
            .counts
            .iter()
            .zip(p)
            .map(|(c, q)| (*c as f64 / n - q).abs())
            .sum();
        let outside_p = (1.0 - p.iter().sum::<f64>()).max(0.0);
        0.5 * (inside + (self.overflow as f64 / n - outside_p).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSet {
    pub mode: String,
    pub seed: u64,
    pub replications: usize,
    pub cycles: usize,
    pub estimates: Vec<Estimate>,
    pub histogram: Option<Histogram>,
    pub trace_hash: String,
    pub conservation_checks: u64,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

impl EstimateSet {
    pub fn get(&self, key: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.key == key)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimates serialize")
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("time,kind,detail\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{},\"{}\"", r.time, r.kind, r.detail);
        }
        out
    }
}

fn validate(model: &Model, cfg: &SimConfig) -> Result<()> {
    if cfg.replications < 2 {
        return Err(Error::invalid(
            "invalid-parameter",
            "simulation.replications",
            format!("at least 2 replications are needed, got {}", cfg.replications),
        ));
    }
    for &z in &cfg.z_points {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::invalid(
                "invalid-parameter",
                "simulation.z_points",
                format!("z points must lie in [0, 1], got {z}"),
            ));
        }
    }
    if cfg.reference_state >= model.environment().states() {
        return Err(Error::invalid(
            "invalid-parameter",
            "simulation.reference_state",
            "reference state out of range",
        ));
    }
    Ok(())
}

/// Power sums `n, Σx, Σx², Σx³, Σx⁴` per observed quantity.
#[derive(Debug, Clone)]
struct Sums(Vec<[f64; 5]>);

impl Sums {
    fn new(n: usize) -> Self {
        Self(vec![[0.0; 5]; n])
    }

    fn add(&mut self, i: usize, x: f64) {
        let s = &mut self.0[i];
        let x2 = x * x;
        s[0] += 1.0;
        s[1] += x;
        s[2] += x2;
        s[3] += x2 * x;
        s[4] += x2 * x2;
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn mean(&self, i: usize) -> (f64, f64, u64) {
        let [n, s1, s2, _, _] = self.0[i];
        let m = s1 / n;
        let var = ((s2 - n * m * m) / (n - 1.0)).max(0.0);
        (m, (var / n).sqrt(), n as u64)
    }

    /// Sample variance and its delta-method standard error.
    fn variance(&self, i: usize) -> (f64, f64, u64) {
        let [n, s1, s2, s3, s4] = self.0[i];
        let m = s1 / n;
        let m2 = (s2 / n - m * m).max(0.0);
        let m4 = s4 / n - 4.0 * m * s3 / n + 6.0 * m * m * s2 / n - 3.0 * m.powi(4);
        let var = m2 * n / (n - 1.0);
        (var, ((m4 - m2 * m2).max(0.0) / n).sqrt(), n as u64)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn chunks(replications: usize) -> Vec<(usize, usize)> {
    (0..replications)
        .step_by(CHUNK)
        .map(|a| (a, (a + CHUNK).min(replications)))
        .collect()
}

/// Transient estimates at the requested times from `R` independent
/// replications started empty.
pub fn simulate_transient(model: &Model, cfg: &SimConfig) -> Result<EstimateSet> {
    validate(model, cfg)?;
    if cfg.t_points.is_empty() {
        return Err(Error::invalid("invalid-parameter", "simulation.t_points", "no observation times"));
    }
    for &t in &cfg.t_points {
        if !(t >= 0.0) || t > cfg.horizon {
            return Err(Error::Domain(format!(
                "observation time {t} outside [0, {}] (simulation horizon)",
                cfg.horizon
            )));
        }
    }
    let k = model.types();
    let kres = model.resources();
    let mut times = cfg.t_points.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    // Per time: N_r, α_rc, z^N, served_r, arrivals_r, destroyed_r.
    let per_time = k + k * kres + cfg.z_points.len() + 3 * k;
    let rows = phase_rows(model);
    let results: Vec<(Sums, Vec<[u8; 32]>, u64, Vec<TraceRecord>)> = chunks(cfg.replications)
        .into_par_iter()
        .map(|(a, b)| {
            let mut sums = Sums::new(per_time * times.len());
            let mut hashes = Vec::with_capacity(b - a);
            let mut checks = 0;
            let mut trace = Vec::new();
            for rep in a..b {
                let mut eng = Engine::new(model, &rows, cfg.seed, rep as u64, cfg.trace && rep == 0);
                for (ti, &t) in times.iter().enumerate() {
                    while eng.peek_time() <= t {
                        eng.process_next()?;
                    }
                    let base = ti * per_time;
                    let mut idx = base;
                    for r in 0..k {
                        sums.add(idx, eng.in_service[r] as f64);
                        idx += 1;
                    }
                    for r in 0..k {
                        for c in 0..kres {
                            sums.add(idx, eng.alpha[r][c]);
                            idx += 1;
                        }
                    }
                    let total = eng.total_in_service();
                    for &z in &cfg.z_points {
                        sums.add(idx, z.powi(total.min(i32::MAX as u64) as i32));
                        idx += 1;
                    }
                    for r in 0..k {
                        sums.add(idx, eng.served[r] as f64);
                        sums.add(idx + k, eng.arrivals[r] as f64);
                        sums.add(idx + 2 * k, eng.destroyed[r] as f64);
                        idx += 1;
                    }
                }
                eng.conservation()?;
                checks += eng.checks;
                hashes.push(eng.hasher.finalize().into());
                if let Some(tr) = eng.trace.take() {
                    trace = tr;
                }
            }
            Ok((sums, hashes, checks, trace))
        })
        .collect::<Result<_>>()?;
    let mut sums = Sums::new(per_time * times.len());
    let mut hasher = Sha256::new();
    let mut checks = 0;
    let mut trace = Vec::new();
    for (s, hs, c, tr) in results {
        sums.merge(&s);
        for h in hs {
            hasher.update(h);
        }
        checks += c;
        if !tr.is_empty() {
            trace = tr;
        }
    }
    let mut estimates = Vec::new();
    let push = |key: String, (mean, stderr, count): (f64, f64, u64), out: &mut Vec<Estimate>| {
        out.push(Estimate {
            key,
            mean,
            stderr,
            count,
        })
    };
    for (ti, t) in times.iter().enumerate() {
        let base = ti * per_time;
        for r in 0..k {
            push(format!("queue_mean.type{r}@t={t}"), sums.mean(base + r), &mut estimates);
            push(format!("queue_var.type{r}@t={t}"), sums.variance(base + r), &mut estimates);
            for c in 0..kres {
                push(
                    format!("resource_mean.type{r}.comp{c}@t={t}"),
                    sums.mean(base + k + r * kres + c),
                    &mut estimates,
                );
            }
        }
        let zb = base + k + k * kres;
        for (zi, z) in cfg.z_points.iter().enumerate() {
            push(format!("pgf.z={z}@t={t}"), sums.mean(zb + zi), &mut estimates);
        }
        let cb = zb + cfg.z_points.len();
        for r in 0..k {
            push(format!("served.type{r}@t={t}"), sums.mean(cb + r), &mut estimates);
            push(format!("arrivals.type{r}@t={t}"), sums.mean(cb + k + r), &mut estimates);
            push(format!("destroyed.type{r}@t={t}"), sums.mean(cb + 2 * k + r), &mut estimates);
        }
    }
    Ok(EstimateSet {
        mode: "transient".into(),
        seed: cfg.seed,
        replications: cfg.replications,
        cycles: 0,
        estimates,
        histogram: None,
        trace_hash: hex(&hasher.finalize()),
        conservation_checks: checks,
        trace,
    })
}

/// Time integrals over one regeneration cycle (or one replication when the
/// environment never changes).
#[derive(Debug, Clone)]
struct CycleRecord {
    length: f64,
    /// `∫N_r`, `∫N_r²`, `∫α_rc`, `∫z^N`, destroyed_r, time per state,
    /// environment cycles.
    values: Vec<f64>,
}

struct StationaryLayout {
    k: usize,
    kres: usize,
    nz: usize,
    d: usize,
}

impl StationaryLayout {
    fn len(&self) -> usize {
        2 * self.k + self.k * self.kres + self.nz + self.k + self.d + 1
    }
}

fn accumulate(eng: &Engine, dt: f64, z_points: &[f64], lay: &StationaryLayout, acc: &mut [f64], last_state: usize) {
    if dt <= 0.0 {
        return;
    }
    let k = lay.k;
    for r in 0..k {
        let n = eng.in_service[r] as f64;
        acc[r] += n * dt;
        acc[k + r] += n * n * dt;
        for c in 0..lay.kres {
            acc[2 * k + r * lay.kres + c] += eng.alpha[r][c] * dt;
        }
    }
    let total = eng.total_in_service();
    let zb = 2 * k + k * lay.kres;
    for (zi, z) in z_points.iter().enumerate() {
        acc[zb + zi] += z.powi(total.min(i32::MAX as u64) as i32) * dt;
    }
    // Repair time is attributed to the state whose sojourn preceded it.
    let sb = zb + lay.nz + k;
    acc[sb + last_state] += dt;
}

/// Long-run estimates from regeneration cycles delimited by post-repair
/// entries into the reference state; with an absorbing environment each
/// replication contributes one time average after the warmup.
pub fn simulate_stationary(model: &Model, cfg: &SimConfig) -> Result<EstimateSet> {
    validate(model, cfg)?;
    if !(cfg.horizon > 0.0) || !(cfg.warmup >= 0.0) {
        return Err(Error::invalid(
            "invalid-parameter",
            "simulation.horizon",
            "horizon must be positive and warmup nonnegative",
        ));
    }
    if !(cfg.sample_spacing > 0.0) {
        return Err(Error::invalid("invalid-parameter", "simulation.sample_spacing", "spacing must be positive"));
    }
    let env = model.environment();
    let absorbing = env.is_absorbing();
    let lay = StationaryLayout {
        k: model.types(),
        kres: model.resources(),
        nz: cfg.z_points.len(),
        d: env.states(),
    };
    let k = lay.k;
    let box_len = (cfg.cutoff + 1).pow(k as u32);
    let rows = phase_rows(model);
    let end = cfg.warmup + cfg.horizon;
    type ChunkOut = (Vec<CycleRecord>, Vec<u64>, u64, u64, Vec<[u8; 32]>, u64, Vec<TraceRecord>);
    let results: Vec<ChunkOut> = chunks(cfg.replications)
        .into_par_iter()
        .map(|(a, b)| {
            let mut cycles = Vec::new();
            let mut hist = vec![0u64; box_len];
            let mut overflow = 0u64;
            let mut samples = 0u64;
            let mut hashes = Vec::new();
            let mut checks = 0;
            let mut trace = Vec::new();
            for rep in a..b {
                let mut eng = Engine::new(model, &rows, cfg.seed, rep as u64, cfg.trace && rep == 0);
                let mut sampler = stream(cfg.seed, rep as u64, SAMPLING);
                let mut next_sample = cfg.warmup + cfg.sample_spacing * sampler.random::<f64>();
                let mut last_state = eng.state().unwrap_or(0);
                let mut open: Option<(f64, Vec<f64>)> = if absorbing {
                    None
                } else if eng.state() == Some(cfg.reference_state) && cfg.warmup == 0.0 {
                    Some((0.0, vec![0.0; lay.len()]))
                } else {
                    None
                };
                let mut avg = vec![0.0; lay.len()];
                // Past `end` an open cycle is run to completion: stopping at the
                // first regeneration after `end` keeps the pooled ratio
                // estimator consistent, while dropping the straddling cycle
                // would favour short cycles.
                loop {
                    let next = eng.peek_time();
                    let te = next.min(end);
                    // Histogram samples while the state is constant.
                    while next_sample < te {
                        let mut idx = 0usize;
                        let mut over = false;
                        for r in 0..k {
                            let n = eng.in_service[r] as usize;
                            over |= n > cfg.cutoff;
                            idx = idx * (cfg.cutoff + 1) + n.min(cfg.cutoff);
                        }
                        if over {
                            overflow += 1;
                        } else {
                            hist[idx] += 1;
                        }
                        samples += 1;
                        next_sample += cfg.sample_spacing;
                    }
                    if absorbing {
                        let from = eng.clock.max(cfg.warmup);
                        if te > from {
                            accumulate(&eng, te - from, &cfg.z_points, &lay, &mut avg, 0);
                        }
                    } else if let Some((_, acc)) = open.as_mut() {
                        accumulate(&eng, next - eng.clock, &cfg.z_points, &lay, acc, last_state);
                    }
                    if next > end && (absorbing || open.is_none()) {
                        break;
                    }
                    let before = eng.destroyed.clone();
                    let outcome = eng.process_next()?;
                    if let Some((_, acc)) = open.as_mut() {
                        let db = 2 * k + k * lay.kres + lay.nz;
                        for r in 0..k {
                            acc[db + r] += (eng.destroyed[r] - before[r]) as f64;
                        }
                        if outcome == Outcome::Flushed {
                            acc[lay.len() - 1] += 1.0;
                        }
                    }
                    if let Outcome::Entered(j) = outcome {
                        last_state = j;
                        if j == cfg.reference_state && eng.clock >= cfg.warmup {
                            if let Some((start, acc)) = open.take() {
                                cycles.push(CycleRecord {
                                    length: eng.clock - start,
                                    values: acc,
                                });
                            }
                            if eng.clock > end {
                                break;
                            }
                            open = Some((eng.clock, vec![0.0; lay.len()]));
                        }
                    }
                }
                if absorbing {
                    cycles.push(CycleRecord {
                        length: cfg.horizon,
                        values: avg,
                    });
                }
                eng.conservation()?;
                checks += eng.checks;
                hashes.push(eng.hasher.finalize().into());
                if let Some(tr) = eng.trace.take() {
                    trace = tr;
                }
            }
            Ok((cycles, hist, overflow, samples, hashes, checks, trace))
        })
        .collect::<Result<_>>()?;

    let mut cycles = Vec::new();
    let mut hist = vec![0u64; box_len];
    let mut overflow = 0;
    let mut samples = 0;
    let mut hasher = Sha256::new();
    let mut checks = 0;
    let mut trace = Vec::new();
    for (c, h, o, s, hs, ch, tr) in results {
        cycles.extend(c);
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
        overflow += o;
        samples += s;
        for x in hs {
            hasher.update(x);
        }
        checks += ch;
        if !tr.is_empty() {
            trace = tr;
        }
    }
    if cycles.len() < MIN_CYCLES {
        return Err(Error::InsufficientData(format!(
            "only {} regeneration cycles observed; at least {MIN_CYCLES} are needed (lengthen the horizon or add replications)",
            cycles.len()
        )));
    }
    let estimates = ratio_estimates(&cycles, &lay, &cfg.z_points);
    Ok(EstimateSet {
        mode: "stationary".into(),
        seed: cfg.seed,
        replications: cfg.replications,
        cycles: cycles.len(),
        estimates,
        histogram: Some(Histogram {
            cutoff: cfg.cutoff,
            counts: hist,
            overflow,
            samples,
        }),
        trace_hash: hex(&hasher.finalize()),
        conservation_checks: checks,
        trace,
    })
}

/// Ratio estimators `ΣY / Στ` with delta-method standard errors from the
/// per-cycle influence values `(Y_i - θ τ_i) / τ̄`.
fn ratio_estimates(cycles: &[CycleRecord], lay: &StationaryLayout, z_points: &[f64]) -> Vec<Estimate> {
    let n = cycles.len() as f64;
    let tau_bar = cycles.iter().map(|c| c.length).sum::<f64>() / n;
    let theta = |i: usize| cycles.iter().map(|c| c.values[i]).sum::<f64>() / (n * tau_bar);
    let influence = |i: usize, th: f64| -> Vec<f64> {
        cycles.iter().map(|c| (c.values[i] - th * c.length) / tau_bar).collect()
    };
    let se = |psi: &[f64]| (psi.iter().map(|x| x * x).sum::<f64>() / (n * (n - 1.0))).sqrt();
    let count = cycles.len() as u64;
    let k = lay.k;
    let mut out = Vec::new();
    let mut add = |key: String, mean: f64, stderr: f64| {
        out.push(Estimate {
            key,
            mean,
            stderr,
            count,
        })
    };
    for r in 0..k {
        let t1 = theta(r);
        let p1 = influence(r, t1);
        add(format!("L_q.type{r}"), t1, se(&p1));
        let t2 = theta(k + r);
        let p2 = influence(k + r, t2);
        let pv: Vec<f64> = p2.iter().zip(&p1).map(|(a, b)| a - 2.0 * t1 * b).collect();
        add(format!("queue_var.type{r}"), t2 - t1 * t1, se(&pv));
        for c in 0..lay.kres {
            let i = 2 * k + r * lay.kres + c;
            let t = theta(i);
            add(format!("delta.type{r}.comp{c}"), t, se(&influence(i, t)));
        }
    }
    let zb = 2 * k + k * lay.kres;
    for (zi, z) in z_points.iter().enumerate() {
        let t = theta(zb + zi);
        add(format!("pgf.z={z}"), t, se(&influence(zb + zi, t)));
    }
    let db = zb + lay.nz;
    let cyc = lay.len() - 1;
    let env_cycles: f64 = cycles.iter().map(|c| c.values[cyc]).sum();
    for r in 0..k {
        let t = theta(db + r);
        add(format!("L_los.type{r}"), t, se(&influence(db + r, t)));
        if env_cycles > 0.0 {
            // Per environment cycle: ratio of destroyed to completed cycles.
            let c_bar = env_cycles / n;
            let th = cycles.iter().map(|c| c.values[db + r]).sum::<f64>() / env_cycles;
            let psi: Vec<f64> = cycles.iter().map(|c| (c.values[db + r] - th * c.values[cyc]) / c_bar).collect();
            add(format!("L_los_per_cycle.type{r}"), th, se(&psi));
        }
    }
    let sb = db + k;
    for i in 0..lay.d {
        let t = theta(sb + i);
        add(format!("occupancy.state{i}"), t, se(&influence(sb + i, t)));
    }
    out
}

/// Renewal-count estimates `H_ij(t)` for the environment alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvironmentEstimates {
    pub t_points: Vec<f64>,
    /// `h[i][j][m]`: mean entries into `j` by `t_m` starting in `i`.
    pub h: Vec<Vec<Vec<f64>>>,
    pub stderr: Vec<Vec<Vec<f64>>>,
    pub replications: usize,
}

/// Next state and the time the next sojourn starts (sojourn plus repair).
fn env_step<R: Rng>(env: &SemiMarkovEnvironment, i: usize, rng: &mut R) -> (usize, f64, f64) {
    let weights: Vec<f64> = env.kernel()[i].iter().map(|e| e.weight).collect();
    let j = categorical(rng, &weights);
    let sojourn = env.kernel()[i][j].law.sample(rng);
    let repair = env.repair()[j].sample(rng);
    (j, sojourn, repair)
}

pub fn simulate_environment_only(
    env: &SemiMarkovEnvironment,
    t_points: &[f64],
    replications: usize,
    seed: u64,
) -> Result<EnvironmentEstimates> {
    if replications < 2 {
        return Err(Error::invalid("invalid-parameter", "simulation.replications", "at least 2 replications are needed"));
    }
    if env.is_absorbing() {
        return Err(Error::Domain("the absorbing environment has no renewals".into()));
    }
    let d = env.states();
    let t_max = t_points.iter().copied().fold(0.0, f64::max);
    let mut h = vec![vec![vec![0.0; t_points.len()]; d]; d];
    let mut stderr = h.clone();
    for i in 0..d {
        let parts: Vec<Sums> = chunks(replications)
            .into_par_iter()
            .map(|(a, b)| {
                let mut sums = Sums::new(d * t_points.len());
                for rep in a..b {
                    let mut rng = stream(seed, (i * replications + rep) as u64, ENVIRONMENT);
                    let mut entries: Vec<f64> = Vec::new();
                    let mut states = Vec::new();
                    let mut clock = 0.0;
                    let mut cur = i;
                    while clock <= t_max {
                        let (j, s, u) = env_step(env, cur, &mut rng);
                        clock += s + u;
                        entries.push(clock);
                        states.push(j);
                        cur = j;
                    }
                    for j in 0..d {
                        for (m, &t) in t_points.iter().enumerate() {
                            let n = entries
                                .iter()
                                .zip(&states)
                                .filter(|(e, s)| **e <= t && **s == j)
                                .count();
                            sums.add(j * t_points.len() + m, n as f64);
                        }
                    }
                }
                sums
            })
            .collect();
        let mut sums = Sums::new(d * t_points.len());
        for p in &parts {
            sums.merge(p);
        }
        for j in 0..d {
            for m in 0..t_points.len() {
                let (mean, se, _) = sums.mean(j * t_points.len() + m);
                h[i][j][m] = mean;
                stderr[i][j][m] = se;
            }
        }
    }
    Ok(EnvironmentEstimates {
        t_points: t_points.to_vec(),
        h,
        stderr,
        replications,
    })
}

/// Long-run fraction of time in each state (its sojourn plus the repair
/// that follows) over `transitions` jumps, from cycles between successive
/// entries into state 0. Returns `(fraction, stderr)` per state.
pub fn simulate_occupancy(env: &SemiMarkovEnvironment, transitions: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if env.is_absorbing() {
        return Err(Error::Domain("the absorbing environment has no renewals".into()));
    }
    let d = env.states();
    let mut rng = stream(seed, 0, ENVIRONMENT);
    let mut cycles: Vec<CycleRecord> = Vec::new();
    let mut acc = vec![0.0; d];
    let mut length = 0.0;
    let mut cur = 0;
    for _ in 0..transitions {
        let (j, s, u) = env_step(env, cur, &mut rng);
        acc[cur] += s + u;
        length += s + u;
        if j == 0 {
            cycles.push(CycleRecord {
                length,
                values: std::mem::replace(&mut acc, vec![0.0; d]),
            });
            length = 0.0;
        }
        cur = j;
    }
    if cycles.len() < MIN_CYCLES {
        return Err(Error::InsufficientData(format!(
            "only {} returns to state 0 in {transitions} transitions",
            cycles.len()
        )));
    }
    let n = cycles.len() as f64;
    let tau_bar = cycles.iter().map(|c| c.length).sum::<f64>() / n;
    Ok((0..d)
        .map(|i| {
            let th = cycles.iter().map(|c| c.values[i]).sum::<f64>() / (n * tau_bar);
            let ss: f64 = cycles
                .iter()
                .map(|c| ((c.values[i] - th * c.length) / tau_bar).powi(2))
                .sum();
            (th, (ss / (n * (n - 1.0))).sqrt())
        })
        .collect())
}
