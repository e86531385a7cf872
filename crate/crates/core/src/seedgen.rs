//! Valid-rally discovery and the seed buffer.
//!
//! Generators draw random launch states and aerodynamic coefficients, fly
//! them, and keep only the ones that cross the net and land on the robot
//! court. Accepted seeds go into a bounded FIFO that training environments
//! pop from on reset. Because the coefficients travel with the seed, a seed
//! replays bit-identically.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crossbeam_queue::ArrayQueue;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AeroCoefficients, BallProperties, BallState, FlightModel, DEFAULT_DT};
use crate::exec::Exec;
use crate::rally::{classify_event, is_valid_rally, ContactFlags, EventKind, RallyEvent, TableGeometry};
use crate::Vec3;

/// Initial ball state plus the coefficients needed to reproduce its flight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RallySeed {
    pub p0: Vec3,
    pub v0: Vec3,
    pub w0: Vec3,
    pub aero: AeroCoefficients,
}

impl RallySeed {
    pub fn ball(&self) -> BallState {
        BallState::new(self.p0, self.v0, self.w0)
    }

    pub fn is_finite(&self) -> bool {
        self.ball().is_finite() && self.aero.k_d.is_finite() && self.aero.k_m.is_finite()
    }
}

/// Closed sampling interval.
pub type Range = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedRanges {
    pub p0: [Range; 3],
    pub v0: [Range; 3],
    pub w0: [Range; 3],
    pub k_d: Range,
    pub k_m: Range,
}

impl Default for SeedRanges {
    fn default() -> Self {
        Self {
            p0: [[0.3, 1.3], [-0.6, 0.6], [0.9, 1.3]],
            v0: [[-8.0, -3.0], [-2.0, 2.0], [-1.0, 3.0]],
            w0: [[-400.0, 400.0]; 3],
            k_d: [0.05, 0.2],
            k_m: [0.0005, 0.004],
        }
    }
}

impl SeedRanges {
    pub fn all(&self) -> impl Iterator<Item = &Range> {
        self.p0.iter().chain(&self.v0).chain(&self.w0).chain([&self.k_d, &self.k_m])
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.all().any(|r| !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1])) {
            return Err("every seed range must be finite with lo <= hi".into());
        }
        if self.k_d[0] < 0.0 || self.k_m[0] < 0.0 {
            return Err("aerodynamic coefficient ranges must be non-negative".into());
        }
        Ok(())
    }

    pub fn contains(&self, s: &RallySeed) -> bool {
        let inside = |r: &Range, x: f64| r[0] <= x && x <= r[1];
        (0..3).all(|i| inside(&self.p0[i], s.p0[i]) && inside(&self.v0[i], s.v0[i]) && inside(&self.w0[i], s.w0[i]))
            && inside(&self.k_d, s.aero.k_d)
            && inside(&self.k_m, s.aero.k_m)
    }
}

fn draw<R: Rng>(rng: &mut R, r: &Range) -> f64 {
    if r[0] == r[1] {
        // Still consume a draw so the stream does not depend on the ranges.
        let _: f64 = rng.random();
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Independent uniform draws for every field.
pub fn sample_candidate<R: Rng>(rng: &mut R, ranges: &SeedRanges) -> RallySeed {
    let mut v3 = |rs: &[Range; 3]| Vec3::new(draw(rng, &rs[0]), draw(rng, &rs[1]), draw(rng, &rs[2]));
    let p0 = v3(&ranges.p0);
    let v0 = v3(&ranges.v0);
    let w0 = v3(&ranges.w0);
    let k_d = draw(rng, &ranges.k_d);
    let k_m = draw(rng, &ranges.k_m);
    RallySeed { p0, v0, w0, aero: AeroCoefficients::new(k_d, k_m) }
}

/// Physics used to validate a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutSettings {
    pub geometry: TableGeometry,
    pub ball: BallProperties,
    pub flight: FlightModel,
    pub dt: f64,
    /// Flight time after which an undecided candidate is rejected.
    pub t_max: f64,
}

impl Default for RolloutSettings {
    fn default() -> Self {
        Self {
            geometry: TableGeometry::default(),
            ball: BallProperties::default(),
            flight: FlightModel::default(),
            dt: DEFAULT_DT,
            t_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub events: Vec<RallyEvent>,
    pub valid: bool,
}

/// Flies a seed until the first contact other than a clean net crossing.
pub fn rollout_candidate(seed: &RallySeed, cfg: &RolloutSettings) -> Rollout {
    let r = cfg.ball.radius;
    let mut events = vec![RallyEvent::new(EventKind::Launch, 0.0, seed.ball())];
    let mut cur = seed.ball();
    let mut t_base = 0.0;
    while t_base < cfg.t_max && cur.is_finite() {
        let flight = cfg.flight.simulate_flight(&cur, &seed.aero, cfg.dt, cfg.t_max - t_base, &cfg.geometry, r);
        let Some(hit) = flight.hit else { break };
        let t1 = t_base + hit.t_after;
        let ev = classify_event(&hit.before, &hit.after, (t1 - cfg.dt, t1), &cfg.geometry, r, ContactFlags::default())
            .expect("a detected surface crossing always classifies");
        events.push(ev);
        if ev.kind != EventKind::NetCrossed {
            break;
        }
        cur = hit.after;
        t_base = t1;
    }
    let valid = is_valid_rally(&events);
    Rollout { events, valid }
}

/// Bounded, lock-free FIFO of validated seeds.
#[derive(Debug)]
pub struct SeedBuffer {
    queue: ArrayQueue<RallySeed>,
}

impl SeedBuffer {
    /// Capacity must be at least one.
    pub fn new(capacity: usize) -> Self {
        Self { queue: ArrayQueue::new(capacity.max(1)) }
    }

    /// Returns `false` (and drops the seed) when the buffer is full.
    pub fn push(&self, seed: RallySeed) -> bool {
        self.queue.push(seed).is_ok()
    }

    pub fn pop(&self) -> Option<RallySeed> {
        self.queue.pop()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.queue.is_full()
    }

    pub fn capacity(&self) -> usize {
        self.queue.capacity()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorStats {
    pub tried: u64,
    pub valid: u64,
    /// Valid seeds that found room in the buffer.
    pub pushed: u64,
}

impl GeneratorStats {
    pub fn valid_rate(&self) -> f64 {
        if self.tried == 0 {
            0.0
        } else {
            self.valid as f64 / self.tried as f64
        }
    }

    pub fn absorb(&mut self, other: &GeneratorStats) {
        self.tried += other.tried;
        self.valid += other.valid;
        self.pushed += other.pushed;
    }
}

/// Derives an independent stream for `(run seed, index)`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Free-running generator: `workers` threads sample, roll out and push
/// until `stop` is raised. Counts are exact; which seeds land in the buffer
/// depends on thread timing.
pub fn run_generator(
    workers: usize,
    buffer: &SeedBuffer,
    ranges: &SeedRanges,
    settings: &RolloutSettings,
    stop: &AtomicBool,
    seed: u64,
) -> GeneratorStats {
    let tried = AtomicU64::new(0);
    let valid = AtomicU64::new(0);
    let pushed = AtomicU64::new(0);
    std::thread::scope(|scope| {
        for w in 0..workers {
            let (tried, valid, pushed) = (&tried, &valid, &pushed);
            scope.spawn(move || {
                let mut rng = stream_rng(seed, w as u64);
                while !stop.load(Ordering::Relaxed) {
                    let cand = sample_candidate(&mut rng, ranges);
                    let out = rollout_candidate(&cand, settings);
                    tried.fetch_add(1, Ordering::Relaxed);
                    if out.valid {
                        valid.fetch_add(1, Ordering::Relaxed);
                        if buffer.push(cand) {
                            pushed.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
            });
        }
    });
    GeneratorStats { tried: tried.into_inner(), valid: valid.into_inner(), pushed: pushed.into_inner() }
}

/// Deterministic generator used inside training: each generator environment
/// owns an RNG stream, a round tries a fixed number of candidates per
/// environment in parallel, and accepted seeds are pushed in environment
/// order.
#[derive(Debug, Clone)]
pub struct GeneratorPool {
    rngs: Vec<ChaCha8Rng>,
}

impl GeneratorPool {
    pub fn new(envs: usize, seed: u64) -> Self {
        // Offset the stream ids so generator streams never coincide with
        // the training environments' streams.
        Self { rngs: (0..envs).map(|i| stream_rng(seed, (1u64 << 32) + i as u64)).collect() }
    }

    pub fn envs(&self) -> usize {
        self.rngs.len()
    }

    /// Runs one round and returns the valid seeds in environment order.
    pub fn round(&mut self, exec: Exec, ranges: &SeedRanges, settings: &RolloutSettings, tries: usize) -> (Vec<RallySeed>, GeneratorStats) {
        let per_env = exec.map_mut(&mut self.rngs, |_, rng| {
            let mut found = Vec::new();
            for _ in 0..tries {
                let cand = sample_candidate(rng, ranges);
                if rollout_candidate(&cand, settings).valid {
                    found.push(cand);
                }
            }
            found
        });
        let seeds: Vec<RallySeed> = per_env.into_iter().flatten().collect();
        let stats = GeneratorStats { tried: (tries * self.rngs.len()) as u64, valid: seeds.len() as u64, pushed: 0 };
        (seeds, stats)
    }

    /// Runs a round and pushes into `buffer` until it is full.
    pub fn fill(&mut self, exec: Exec, buffer: &SeedBuffer, ranges: &SeedRanges, settings: &RolloutSettings, tries: usize) -> GeneratorStats {
        let (seeds, mut stats) = self.round(exec, ranges, settings, tries);
        for s in seeds {
            if !buffer.push(s) {
                break;
            }
            stats.pushed += 1;
        }
        stats
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SeedRow {
    p0_x: f64,
    p0_y: f64,
    p0_z: f64,
    v0_x: f64,
    v0_y: f64,
    v0_z: f64,
    w0_x: f64,
    w0_y: f64,
    w0_z: f64,
    k_d: f64,
    k_m: f64,
}

impl From<&RallySeed> for SeedRow {
    fn from(s: &RallySeed) -> Self {
        Self {
            p0_x: s.p0.x,
            p0_y: s.p0.y,
            p0_z: s.p0.z,
            v0_x: s.v0.x,
            v0_y: s.v0.y,
            v0_z: s.v0.z,
            w0_x: s.w0.x,
            w0_y: s.w0.y,
            w0_z: s.w0.z,
            k_d: s.aero.k_d,
            k_m: s.aero.k_m,
        }
    }
}

impl From<SeedRow> for RallySeed {
    fn from(r: SeedRow) -> Self {
        Self {
            p0: Vec3::new(r.p0_x, r.p0_y, r.p0_z),
            v0: Vec3::new(r.v0_x, r.v0_y, r.v0_z),
            w0: Vec3::new(r.w0_x, r.w0_y, r.w0_z),
            aero: AeroCoefficients::new(r.k_d, r.k_m),
        }
    }
}

pub const SEED_CSV_HEADER: &str = "p0_x,p0_y,p0_z,v0_x,v0_y,v0_z,w0_x,w0_y,w0_z,k_d,k_m";

/// Writes seeds as CSV. The header is written even for an empty list.
pub fn write_seeds_csv<W: Write>(out: W, seeds: &[RallySeed]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SEED_CSV_HEADER.split(','))?;
    for s in seeds {
        w.serialize(SeedRow::from(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_seeds_csv<R: Read>(input: R) -> csv::Result<Vec<RallySeed>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<SeedRow>().map(|row| row.map(RallySeed::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lob() -> RallySeed {
        RallySeed {
            p0: Vec3::new(1.0, 0.0, 1.1),
            v0: Vec3::new(-4.5, 0.0, 1.0),
            w0: Vec3::zeros(),
            aero: AeroCoefficients::new(0.1, 0.0),
        }
    }

    #[test]
    fn degenerate_ranges_are_constant() {
        let mut ranges = SeedRanges::default();
        ranges.p0[0] = [0.7, 0.7];
        ranges.k_m = [0.0, 0.0];
        let mut rng = stream_rng(3, 0);
        for _ in 0..100 {
            let s = sample_candidate(&mut rng, &ranges);
            assert_eq!(s.p0.x, 0.7);
            assert_eq!(s.aero.k_m, 0.0);
        }
    }

    #[test]
    fn draws_stay_in_range() {
        let ranges = SeedRanges::default();
        let mut rng = stream_rng(9, 0);
        for _ in 0..10_000 {
            assert!(ranges.contains(&sample_candidate(&mut rng, &ranges)));
        }
    }

    #[test]
    fn lob_is_valid() {
        let out = rollout_candidate(&lob(), &RolloutSettings::default());
        let kinds: Vec<_> = out.events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, [EventKind::Launch, EventKind::NetCrossed, EventKind::BounceRobotCourt]);
        assert!(out.valid);
    }

    #[test]
    fn low_drive_hits_net() {
        let s = RallySeed { p0: Vec3::new(1.0, 0.0, 0.95), v0: Vec3::new(-8.0, 0.0, 0.0), ..lob() };
        let out = rollout_candidate(&s, &RolloutSettings::default());
        assert!(!out.valid);
        assert_eq!(out.events.last().unwrap().kind, EventKind::NetContact);
    }

    #[test]
    fn launched_away_is_invalid() {
        let s = RallySeed { v0: Vec3::new(4.0, 0.0, 2.0), ..lob() };
        assert!(!rollout_candidate(&s, &RolloutSettings::default()).valid);
    }

    #[test]
    fn buffer_fifo_and_capacity() {
        let b = SeedBuffer::new(2);
        let a = lob();
        let c = RallySeed { p0: Vec3::new(0.9, 0.0, 1.0), ..lob() };
        assert!(b.pop().is_none());
        assert!(b.push(a));
        assert!(b.push(c));
        assert!(!b.push(a));
        assert_eq!(b.len(), 2);
        assert_eq!(b.pop(), Some(a));
        assert_eq!(b.pop(), Some(c));
        assert!(b.pop().is_none());
    }

    #[test]
    fn stopped_generator_counts_nothing() {
        let stop = AtomicBool::new(true);
        let b = SeedBuffer::new(4);
        let stats = run_generator(3, &b, &SeedRanges::default(), &RolloutSettings::default(), &stop, 1);
        assert_eq!(stats, GeneratorStats::default());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = stream_rng(5, 0);
        let seeds: Vec<_> = (0..20).map(|_| sample_candidate(&mut rng, &SeedRanges::default())).collect();
        let mut buf = Vec::new();
        write_seeds_csv(&mut buf, &seeds).unwrap();
        assert_eq!(read_seeds_csv(buf.as_slice()).unwrap(), seeds);
    }

    #[test]
    fn empty_csv_has_header() {
        let mut buf = Vec::new();
        write_seeds_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{SEED_CSV_HEADER}\n"));
    }
}
