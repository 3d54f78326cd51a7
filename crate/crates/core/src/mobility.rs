//! Vehicle positions: a synthetic Manhattan-grid walker and CSV trace ingestion.
//!
//! Positions are quasi-static: they are fixed for the duration of a round and
//! only change when [`World::advance`] is called between rounds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MobilitySection;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Euclidean distance in meters.
pub fn distance(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("trace coverage error: no record for round {round}, vehicle {vehicle}")]
    Coverage { round: usize, vehicle: usize },
    #[error("trace has {found} vehicles but the scenario needs {expected}")]
    VehicleCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: usize,
    pub vehicle_id: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub speed_mps: f64,
}

/// A validated mobility trace with exactly one record per (round, vehicle).
///
/// Rounds are 1-based and vehicle ids 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityTrace {
    rounds: usize,
    vehicles: usize,
    /// Row-major `[round - 1][vehicle]`.
    records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "round,vehicle_id,x_m,y_m,speed_mps";

impl MobilityTrace {
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn vehicles(&self) -> usize {
        self.vehicles
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn record(&self, round: usize, vehicle: usize) -> &TraceRecord {
        &self.records[(round - 1) * self.vehicles + vehicle]
    }

    /// Builds a trace from unordered records, checking uniqueness and coverage.
    pub fn from_records(records: Vec<TraceRecord>) -> Result<Self, TraceError> {
        let mut map = BTreeMap::new();
        for (i, r) in records.into_iter().enumerate() {
            let line = i as u64 + 2;
            check_record(&r, line)?;
            if map.insert((r.round, r.vehicle_id), r).is_some() {
                return Err(TraceError::Parse {
                    line,
                    msg: format!("duplicate record for round {}, vehicle {}", r.round, r.vehicle_id),
                });
            }
        }
        let rounds = map.keys().map(|k| k.0).max().unwrap_or(0);
        let vehicles = map.keys().map(|k| k.1 + 1).max().unwrap_or(0);
        let mut out = Vec::with_capacity(rounds * vehicles);
        for round in 1..=rounds {
            for vehicle in 0..vehicles {
                match map.get(&(round, vehicle)) {
                    Some(r) => out.push(*r),
                    None => return Err(TraceError::Coverage { round, vehicle }),
                }
            }
        }
        Ok(Self {
            rounds,
            vehicles,
            records: out,
        })
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
        let expected: Vec<&str> = TRACE_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(TraceError::Parse {
                line: 1,
                msg: format!("expected header `{TRACE_HEADER}`"),
            });
        }
        let mut records = Vec::new();
        let mut lines = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| csv_error(e, 0))?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let rec: TraceRecord = row.deserialize(Some(&headers)).map_err(|e| TraceError::Parse {
                line,
                msg: e.to_string(),
            })?;
            check_record(&rec, line)?;
            records.push(rec);
            lines.push(line);
        }
        // Re-run the structural checks with real line numbers for duplicates.
        let mut seen = BTreeMap::new();
        for (r, line) in records.iter().zip(&lines) {
            if let Some(first) = seen.insert((r.round, r.vehicle_id), *line) {
                return Err(TraceError::Parse {
                    line: *line,
                    msg: format!(
                        "duplicate record for round {}, vehicle {} (first at line {first})",
                        r.round, r.vehicle_id
                    ),
                });
            }
        }
        Self::from_records(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        Self::parse(File::open(path)?)
    }

    /// Writes the canonical CSV form: header, then records ordered by round
    /// and vehicle, floats in shortest round-trip notation, LF endings.
    pub fn emit<W: Write>(&self, writer: W) -> Result<(), TraceError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let io = |e: csv::Error| TraceError::Io(std::io::Error::other(e));
        w.write_record(TRACE_HEADER.split(',')).map_err(io)?;
        for r in &self.records {
            w.write_record([
                r.round.to_string(),
                r.vehicle_id.to_string(),
                r.x_m.to_string(),
                r.y_m.to_string(),
                r.speed_mps.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.emit(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn check_record(r: &TraceRecord, line: u64) -> Result<(), TraceError> {
    let bad = |msg: &str| {
        Err(TraceError::Parse {
            line,
            msg: msg.to_string(),
        })
    };
    if r.round < 1 {
        return bad("rounds are 1-based");
    }
    if !r.x_m.is_finite() || !r.y_m.is_finite() {
        return bad("coordinates must be finite");
    }
    if !(r.speed_mps >= 0.0 && r.speed_mps.is_finite()) {
        return bad("speed must be finite and >= 0");
    }
    Ok(())
}

fn csv_error(e: csv::Error, fallback_line: u64) -> TraceError {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    TraceError::Parse {
        line,
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Heading {
    East,
    West,
    North,
    South,
}

impl Heading {
    fn unit(self) -> (f64, f64) {
        match self {
            Heading::East => (1.0, 0.0),
            Heading::West => (-1.0, 0.0),
            Heading::North => (0.0, 1.0),
            Heading::South => (0.0, -1.0),
        }
    }

    fn reverse(self) -> Heading {
        match self {
            Heading::East => Heading::West,
            Heading::West => Heading::East,
            Heading::North => Heading::South,
            Heading::South => Heading::North,
        }
    }
}

/// A vehicle driving on the grid roads.
#[derive(Debug, Clone, PartialEq)]
struct Walker {
    pos: Position,
    heading: Heading,
    speed: f64,
}

/// Manhattan road grid: roads run along every multiple of `block` in x and
/// in y inside `[0, width] x [0, height]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: f64,
    pub height: f64,
    pub block: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub dt: f64,
}

const SNAP: f64 = 1e-9;

impl Grid {
    pub fn from_config(m: &MobilitySection, dt: f64) -> Self {
        Self {
            width: m.map_width_m,
            height: m.map_height_m,
            block: m.block_m,
            v_min: m.v_min,
            v_max: m.v_max,
            dt,
        }
    }

    fn lines(&self, extent: f64) -> usize {
        (extent / self.block + SNAP).floor() as usize
    }

    fn sample_speed(&self, rng: &mut SimRng) -> f64 {
        if self.v_max > self.v_min {
            rng.random_range(self.v_min..=self.v_max)
        } else {
            self.v_min
        }
    }

    fn spawn(&self, rng: &mut SimRng) -> Walker {
        let horizontal = rng.random_bool(0.5);
        let (pos, heading) = if horizontal {
            let row = rng.random_range(0..=self.lines(self.height)) as f64 * self.block;
            let x = rng.random_range(0.0..=self.width);
            let h = if rng.random_bool(0.5) { Heading::East } else { Heading::West };
            (Position::new(x, row), h)
        } else {
            let col = rng.random_range(0..=self.lines(self.width)) as f64 * self.block;
            let y = rng.random_range(0.0..=self.height);
            let h = if rng.random_bool(0.5) { Heading::North } else { Heading::South };
            (Position::new(col, y), h)
        };
        Walker {
            pos,
            heading,
            speed: self.sample_speed(rng),
        }
    }

    fn on_road(&self, v: f64) -> bool {
        let r = v / self.block;
        (r - r.round()).abs() * self.block < 1e-6
    }

    /// Headings available at an intersection other than reversing.
    fn exits(&self, p: Position, heading: Heading) -> Vec<Heading> {
        let mut out = Vec::with_capacity(3);
        for h in [Heading::East, Heading::West, Heading::North, Heading::South] {
            if h == heading.reverse() {
                continue;
            }
            let ok = match h {
                Heading::East => self.on_road(p.y) && p.x < self.width - 1e-6,
                Heading::West => self.on_road(p.y) && p.x > 1e-6,
                Heading::North => self.on_road(p.x) && p.y < self.height - 1e-6,
                Heading::South => self.on_road(p.x) && p.y > 1e-6,
            };
            if ok {
                out.push(h);
            }
        }
        out
    }

    /// Distance along `heading` to the next intersection or map edge.
    fn to_next_stop(&self, p: Position, heading: Heading) -> f64 {
        let next = |v: f64, up: bool, extent: f64| {
            let cell = v / self.block;
            let target = if up {
                ((cell + SNAP).floor() + 1.0) * self.block
            } else {
                ((cell - SNAP).ceil() - 1.0) * self.block
            };
            if up {
                target.min(extent) - v
            } else {
                v - target.max(0.0)
            }
        };
        match heading {
            Heading::East => next(p.x, true, self.width),
            Heading::West => next(p.x, false, self.width),
            Heading::North => next(p.y, true, self.height),
            Heading::South => next(p.y, false, self.height),
        }
    }

    fn step_walker(&self, w: &mut Walker, rng: &mut SimRng) {
        let mut remaining = w.speed * self.dt;
        let mut guard = 0;
        while remaining > 1e-12 && guard < 10_000 {
            guard += 1;
            let stop = self.to_next_stop(w.pos, w.heading).max(0.0);
            let (ux, uy) = w.heading.unit();
            let leg = remaining.min(stop);
            w.pos.x += ux * leg;
            w.pos.y += uy * leg;
            remaining -= leg;
            if stop <= leg + 1e-12 {
                // Arrived at an intersection or edge: snap and pick a new heading.
                w.pos.x = self.snap(w.pos.x).clamp(0.0, self.width);
                w.pos.y = self.snap(w.pos.y).clamp(0.0, self.height);
                let exits = self.exits(w.pos, w.heading);
                w.heading = if exits.is_empty() {
                    w.heading.reverse()
                } else {
                    exits[rng.random_range(0..exits.len())]
                };
            }
        }
        w.speed = self.sample_speed(rng);
    }

    fn snap(&self, v: f64) -> f64 {
        if self.on_road(v) {
            (v / self.block).round() * self.block
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Grid { grid: Grid, walkers: Vec<Walker> },
    Trace { trace: MobilityTrace, cursor: usize },
}

/// Current positions and speeds of every vehicle plus the process that moves them.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub positions: Vec<Position>,
    pub speeds: Vec<f64>,
    source: Source,
}

impl World {
    pub fn synthetic(grid: Grid, vehicles: usize, rng: &mut SimRng) -> Self {
        let walkers: Vec<Walker> = (0..vehicles).map(|_| grid.spawn(rng)).collect();
        let mut world = Self {
            positions: Vec::new(),
            speeds: Vec::new(),
            source: Source::Grid { grid, walkers },
        };
        world.sync();
        world
    }

    /// Positions replayed from a trace, starting at its first round. Rounds
    /// past the end of the trace wrap to its beginning.
    pub fn from_trace(trace: MobilityTrace, vehicles: usize) -> Result<Self, TraceError> {
        if trace.vehicles() != vehicles {
            return Err(TraceError::VehicleCount {
                expected: vehicles,
                found: trace.vehicles(),
            });
        }
        let mut world = Self {
            positions: Vec::new(),
            speeds: Vec::new(),
            source: Source::Trace { trace, cursor: 1 },
        };
        world.sync();
        Ok(world)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Moves every vehicle to its position for the next round.
    pub fn advance(&mut self, rng: &mut SimRng) {
        match &mut self.source {
            Source::Grid { grid, walkers } => {
                for w in walkers.iter_mut() {
                    grid.step_walker(w, rng);
                }
            }
            Source::Trace { trace, cursor } => {
                *cursor = *cursor % trace.rounds() + 1;
            }
        }
        self.sync();
    }

    fn sync(&mut self) {
        match &self.source {
            Source::Grid { walkers, .. } => {
                self.positions = walkers.iter().map(|w| w.pos).collect();
                self.speeds = walkers.iter().map(|w| w.speed).collect();
            }
            Source::Trace { trace, cursor } => {
                let n = trace.vehicles();
                self.positions = (0..n)
                    .map(|h| {
                        let r = trace.record(*cursor, h);
                        Position::new(r.x_m, r.y_m)
                    })
                    .collect();
                self.speeds = (0..n).map(|h| trace.record(*cursor, h).speed_mps).collect();
            }
        }
    }
}

/// Functional form of [`World::advance`].
pub fn advance_positions(world: &World, rng: &mut SimRng) -> World {
    let mut next = world.clone();
    next.advance(rng);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn grid(v: f64, dt: f64) -> Grid {
        Grid {
            width: 600.0,
            height: 600.0,
            block: 150.0,
            v_min: v,
            v_max: v,
            dt,
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(Position::new(0.0, 0.0), Position::new(0.0, 0.0)), 0.0);
        assert_eq!(distance(Position::new(0.0, 0.0), Position::new(3.0, 4.0)), 5.0);
        assert_eq!(distance(Position::new(10.0, 10.0), Position::new(110.0, 10.0)), 100.0);
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(ax in -1e3..1e3f64, ay in -1e3..1e3f64, bx in -1e3..1e3f64,
                                by in -1e3..1e3f64, cx in -1e3..1e3f64, cy in -1e3..1e3f64) {
            let (a, b, c) = (Position::new(ax, ay), Position::new(bx, by), Position::new(cx, cy));
            prop_assert!(distance(a, b) >= 0.0);
            prop_assert_eq!(distance(a, b), distance(b, a));
            prop_assert!(distance(a, c) <= distance(a, b) + distance(b, c) + 1e-9);
        }
    }

    #[test]
    fn zero_speed_keeps_positions() {
        let mut rng = stream(1, Stream::Mobility);
        let mut w = World::synthetic(grid(0.0, 30.0), 10, &mut rng);
        let before = w.positions.clone();
        w.advance(&mut rng);
        assert_eq!(w.positions, before);
    }

    #[test]
    fn same_seed_same_world() {
        let run = || {
            let mut rng = stream(3, Stream::Mobility);
            let mut w = World::synthetic(grid(10.0, 30.0), 5, &mut rng);
            for _ in 0..4 {
                w.advance(&mut rng);
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn straight_segment_displacement_is_speed_times_dt() {
        let g = grid(10.0, 3.0);
        let mut rng = stream(0, Stream::Mobility);
        let mut w = Walker {
            pos: Position::new(10.0, 150.0),
            heading: Heading::East,
            speed: 10.0,
        };
        let start = w.pos;
        g.step_walker(&mut w, &mut rng);
        assert!((distance(start, w.pos) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn walkers_stay_on_roads_inside_the_map() {
        let g = grid(12.0, 30.0);
        let mut rng = stream(9, Stream::Mobility);
        let mut w = World::synthetic(g.clone(), 20, &mut rng);
        for _ in 0..200 {
            w.advance(&mut rng);
            for p in &w.positions {
                assert!(p.x >= -1e-6 && p.x <= g.width + 1e-6);
                assert!(p.y >= -1e-6 && p.y <= g.height + 1e-6);
                assert!(g.on_road(p.x) || g.on_road(p.y), "{p:?} off road");
            }
        }
    }

    const SAMPLE: &str = "round,vehicle_id,x_m,y_m,speed_mps\n\
1,0,0,0,10\n1,1,150,20.5,12\n2,0,10,0,10\n2,1,150,30.5,11.25\n3,0,20,0,9\n3,1,150,40,0\n";

    #[test]
    fn trace_parse_and_round_trip() {
        let t = MobilityTrace::parse(SAMPLE.as_bytes()).unwrap();
        assert_eq!(t.records().len(), 6);
        assert_eq!(t.rounds(), 3);
        assert_eq!(t.vehicles(), 2);
        assert_eq!(t.to_csv_string(), SAMPLE);
    }

    #[test]
    fn trace_gap_is_a_coverage_error() {
        let text = SAMPLE.replace("2,1,150,30.5,11.25\n", "");
        match MobilityTrace::parse(text.as_bytes()) {
            Err(TraceError::Coverage { round: 2, vehicle: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_speed_reports_line() {
        let text = SAMPLE.replace("2,0,10,0,10", "2,0,10,0,-1");
        match MobilityTrace::parse(text.as_bytes()) {
            Err(TraceError::Parse { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_record_rejected() {
        let text = format!("{SAMPLE}2,0,11,0,10\n");
        assert!(matches!(
            MobilityTrace::parse(text.as_bytes()),
            Err(TraceError::Parse { line: 8, .. })
        ));
    }

    #[test]
    fn trace_world_replays_and_wraps() {
        let t = MobilityTrace::parse(SAMPLE.as_bytes()).unwrap();
        let mut w = World::from_trace(t, 2).unwrap();
        let mut rng = stream(0, Stream::Mobility);
        assert_eq!(w.positions[1], Position::new(150.0, 20.5));
        w.advance(&mut rng);
        assert_eq!(w.positions[0], Position::new(10.0, 0.0));
        w.advance(&mut rng);
        w.advance(&mut rng);
        assert_eq!(w.positions[0], Position::new(0.0, 0.0));
    }
}
