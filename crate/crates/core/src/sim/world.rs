//! Segment-map environments and ray casting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Segment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Segment { a: (x1, y1), b: (x2, y2) }
    }

    pub fn length(&self) -> f64 {
        (self.b.0 - self.a.0).hypot(self.b.1 - self.a.1)
    }

    /// Distance from `p` to the closest point of the segment.
    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0);
        (self.a.0 + t * dx - p.0).hypot(self.a.1 + t * dy - p.1)
    }

    /// Distance from `p` to the infinite line through the segment.
    pub fn line_distance(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        ((p.0 - self.a.0) * dy - (p.1 - self.a.1) * dx).abs() / self.length()
    }

    /// Ray parameter of the crossing with `origin + t * dir`, if any.
    pub fn ray_hit(&self, origin: (f64, f64), dir: (f64, f64)) -> Option<f64> {
        let (ex, ey) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let denom = dir.0 * ey - dir.1 * ex;
        if denom.abs() < 1e-12 {
            return None;
        }
        let (wx, wy) = (self.a.0 - origin.0, self.a.1 - origin.1);
        let t = (wx * ey - wy * ex) / denom;
        let u = (wx * dir.1 - wy * dir.0) / denom;
        (t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u)).then_some(t)
    }

    /// Whether the open segment `p`-`q` crosses this one.
    pub fn crosses(&self, p: (f64, f64), q: (f64, f64)) -> bool {
        let dir = (q.0 - p.0, q.1 - p.1);
        matches!(self.ray_hit(p, dir), Some(t) if t > 0.0 && t < 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub name: String,
    pub segments: Vec<Segment>,
    /// `(min_x, min_y, max_x, max_y)`.
    pub bounds: (f64, f64, f64, f64),
    /// Wall height for full-resolution sensing, metres.
    pub wall_height: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("world has no walls")]
    Empty,
}

impl World {
    pub fn new(name: impl Into<String>, segments: Vec<Segment>) -> Result<Self, WorldError> {
        if segments.is_empty() {
            return Err(WorldError::Empty);
        }
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in &segments {
            for p in [s.a, s.b] {
                b = (b.0.min(p.0), b.1.min(p.1), b.2.max(p.0), b.3.max(p.1));
            }
        }
        Ok(World {
            name: name.into(),
            segments,
            bounds: b,
            wall_height: 0.8,
        })
    }

    /// Nearest wall along a ray, if closer than `max_range`.
    pub fn raycast(&self, origin: (f64, f64), bearing: f64, max_range: f64) -> Option<f64> {
        let dir = (bearing.cos(), bearing.sin());
        self.segments
            .iter()
            .filter_map(|s| s.ray_hit(origin, dir))
            .filter(|t| *t > 0.0)
            .reduce(f64::min)
            .filter(|t| *t <= max_range)
    }

    pub fn clearance(&self, p: (f64, f64)) -> f64 {
        self.segments
            .iter()
            .map(|s| s.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn walls_between(&self, p: (f64, f64), q: (f64, f64)) -> usize {
        self.segments.iter().filter(|s| s.crosses(p, q)).count()
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.bounds.0 && p.0 <= self.bounds.2 && p.1 >= self.bounds.1 && p.1 <= self.bounds.3
    }

    /// Fixture file: one `x1 y1 x2 y2` segment per line, `#` comments.
    pub fn parse(name: &str, text: &str) -> Result<Self, WorldError> {
        let mut segments = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let err = |msg: &str| WorldError::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let vals = vals.map_err(|_| err("expected four numbers"))?;
            if vals.len() != 4 {
                return Err(err("expected four numbers"));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite coordinate"));
            }
            let s = Segment::new(vals[0], vals[1], vals[2], vals[3]);
            if s.length() <= 0.0 {
                return Err(err("zero-length segment"));
            }
            segments.push(s);
        }
        World::new(name, segments)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n", self.name);
        for s in &self.segments {
            let _ = writeln!(out, "{} {} {} {}", s.a.0, s.a.1, s.b.0, s.b.1);
        }
        out
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Segment> {
    vec![
        Segment::new(x0, y0, x1, y0),
        Segment::new(x1, y0, x1, y1),
        Segment::new(x1, y1, x0, y1),
        Segment::new(x0, y1, x0, y0),
    ]
}

pub fn empty_room(w: f64, h: f64) -> World {
    World::new("empty_room", rect(0.0, 0.0, w, h)).expect("non-empty")
}

/// Two parallel walls `width` apart and `length` long, closed at both ends.
pub fn corridor(length: f64, width: f64) -> World {
    World::new("corridor", rect(0.0, 0.0, length, width)).expect("non-empty")
}

/// 5 m x 5 m arena with a few 1-2 m panels splitting it into corridors and
/// rooms, in the spirit of the small mazes used for flight tests.
pub fn maze2() -> World {
    let mut s = rect(0.0, 0.0, 5.0, 5.0);
    s.extend([
        Segment::new(1.7, 0.0, 1.7, 2.0),
        Segment::new(3.3, 5.0, 3.3, 3.0),
        Segment::new(0.0, 3.4, 1.0, 3.4),
        Segment::new(4.0, 1.6, 5.0, 1.6),
    ]);
    World::new("maze2", s).expect("non-empty")
}

pub fn fixture(name: &str) -> Option<World> {
    match name {
        "maze2" => Some(maze2()),
        "empty_room" => Some(empty_room(5.0, 5.0)),
        "corridor" => Some(corridor(8.0, 1.6)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn raycast_examples() {
        let w = World::new("wall", vec![Segment::new(1.0, -1.0, 1.0, 1.0)]).unwrap();
        assert!((w.raycast((0.0, 0.0), 0.0, 4.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(w.raycast((0.0, 0.0), PI, 4.0), None);
        let far = World::new("far", vec![Segment::new(5.0, -1.0, 5.0, 1.0)]).unwrap();
        assert_eq!(far.raycast((0.0, 0.0), 0.0, 4.0), None);
        let parallel = World::new("p", vec![Segment::new(0.0, 0.0, 3.0, 0.0)]).unwrap();
        assert_eq!(parallel.raycast((0.0, 0.0), 0.0, 4.0), None);
    }

    #[test]
    fn fixture_file_round_trip() {
        let w = maze2();
        let back = World::parse("maze2", &w.to_text()).unwrap();
        assert_eq!(back.segments, w.segments);
        assert!(matches!(World::parse("x", "1 2 3\n"), Err(WorldError::Parse { line: 1, .. })));
        assert!(matches!(World::parse("x", "1 1 1 1\n"), Err(WorldError::Parse { line: 1, .. })));
        assert_eq!(World::parse("x", "# nothing\n"), Err(WorldError::Empty));
    }

    #[test]
    fn distances() {
        let s = Segment::new(0.0, 0.0, 2.0, 0.0);
        assert!((s.distance_to((3.0, 1.0)) - 2f64.sqrt()).abs() < 1e-12);
        assert!((s.line_distance((3.0, 1.0)) - 1.0).abs() < 1e-12);
        let w = maze2();
        assert_eq!(w.walls_between((1.0, 1.0), (2.5, 1.0)), 1);
        assert_eq!(w.walls_between((1.0, 1.0), (1.0, 2.5)), 0);
    }

    proptest! {
        #[test]
        fn rays_stay_in_range(x in 0.1..4.9f64, y in 0.1..4.9f64, b in -PI..PI) {
            let w = maze2();
            if let Some(d) = w.raycast((x, y), b, 4.0) {
                prop_assert!((0.0..=4.0).contains(&d));
                let hit = (x + d * b.cos(), y + d * b.sin());
                prop_assert!(w.clearance(hit) < 1e-9);
            }
        }
    }
}
