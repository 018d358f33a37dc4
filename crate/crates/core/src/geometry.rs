//! Navigable model of one half of a Class 071 double-deck trailer car.
//!
//! The car is represented as a 2.5D layout unfolded into a single plane:
//! every level (lower deck, upper deck, mezzanine, boarding area) is a set
//! of axis-aligned walkable rectangles placed so that levels never overlap,
//! and every staircase is a corridor whose planar length equals its inclined
//! length. Path lengths measured in the plane are therefore the lengths an
//! occupant actually walks.
//!
//! Coordinates are metres. `x` runs along the car axis, `y` across it. The
//! main exit door lies on the line `y = 0` of the boarding area, centred at
//! `x = 1.0`; exit-side devices (platform strip, external stairs) extend to
//! negative `y`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GEOMETRY_SCHEMA: &str = "railevac.geometry/v1";

/// Clear width of the door between the lower deck and the boarding area.
pub const LOWER_DECK_DOOR_WIDTH: f64 = 0.65;
/// Upper-deck staircase (upper deck to mezzanine).
pub const UPPER_STAIR_WIDTH: f64 = 0.76;
pub const UPPER_STAIR_RISE: f64 = 1.28;
pub const UPPER_STAIR_SLOPE_DEG: f64 = 36.0;
/// Flight between mezzanine and boarding area.
pub const MEZZANINE_FLIGHT_WIDTH: f64 = 0.84;
pub const MEZZANINE_FLIGHT_RISE: f64 = 0.805;
pub const MEZZANINE_FLIGHT_SLOPE_DEG: f64 = 40.0;
/// Clear width of the unmodified main door.
pub const NOMINAL_EXIT_WIDTH: f64 = 1.30;
/// Range of exit widths covered by the experiment.
pub const EXIT_WIDTH_RANGE: (f64, f64) = (0.65, 1.34);
/// Bounds accepted by [`build_railcar`].
pub const EXIT_WIDTH_SANITY: (f64, f64) = (0.3, 2.0);
/// Lower-deck aisle width.
pub const AISLE_WIDTH: f64 = 0.52;
/// Distance between the lower-deck aisle checkpoints.
pub const AISLE_CHECKPOINT_SPACING: f64 = 1.83;
/// Inclined distance between the upper-stair checkpoints.
pub const STAIR_CHECKPOINT_SPACING: f64 = 1.88;

const DOOR_CENTER_X: f64 = 1.0;
const BOARDING_LENGTH: f64 = 2.0;
const CAR_INNER_WIDTH: f64 = 2.7;
const MOUTH_DEPTH: f64 = 0.8;
const AISLE_CENTER: f64 = 1.35;
const BAY_LENGTH: f64 = 1.6;
const BAY_WALL: f64 = 0.05;
const SEAT_BAND: (f64, f64) = (0.1, 2.6);
const EPS: f64 = 1e-9;
/// Walkable depth kept beyond the sink line so agents can cross it freely.
const EXIT_APRON: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn length(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn length_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).length()
    }

    pub fn normalized(self) -> Vec2 {
        let l = self.length();
        if l > 1e-12 {
            Vec2::new(self.x / l, self.y / l)
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }

    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        let d = self.b - self.a;
        let l2 = d.length_sq();
        if l2 < 1e-18 {
            return self.a;
        }
        let t = ((p - self.a).dot(d) / l2).clamp(0.0, 1.0);
        self.a + d * t
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        self.closest_point(p).distance(p)
    }

    /// Parameter along `p -> q` where the move crosses this segment, if it does.
    pub fn crossing(&self, p: Vec2, q: Vec2) -> Option<f64> {
        let r = q - p;
        let s = self.b - self.a;
        let denom = r.cross(s);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = (self.a - p).cross(s) / denom;
        let u = (self.a - p).cross(r) / denom;
        if (0.0..=1.0).contains(&t) && (-EPS..=1.0 + EPS).contains(&u) {
            Some(t)
        } else {
            None
        }
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect {
            min: Vec2::new(x0.min(x1), y0.min(y1)),
            max: Vec2::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x - EPS
            && p.x <= self.max.x + EPS
            && p.y >= self.min.y - EPS
            && p.y <= self.max.y + EPS
    }

    pub fn contains_strict(&self, p: Vec2) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            self.min,
            Vec2::new(self.max.x, self.min.y),
            self.max,
            Vec2::new(self.min.x, self.max.y),
        ]
    }

    fn polygon(&self) -> Vec<Vec2> {
        self.corners().to_vec()
    }

    fn from_polygon(poly: &[Vec2]) -> Option<Rect> {
        if poly.len() != 4 {
            return None;
        }
        let x0 = poly.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let x1 = poly.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let y0 = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let y1 = poly.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let axis_aligned = poly.iter().all(|p| {
            ((p.x - x0).abs() < EPS || (p.x - x1).abs() < EPS)
                && ((p.y - y0).abs() < EPS || (p.y - y1).abs() < EPS)
        });
        (axis_aligned && x1 - x0 > EPS && y1 - y0 > EPS).then(|| Rect::new(x0, y0, x1, y1))
    }

    /// Liang-Barsky clip of `p + t (q - p)`, `t` in `[0, 1]`.
    fn clip(&self, p: Vec2, q: Vec2) -> Option<(f64, f64)> {
        let d = q - p;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        let checks = [
            (-d.x, p.x - self.min.x),
            (d.x, self.max.x - p.x),
            (-d.y, p.y - self.min.y),
            (d.y, self.max.y - p.y),
        ];
        for (pk, qk) in checks {
            let qk = qk + EPS;
            if pk.abs() < 1e-15 {
                if qk < 0.0 {
                    return None;
                }
            } else {
                let r = qk / pk;
                if pk < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Boarding,
    LowerDeck,
    Mezzanine,
    UpperDeck,
    Outside,
}

impl Level {
    pub fn elevation(self) -> f64 {
        match self {
            Level::Boarding | Level::LowerDeck => 0.0,
            Level::Mezzanine => MEZZANINE_FLIGHT_RISE,
            Level::UpperDeck => MEZZANINE_FLIGHT_RISE + UPPER_STAIR_RISE,
            Level::Outside => -0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionKind {
    Floor,
    Doorway,
    Stair { slope_deg: f64, external: bool },
    /// Walkable space beyond the main exit line.
    ExitSide,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub level: Level,
    #[serde(flatten)]
    pub kind: RegionKind,
    pub polygon: Vec<Vec2>,
    #[serde(skip)]
    rect: Option<Rect>,
}

impl Region {
    fn new(name: impl Into<String>, level: Level, kind: RegionKind, rect: Rect) -> Self {
        Region {
            name: name.into(),
            level,
            kind,
            polygon: rect.polygon(),
            rect: Some(rect),
        }
    }

    pub fn rect(&self) -> Rect {
        self.rect.expect("region rectangle resolved at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seat {
    pub id: u32,
    pub position: Vec2,
    pub level: Level,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InternalDoor {
    pub name: String,
    pub position: Vec2,
    pub clear_width: f64,
    /// Seconds after the evacuation signal before the door is passable.
    pub opening_delay: f64,
    /// Index into `regions` of the doorway rectangle.
    pub region: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InternalStair {
    pub name: String,
    pub width: f64,
    pub inclined_length: f64,
    pub slope_deg: f64,
    pub upper: Level,
    pub lower: Level,
    pub region: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MainExit {
    pub position: Vec2,
    pub clear_width: f64,
    pub line: Segment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub name: String,
    pub segment: Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitType {
    Platform,
    Stairs,
    Jump,
}

impl ExitType {
    pub const ALL: [ExitType; 3] = [ExitType::Platform, ExitType::Stairs, ExitType::Jump];

    /// Integer code used by the sensitivity analysis (0 platform, 1 stairs, 2 jump).
    pub fn code(self) -> u8 {
        match self {
            ExitType::Platform => 0,
            ExitType::Stairs => 1,
            ExitType::Jump => 2,
        }
    }

    pub fn from_code(code: i64) -> Option<ExitType> {
        match code {
            0 => Some(ExitType::Platform),
            1 => Some(ExitType::Stairs),
            2 => Some(ExitType::Jump),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExitType::Platform => "platform",
            ExitType::Stairs => "stairs",
            ExitType::Jump => "jump",
        }
    }
}

impl fmt::Display for ExitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExitType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "platform" | "0" => Ok(ExitType::Platform),
            "stairs" | "1" => Ok(ExitType::Stairs),
            "jump" | "2" => Ok(ExitType::Jump),
            other => Err(Error::Config(format!("unknown exit type '{other}'"))),
        }
    }
}

/// Exit-side representation of the main exit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExitModel {
    /// High platform: agents are removed a short distance past the exit line.
    Platform { sink_offset: f64 },
    /// Open line reached via external steps.
    Stairs {
        steps: u32,
        rise: f64,
        tread: f64,
        slope_deg: f64,
    },
    /// Open line with an unassisted drop; at most `gate_capacity` agents in
    /// the exit-door strip of depth `gate_depth` at once.
    Jump {
        drop_height: f64,
        gate_capacity: usize,
        gate_depth: f64,
    },
}

impl ExitModel {
    pub fn for_type(exit_type: ExitType) -> Self {
        match exit_type {
            ExitType::Platform => ExitModel::Platform { sink_offset: 0.1 },
            ExitType::Stairs => ExitModel::Stairs {
                steps: 3,
                rise: 0.2,
                tread: 0.5,
                slope_deg: 22.0,
            },
            ExitType::Jump => ExitModel::Jump {
                drop_height: 0.75,
                gate_capacity: 2,
                gate_depth: 0.5,
            },
        }
    }

    pub fn tag(&self) -> ExitType {
        match self {
            ExitModel::Platform { .. } => ExitType::Platform,
            ExitModel::Stairs { .. } => ExitType::Stairs,
            ExitModel::Jump { .. } => ExitType::Jump,
        }
    }

    /// Inclined length of the external steps.
    pub fn stair_inclined_length(&self) -> Option<f64> {
        match *self {
            ExitModel::Stairs { steps, rise, tread, .. } => {
                let n = steps as f64;
                Some((n * rise).hypot(n * tread))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Derived {
    walls: Vec<Segment>,
    nodes: Vec<Vec2>,
    adjacency: Vec<Vec<(usize, f64)>>,
    node_exit_distance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RailcarGeometry {
    pub schema: String,
    pub regions: Vec<Region>,
    pub seats: Vec<Seat>,
    pub internal_doors: Vec<InternalDoor>,
    pub internal_stairs: Vec<InternalStair>,
    pub main_exit: MainExit,
    pub exit_model: ExitModel,
    pub checkpoints: Vec<Checkpoint>,
    /// Line past which agents leave the simulation.
    pub sink: Segment,
    /// Approximate seat coordinates measured off the car layout drawing.
    pub approximate: bool,
    #[serde(skip)]
    derived: Derived,
}

/// Builds the half-car with a main exit of clear width `exit_width`.
pub fn build_railcar(exit_width: f64, exit_type: ExitType) -> Result<RailcarGeometry> {
    let (lo, hi) = EXIT_WIDTH_SANITY;
    if !exit_width.is_finite() || exit_width < lo || exit_width > hi {
        return Err(Error::Config(format!(
            "exit width {exit_width} m outside [{lo}, {hi}] m"
        )));
    }
    let mut b = LayoutBuilder::default();

    // Boarding area with the mouth narrowed symmetrically around the door.
    let half = exit_width / 2.0;
    let (mx0, mx1) = (DOOR_CENTER_X - half, DOOR_CENTER_X + half);
    b.region(
        "boarding",
        Level::Boarding,
        RegionKind::Floor,
        Rect::new(0.0, MOUTH_DEPTH, BOARDING_LENGTH, CAR_INNER_WIDTH),
    );
    b.region(
        "boarding_mouth",
        Level::Boarding,
        RegionKind::Floor,
        Rect::new(mx0, 0.0, mx1, MOUTH_DEPTH),
    );

    // Lower deck behind a single sliding door.
    let door_len = 0.1;
    let dh = LOWER_DECK_DOOR_WIDTH / 2.0;
    let door_region = b.region(
        "lower_deck_door",
        Level::LowerDeck,
        RegionKind::Doorway,
        Rect::new(
            BOARDING_LENGTH,
            AISLE_CENTER - dh,
            BOARDING_LENGTH + door_len,
            AISLE_CENTER + dh,
        ),
    );
    b.doors.push(InternalDoor {
        name: "lower_deck_door".into(),
        position: Vec2::new(BOARDING_LENGTH + door_len / 2.0, AISLE_CENTER),
        clear_width: LOWER_DECK_DOOR_WIDTH,
        opening_delay: 0.0,
        region: door_region,
    });
    let lower_start = BOARDING_LENGTH + door_len;
    b.deck("lower", Level::LowerDeck, lower_start, 0.0, 4, 1.0);

    // Mezzanine flight and mezzanine.
    let flight_len = MEZZANINE_FLIGHT_RISE / MEZZANINE_FLIGHT_SLOPE_DEG.to_radians().sin();
    let fh = MEZZANINE_FLIGHT_WIDTH / 2.0;
    let flight = b.region(
        "mezzanine_flight",
        Level::Mezzanine,
        RegionKind::Stair {
            slope_deg: MEZZANINE_FLIGHT_SLOPE_DEG,
            external: false,
        },
        Rect::new(-flight_len, AISLE_CENTER - fh, 0.0, AISLE_CENTER + fh),
    );
    b.stairs.push(InternalStair {
        name: "mezzanine_flight".into(),
        width: MEZZANINE_FLIGHT_WIDTH,
        inclined_length: flight_len,
        slope_deg: MEZZANINE_FLIGHT_SLOPE_DEG,
        upper: Level::Mezzanine,
        lower: Level::Boarding,
        region: flight,
    });
    let landing_len = 1.2;
    let mezz_landing_x1 = -flight_len;
    let mezz_landing_x0 = mezz_landing_x1 - landing_len;
    b.region(
        "mezzanine_landing",
        Level::Mezzanine,
        RegionKind::Floor,
        Rect::new(mezz_landing_x0, SEAT_BAND.0, mezz_landing_x1, SEAT_BAND.1),
    );
    b.deck("mezzanine", Level::Mezzanine, mezz_landing_x0, 0.0, 2, -1.0);

    // Upper-deck staircase rising from the mezzanine landing.
    let stair_len = UPPER_STAIR_RISE / UPPER_STAIR_SLOPE_DEG.to_radians().sin();
    let stair_cx = (mezz_landing_x0 + mezz_landing_x1) / 2.0;
    let sh = UPPER_STAIR_WIDTH / 2.0;
    let stair_y0 = SEAT_BAND.1;
    let stair_y1 = stair_y0 + stair_len;
    let stair = b.region(
        "upper_stair",
        Level::UpperDeck,
        RegionKind::Stair {
            slope_deg: UPPER_STAIR_SLOPE_DEG,
            external: false,
        },
        Rect::new(stair_cx - sh, stair_y0, stair_cx + sh, stair_y1),
    );
    b.stairs.push(InternalStair {
        name: "upper_stair".into(),
        width: UPPER_STAIR_WIDTH,
        inclined_length: stair_len,
        slope_deg: UPPER_STAIR_SLOPE_DEG,
        upper: Level::UpperDeck,
        lower: Level::Mezzanine,
        region: stair,
    });
    let upper_y0 = stair_y1 - SEAT_BAND.0;
    b.region(
        "upper_landing",
        Level::UpperDeck,
        RegionKind::Floor,
        Rect::new(
            mezz_landing_x0,
            upper_y0 + SEAT_BAND.0,
            mezz_landing_x1,
            upper_y0 + SEAT_BAND.1,
        ),
    );
    b.deck("upper", Level::UpperDeck, mezz_landing_x1, upper_y0, 3, 1.0);

    // Exit side.
    let exit_model = ExitModel::for_type(exit_type);
    let sink_y = match exit_model {
        ExitModel::Platform { sink_offset } => {
            b.region(
                "platform",
                Level::Outside,
                RegionKind::ExitSide,
                Rect::new(mx0, -sink_offset - EXIT_APRON, mx1, 0.0),
            );
            -sink_offset
        }
        ExitModel::Stairs { slope_deg, .. } => {
            let len = exit_model.stair_inclined_length().unwrap_or(0.0);
            b.region(
                "external_stairs",
                Level::Outside,
                RegionKind::Stair {
                    slope_deg,
                    external: true,
                },
                Rect::new(mx0, -len - EXIT_APRON, mx1, 0.0),
            );
            -len
        }
        ExitModel::Jump { .. } => {
            b.region(
                "jump_apron",
                Level::Outside,
                RegionKind::ExitSide,
                Rect::new(mx0, -EXIT_APRON, mx1, 0.0),
            );
            0.0
        }
    };

    let exit_line = Segment::new(Vec2::new(mx0, 0.0), Vec2::new(mx1, 0.0));
    let aisle = |x: f64| {
        Segment::new(
            Vec2::new(x, AISLE_CENTER - AISLE_WIDTH / 2.0),
            Vec2::new(x, AISLE_CENTER + AISLE_WIDTH / 2.0),
        )
    };
    let stair_cp = |y: f64| Segment::new(Vec2::new(stair_cx - sh, y), Vec2::new(stair_cx + sh, y));
    let ch03 = stair_y0 + (stair_len - STAIR_CHECKPOINT_SPACING) / 2.0;
    let ch05 = lower_start + 0.3;
    let checkpoints = vec![
        Checkpoint {
            name: "CH01".into(),
            segment: exit_line,
        },
        Checkpoint {
            name: "CH02".into(),
            segment: aisle(BOARDING_LENGTH + door_len / 2.0),
        },
        Checkpoint {
            name: "CH03".into(),
            segment: stair_cp(ch03 + STAIR_CHECKPOINT_SPACING),
        },
        Checkpoint {
            name: "CH04".into(),
            segment: stair_cp(ch03),
        },
        Checkpoint {
            name: "CH05".into(),
            segment: aisle(ch05 + AISLE_CHECKPOINT_SPACING),
        },
        Checkpoint {
            name: "CH06".into(),
            segment: aisle(ch05),
        },
    ];

    let mut geometry = RailcarGeometry {
        schema: GEOMETRY_SCHEMA.to_string(),
        regions: b.regions,
        seats: b.seats,
        internal_doors: b.doors,
        internal_stairs: b.stairs,
        main_exit: MainExit {
            position: Vec2::new(DOOR_CENTER_X, 0.0),
            clear_width: exit_width,
            line: exit_line,
        },
        exit_model,
        checkpoints,
        sink: Segment::new(Vec2::new(mx0, sink_y), Vec2::new(mx1, sink_y)),
        approximate: true,
        derived: Derived::default(),
    };
    geometry.rebuild_derived()?;
    Ok(geometry)
}

#[derive(Default)]
struct LayoutBuilder {
    regions: Vec<Region>,
    seats: Vec<Seat>,
    doors: Vec<InternalDoor>,
    stairs: Vec<InternalStair>,
}

impl LayoutBuilder {
    fn region(&mut self, name: &str, level: Level, kind: RegionKind, rect: Rect) -> usize {
        self.regions.push(Region::new(name, level, kind, rect));
        self.regions.len() - 1
    }

    /// A deck of facing-seat bays along a central aisle. `dir` is +1 when the
    /// deck extends towards +x from `x_start`, -1 towards -x.
    fn deck(&mut self, name: &str, level: Level, x_start: f64, y0: f64, bays: usize, dir: f64) {
        let len = bays as f64 * BAY_LENGTH;
        let x_end = x_start + dir * len;
        let a0 = y0 + AISLE_CENTER - AISLE_WIDTH / 2.0;
        let a1 = y0 + AISLE_CENTER + AISLE_WIDTH / 2.0;
        self.region(
            &format!("{name}_aisle"),
            level,
            RegionKind::Floor,
            Rect::new(x_start, a0, x_end, a1),
        );
        let level_base = match level {
            Level::LowerDeck => 100,
            Level::Mezzanine => 200,
            Level::UpperDeck => 300,
            _ => 900,
        };
        for k in 0..bays {
            // Bay extent along the axis, nearest end first.
            let near = x_start + dir * (k as f64 * BAY_LENGTH + BAY_WALL);
            let far = x_start + dir * ((k + 1) as f64 * BAY_LENGTH - BAY_WALL);
            self.region(
                &format!("{name}_bay{k}_a"),
                level,
                RegionKind::Floor,
                Rect::new(near, y0 + SEAT_BAND.0, far, a0),
            );
            self.region(
                &format!("{name}_bay{k}_b"),
                level,
                RegionKind::Floor,
                Rect::new(near, a1, far, y0 + SEAT_BAND.1),
            );
            // Seats nearest the aisle first, nearest the exit end first.
            let xs = [
                x_start + dir * (k as f64 * BAY_LENGTH + 0.3),
                x_start + dir * (k as f64 * BAY_LENGTH + 1.3),
            ];
            let ys = [0.85, 1.85, 0.35, 2.35];
            let mut n = 0;
            for &x in &xs {
                for &y in &ys {
                    self.seats.push(Seat {
                        id: level_base + (k * 8 + n) as u32,
                        position: Vec2::new(x, y0 + y),
                        level,
                    });
                    n += 1;
                }
            }
        }
    }
}

impl RailcarGeometry {
    pub fn exit_type(&self) -> ExitType {
        self.exit_model.tag()
    }

    pub fn exit_width(&self) -> f64 {
        self.main_exit.clear_width
    }

    pub fn seat(&self, id: u32) -> Option<&Seat> {
        self.seats.iter().find(|s| s.id == id)
    }

    pub fn checkpoint(&self, name: &str) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.name == name)
    }

    pub fn walls(&self) -> &[Segment] {
        &self.derived.walls
    }

    pub fn bounds(&self) -> Rect {
        let mut r = self.regions[0].rect();
        for reg in &self.regions[1..] {
            let q = reg.rect();
            r = Rect::new(
                r.min.x.min(q.min.x),
                r.min.y.min(q.min.y),
                r.max.x.max(q.max.x),
                r.max.y.max(q.max.y),
            );
        }
        r
    }

    pub fn is_walkable(&self, p: Vec2) -> bool {
        self.regions.iter().any(|r| r.rect().contains(p))
    }

    /// Index of the first region containing `p`.
    pub fn region_at(&self, p: Vec2) -> Option<usize> {
        self.regions.iter().position(|r| r.rect().contains(p))
    }

    pub fn level_at(&self, p: Vec2) -> Option<Level> {
        self.region_at(p).map(|i| self.regions[i].level)
    }

    /// Distance from `p` to the nearest wall and the unit normal pointing away from it.
    pub fn wall_distance(&self, p: Vec2) -> (f64, Vec2) {
        let mut best = f64::INFINITY;
        let mut normal = Vec2::ZERO;
        for w in &self.derived.walls {
            let c = w.closest_point(p);
            let d = c.distance(p);
            if d < best {
                best = d;
                normal = (p - c).normalized();
            }
        }
        (best, normal)
    }

    /// Whether the straight segment `a -> b` stays inside walkable space.
    pub fn segment_clear(&self, a: Vec2, b: Vec2) -> bool {
        let mut spans: Vec<(f64, f64)> = self
            .regions
            .iter()
            .filter_map(|r| r.rect().clip(a, b))
            .collect();
        if spans.is_empty() {
            return false;
        }
        spans.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut reach = 0.0;
        for (t0, t1) in spans {
            if t0 > reach + 1e-9 {
                return false;
            }
            reach = f64::max(reach, t1);
            if reach >= 1.0 - 1e-12 {
                return true;
            }
        }
        reach >= 1.0 - 1e-12
    }

    fn direct_exit_distance(&self, p: Vec2) -> Option<f64> {
        let q = self.main_exit.line.closest_point(p);
        self.segment_clear(p, q).then(|| p.distance(q))
    }

    /// Shortest walking distance from `from` to the main exit line.
    pub fn shortest_path_length(&self, from: Vec2) -> Result<f64> {
        if !self.is_walkable(from) {
            return Err(Error::NotWalkable {
                x: from.x,
                y: from.y,
            });
        }
        let mut best = self.direct_exit_distance(from).unwrap_or(f64::INFINITY);
        for (i, &n) in self.derived.nodes.iter().enumerate() {
            let dn = self.derived.node_exit_distance[i];
            if !dn.is_finite() {
                continue;
            }
            let via = from.distance(n) + dn;
            if via < best && self.segment_clear(from, n) {
                best = via;
            }
        }
        if best.is_finite() {
            Ok(best)
        } else {
            Err(Error::Unreachable {
                x: from.x,
                y: from.y,
            })
        }
    }

    /// Shortest walking distance between two walkable points.
    pub fn geodesic_distance(&self, a: Vec2, b: Vec2) -> Result<f64> {
        for p in [a, b] {
            if !self.is_walkable(p) {
                return Err(Error::NotWalkable { x: p.x, y: p.y });
            }
        }
        if self.segment_clear(a, b) {
            return Ok(a.distance(b));
        }
        let nodes = &self.derived.nodes;
        let n = nodes.len();
        let target = n;
        let mut dist = vec![f64::INFINITY; n + 1];
        let mut heap = BinaryHeap::new();
        for (i, &v) in nodes.iter().enumerate() {
            if self.segment_clear(a, v) {
                dist[i] = a.distance(v);
                heap.push(HeapItem(dist[i], i));
            }
        }
        let to_b: Vec<Option<f64>> = nodes
            .iter()
            .map(|&v| self.segment_clear(v, b).then(|| v.distance(b)))
            .collect();
        while let Some(HeapItem(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            if u == target {
                return Ok(d);
            }
            if let Some(w) = to_b[u] {
                if d + w < dist[target] {
                    dist[target] = d + w;
                    heap.push(HeapItem(dist[target], target));
                }
            }
            for &(v, w) in &self.derived.adjacency[u] {
                if d + w < dist[v] {
                    dist[v] = d + w;
                    heap.push(HeapItem(dist[v], v));
                }
            }
        }
        Err(Error::Unreachable { x: b.x, y: b.y })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut g: RailcarGeometry = serde_json::from_str(s)?;
        if g.schema != GEOMETRY_SCHEMA {
            return Err(Error::Schema(format!(
                "geometry schema '{}' (expected '{GEOMETRY_SCHEMA}')",
                g.schema
            )));
        }
        for r in &mut g.regions {
            r.rect = Some(Rect::from_polygon(&r.polygon).ok_or_else(|| {
                Error::Schema(format!("region '{}' is not an axis-aligned rectangle", r.name))
            })?);
        }
        g.rebuild_derived()?;
        Ok(g)
    }

    fn rebuild_derived(&mut self) -> Result<()> {
        let rects: Vec<Rect> = self.regions.iter().map(Region::rect).collect();
        let inside = |p: Vec2| rects.iter().any(|r| r.contains_strict(p));
        let walls = wall_segments(&rects);

        // Visibility-graph nodes: region corners on the free-space boundary, plus exit endpoints.
        let e = 1e-6;
        let mut nodes: Vec<Vec2> = Vec::new();
        for r in &rects {
            for c in r.corners() {
                let interior = [(e, e), (-e, e), (e, -e), (-e, -e)]
                    .iter()
                    .all(|&(dx, dy)| inside(Vec2::new(c.x + dx, c.y + dy)));
                if !interior && !nodes.iter().any(|n| n.distance(c) < 1e-9) {
                    nodes.push(c);
                }
            }
        }
        for p in [self.main_exit.line.a, self.main_exit.line.b] {
            if !nodes.iter().any(|n| n.distance(p) < 1e-9) {
                nodes.push(p);
            }
        }
        self.derived.walls = walls;
        let n = nodes.len();
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if self.segment_clear(nodes[i], nodes[j]) {
                    let d = nodes[i].distance(nodes[j]);
                    adjacency[i].push((j, d));
                    adjacency[j].push((i, d));
                }
            }
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        for (i, &v) in nodes.iter().enumerate() {
            if let Some(d) = self.direct_exit_distance(v) {
                dist[i] = d;
                heap.push(HeapItem(d, i));
            }
        }
        while let Some(HeapItem(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &adjacency[u] {
                if d + w < dist[v] {
                    dist[v] = d + w;
                    heap.push(HeapItem(dist[v], v));
                }
            }
        }
        self.derived.nodes = nodes;
        self.derived.adjacency = adjacency;
        self.derived.node_exit_distance = dist;

        for s in &self.seats {
            if !self.is_walkable(s.position) {
                return Err(Error::Config(format!("seat {} outside walkable space", s.id)));
            }
        }
        Ok(())
    }
}

/// Portions of rectangle edges that border non-walkable space.
fn wall_segments(rects: &[Rect]) -> Vec<Segment> {
    let inside = |p: Vec2| rects.iter().any(|r| r.contains_strict(p));
    let mut walls = Vec::new();
    for r in rects {
        let [c0, c1, c2, c3] = r.corners();
        // Edges with outward normals.
        let edges = [
            (c0, c1, Vec2::new(0.0, -1.0)),
            (c1, c2, Vec2::new(1.0, 0.0)),
            (c2, c3, Vec2::new(0.0, 1.0)),
            (c3, c0, Vec2::new(-1.0, 0.0)),
        ];
        for (a, b, normal) in edges {
            let horizontal = (a.y - b.y).abs() < EPS;
            let (lo, hi) = if horizontal {
                (a.x.min(b.x), a.x.max(b.x))
            } else {
                (a.y.min(b.y), a.y.max(b.y))
            };
            let mut cuts = vec![lo, hi];
            for q in rects {
                for v in [q.min, q.max] {
                    let t = if horizontal { v.x } else { v.y };
                    if t > lo + EPS && t < hi - EPS {
                        cuts.push(t);
                    }
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup_by(|x, y| (*x - *y).abs() < EPS);
            for w in cuts.windows(2) {
                let mid = (w[0] + w[1]) / 2.0;
                let on_edge = if horizontal {
                    Vec2::new(mid, a.y)
                } else {
                    Vec2::new(a.x, mid)
                };
                let probe = on_edge + normal * 1e-6;
                if !inside(probe) {
                    let (p, q) = if horizontal {
                        (Vec2::new(w[0], a.y), Vec2::new(w[1], a.y))
                    } else {
                        (Vec2::new(a.x, w[0]), Vec2::new(a.x, w[1]))
                    };
                    walls.push(Segment::new(p, q));
                }
            }
        }
    }
    walls
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seat_pos(g: &RailcarGeometry, level: Level) -> Vec<Vec2> {
        g.seats
            .iter()
            .filter(|s| s.level == level)
            .map(|s| s.position)
            .collect()
    }

    #[test]
    fn internal_dimensions_are_fixed() {
        let g = build_railcar(0.9, ExitType::Platform).unwrap();
        assert_eq!(g.internal_doors.len(), 1);
        assert!((g.internal_doors[0].clear_width - 0.65).abs() < 1e-12);
        let upper = g.internal_stairs.iter().find(|s| s.name == "upper_stair").unwrap();
        assert!((upper.width - 0.76).abs() < 1e-12);
        assert!((upper.slope_deg - 36.0).abs() < 1e-12);
        let flight = g.internal_stairs.iter().find(|s| s.name == "mezzanine_flight").unwrap();
        assert!((flight.width - 0.84).abs() < 1e-12);
        assert!((flight.slope_deg - 40.0).abs() < 1e-12);
        assert!(g.seats.len() >= 46);
        for s in &g.seats {
            assert!(g.is_walkable(s.position), "seat {} not walkable", s.id);
        }
    }

    #[test]
    fn platform_sink_is_a_tenth_beyond_the_exit() {
        let g = build_railcar(0.65, ExitType::Platform).unwrap();
        assert!((g.exit_width() - 0.65).abs() < 1e-12);
        assert!((g.main_exit.line.length() - 0.65).abs() < 1e-12);
        assert!((g.sink.a.y - (-0.1)).abs() < 1e-12);
    }

    #[test]
    fn jump_exit_has_drop_and_two_agent_gate() {
        let g = build_railcar(1.34, ExitType::Jump).unwrap();
        match g.exit_model {
            ExitModel::Jump {
                drop_height,
                gate_capacity,
                ..
            } => {
                assert!((drop_height - 0.75).abs() < 1e-12);
                assert_eq!(gate_capacity, 2);
            }
            other => panic!("unexpected exit model {other:?}"),
        }
    }

    #[test]
    fn nominal_door_width_builds() {
        let g = build_railcar(NOMINAL_EXIT_WIDTH, ExitType::Platform).unwrap();
        assert!((g.exit_width() - 1.30).abs() < 1e-12);
    }

    #[test]
    fn width_outside_sanity_bounds_is_rejected() {
        assert!(matches!(build_railcar(0.29, ExitType::Platform), Err(Error::Config(_))));
        assert!(matches!(build_railcar(2.01, ExitType::Jump), Err(Error::Config(_))));
        assert!(build_railcar(f64::NAN, ExitType::Stairs).is_err());
    }

    #[test]
    fn external_steps_dimensions() {
        let m = ExitModel::for_type(ExitType::Stairs);
        let len = m.stair_inclined_length().unwrap();
        assert!((len - (0.6f64).hypot(1.5)).abs() < 1e-12);
        if let ExitModel::Stairs { rise, tread, slope_deg, steps } = m {
            assert_eq!(steps, 3);
            assert!((rise - 0.2).abs() < 1e-12 && (tread - 0.5).abs() < 1e-12);
            assert!(((rise / tread).atan().to_degrees() - slope_deg).abs() < 0.5);
        }
    }

    #[test]
    fn point_on_exit_line_has_zero_distance() {
        let g = build_railcar(1.1, ExitType::Platform).unwrap();
        let d = g.shortest_path_length(Vec2::new(1.0, 0.0)).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn boarding_point_is_straight_line() {
        let g = build_railcar(1.34, ExitType::Platform).unwrap();
        let p = Vec2::new(1.1, 1.5);
        let d = g.shortest_path_length(p).unwrap();
        assert!((d - 1.5).abs() < 1e-9, "got {d}");
    }

    #[test]
    fn upper_deck_path_includes_the_staircase() {
        let g = build_railcar(0.9, ExitType::Platform).unwrap();
        let stair = g.internal_stairs.iter().find(|s| s.name == "upper_stair").unwrap();
        let rect = g.regions[stair.region].rect();
        let upper = seat_pos(&g, Level::UpperDeck);
        for p in upper {
            let d = g.shortest_path_length(p).unwrap();
            // The path must at least cross the stair corridor lengthwise.
            assert!(d > stair.inclined_length + (p.y - rect.max.y).max(0.0));
        }
        assert!(stair.inclined_length > STAIR_CHECKPOINT_SPACING);
        let ch03 = g.checkpoint("CH03").unwrap().segment.midpoint();
        let ch04 = g.checkpoint("CH04").unwrap().segment.midpoint();
        assert!((ch03.distance(ch04) - STAIR_CHECKPOINT_SPACING).abs() < 1e-9);
    }

    #[test]
    fn unwalkable_start_is_an_error() {
        let g = build_railcar(0.9, ExitType::Platform).unwrap();
        assert!(matches!(
            g.shortest_path_length(Vec2::new(50.0, 50.0)),
            Err(Error::NotWalkable { .. })
        ));
    }

    #[test]
    fn every_seat_reaches_the_exit_for_all_exit_types() {
        for t in ExitType::ALL {
            let g = build_railcar(0.65, t).unwrap();
            for s in &g.seats {
                let d = g.shortest_path_length(s.position).unwrap();
                assert!(d.is_finite() && d > 0.0);
            }
        }
    }

    #[test]
    fn json_round_trip_preserves_distances() {
        let g = build_railcar(0.75, ExitType::Stairs).unwrap();
        let json = g.to_json().unwrap();
        let h = RailcarGeometry::from_json(&json).unwrap();
        assert_eq!(h.regions.len(), g.regions.len());
        for s in g.seats.iter().step_by(7) {
            let a = g.shortest_path_length(s.position).unwrap();
            let b = h.shortest_path_length(s.position).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let g = build_railcar(0.75, ExitType::Stairs).unwrap();
        let json = g.to_json().unwrap().replace(GEOMETRY_SCHEMA, "other/v0");
        assert!(matches!(RailcarGeometry::from_json(&json), Err(Error::Schema(_))));
    }

    #[test]
    fn walls_bound_the_aisle() {
        let g = build_railcar(0.9, ExitType::Platform).unwrap();
        // Aisle centre between bay rows, far from any bay opening.
        let (d, _) = g.wall_distance(Vec2::new(3.7, 1.35));
        assert!((d - AISLE_WIDTH / 2.0).abs() < 1e-9);
        let (d_mouth, n) = g.wall_distance(Vec2::new(1.0, 0.4));
        assert!((d_mouth - 0.45).abs() < 1e-9);
        assert!(n.x.abs() > 0.99);
    }
}
