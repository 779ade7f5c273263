//! Terrains and the geometric queries the agent and the analysis need.
//!
//! Obstacles are thick straight segments: rectangles of the given thickness
//! centred on the segment `a`–`b`. The insect body is the line from its
//! posterior to its anterior point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{line_angle, perp, Pose, Vec2};

pub const NAV_DISC_RADIUS: f64 = 5.0;
pub const MISSION_TARGET_RADIUS: f64 = 8.0;
pub const OPEN_FIELD_DISTANCE: f64 = 65.0;
pub const OBSTACLE_FIELD_DISTANCE: f64 = 45.0;

pub const ENCLOSURE_LENGTH: f64 = 31.0;
pub const ENCLOSURE_WIDTH: f64 = 24.0;
pub const ENTRANCE_WIDTH: f64 = 8.0;
/// Distance from the near corner to the start of the entrance, along the
/// upper wall. Read off the terrain photographs; approximate.
pub const ENTRANCE_OFFSET: f64 = 4.0;

pub const LOW_OBSTACLE_HEIGHT: f64 = 1.5;
pub const LOW_OBSTACLE_THICKNESS: f64 = 2.5;
pub const TALL_WALL_HEIGHT: f64 = 10.0;
pub const TALL_WALL_THICKNESS: f64 = 0.3;

/// Anything at or below this height can be climbed by the agent.
pub const CLIMBABLE_MAX_HEIGHT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    NoObstacle,
    LowObstacle,
    TallWall,
    MockDisaster,
}

impl TerrainKind {
    pub const PRESETS: [TerrainKind; 3] = [
        TerrainKind::NoObstacle,
        TerrainKind::LowObstacle,
        TerrainKind::TallWall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::NoObstacle => "no_obstacle",
            TerrainKind::LowObstacle => "low_obstacle",
            TerrainKind::TallWall => "tall_wall",
            TerrainKind::MockDisaster => "mock_disaster",
        }
    }

    pub fn parse(s: &str) -> Option<TerrainKind> {
        match s {
            "no_obstacle" | "no-obstacle" | "none" => Some(TerrainKind::NoObstacle),
            "low_obstacle" | "low-obstacle" | "low" => Some(TerrainKind::LowObstacle),
            "tall_wall" | "tall-wall" | "tall" => Some(TerrainKind::TallWall),
            "mock_disaster" | "mock-disaster" | "mission" => Some(TerrainKind::MockDisaster),
            _ => None,
        }
    }
}

impl std::fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: Vec2,
    pub radius: f64,
}

impl Disc {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Disc {
            center: Vec2::new(x, y),
            radius,
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
        )
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleSegment {
    pub a: Vec2,
    pub b: Vec2,
    pub height: f64,
    pub thickness: f64,
}

impl ObstacleSegment {
    pub fn new(a: (f64, f64), b: (f64, f64), height: f64, thickness: f64) -> Self {
        ObstacleSegment {
            a: Vec2::new(a.0, a.1),
            b: Vec2::new(b.0, b.1),
            height,
            thickness,
        }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn direction(&self) -> Vec2 {
        (self.b - self.a) / self.length()
    }

    pub fn climbable(&self) -> bool {
        self.height <= CLIMBABLE_MAX_HEIGHT
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let n = perp(self.direction()) * (self.thickness / 2.0);
        [self.a - n, self.b - n, self.b + n, self.a + n]
    }

    fn local_point(&self, p: Vec2) -> Vec2 {
        let c = (self.a + self.b) / 2.0;
        let u = self.direction();
        let d = p - c;
        Vec2::new(d.dot(&u), d.dot(&perp(u)))
    }

    fn world_dir(&self, v: Vec2) -> Vec2 {
        let u = self.direction();
        u * v.x + perp(u) * v.y
    }

    fn half_extents(&self) -> Vec2 {
        Vec2::new(self.length() / 2.0, self.thickness / 2.0)
    }

    /// Signed distance from a point to the obstacle rectangle (negative
    /// inside).
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        box_sdf(self.local_point(p), self.half_extents())
    }

    /// Closest approach between the body segment `p0`–`p1` and this
    /// obstacle: signed distance (negative = penetration depth) and the unit
    /// normal pointing from the obstacle toward the body at the deepest or
    /// nearest body point.
    pub fn probe_segment(&self, p0: Vec2, p1: Vec2) -> (f64, Vec2, Vec2) {
        let h = self.half_extents();
        let q0 = self.local_point(p0);
        let q1 = self.local_point(p1);
        let d = q1 - q0;
        let mut cands: Vec<f64> = vec![0.0, 1.0];
        // crossings of the four face lines
        for (k, lim) in [(0usize, h.x), (0, -h.x), (1, h.y), (1, -h.y)] {
            if d[k].abs() > 1e-15 {
                cands.push((lim - q0[k]) / d[k]);
            }
        }
        // kinks of the interior distance max(|x|-hx, |y|-hy)
        for sx in [1.0, -1.0] {
            for sy in [1.0, -1.0] {
                let den = sx * d.x - sy * d.y;
                if den.abs() > 1e-15 {
                    cands.push((sy * q0.y - h.y - sx * q0.x + h.x) / den);
                }
            }
        }
        if d.x.abs() > 1e-15 {
            cands.push(-q0.x / d.x);
        }
        if d.y.abs() > 1e-15 {
            cands.push(-q0.y / d.y);
        }
        // closest points to the corners
        let len2 = d.norm_squared();
        if len2 > 0.0 {
            for cx in [h.x, -h.x] {
                for cy in [h.y, -h.y] {
                    let c = Vec2::new(cx, cy);
                    cands.push((c - q0).dot(&d) / len2);
                }
            }
        }
        let mut best_s = 0.0;
        let mut best = f64::INFINITY;
        for s in cands {
            if !s.is_finite() {
                continue;
            }
            let s = s.clamp(0.0, 1.0);
            let v = box_sdf(q0 + d * s, h);
            if v < best {
                best = v;
                best_s = s;
            }
        }
        let q = q0 + d * best_s;
        let n_local = box_normal(q, h);
        let point = p0 + (p1 - p0) * best_s;
        (best, self.world_dir(n_local), point)
    }
}

fn box_sdf(p: Vec2, h: Vec2) -> f64 {
    let qx = p.x.abs() - h.x;
    let qy = p.y.abs() - h.y;
    let ox = qx.max(0.0);
    let oy = qy.max(0.0);
    (ox * ox + oy * oy).sqrt() + qx.max(qy).min(0.0)
}

fn box_normal(p: Vec2, h: Vec2) -> Vec2 {
    let qx = p.x.abs() - h.x;
    let qy = p.y.abs() - h.y;
    let sx = if p.x >= 0.0 { 1.0 } else { -1.0 };
    let sy = if p.y >= 0.0 { 1.0 } else { -1.0 };
    if qx > 0.0 || qy > 0.0 {
        let v = Vec2::new(qx.max(0.0) * sx, qy.max(0.0) * sy);
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
    if qx >= qy {
        Vec2::new(sx, 0.0)
    } else {
        Vec2::new(0.0, sy)
    }
}

/// A body–obstacle contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub segment: usize,
    /// Unit vector along the obstacle surface at the contact.
    pub tangent: Vec2,
    /// Unit vector pointing from the obstacle toward the body.
    pub normal: Vec2,
    pub penetration: f64,
    pub point: Vec2,
}

/// Nearest obstacle to a body segment, including clearance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proximity {
    pub segment: usize,
    pub signed_distance: f64,
    pub normal: Vec2,
    pub point: Vec2,
}

impl Proximity {
    pub fn contact(&self) -> Contact {
        Contact {
            segment: self.segment,
            tangent: perp(self.normal),
            normal: self.normal,
            penetration: (-self.signed_distance).max(0.0),
            point: self.point,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arena {
    pub kind: TerrainKind,
    pub bounds: Bounds,
    pub obstacles: Vec<ObstacleSegment>,
    pub origin: Disc,
    pub targets: Vec<Disc>,
}

/// User layout for a mock-disaster arena.
#[derive(Debug, Clone, PartialEq)]
pub struct ArenaLayout {
    pub bounds: Bounds,
    pub obstacles: Vec<ObstacleSegment>,
    pub origin: Disc,
    pub targets: Vec<Disc>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerrainSpec {
    NoObstacle,
    LowObstacle,
    TallWall,
    MockDisaster(ArenaLayout),
}

fn preset_bounds() -> Bounds {
    Bounds {
        min: Vec2::new(-25.0, -45.0),
        max: Vec2::new(90.0, 45.0),
    }
}

/// The 31 × 24 cm enclosure around the destination: a solid near wall
/// facing the origin, solid far and lower walls, and the 8 cm entrance in
/// the upper wall.
fn enclosure(height: f64, thickness: f64) -> Vec<ObstacleSegment> {
    let cx = OBSTACLE_FIELD_DISTANCE;
    let x0 = cx - ENCLOSURE_LENGTH / 2.0;
    let x1 = cx + ENCLOSURE_LENGTH / 2.0;
    let y0 = -ENCLOSURE_WIDTH / 2.0;
    let y1 = ENCLOSURE_WIDTH / 2.0;
    let g0 = x0 + ENTRANCE_OFFSET;
    let g1 = g0 + ENTRANCE_WIDTH;
    vec![
        ObstacleSegment::new((x0, y0), (x0, y1), height, thickness),
        ObstacleSegment::new((x0, y1), (g0, y1), height, thickness),
        ObstacleSegment::new((g1, y1), (x1, y1), height, thickness),
        ObstacleSegment::new((x1, y1), (x1, y0), height, thickness),
        ObstacleSegment::new((x1, y0), (x0, y0), height, thickness),
    ]
}

pub fn build_terrain(spec: TerrainSpec) -> Result<Arena> {
    let origin = Disc::new(0.0, 0.0, NAV_DISC_RADIUS);
    let arena = match spec {
        TerrainSpec::NoObstacle => Arena {
            kind: TerrainKind::NoObstacle,
            bounds: preset_bounds(),
            obstacles: Vec::new(),
            origin,
            targets: vec![Disc::new(OPEN_FIELD_DISTANCE, 0.0, NAV_DISC_RADIUS)],
        },
        TerrainSpec::LowObstacle => Arena {
            kind: TerrainKind::LowObstacle,
            bounds: preset_bounds(),
            obstacles: enclosure(LOW_OBSTACLE_HEIGHT, LOW_OBSTACLE_THICKNESS),
            origin,
            targets: vec![Disc::new(OBSTACLE_FIELD_DISTANCE, 0.0, NAV_DISC_RADIUS)],
        },
        TerrainSpec::TallWall => Arena {
            kind: TerrainKind::TallWall,
            bounds: preset_bounds(),
            obstacles: enclosure(TALL_WALL_HEIGHT, TALL_WALL_THICKNESS),
            origin,
            targets: vec![Disc::new(OBSTACLE_FIELD_DISTANCE, 0.0, NAV_DISC_RADIUS)],
        },
        TerrainSpec::MockDisaster(layout) => Arena {
            kind: TerrainKind::MockDisaster,
            bounds: layout.bounds,
            obstacles: layout.obstacles,
            origin: layout.origin,
            targets: layout.targets,
        },
    };
    arena.validate()?;
    Ok(arena)
}

pub fn preset(kind: TerrainKind) -> Arena {
    let spec = match kind {
        TerrainKind::NoObstacle => TerrainSpec::NoObstacle,
        TerrainKind::LowObstacle => TerrainSpec::LowObstacle,
        TerrainKind::TallWall => TerrainSpec::TallWall,
        TerrainKind::MockDisaster => {
            return crate::mission::reference_scenario().arena;
        }
    };
    build_terrain(spec).expect("preset terrains are valid")
}

impl Arena {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArena(m));
        if !(self.bounds.max.x > self.bounds.min.x && self.bounds.max.y > self.bounds.min.y) {
            return bad("empty bounds".into());
        }
        let disc_inside = |d: &Disc| {
            d.radius > 0.0
                && d.center.x - d.radius >= self.bounds.min.x
                && d.center.x + d.radius <= self.bounds.max.x
                && d.center.y - d.radius >= self.bounds.min.y
                && d.center.y + d.radius <= self.bounds.max.y
        };
        if !disc_inside(&self.origin) {
            return bad("origin disc outside bounds or non-positive radius".into());
        }
        if self.targets.is_empty() {
            return bad("no targets".into());
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !disc_inside(t) {
                return bad(format!("target {i} outside bounds or non-positive radius"));
            }
            for (j, u) in self.targets.iter().enumerate().skip(i + 1) {
                if (t.center - u.center).norm() < t.radius + u.radius {
                    return bad(format!("targets {i} and {j} overlap"));
                }
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.length() > 0.0) {
                return bad(format!("obstacle {i} has zero length"));
            }
            if !(o.thickness > 0.0) || !(o.height > 0.0) {
                return bad(format!("obstacle {i} needs positive height and thickness"));
            }
            if o.corners().iter().any(|c| !self.bounds.contains(*c)) {
                return bad(format!("obstacle {i} extends outside bounds"));
            }
        }
        Ok(())
    }

    pub fn destination(&self) -> &Disc {
        self.targets.last().expect("validated arena has a target")
    }

    /// Nearest obstacle to the body segment, skipping `exclude`.
    pub fn proximity(&self, p0: Vec2, p1: Vec2, exclude: Option<usize>) -> Option<Proximity> {
        let mut best: Option<Proximity> = None;
        for (i, o) in self.obstacles.iter().enumerate() {
            if Some(i) == exclude {
                continue;
            }
            let (sd, normal, point) = o.probe_segment(p0, p1);
            if best.is_none_or(|b| sd < b.signed_distance) {
                best = Some(Proximity {
                    segment: i,
                    signed_distance: sd,
                    normal,
                    point,
                });
            }
        }
        best
    }

    /// Acute angle between the body axis and the obstacle nearest to the
    /// pose's centre, with that obstacle's index.
    pub fn nearest_obstacle_angle(&self, pose: &Pose) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, o) in self.obstacles.iter().enumerate() {
            let d = o.signed_distance(pose.position);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| {
            let theta = line_angle(pose.heading_unit(), self.obstacles[i].direction());
            (theta, i)
        })
    }

    pub fn contact_query(&self, pose: &Pose, body_length: f64) -> Option<Contact> {
        let (p0, p1) = body_segment(pose, body_length);
        self.proximity(p0, p1, None)
            .filter(|p| p.signed_distance <= 0.0)
            .map(|p| p.contact())
    }
}

/// Posterior and anterior points of a body centred on the pose.
/// Plain file form of an arena: discs as `[x, y, radius]`, obstacles as
/// `{ a, b, height_cm, thickness_cm }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArenaFile {
    kind: TerrainKind,
    bounds: [[f64; 2]; 2],
    origin: [f64; 3],
    targets: Vec<[f64; 3]>,
    #[serde(default)]
    obstacles: Vec<ObstacleFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleFile {
    a: [f64; 2],
    b: [f64; 2],
    height_cm: f64,
    thickness_cm: f64,
}

impl Arena {
    pub fn to_toml(&self) -> String {
        let disc = |d: &Disc| [d.center.x, d.center.y, d.radius];
        let f = ArenaFile {
            kind: self.kind,
            bounds: [
                [self.bounds.min.x, self.bounds.min.y],
                [self.bounds.max.x, self.bounds.max.y],
            ],
            origin: disc(&self.origin),
            targets: self.targets.iter().map(disc).collect(),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| ObstacleFile {
                    a: [o.a.x, o.a.y],
                    b: [o.b.x, o.b.y],
                    height_cm: o.height,
                    thickness_cm: o.thickness,
                })
                .collect(),
        };
        toml::to_string(&f).expect("arena serializes")
    }

    pub fn from_toml(text: &str) -> Result<Arena> {
        let f: ArenaFile = toml::from_str(text).map_err(|e| Error::Config {
            path: "arena".into(),
            message: e.to_string(),
        })?;
        let disc = |d: [f64; 3]| Disc::new(d[0], d[1], d[2]);
        let arena = Arena {
            kind: f.kind,
            bounds: Bounds {
                min: Vec2::new(f.bounds[0][0], f.bounds[0][1]),
                max: Vec2::new(f.bounds[1][0], f.bounds[1][1]),
            },
            obstacles: f
                .obstacles
                .iter()
                .map(|o| {
                    ObstacleSegment::new(
                        (o.a[0], o.a[1]),
                        (o.b[0], o.b[1]),
                        o.height_cm,
                        o.thickness_cm,
                    )
                })
                .collect(),
            origin: disc(f.origin),
            targets: f.targets.into_iter().map(disc).collect(),
        };
        arena.validate()?;
        Ok(arena)
    }
}

pub fn body_segment(pose: &Pose, body_length: f64) -> (Vec2, Vec2) {
    let h = pose.heading_unit() * (body_length / 2.0);
    (pose.position - h, pose.position + h)
}
