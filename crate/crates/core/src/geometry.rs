//! Planar geometry shared by the arena, the agent and the sensors.
//!
//! Frame: x–y in centimetres, headings in degrees counterclockwise from +x.

use nalgebra::Vector2;
pub type Vec2 = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    pub heading_deg: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading_deg: f64) -> Self {
        Pose {
            position: Vec2::new(x, y),
            heading_deg,
        }
    }

    pub fn heading_unit(&self) -> Vec2 {
        unit(self.heading_deg)
    }

    pub fn translated(&self, by: Vec2) -> Pose {
        Pose {
            position: self.position + by,
            heading_deg: self.heading_deg,
        }
    }
}

/// Unit vector for a heading in degrees.
pub fn unit(deg: f64) -> Vec2 {
    let r = deg.to_radians();
    Vec2::new(r.cos(), r.sin())
}

/// Rotates by +90° (counterclockwise).
pub fn perp(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

pub fn heading_of(v: Vec2) -> f64 {
    v.y.atan2(v.x).to_degrees()
}

/// Wraps an angle to (-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let mut x = a % 360.0;
    if x <= -180.0 {
        x += 360.0;
    } else if x > 180.0 {
        x -= 360.0;
    }
    x
}

/// Signed smallest rotation taking `from` to `to`, degrees.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    wrap_deg(to - from)
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, Vec2) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    let q = a + ab * t;
    ((p - q).norm(), q)
}

/// Acute angle between two undirected lines, degrees in [0, 90].
pub fn line_angle(a: Vec2, b: Vec2) -> f64 {
    let c = (a.dot(&b) / (a.norm() * b.norm())).abs().min(1.0);
    c.acos().to_degrees()
}
