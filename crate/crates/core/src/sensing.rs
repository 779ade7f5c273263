//! Virtual motion capture and IMU, and the speed estimators the controllers
//! read.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{cross, perp, unit, wrap_deg, Pose, Vec2};

/// Third marker position in the body frame (cm): behind the centre and off
/// to the right, so the rig is never symmetric.
pub const THIRD_MARKER_AXIAL: f64 = -1.2;
pub const THIRD_MARKER_LATERAL: f64 = -0.8;

/// Moving-average window of the motion-capture speed estimate, ms.
pub const MOCAP_WINDOW_MS: f64 = 250.0;
/// Low-pass cutoff for the IMU yaw rate, Hz.
pub const IMU_CUTOFF_HZ: f64 = 10.0;
/// Slowest IMU cadence the filter accepts, Hz.
pub const IMU_MIN_RATE_HZ: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerTriple {
    pub anterior: Vec2,
    pub center: Vec2,
    pub third: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Aligned,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Aligned => "aligned",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            "aligned" => Some(Side::Aligned),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEstimate {
    /// Yaw rate, deg/s, counterclockwise positive.
    pub omega: f64,
    /// Linear speed, cm/s.
    pub v_l: f64,
    /// Signed speed along the body axis, cm/s.
    pub v_f: f64,
    /// Time of the newest sample used, s.
    pub t: f64,
}

pub fn markers_from_pose(pose: &Pose, body_length: f64) -> Result<MarkerTriple> {
    if !(body_length > 0.0) {
        return Err(Error::Degenerate("body length must be positive"));
    }
    let h = pose.heading_unit();
    let c = pose.position;
    Ok(MarkerTriple {
        anterior: c + h * (body_length / 2.0),
        center: c,
        third: c + h * THIRD_MARKER_AXIAL + perp(h) * THIRD_MARKER_LATERAL,
    })
}

pub fn distance_to_target(anterior: Vec2, dest: Vec2) -> f64 {
    (anterior - dest).norm()
}

/// Unsigned angle at the centre marker between the body axis and the
/// direction to `dest`, plus the side the destination lies on.
///
/// The angle is the arccosine of the normalised dot product. It is
/// evaluated as `atan2(|cross|, dot)`, the same angle without the
/// precision loss of `acos` near 0° and 180°.
pub fn orientation_error(m: &MarkerTriple, dest: Vec2) -> Result<(f64, Side)> {
    let body = m.anterior - m.center;
    let to = dest - m.center;
    if body.norm() == 0.0 {
        return Err(Error::Degenerate("anterior marker coincides with centre"));
    }
    if to.norm() == 0.0 {
        return Err(Error::Degenerate("destination coincides with centre"));
    }
    let c = cross(body, to);
    let gamma = c.abs().atan2(body.dot(&to)).to_degrees();
    let side = if c.abs() < 1e-12 {
        Side::Aligned
    } else if c > 0.0 {
        Side::Left
    } else {
        Side::Right
    };
    Ok((gamma, side))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    /// Seconds.
    pub t: f64,
    pub pose: Pose,
}

/// Number of 30 ms-style samples needed to span the moving-average window.
pub fn mocap_window_len(tick_ms: f64) -> usize {
    (MOCAP_WINDOW_MS / tick_ms).ceil() as usize + 1
}

/// Finite-difference speeds averaged over a window of tracked poses.
pub fn mocap_speeds(window: &[MotionSample]) -> Result<SpeedEstimate> {
    let span_ms = match (window.first(), window.last()) {
        (Some(a), Some(b)) if window.len() >= 2 => (b.t - a.t) * 1000.0,
        _ => 0.0,
    };
    if span_ms < MOCAP_WINDOW_MS - 1e-6 {
        return Err(Error::InsufficientSamples {
            needed_ms: MOCAP_WINDOW_MS,
            got_ms: span_ms,
        });
    }
    let (mut w, mut vl, mut vf) = (0.0, 0.0, 0.0);
    let n = (window.len() - 1) as f64;
    for pair in window.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = b.t - a.t;
        if !(dt > 0.0) {
            return Err(Error::Degenerate(
                "samples must be strictly increasing in time",
            ));
        }
        let dh = wrap_deg(b.pose.heading_deg - a.pose.heading_deg);
        let dp = b.pose.position - a.pose.position;
        w += dh / dt;
        vl += dp.norm() / dt;
        vf += dp.dot(&unit(a.pose.heading_deg + dh / 2.0)) / dt;
    }
    Ok(SpeedEstimate {
        omega: w / n,
        v_l: vl / n,
        v_f: vf / n,
        t: window.last().unwrap().t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoise {
    /// Gyro white noise, deg/s.
    pub gyro_sd: f64,
    /// Constant gyro bias, deg/s.
    pub gyro_bias: f64,
    /// Accelerometer white noise per axis, cm/s².
    pub accel_sd: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        ImuNoise {
            gyro_sd: 0.5,
            gyro_bias: 0.1,
            accel_sd: 2.0,
        }
    }
}

impl ImuNoise {
    pub fn none() -> Self {
        ImuNoise {
            gyro_sd: 0.0,
            gyro_bias: 0.0,
            accel_sd: 0.0,
        }
    }
}

/// Ground-truth motion at one instant, in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueMotion {
    pub t: f64,
    pub yaw_rate: f64,
    /// (forward, left) acceleration, cm/s².
    pub accel: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub yaw_rate: f64,
    pub accel: Vec2,
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    if sd <= 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).expect("finite sd").sample(rng)
    }
}

pub fn imu_sample<R: Rng + ?Sized>(m: &TrueMotion, noise: &ImuNoise, rng: &mut R) -> ImuSample {
    ImuSample {
        t: m.t,
        yaw_rate: m.yaw_rate + noise.gyro_bias + gauss(rng, noise.gyro_sd),
        accel: Vec2::new(
            m.accel.x + gauss(rng, noise.accel_sd),
            m.accel.y + gauss(rng, noise.accel_sd),
        ),
    }
}

/// Filter memory of the IMU speed estimator.
///
/// Yaw rate: `y[k] = y[k-1] + a (x[k] - y[k-1])` with `a = dt / (RC + dt)`
/// and `RC = 1 / (2π f_c)`. Velocity: body-frame accelerations integrated
/// with the rotation terms, then pulled toward zero with time constant
/// `leak_tau` so accelerometer noise cannot accumulate without bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuEstimator {
    pub cutoff_hz: f64,
    pub leak_tau: f64,
    pub omega: f64,
    /// (forward, left) velocity, cm/s.
    pub velocity: Vec2,
    pub last_t: Option<f64>,
}

impl Default for ImuEstimator {
    fn default() -> Self {
        ImuEstimator::new(IMU_CUTOFF_HZ, 10.0)
    }
}

impl ImuEstimator {
    pub fn new(cutoff_hz: f64, leak_tau: f64) -> Self {
        ImuEstimator {
            cutoff_hz,
            leak_tau,
            omega: 0.0,
            velocity: Vec2::zeros(),
            last_t: None,
        }
    }

    pub fn time_constant(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.cutoff_hz)
    }

    /// Seeds the velocity state, e.g. with the known speed at start-up.
    pub fn with_velocity(mut self, forward: f64) -> Self {
        self.velocity = Vec2::new(forward, 0.0);
        self
    }

    pub fn update(&mut self, s: &ImuSample) -> Result<SpeedEstimate> {
        if let Some(t0) = self.last_t {
            let dt = s.t - t0;
            if !(dt > 0.0) {
                return Err(Error::Degenerate(
                    "IMU samples must be strictly increasing in time",
                ));
            }
            if dt > 1.0 / IMU_MIN_RATE_HZ + 1e-9 {
                return Err(Error::CadenceTooLow(1.0 / dt));
            }
            let a = dt / (self.time_constant() + dt);
            self.omega += a * (s.yaw_rate - self.omega);
            let w = self.omega.to_radians();
            let v = self.velocity;
            let dv = Vec2::new(s.accel.x + w * v.y, s.accel.y - w * v.x);
            let decay = (-dt / self.leak_tau).exp();
            self.velocity = (v + dv * dt) * decay;
        }
        self.last_t = Some(s.t);
        Ok(self.estimate())
    }

    pub fn estimate(&self) -> SpeedEstimate {
        SpeedEstimate {
            omega: self.omega,
            v_l: self.velocity.norm(),
            v_f: self.velocity.x,
            t: self.last_t.unwrap_or(0.0),
        }
    }
}

/// Runs a batch of samples through an estimator and returns the final
/// estimate with the updated memory.
pub fn imu_speeds(
    samples: &[ImuSample],
    mut est: ImuEstimator,
) -> Result<(SpeedEstimate, ImuEstimator)> {
    let mut out = est.estimate();
    for s in samples {
        out = est.update(s)?;
    }
    Ok((out, est))
}
