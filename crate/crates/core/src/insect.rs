//! Stochastic kinematic cockroach.
//!
//! A unicycle (position, heading, signed forward speed) driven by a small set
//! of maneuvers. Stimulation changes the maneuver; walls and low blocks
//! trigger the contact behaviors (alignment, pressing, backing off, dashing
//! along the wall, climbing). Every random draw comes from the stream the
//! caller passes in, so a step is a pure function of its inputs.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::arena::{body_segment, Arena, ObstacleSegment, Proximity};
use crate::error::{Error, Result};
use crate::geometry::{heading_of, line_angle, perp, unit, wrap_deg, Pose, Vec2};

/// Touch tolerance for contact events, cm.
const TOUCH: f64 = 0.05;
/// Clearance at which a wall counts as left behind, cm.
const RELEASE: f64 = 1.0;
/// Largest translation between two collision checks, cm.
const MAX_CHUNK: f64 = 0.1;
/// Elevation gained above the obstacle top during a climb, cm.
const CLIMB_OVERSHOOT: f64 = 1.2;
const MAX_CLIMB_TIME: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Maneuver {
    FreeWalk,
    Turning,
    Dashing,
    WallFollow,
    Climbing,
    Backward,
    Stopped,
}

impl Maneuver {
    pub fn name(self) -> &'static str {
        match self {
            Maneuver::FreeWalk => "free_walk",
            Maneuver::Turning => "turning",
            Maneuver::Dashing => "dashing",
            Maneuver::WallFollow => "wall_follow",
            Maneuver::Climbing => "climbing",
            Maneuver::Backward => "backward",
            Maneuver::Stopped => "stopped",
        }
    }

    pub fn parse(s: &str) -> Option<Maneuver> {
        [
            Maneuver::FreeWalk,
            Maneuver::Turning,
            Maneuver::Dashing,
            Maneuver::WallFollow,
            Maneuver::Climbing,
            Maneuver::Backward,
            Maneuver::Stopped,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StimulusKind {
    None,
    LeftCercus,
    RightCercus,
    Accelerate,
}

impl StimulusKind {
    pub fn name(self) -> &'static str {
        match self {
            StimulusKind::None => "none",
            StimulusKind::LeftCercus => "left_cercus",
            StimulusKind::RightCercus => "right_cercus",
            StimulusKind::Accelerate => "accelerate",
        }
    }

    pub fn parse(s: &str) -> Option<StimulusKind> {
        [
            StimulusKind::None,
            StimulusKind::LeftCercus,
            StimulusKind::RightCercus,
            StimulusKind::Accelerate,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    /// +1 for a counterclockwise turn, -1 for clockwise. Stimulating a
    /// cercus turns the insect away from that side.
    pub fn turn_sign(self) -> Option<f64> {
        match self {
            StimulusKind::LeftCercus => Some(-1.0),
            StimulusKind::RightCercus => Some(1.0),
            _ => None,
        }
    }
}

/// Electrical waveform of every stimulus. Logged, never varied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waveform {
    pub frequency_hz: f64,
    pub duty: f64,
    pub amplitude_v: (f64, f64),
}

pub const STIMULUS_WAVEFORM: Waveform = Waveform {
    frequency_hz: 40.0,
    duty: 0.5,
    amplitude_v: (6.0, 8.0),
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StimulusCommand {
    pub kind: StimulusKind,
    pub waveform: Waveform,
}

impl StimulusCommand {
    pub const NONE: StimulusCommand = StimulusCommand::new(StimulusKind::None);

    pub const fn new(kind: StimulusKind) -> Self {
        StimulusCommand {
            kind,
            waveform: STIMULUS_WAVEFORM,
        }
    }

    pub fn is_active(&self) -> bool {
        self.kind != StimulusKind::None
    }
}

/// Free parameters of the behavior model. The checked-in defaults live in
/// `data/behavior_params.toml`, each with the statistic it was tuned for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorParams {
    pub body_length: f64,
    pub base_speed_mean: f64,
    pub base_speed_sd: f64,
    pub speed_relax_rate: f64,
    pub heading_jitter_sd: f64,
    pub stim_turn_rate: f64,
    pub turn_speed_factor: f64,
    pub dash_gain: f64,
    pub dash_speed_floor: f64,
    pub stop_hazard_free: f64,
    pub stop_hazard_at_wall: f64,
    pub resume_hazard: f64,
    pub wall_proximity: f64,
    pub wallfollow_bias: f64,
    pub wallfollow_hug: f64,
    pub climb_prob_vs_theta: Vec<[f64; 2]>,
    pub edge_share: f64,
    pub edge_follow_mean: f64,
    pub edge_climb_angle_mean: f64,
    pub edge_climb_angle_sd: f64,
    pub decline_follow_mean: f64,
    pub climb_speed_factor: f64,
    pub climb_rise_rate: f64,
    pub climb_mount_yaw_sd: f64,
    pub press_slide_factor: f64,
    pub press_freeze_hazard: f64,
    pub pressed_resume_hazard: f64,
    pub backward_trigger_prob: f64,
    pub backward_onset_mean: f64,
    pub backward_onset_sd: f64,
    pub backward_speed_mean: f64,
    pub backward_speed_sd: f64,
    pub backward_duration_mean: f64,
    pub backward_duration_sd: f64,
    pub backward_turn_factor: f64,
}

pub const DEFAULT_BEHAVIOR_TOML: &str = include_str!("../data/behavior_params.toml");

impl Default for BehaviorParams {
    fn default() -> Self {
        BehaviorParams::from_toml(DEFAULT_BEHAVIOR_TOML).expect("shipped behavior params parse")
    }
}

impl BehaviorParams {
    pub fn from_toml(text: &str) -> Result<Self> {
        let p: BehaviorParams = toml::from_str(text).map_err(|e| Error::Config {
            path: "behavior params".into(),
            message: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("behavior params serialize")
    }

    /// Defaults with every noise source and hazard switched off.
    pub fn deterministic() -> Self {
        BehaviorParams {
            base_speed_sd: 0.0,
            heading_jitter_sd: 0.0,
            stop_hazard_free: 0.0,
            stop_hazard_at_wall: 0.0,
            resume_hazard: 0.0,
            press_freeze_hazard: 0.0,
            pressed_resume_hazard: 0.0,
            ..BehaviorParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::InvalidParameter {
                key: key.to_string(),
                reason: reason.to_string(),
            })
        };
        let nonneg = [
            ("base_speed_sd", self.base_speed_sd),
            ("speed_relax_rate", self.speed_relax_rate),
            ("heading_jitter_sd", self.heading_jitter_sd),
            ("stim_turn_rate", self.stim_turn_rate),
            ("turn_speed_factor", self.turn_speed_factor),
            ("dash_gain", self.dash_gain),
            ("dash_speed_floor", self.dash_speed_floor),
            ("stop_hazard_free", self.stop_hazard_free),
            ("stop_hazard_at_wall", self.stop_hazard_at_wall),
            ("resume_hazard", self.resume_hazard),
            ("wall_proximity", self.wall_proximity),
            ("wallfollow_bias", self.wallfollow_bias),
            ("wallfollow_hug", self.wallfollow_hug),
            ("edge_follow_mean", self.edge_follow_mean),
            ("edge_climb_angle_sd", self.edge_climb_angle_sd),
            ("decline_follow_mean", self.decline_follow_mean),
            ("climb_speed_factor", self.climb_speed_factor),
            ("climb_mount_yaw_sd", self.climb_mount_yaw_sd),
            ("press_slide_factor", self.press_slide_factor),
            ("press_freeze_hazard", self.press_freeze_hazard),
            ("pressed_resume_hazard", self.pressed_resume_hazard),
            ("backward_onset_sd", self.backward_onset_sd),
            ("backward_speed_sd", self.backward_speed_sd),
            ("backward_duration_sd", self.backward_duration_sd),
            ("backward_turn_factor", self.backward_turn_factor),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(k, "must be finite and >= 0");
            }
        }
        let positive = [
            ("body_length", self.body_length),
            ("base_speed_mean", self.base_speed_mean),
            ("climb_rise_rate", self.climb_rise_rate),
            ("backward_onset_mean", self.backward_onset_mean),
            ("backward_speed_mean", self.backward_speed_mean),
            ("backward_duration_mean", self.backward_duration_mean),
            ("edge_climb_angle_mean", self.edge_climb_angle_mean),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(k, "must be finite and > 0");
            }
        }
        for (k, v) in [
            ("edge_share", self.edge_share),
            ("backward_trigger_prob", self.backward_trigger_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(k, "must lie in [0, 1]");
            }
        }
        let c = &self.climb_prob_vs_theta;
        if c.is_empty() {
            return bad("climb_prob_vs_theta", "needs at least one point");
        }
        for (i, [t, p]) in c.iter().enumerate() {
            if !(0.0..=90.0).contains(t) || !(0.0..=1.0).contains(p) {
                return bad(
                    "climb_prob_vs_theta",
                    "points need theta in [0, 90] and p in [0, 1]",
                );
            }
            if i > 0 && *t <= c[i - 1][0] {
                return bad("climb_prob_vs_theta", "theta must increase strictly");
            }
        }
        Ok(())
    }

    /// Probability of climbing straight over a low block met at angle θ.
    pub fn climb_over_prob(&self, theta: f64) -> f64 {
        let c = &self.climb_prob_vs_theta;
        if theta <= c[0][0] {
            return c[0][1];
        }
        for w in c.windows(2) {
            let ([t0, p0], [t1, p1]) = (w[0], w[1]);
            if theta <= t1 {
                return p0 + (p1 - p0) * (theta - t0) / (t1 - t0);
            }
        }
        c[c.len() - 1][1]
    }

    pub fn dash_speed(&self, cruise: f64) -> f64 {
        (self.dash_gain * cruise).max(self.dash_speed_floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClimbMode {
    Orthogonal,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClimbOutcome {
    ClimbOver,
    EdgeFollowThenClimb,
    NoClimb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FollowMode {
    /// Unstimulated alignment along a tall wall.
    Natural,
    /// Escape run along a wall under the acceleration stimulus.
    Dash,
    /// Walking the edge of a low block before turning onto it.
    Edge { angle: f64, remaining: f64 },
    /// Walking the edge of a low block without climbing.
    Decline { remaining: f64 },
}

/// What the insect is committed to beyond its current maneuver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Plan {
    Free,
    Follow {
        mode: FollowMode,
        segment: usize,
        dir: Vec2,
    },
    /// Steered into a tall wall: sliding along it (WallFollow) or frozen
    /// against it (Stopped).
    Pressed {
        segment: usize,
        dir: Vec2,
        backs_off: bool,
        onset_left: f64,
    },
    Back {
        remaining: f64,
        speed: f64,
    },
    Climb {
        mode: ClimbMode,
        theta: f64,
        segment: usize,
        elapsed: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub pose: Pose,
    /// Magnitude of the forward speed, cm/s.
    pub speed: f64,
    /// Signed speed along the heading; negative only while Backward.
    pub forward_speed: f64,
    pub maneuver: Maneuver,
    pub climb_height: f64,
    pub time_in_maneuver: f64,
    /// Preferred walking speed of this individual, cm/s.
    pub cruise_speed: f64,
    pub plan: Plan,
    /// Obstacle currently touched, kept until the body is clear of it.
    pub contact_segment: Option<usize>,
}

impl AgentState {
    pub fn new(pose: Pose, cruise_speed: f64) -> Self {
        AgentState {
            pose,
            speed: cruise_speed,
            forward_speed: cruise_speed,
            maneuver: Maneuver::FreeWalk,
            climb_height: 0.0,
            time_in_maneuver: 0.0,
            cruise_speed,
            plan: Plan::Free,
            contact_segment: None,
        }
    }

    /// Fresh walker with its cruise speed drawn from the population.
    pub fn spawn<R: Rng + ?Sized>(pose: Pose, params: &BehaviorParams, rng: &mut R) -> Self {
        let lo = (params.base_speed_mean - 2.0 * params.base_speed_sd).max(0.5);
        let hi = params.base_speed_mean + 2.0 * params.base_speed_sd;
        let v = normal(rng, params.base_speed_mean, params.base_speed_sd).clamp(lo, hi);
        AgentState::new(pose, v)
    }

    fn set(&mut self, m: Maneuver, plan: Plan) {
        if m != self.maneuver {
            self.time_in_maneuver = 0.0;
        }
        self.maneuver = m;
        self.plan = plan;
    }

    pub fn climb_mode(&self) -> Option<(ClimbMode, f64)> {
        match self.plan {
            Plan::Climb { mode, theta, .. } => Some((mode, theta)),
            _ => None,
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite normal").sample(rng)
}

/// Lognormal draw parameterised by its arithmetic mean and standard
/// deviation.
pub fn lognormal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    let s2 = (1.0 + (sd / mean).powi(2)).ln();
    let mu = mean.ln() - s2 / 2.0;
    LogNormal::new(mu, s2.sqrt())
        .expect("finite lognormal")
        .sample(rng)
}

fn hazard<R: Rng + ?Sized>(rng: &mut R, rate: f64, dt: f64) -> bool {
    rate > 0.0 && rng.random::<f64>() < 1.0 - (-rate * dt).exp()
}

/// Wall tangent pointing the way the body already faces.
fn tangent_along(normal: Vec2, heading: Vec2) -> Vec2 {
    let t = perp(normal);
    if t.dot(&heading) >= 0.0 {
        t
    } else {
        -t
    }
}

/// Whether turning with `sign` rotates the head further into the wall.
fn turns_into_wall(heading: Vec2, normal: Vec2, sign: f64) -> bool {
    heading.dot(&normal) < 0.5 && sign * perp(heading).dot(&normal) < 0.0
}

pub fn climb_outcome<R: Rng + ?Sized>(
    theta: f64,
    segment: &ObstacleSegment,
    params: &BehaviorParams,
    rng: &mut R,
) -> ClimbOutcome {
    if !segment.climbable() {
        return ClimbOutcome::NoClimb;
    }
    let p_over = params.climb_over_prob(theta);
    let r: f64 = rng.random();
    if r < p_over {
        ClimbOutcome::ClimbOver
    } else if r < p_over + (1.0 - p_over) * params.edge_share {
        ClimbOutcome::EdgeFollowThenClimb
    } else {
        ClimbOutcome::NoClimb
    }
}

/// Maneuver change caused by touching a tall wall. Returns the state
/// unchanged when there is no contact.
pub fn wall_response<R: Rng + ?Sized>(
    state: &AgentState,
    contact: Option<&Proximity>,
    cmd: StimulusCommand,
    params: &BehaviorParams,
    rng: &mut R,
) -> AgentState {
    let mut s = state.clone();
    let Some(c) = contact else {
        return s;
    };
    let h = s.pose.heading_unit();
    let facing_wall = h.dot(&c.normal) <= 0.3;
    match (cmd.kind, s.maneuver) {
        (StimulusKind::Accelerate, m) if m != Maneuver::Climbing && facing_wall => {
            let dir = tangent_along(c.normal, h);
            s.set(
                Maneuver::WallFollow,
                Plan::Follow {
                    mode: FollowMode::Dash,
                    segment: c.segment,
                    dir,
                },
            );
            s.forward_speed = params.dash_speed(s.cruise_speed);
        }
        (StimulusKind::LeftCercus | StimulusKind::RightCercus, m)
            if matches!(
                m,
                Maneuver::FreeWalk | Maneuver::Turning | Maneuver::Dashing | Maneuver::WallFollow
            ) && !matches!(s.plan, Plan::Pressed { .. }) =>
        {
            let sign = cmd.kind.turn_sign().unwrap();
            if turns_into_wall(h, c.normal, sign) {
                press(&mut s, c, params, rng);
            }
        }
        (StimulusKind::None, Maneuver::FreeWalk | Maneuver::Dashing) if facing_wall => {
            let dir = tangent_along(c.normal, h);
            s.set(
                Maneuver::WallFollow,
                Plan::Follow {
                    mode: FollowMode::Natural,
                    segment: c.segment,
                    dir,
                },
            );
        }
        _ => {}
    }
    s
}

fn press<R: Rng + ?Sized>(s: &mut AgentState, c: &Proximity, params: &BehaviorParams, rng: &mut R) {
    let backs_off = rng.random::<f64>() < params.backward_trigger_prob;
    let onset_left = lognormal(rng, params.backward_onset_mean, params.backward_onset_sd);
    let dir = tangent_along(c.normal, s.pose.heading_unit());
    s.set(
        Maneuver::WallFollow,
        Plan::Pressed {
            segment: c.segment,
            dir,
            backs_off,
            onset_left,
        },
    );
}

fn start_backward<R: Rng + ?Sized>(s: &mut AgentState, params: &BehaviorParams, rng: &mut R) {
    let speed = lognormal(rng, params.backward_speed_mean, params.backward_speed_sd);
    let remaining = lognormal(
        rng,
        params.backward_duration_mean,
        params.backward_duration_sd,
    );
    s.set(Maneuver::Backward, Plan::Back { remaining, speed });
    s.forward_speed = -speed;
}

fn start_climb(s: &mut AgentState, mode: ClimbMode, theta: f64, segment: usize) {
    s.set(
        Maneuver::Climbing,
        Plan::Climb {
            mode,
            theta,
            segment,
            elapsed: 0.0,
        },
    );
}

/// Nearest obstacle, skipping low blocks while the insect is on top of them.
fn nearest(arena: &Arena, s: &AgentState, length: f64) -> Option<Proximity> {
    let (p0, p1) = body_segment(&s.pose, length);
    let climbing = s.maneuver == Maneuver::Climbing;
    let mut best: Option<Proximity> = None;
    for (i, o) in arena.obstacles.iter().enumerate() {
        if climbing && o.climbable() {
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

fn clear_of_climbables(arena: &Arena, s: &AgentState, length: f64) -> bool {
    let (p0, p1) = body_segment(&s.pose, length);
    arena
        .obstacles
        .iter()
        .filter(|o| o.climbable())
        .all(|o| o.probe_segment(p0, p1).0 > TOUCH)
}

fn committed(s: &AgentState) -> bool {
    match s.plan {
        Plan::Climb { .. } => true,
        Plan::Follow { mode, .. } => {
            matches!(mode, FollowMode::Edge { .. } | FollowMode::Decline { .. })
        }
        _ => false,
    }
}

fn respond_to_command<R: Rng + ?Sized>(
    s: &mut AgentState,
    cmd: StimulusCommand,
    touch: Option<&Proximity>,
    arena: &Arena,
    params: &BehaviorParams,
    rng: &mut R,
) {
    if committed(s) {
        return;
    }
    let tall_touch = touch.filter(|c| !arena.obstacles[c.segment].climbable());
    match cmd.kind {
        StimulusKind::Accelerate => {
            let following = matches!(
                s.plan,
                Plan::Follow {
                    mode: FollowMode::Dash,
                    ..
                }
            );
            if s.maneuver == Maneuver::Dashing || following {
                return;
            }
            let h = s.pose.heading_unit();
            match tall_touch {
                Some(c) if h.dot(&c.normal) <= 0.3 => {
                    *s = wall_response(s, Some(c), cmd, params, rng);
                }
                _ => {
                    s.set(Maneuver::Dashing, Plan::Free);
                    s.forward_speed = params.dash_speed(s.cruise_speed);
                }
            }
        }
        StimulusKind::LeftCercus | StimulusKind::RightCercus => {
            if matches!(s.maneuver, Maneuver::Backward) || matches!(s.plan, Plan::Pressed { .. }) {
                return;
            }
            if let Some(c) = tall_touch {
                let sign = cmd.kind.turn_sign().unwrap();
                if turns_into_wall(s.pose.heading_unit(), c.normal, sign) {
                    press(s, c, params, rng);
                    return;
                }
            }
            s.set(Maneuver::Turning, Plan::Free);
        }
        StimulusKind::None => match (s.maneuver, s.plan) {
            (Maneuver::Turning | Maneuver::Dashing, _) => s.set(Maneuver::FreeWalk, Plan::Free),
            (Maneuver::WallFollow, Plan::Follow { segment, dir, .. })
            | (Maneuver::WallFollow, Plan::Pressed { segment, dir, .. }) => {
                s.set(
                    Maneuver::WallFollow,
                    Plan::Follow {
                        mode: FollowMode::Natural,
                        segment,
                        dir,
                    },
                );
            }
            (Maneuver::Stopped, Plan::Pressed { .. }) => s.set(Maneuver::Stopped, Plan::Free),
            _ => {}
        },
    }
}

fn run_timers<R: Rng + ?Sized>(
    s: &mut AgentState,
    cmd: StimulusCommand,
    near: Option<&Proximity>,
    arena: &Arena,
    params: &BehaviorParams,
    dt: f64,
    rng: &mut R,
) {
    let near_tall_wall = near.is_some_and(|p| {
        p.signed_distance <= params.wall_proximity && !arena.obstacles[p.segment].climbable()
    });
    match s.plan {
        Plan::Pressed {
            segment,
            dir,
            backs_off,
            onset_left,
        } => {
            let onset_left = onset_left - dt;
            s.plan = Plan::Pressed {
                segment,
                dir,
                backs_off,
                onset_left,
            };
            if backs_off && onset_left <= 0.0 {
                start_backward(s, params, rng);
            } else if s.maneuver == Maneuver::WallFollow {
                if hazard(rng, params.press_freeze_hazard, dt) {
                    s.maneuver = Maneuver::Stopped;
                    s.time_in_maneuver = 0.0;
                }
            } else if hazard(rng, params.pressed_resume_hazard, dt) {
                start_backward(s, params, rng);
            }
        }
        Plan::Back { remaining, speed } => {
            let remaining = remaining - dt;
            if remaining <= 0.0 {
                s.set(Maneuver::FreeWalk, Plan::Free);
                s.forward_speed = 0.0;
            } else {
                s.plan = Plan::Back { remaining, speed };
            }
        }
        Plan::Follow {
            mode: FollowMode::Edge { angle, remaining },
            segment,
            dir,
        } => {
            let remaining = remaining - dt;
            if remaining <= 0.0 {
                // turn onto the block at the sampled angle
                let o = &arena.obstacles[segment];
                let n = near
                    .filter(|p| p.segment == segment)
                    .map(|p| p.normal)
                    .unwrap_or_else(|| perp(o.direction()));
                let base = heading_of(dir);
                let toward = if perp(dir).dot(&n) < 0.0 { 1.0 } else { -1.0 };
                s.pose.heading_deg = wrap_deg(base + toward * angle);
                let theta = line_angle(s.pose.heading_unit(), o.direction());
                start_climb(s, ClimbMode::Edge, theta, segment);
            } else {
                s.plan = Plan::Follow {
                    mode: FollowMode::Edge { angle, remaining },
                    segment,
                    dir,
                };
            }
        }
        Plan::Follow {
            mode: FollowMode::Decline { remaining },
            segment,
            dir,
        } => {
            let remaining = remaining - dt;
            if remaining <= 0.0 {
                s.set(Maneuver::FreeWalk, Plan::Free);
                s.contact_segment = None;
            } else {
                s.plan = Plan::Follow {
                    mode: FollowMode::Decline { remaining },
                    segment,
                    dir,
                };
            }
        }
        Plan::Climb {
            mode,
            theta,
            segment,
            elapsed,
        } => {
            s.plan = Plan::Climb {
                mode,
                theta,
                segment,
                elapsed: elapsed + dt,
            };
        }
        Plan::Free | Plan::Follow { .. } => {
            if cmd.is_active() {
                return;
            }
            match s.maneuver {
                Maneuver::FreeWalk | Maneuver::WallFollow => {
                    let rate = if near_tall_wall {
                        params.stop_hazard_at_wall
                    } else {
                        params.stop_hazard_free
                    };
                    if hazard(rng, rate, dt) {
                        s.set(Maneuver::Stopped, Plan::Free);
                    }
                }
                Maneuver::Stopped if hazard(rng, params.resume_hazard, dt) => {
                    s.set(Maneuver::FreeWalk, Plan::Free);
                }
                _ => {}
            }
        }
    }
}

/// Advances the agent by `dt` seconds under a stimulus.
pub fn advance<R: Rng + ?Sized>(
    state: &AgentState,
    cmd: StimulusCommand,
    arena: &Arena,
    params: &BehaviorParams,
    dt: f64,
    rng: &mut R,
) -> Result<AgentState> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::TimeStep(dt));
    }
    let len = params.body_length;
    let mut s = state.clone();
    s.time_in_maneuver += dt;

    let near = nearest(arena, &s, len);
    let touch = near.filter(|p| p.signed_distance <= TOUCH);
    respond_to_command(&mut s, cmd, touch.as_ref(), arena, params, rng);
    run_timers(&mut s, cmd, near.as_ref(), arena, params, dt, rng);

    // wall-following keeps its direction glued to the local tangent
    if let Plan::Follow { dir, segment, mode } = s.plan {
        if let Some(p) = near.filter(|p| p.signed_distance <= RELEASE) {
            let t = tangent_along(p.normal, dir);
            s.plan = Plan::Follow {
                mode,
                segment: if p.segment != segment {
                    p.segment
                } else {
                    segment
                },
                dir: t,
            };
        } else if s.maneuver == Maneuver::WallFollow {
            let next = if matches!(mode, FollowMode::Dash) {
                Maneuver::Dashing
            } else {
                Maneuver::FreeWalk
            };
            s.set(next, Plan::Free);
        }
    }
    if let Plan::Pressed {
        segment,
        dir,
        backs_off,
        onset_left,
    } = s.plan
    {
        if let Some(p) = near.filter(|p| p.signed_distance <= RELEASE) {
            s.plan = Plan::Pressed {
                segment,
                dir: tangent_along(p.normal, dir),
                backs_off,
                onset_left,
            };
        } else if s.maneuver == Maneuver::WallFollow {
            // slid off the end of the wall
            s.set(Maneuver::FreeWalk, Plan::Free);
        }
    }

    // heading rate and target speed
    let walking_noise = matches!(
        s.maneuver,
        Maneuver::FreeWalk | Maneuver::Turning | Maneuver::Dashing
    );
    let mut dh = if walking_noise {
        normal(rng, 0.0, params.heading_jitter_sd * dt.sqrt())
    } else {
        0.0
    };
    let turn = cmd.kind.turn_sign();
    let relax = 1.0 - (-params.speed_relax_rate * dt).exp();
    let toward = |v: f64, target: f64| v + (target - v) * relax;
    let dash = params.dash_speed(s.cruise_speed);
    let v = s.forward_speed.max(0.0);
    match s.maneuver {
        Maneuver::FreeWalk => s.forward_speed = toward(v, s.cruise_speed),
        Maneuver::Turning => {
            dh += turn.unwrap_or(0.0) * params.stim_turn_rate * dt;
            s.forward_speed = toward(v, s.cruise_speed * params.turn_speed_factor);
        }
        Maneuver::Dashing => s.forward_speed = dash,
        Maneuver::WallFollow => {
            let (dir, target) = match s.plan {
                Plan::Follow { mode, dir, .. } => {
                    let tv = if matches!(mode, FollowMode::Dash) {
                        dash
                    } else {
                        s.cruise_speed
                    };
                    (dir, tv)
                }
                Plan::Pressed { dir, .. } => (dir, s.cruise_speed * params.press_slide_factor),
                _ => (s.pose.heading_unit(), s.cruise_speed),
            };
            let mut goal = heading_of(dir);
            if let Some(p) = near.filter(|p| p.signed_distance <= RELEASE) {
                // lean slightly into the wall so the body stays in contact
                let into = if perp(dir).dot(&p.normal) < 0.0 {
                    1.0
                } else {
                    -1.0
                };
                goal += into * params.wallfollow_hug;
            }
            let err = wrap_deg(goal - s.pose.heading_deg);
            let max = params.wallfollow_bias * dt;
            dh += err.clamp(-max, max);
            s.forward_speed = if target >= dash {
                target
            } else {
                toward(v, target)
            };
        }
        Maneuver::Climbing => s.forward_speed = s.cruise_speed * params.climb_speed_factor,
        Maneuver::Backward => {
            if let Some(sign) = turn {
                dh += sign * params.stim_turn_rate * params.backward_turn_factor * dt;
            }
            if let Plan::Back { speed, .. } = s.plan {
                s.forward_speed = -speed;
            }
        }
        Maneuver::Stopped => s.forward_speed = 0.0,
    }

    let mid = s.pose.heading_deg + dh / 2.0;
    s.pose.heading_deg = wrap_deg(s.pose.heading_deg + dh);
    resolve(&mut s, arena, params, len, rng);

    let disp = unit(mid) * (s.forward_speed * dt);
    let n = (disp.norm() / MAX_CHUNK).ceil().max(1.0) as usize;
    let step = disp / n as f64;
    for _ in 0..n {
        s.pose.position += step;
        resolve(&mut s, arena, params, len, rng);
    }
    s.pose.position = arena.bounds.clamp(s.pose.position);
    resolve(&mut s, arena, params, len, rng);

    if let Plan::Climb {
        segment, elapsed, ..
    } = s.plan
    {
        let top = arena.obstacles[segment].height + CLIMB_OVERSHOOT;
        s.climb_height = (s.climb_height + params.climb_rise_rate * dt).min(top);
        let risen = s.climb_height >= top;
        if (risen && clear_of_climbables(arena, &s, len)) || elapsed > MAX_CLIMB_TIME {
            s.set(Maneuver::FreeWalk, Plan::Free);
            s.climb_height = 0.0;
            s.contact_segment = None;
            resolve(&mut s, arena, params, len, rng);
        }
    } else {
        s.climb_height = 0.0;
    }

    // tall-wall contact behaviors
    let after = nearest(arena, &s, len);
    if let Some(p) = after.filter(|p| p.signed_distance <= TOUCH) {
        // low blocks are marked only once a climb decision was made
        if !arena.obstacles[p.segment].climbable() {
            if !committed(&s) {
                s = wall_response(&s, Some(&p), cmd, params, rng);
            }
            s.contact_segment = Some(p.segment);
        }
    } else if after.is_none_or(|p| p.signed_distance > RELEASE) {
        s.contact_segment = None;
    }
    s.speed = s.forward_speed.abs();
    Ok(s)
}

/// Pushes the body out of every obstacle it overlaps, first giving a low
/// block the chance to be climbed.
fn resolve<R: Rng + ?Sized>(
    s: &mut AgentState,
    arena: &Arena,
    params: &BehaviorParams,
    len: f64,
    rng: &mut R,
) {
    for _ in 0..6 {
        let Some(p) = nearest(arena, s, len) else {
            return;
        };
        if p.signed_distance > 0.0 {
            return;
        }
        let o = &arena.obstacles[p.segment];
        if o.climbable() && s.contact_segment != Some(p.segment) && !committed(s) {
            s.contact_segment = Some(p.segment);
            let theta = line_angle(s.pose.heading_unit(), o.direction());
            match climb_outcome(theta, o, params, rng) {
                ClimbOutcome::ClimbOver => {
                    // the body twists as the forelegs reach the top
                    s.pose.heading_deg =
                        wrap_deg(s.pose.heading_deg + normal(rng, 0.0, params.climb_mount_yaw_sd));
                    let theta = line_angle(s.pose.heading_unit(), o.direction());
                    start_climb(s, ClimbMode::Orthogonal, theta, p.segment);
                    continue;
                }
                ClimbOutcome::EdgeFollowThenClimb => {
                    let angle = normal(
                        rng,
                        params.edge_climb_angle_mean,
                        params.edge_climb_angle_sd,
                    )
                    .clamp(5.0, 85.0);
                    let remaining =
                        lognormal(rng, params.edge_follow_mean, params.edge_follow_mean * 0.5);
                    s.set(
                        Maneuver::WallFollow,
                        Plan::Follow {
                            mode: FollowMode::Edge { angle, remaining },
                            segment: p.segment,
                            dir: tangent_along(p.normal, s.pose.heading_unit()),
                        },
                    );
                }
                ClimbOutcome::NoClimb => {
                    let remaining = lognormal(
                        rng,
                        params.decline_follow_mean,
                        params.decline_follow_mean * 0.5,
                    );
                    s.set(
                        Maneuver::WallFollow,
                        Plan::Follow {
                            mode: FollowMode::Decline { remaining },
                            segment: p.segment,
                            dir: tangent_along(p.normal, s.pose.heading_unit()),
                        },
                    );
                }
            }
        }
        s.pose.position += p.normal * (-p.signed_distance + 1e-9);
    }
}
