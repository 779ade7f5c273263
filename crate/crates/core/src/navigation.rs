//! The two navigation controllers as tick-driven state machines, and the
//! trial termination rules.
//!
//! Every call to a tick function decides the command for the coming tick.
//! Durations are counted in whole ticks, rounded up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::insect::{StimulusCommand, StimulusKind};
use crate::sensing::{Side, SpeedEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavParams {
    /// Orientation threshold, deg.
    pub gamma_t: f64,
    /// Angular speed threshold, deg/s.
    pub omega_t: f64,
    /// Linear speed threshold, cm/s.
    pub v_t: f64,
    /// Speed sampling interval, ms.
    pub t_v: f64,
    /// Free walk before an acceleration that follows a slow turn, ms.
    pub t_f1: f64,
    /// Free walk after an acceleration, ms.
    pub t_f2: f64,
    /// Free walk after steering before speed checks resume, ms.
    pub t_f3: f64,
    /// Acceleration duration, ms.
    pub d_a: f64,
    /// Steering time before the angular speed is checked, ms.
    pub d_s: f64,
    pub tick: f64,
    /// s.
    pub trial_limit: f64,
    /// s.
    pub motionless_window: f64,
    /// cm.
    pub motionless_disp: f64,
}

impl Default for NavParams {
    fn default() -> Self {
        NavParams {
            gamma_t: 25.0,
            omega_t: 5.0,
            v_t: 2.0,
            t_v: 500.0,
            t_f1: 250.0,
            t_f2: 500.0,
            t_f3: 250.0,
            d_a: 2000.0,
            d_s: 2000.0,
            tick: 30.0,
            trial_limit: 100.0,
            motionless_window: 5.0,
            motionless_disp: 0.5,
        }
    }
}

impl NavParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gamma_t", self.gamma_t),
            ("omega_t", self.omega_t),
            ("v_t", self.v_t),
            ("t_v", self.t_v),
            ("t_f1", self.t_f1),
            ("t_f2", self.t_f2),
            ("t_f3", self.t_f3),
            ("d_a", self.d_a),
            ("d_s", self.d_s),
            ("tick", self.tick),
            ("trial_limit", self.trial_limit),
            ("motionless_window", self.motionless_window),
            ("motionless_disp", self.motionless_disp),
        ];
        for (k, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter {
                    key: k.into(),
                    reason: "must be finite and >= 0".into(),
                });
            }
        }
        for (k, v) in [("tick", self.tick), ("t_v", self.t_v)] {
            if v <= 0.0 {
                return Err(Error::InvalidParameter {
                    key: k.into(),
                    reason: "must be > 0".into(),
                });
            }
        }
        Ok(())
    }

    /// Whole ticks covering `ms`.
    pub fn ticks(&self, ms: f64) -> u64 {
        ((ms / self.tick) - 1e-9).ceil().max(0.0) as u64
    }

    /// The prediction block disabled: both thresholds zero.
    pub fn without_prediction(&self) -> Self {
        NavParams {
            omega_t: 0.0,
            v_t: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Simple,
    Predictive,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Simple => "simple",
            Algorithm::Predictive => "predictive",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        match s {
            "simple" => Some(Algorithm::Simple),
            "predictive" => Some(Algorithm::Predictive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Monitoring,
    Steering(Side),
    PostSteerGrace,
    PreAccelGrace,
    Accelerating,
    PostAccelGrace,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Monitoring => "monitoring",
            Phase::Steering(Side::Left) => "steer_left",
            Phase::Steering(Side::Right) => "steer_right",
            Phase::Steering(Side::Aligned) => "steer_aligned",
            Phase::PostSteerGrace => "post_steer_grace",
            Phase::PreAccelGrace => "pre_accel_grace",
            Phase::Accelerating => "accelerating",
            Phase::PostAccelGrace => "post_accel_grace",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Some(match s {
            "monitoring" => Phase::Monitoring,
            "steer_left" => Phase::Steering(Side::Left),
            "steer_right" => Phase::Steering(Side::Right),
            "steer_aligned" => Phase::Steering(Side::Aligned),
            "post_steer_grace" => Phase::PostSteerGrace,
            "pre_accel_grace" => Phase::PreAccelGrace,
            "accelerating" => Phase::Accelerating,
            "post_accel_grace" => Phase::PostAccelGrace,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub phase: Phase,
    /// Ticks already emitted in the current phase.
    pub phase_ticks: u64,
    /// Ticks since the current steering bout began.
    pub steer_ticks: u64,
    /// Tick count (within the relevant timer) of the last speed check.
    pub last_check: Option<u64>,
    pub was_steering_last_loop: bool,
}

impl Default for ControllerState {
    fn default() -> Self {
        ControllerState {
            phase: Phase::Monitoring,
            phase_ticks: 0,
            steer_ticks: 0,
            last_check: None,
            was_steering_last_loop: false,
        }
    }
}

impl ControllerState {
    pub fn phase_elapsed_ms(&self, p: &NavParams) -> f64 {
        self.phase_ticks as f64 * p.tick
    }

    pub fn steer_elapsed_ms(&self, p: &NavParams) -> f64 {
        self.steer_ticks as f64 * p.tick
    }

    fn enter(&mut self, phase: Phase) {
        self.was_steering_last_loop = matches!(self.phase, Phase::Steering(_));
        if !matches!(phase, Phase::Steering(_)) || !matches!(self.phase, Phase::Steering(_)) {
            self.steer_ticks = 0;
        }
        self.phase = phase;
        self.phase_ticks = 0;
        self.last_check = None;
    }
}

/// What the controller sees at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t_ms: f64,
    pub distance: f64,
    pub gamma: f64,
    pub side: Side,
    pub speeds: Option<SpeedEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckKind {
    Omega,
    LinearSpeed,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Omega => "omega",
            CheckKind::LinearSpeed => "v_l",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedCheck {
    pub kind: CheckKind,
    pub value: f64,
    pub threshold: f64,
    pub triggered: bool,
    pub t_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutput {
    pub command: StimulusCommand,
    pub check: Option<SpeedCheck>,
    /// The destination has been reached; nothing more will be emitted.
    pub success: bool,
}

pub fn steer_direction(side: Side) -> StimulusCommand {
    StimulusCommand::new(match side {
        Side::Left => StimulusKind::RightCercus,
        Side::Right => StimulusKind::LeftCercus,
        Side::Aligned => StimulusKind::None,
    })
}

fn done() -> TickOutput {
    TickOutput {
        command: StimulusCommand::NONE,
        check: None,
        success: true,
    }
}

pub fn simple_tick(
    ctrl: &ControllerState,
    obs: &Observation,
    d_t: f64,
    params: &NavParams,
) -> (TickOutput, ControllerState) {
    let mut next = *ctrl;
    if obs.distance <= d_t {
        return (done(), next);
    }
    let phase = if obs.gamma > params.gamma_t {
        Phase::Steering(obs.side)
    } else {
        Phase::Monitoring
    };
    if std::mem::discriminant(&phase) != std::mem::discriminant(&next.phase) {
        next.enter(phase);
    }
    next.phase = phase;
    next.phase_ticks += 1;
    let command = match phase {
        Phase::Steering(side) => {
            next.steer_ticks += 1;
            steer_direction(side)
        }
        _ => StimulusCommand::NONE,
    };
    (
        TickOutput {
            command,
            check: None,
            success: false,
        },
        next,
    )
}

fn fresh_speeds(obs: &Observation, params: &NavParams) -> Result<SpeedEstimate> {
    let limit = params.t_v;
    match obs.speeds {
        Some(s) if obs.t_ms - s.t * 1000.0 <= limit + 1e-6 => Ok(s),
        Some(s) => Err(Error::StaleSpeedEstimate {
            age_ms: (obs.t_ms - s.t * 1000.0).round() as u64,
            limit_ms: limit as u64,
        }),
        None => Err(Error::StaleSpeedEstimate {
            age_ms: u64::MAX,
            limit_ms: limit as u64,
        }),
    }
}

pub fn predictive_tick(
    ctrl: &ControllerState,
    obs: &Observation,
    d_t: f64,
    params: &NavParams,
) -> Result<(TickOutput, ControllerState)> {
    let mut c = *ctrl;
    if obs.distance <= d_t {
        return Ok((done(), c));
    }
    let t_v = params.ticks(params.t_v).max(1);
    let mut check = None;
    // A phase change re-runs the loop so the new phase acts this tick. Each
    // phase can be entered at most once per tick, which bounds the loop.
    for _ in 0..8 {
        let command = match c.phase {
            Phase::Monitoring => {
                if obs.gamma > params.gamma_t {
                    c.enter(Phase::Steering(obs.side));
                    continue;
                }
                let due = c.phase_ticks > 0 && c.phase_ticks.is_multiple_of(t_v) && check.is_none();
                if params.v_t > 0.0 && due {
                    let s = fresh_speeds(obs, params)?;
                    let triggered = s.v_l < params.v_t;
                    check = Some(SpeedCheck {
                        kind: CheckKind::LinearSpeed,
                        value: s.v_l,
                        threshold: params.v_t,
                        triggered,
                        t_ms: obs.t_ms,
                    });
                    if triggered {
                        c.enter(Phase::Accelerating);
                        continue;
                    }
                }
                StimulusCommand::NONE
            }
            Phase::Steering(prev) => {
                if obs.gamma <= params.gamma_t {
                    c.enter(Phase::PostSteerGrace);
                    continue;
                }
                let side = if obs.side == Side::Aligned {
                    prev
                } else {
                    obs.side
                };
                c.phase = Phase::Steering(side);
                let elapsed = c.steer_ticks;
                let due = elapsed as f64 * params.tick > params.d_s
                    && c.last_check.is_none_or(|last| elapsed - last >= t_v);
                if params.omega_t > 0.0 && due && check.is_none() {
                    let s = fresh_speeds(obs, params)?;
                    let triggered = s.omega.abs() < params.omega_t;
                    c.last_check = Some(elapsed);
                    check = Some(SpeedCheck {
                        kind: CheckKind::Omega,
                        value: s.omega,
                        threshold: params.omega_t,
                        triggered,
                        t_ms: obs.t_ms,
                    });
                    if triggered {
                        c.enter(Phase::PreAccelGrace);
                        continue;
                    }
                }
                c.steer_ticks += 1;
                steer_direction(obs.side)
            }
            Phase::PostSteerGrace => {
                if obs.gamma > params.gamma_t {
                    c.enter(Phase::Steering(obs.side));
                    continue;
                }
                if c.phase_ticks >= params.ticks(params.t_f3) {
                    c.enter(Phase::Monitoring);
                    continue;
                }
                StimulusCommand::NONE
            }
            Phase::PreAccelGrace => {
                if c.phase_ticks >= params.ticks(params.t_f1) {
                    c.enter(Phase::Accelerating);
                    continue;
                }
                StimulusCommand::NONE
            }
            Phase::Accelerating => {
                if c.phase_ticks >= params.ticks(params.d_a) {
                    c.enter(Phase::PostAccelGrace);
                    continue;
                }
                StimulusCommand::new(StimulusKind::Accelerate)
            }
            Phase::PostAccelGrace => {
                if c.phase_ticks >= params.ticks(params.t_f2) {
                    c.enter(Phase::Monitoring);
                    continue;
                }
                StimulusCommand::NONE
            }
        };
        c.phase_ticks += 1;
        return Ok((
            TickOutput {
                command,
                check,
                success: false,
            },
            c,
        ));
    }
    unreachable!("controller phase loop did not settle")
}

/// A controller of either kind behind one interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controller {
    pub algorithm: Algorithm,
    pub state: ControllerState,
}

impl Controller {
    pub fn new(algorithm: Algorithm) -> Self {
        Controller {
            algorithm,
            state: ControllerState::default(),
        }
    }

    pub fn tick(&mut self, obs: &Observation, d_t: f64, params: &NavParams) -> Result<TickOutput> {
        let (out, next) = match self.algorithm {
            Algorithm::Simple => simple_tick(&self.state, obs, d_t, params),
            Algorithm::Predictive => predictive_tick(&self.state, obs, d_t, params)?,
        };
        self.state = next;
        Ok(out)
    }

    /// Whether the next tick may run a speed check and so needs fresh
    /// speeds.
    pub fn wants_speeds(&self) -> bool {
        self.algorithm == Algorithm::Predictive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailReason {
    ImmobileStimulated,
    ImmobileUnstimulated,
    Timeout,
}

impl FailReason {
    pub const ALL: [FailReason; 3] = [
        FailReason::ImmobileStimulated,
        FailReason::ImmobileUnstimulated,
        FailReason::Timeout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailReason::ImmobileStimulated => "immobile_stimulated",
            FailReason::ImmobileUnstimulated => "immobile_unstimulated",
            FailReason::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Running,
    Success,
    Fail(FailReason),
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::Fail(r) => r.name(),
        }
    }

    pub fn parse(s: &str) -> Option<Outcome> {
        Some(match s {
            "running" => Outcome::Running,
            "success" => Outcome::Success,
            "immobile_stimulated" => Outcome::Fail(FailReason::ImmobileStimulated),
            "immobile_unstimulated" => Outcome::Fail(FailReason::ImmobileUnstimulated),
            "timeout" => Outcome::Fail(FailReason::Timeout),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialStatus {
    pub outcome: Outcome,
    pub elapsed_s: f64,
}

/// One row of the history the termination rules look at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatusSample {
    pub t_ms: f64,
    /// Body centre, cm.
    pub position: Vec2,
    pub distance: f64,
    /// A stimulus is being delivered during the tick that starts here.
    pub stimulated: bool,
}

/// Incremental form of [`trial_status`]; the harness feeds it one row per
/// tick.
#[derive(Debug, Clone)]
pub struct StatusMonitor {
    d_t: f64,
    window_ticks: usize,
    disp: f64,
    limit_ms: f64,
    immobility: bool,
    recent: std::collections::VecDeque<StatusSample>,
    status: TrialStatus,
}

impl StatusMonitor {
    pub fn new(d_t: f64, params: &NavParams) -> Self {
        StatusMonitor {
            d_t,
            window_ticks: params.ticks(params.motionless_window * 1000.0) as usize,
            disp: params.motionless_disp,
            limit_ms: params.trial_limit * 1000.0,
            immobility: true,
            recent: Default::default(),
            status: TrialStatus {
                outcome: Outcome::Running,
                elapsed_s: 0.0,
            },
        }
    }

    /// Mission legs never end for stillness, only for time.
    pub fn without_immobility(mut self) -> Self {
        self.immobility = false;
        self
    }

    pub fn with_limit_s(mut self, limit_s: f64) -> Self {
        self.limit_ms = limit_s * 1000.0;
        self
    }

    pub fn status(&self) -> TrialStatus {
        self.status
    }

    pub fn push(&mut self, s: StatusSample) -> TrialStatus {
        if self.status.outcome.is_terminal() {
            return self.status;
        }
        self.recent.push_back(s);
        if self.recent.len() > self.window_ticks + 1 {
            self.recent.pop_front();
        }
        let outcome = if s.distance <= self.d_t {
            Outcome::Success
        } else if let Some(reason) = self.immobile() {
            Outcome::Fail(reason)
        } else if s.t_ms > self.limit_ms + 1e-9 {
            Outcome::Fail(FailReason::Timeout)
        } else {
            Outcome::Running
        };
        self.status = TrialStatus {
            outcome,
            elapsed_s: s.t_ms / 1000.0,
        };
        self.status
    }

    fn immobile(&self) -> Option<FailReason> {
        if !self.immobility || self.recent.len() < self.window_ticks + 1 {
            return None;
        }
        let start = self.recent[0].position;
        let still = self
            .recent
            .iter()
            .all(|r| (r.position - start).norm() < self.disp);
        if !still {
            return None;
        }
        // ticks inside the window, i.e. all but the newest row
        let n = self.recent.len() - 1;
        let stim = self.recent.iter().take(n).filter(|r| r.stimulated).count();
        Some(if 2 * stim > n {
            FailReason::ImmobileStimulated
        } else {
            FailReason::ImmobileUnstimulated
        })
    }
}

/// Termination verdict for a history prefix: the first terminal status
/// reached, or Running.
pub fn trial_status(history: &[StatusSample], d_t: f64, params: &NavParams) -> TrialStatus {
    let mut m = StatusMonitor::new(d_t, params);
    let mut last = m.status();
    for s in history {
        last = m.push(*s);
        if last.outcome.is_terminal() {
            break;
        }
    }
    last
}
