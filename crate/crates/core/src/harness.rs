//! Closed-loop trials and Monte Carlo batches.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arena::{Arena, TerrainKind};
use crate::error::{Error, Result};
use crate::geometry::{heading_of, wrap_deg, Pose, Vec2};
use crate::insect::{
    advance, AgentState, BehaviorParams, ClimbMode, Maneuver, StimulusCommand, StimulusKind,
};
use crate::navigation::{
    Algorithm, CheckKind, Controller, FailReason, NavParams, Observation, Outcome, Phase,
    StatusMonitor, StatusSample, TrialStatus,
};
use crate::sensing::{
    distance_to_target, imu_sample, markers_from_pose, mocap_speeds, mocap_window_len,
    orientation_error, ImuEstimator, ImuNoise, MotionSample, Side, SpeedEstimate, TrueMotion,
};

/// Agent integration step inside a controller tick, s. Also the IMU period.
pub const AGENT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedSource {
    Mocap,
    Imu(ImuNoise),
}

/// One controller tick of a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRow {
    pub t_ms: f64,
    pub pose: Pose,
    pub maneuver: Maneuver,
    pub cmd: StimulusKind,
    pub phase: Phase,
    pub distance: f64,
    pub gamma: f64,
    pub side: Side,
    /// Filled on ticks where the controller sampled ω.
    pub omega: Option<f64>,
    /// Filled on ticks where the controller sampled v_l.
    pub v_l: Option<f64>,
    pub v_f: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelEvent {
    pub t_ms: f64,
    pub trigger: CheckKind,
    pub value: f64,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub navigation_time_s: Option<f64>,
    pub backward_time_s: f64,
    pub first_climb: Option<(ClimbMode, f64)>,
    pub accel_events: Vec<AccelEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub terrain: TerrainKind,
    pub algorithm: Algorithm,
    pub rows: Vec<TrialRow>,
    pub status: TrialStatus,
    pub metrics: TrialMetrics,
}

/// Everything a trial needs besides its seed.
#[derive(Debug, Clone)]
pub struct TrialSetup<'a> {
    pub arena: &'a Arena,
    pub algorithm: Algorithm,
    pub nav: &'a NavParams,
    pub behavior: &'a BehaviorParams,
    pub speeds: SpeedSource,
}

impl<'a> TrialSetup<'a> {
    pub fn new(
        arena: &'a Arena,
        algorithm: Algorithm,
        nav: &'a NavParams,
        behavior: &'a BehaviorParams,
    ) -> Self {
        TrialSetup {
            arena,
            algorithm,
            nav,
            behavior,
            speeds: SpeedSource::Mocap,
        }
    }
}

/// Closed-loop simulation state that survives from one leg to the next.
pub struct Loop<'a> {
    pub setup: TrialSetup<'a>,
    pub rng: ChaCha8Rng,
    pub imu_rng: ChaCha8Rng,
    pub agent: AgentState,
    pub imu: ImuEstimator,
    history: VecDeque<MotionSample>,
    prev_velocity: Vec2,
}

impl<'a> Loop<'a> {
    pub fn new(setup: TrialSetup<'a>, seed: u64, start: Pose) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = AgentState::spawn(start, setup.behavior, &mut rng);
        let imu_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let imu = ImuEstimator::default().with_velocity(agent.forward_speed);
        let prev_velocity = agent.pose.heading_unit() * agent.forward_speed;
        Loop {
            setup,
            rng,
            imu_rng,
            agent,
            imu,
            history: VecDeque::new(),
            prev_velocity,
        }
    }

    fn speeds(&self, t_ms: f64) -> Result<Option<SpeedEstimate>> {
        Ok(match self.setup.speeds {
            SpeedSource::Mocap => {
                let n = mocap_window_len(self.setup.nav.tick);
                if self.history.len() < n {
                    None
                } else {
                    let w: Vec<MotionSample> = self
                        .history
                        .iter()
                        .skip(self.history.len() - n)
                        .copied()
                        .collect();
                    Some(mocap_speeds(&w)?)
                }
            }
            SpeedSource::Imu(_) => {
                let mut e = self.imu.estimate();
                e.t = t_ms / 1000.0;
                Some(e)
            }
        })
    }

    fn step_agent(&mut self, cmd: StimulusCommand, t_ms: f64) -> Result<()> {
        let tick_s = self.setup.nav.tick / 1000.0;
        let n = (tick_s / AGENT_DT - 1e-9).ceil().max(1.0) as usize;
        let dt = tick_s / n as f64;
        for i in 0..n {
            let before = self.agent.pose;
            self.agent = advance(
                &self.agent,
                cmd,
                self.setup.arena,
                self.setup.behavior,
                dt,
                &mut self.rng,
            )?;
            if let SpeedSource::Imu(noise) = self.setup.speeds {
                let after = self.agent.pose;
                let dh = wrap_deg(after.heading_deg - before.heading_deg);
                let v = (after.position - before.position) / dt;
                let mid = before.heading_deg + dh / 2.0;
                let a_world = (v - self.prev_velocity) / dt;
                let (s, c) = mid.to_radians().sin_cos();
                let accel = Vec2::new(
                    c * a_world.x + s * a_world.y,
                    -s * a_world.x + c * a_world.y,
                );
                self.prev_velocity = v;
                let truth = TrueMotion {
                    t: t_ms / 1000.0 + (i + 1) as f64 * dt,
                    yaw_rate: dh / dt,
                    accel,
                };
                let sample = imu_sample(&truth, &noise, &mut self.imu_rng);
                self.imu.update(&sample)?;
            }
        }
        Ok(())
    }

    /// Runs the loop toward one destination until a terminal status.
    pub fn run_leg(
        &mut self,
        dest: Vec2,
        radius: f64,
        t0_ms: f64,
        mut monitor: StatusMonitor,
    ) -> Result<(Vec<TrialRow>, TrialStatus)> {
        let nav = self.setup.nav;
        let body = self.setup.behavior.body_length;
        let mut ctrl = Controller::new(self.setup.algorithm);
        let mut rows = Vec::new();
        let mut k: u64 = 0;
        self.imu.last_t = Some(t0_ms / 1000.0);
        loop {
            let t_ms = t0_ms + k as f64 * nav.tick;
            let leg_ms = k as f64 * nav.tick;
            self.history.push_back(MotionSample {
                t: t_ms / 1000.0,
                pose: self.agent.pose,
            });
            if self.history.len() > mocap_window_len(nav.tick) {
                self.history.pop_front();
            }
            let m = markers_from_pose(&self.agent.pose, body)?;
            let distance = distance_to_target(m.anterior, dest);
            let (gamma, side) = orientation_error(&m, dest).unwrap_or((0.0, Side::Aligned));
            let obs = Observation {
                t_ms,
                distance,
                gamma,
                side,
                speeds: self.speeds(t_ms)?,
            };
            let out = ctrl.tick(&obs, radius, nav)?;
            let mut row = TrialRow {
                t_ms,
                pose: self.agent.pose,
                maneuver: self.agent.maneuver,
                cmd: out.command.kind,
                phase: ctrl.state.phase,
                distance,
                gamma,
                side,
                omega: None,
                v_l: None,
                v_f: None,
            };
            if let (Some(c), Some(s)) = (out.check, obs.speeds) {
                match c.kind {
                    CheckKind::Omega => row.omega = Some(s.omega),
                    CheckKind::LinearSpeed => {
                        row.v_l = Some(s.v_l);
                        row.v_f = Some(s.v_f);
                    }
                }
            }
            let status = monitor.push(StatusSample {
                t_ms: leg_ms,
                position: self.agent.pose.position,
                distance,
                stimulated: out.command.is_active(),
            });
            rows.push(row);
            if status.outcome.is_terminal() {
                return Ok((rows, status));
            }
            self.step_agent(out.command, t_ms)?;
            k += 1;
        }
    }
}

/// Start pose of a navigation trial: the origin disc centre, facing a
/// uniformly random direction.
pub fn start_pose(arena: &Arena, rng_seed: u64) -> Pose {
    use rand::Rng;
    let mut r =
        ChaCha8Rng::seed_from_u64(rng_seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(1));
    let heading: f64 = r.random_range(-180.0..180.0);
    Pose {
        position: arena.origin.center,
        heading_deg: heading,
    }
}

pub fn run_trial(seed: u64, setup: &TrialSetup<'_>) -> Result<TrialRecord> {
    setup.nav.validate()?;
    setup.behavior.validate()?;
    let arena = setup.arena;
    let dest = arena.destination();
    let mut lp = Loop::new(setup.clone(), seed, start_pose(arena, seed));
    let monitor = StatusMonitor::new(dest.radius, setup.nav);
    let (rows, status) = lp.run_leg(dest.center, dest.radius, 0.0, monitor)?;
    let metrics = compute_metrics(&rows, status, arena, setup.nav);
    Ok(TrialRecord {
        seed,
        terrain: arena.kind,
        algorithm: setup.algorithm,
        rows,
        status,
        metrics,
    })
}

/// Derives the trial metrics from the raw rows alone.
pub fn compute_metrics(
    rows: &[TrialRow],
    status: TrialStatus,
    arena: &Arena,
    nav: &NavParams,
) -> TrialMetrics {
    let tick_s = nav.tick / 1000.0;
    // the last row is the terminal observation; no motion follows it
    let moving = rows.len().saturating_sub(1);
    let backward_time_s = rows[..moving]
        .iter()
        .filter(|r| r.maneuver == Maneuver::Backward)
        .count() as f64
        * tick_s;
    let navigation_time_s = (status.outcome == Outcome::Success).then_some(status.elapsed_s);
    let first_climb = rows
        .iter()
        .enumerate()
        .find(|(_, r)| r.maneuver == Maneuver::Climbing)
        .map(|(i, r)| {
            let mode = if i > 0 && rows[i - 1].maneuver == Maneuver::WallFollow {
                ClimbMode::Edge
            } else {
                ClimbMode::Orthogonal
            };
            let theta = arena
                .nearest_obstacle_angle(&r.pose)
                .map_or(f64::NAN, |(t, _)| t);
            (mode, theta)
        });
    let mut accel_events = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let entered = matches!(r.phase, Phase::PreAccelGrace | Phase::Accelerating)
            && (i == 0
                || !matches!(
                    rows[i - 1].phase,
                    Phase::PreAccelGrace | Phase::Accelerating
                ));
        if !entered {
            continue;
        }
        let (trigger, value) = match (r.omega, r.v_l) {
            (Some(w), _) => (CheckKind::Omega, w),
            (None, Some(v)) => (CheckKind::LinearSpeed, v),
            (None, None) => (CheckKind::LinearSpeed, f64::NAN),
        };
        accel_events.push(AccelEvent {
            t_ms: r.t_ms,
            trigger,
            value,
            position: r.pose.position,
        });
    }
    TrialMetrics {
        navigation_time_s,
        backward_time_s,
        first_climb,
        accel_events,
    }
}

/// Mean with an optional sample standard deviation (absent for n < 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Option<MeanSd> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (n > 1)
            .then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(MeanSd { n, mean, sd })
    }
}

impl std::fmt::Display for MeanSd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.sd {
            Some(sd) => write!(f, "{:.2} ± {:.2}", self.mean, sd),
            None => write!(f, "{:.2}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub terrain: TerrainKind,
    pub algorithm: Algorithm,
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub navigation_time: Option<MeanSd>,
    pub backward_time: Option<MeanSd>,
    pub failures: [(FailReason, usize); 3],
    /// (orthogonal, edge, none)
    pub climb_counts: (usize, usize, usize),
    pub theta_orthogonal: Option<MeanSd>,
    pub theta_edge: Option<MeanSd>,
    pub accel_by_trigger: (usize, usize),
}

impl BatchStats {
    pub fn failure_count(&self, r: FailReason) -> usize {
        self.failures
            .iter()
            .find(|(k, _)| *k == r)
            .map_or(0, |(_, c)| *c)
    }
}

/// Aggregates records. The result does not depend on the order of the
/// input; records are sorted by seed before summing.
pub fn aggregate(records: &[TrialRecord]) -> Option<BatchStats> {
    let first = records.first()?;
    let mut rs: Vec<&TrialRecord> = records.iter().collect();
    rs.sort_by_key(|r| r.seed);
    let n = rs.len();
    let successes = rs
        .iter()
        .filter(|r| r.status.outcome == Outcome::Success)
        .count();
    let nav: Vec<f64> = rs
        .iter()
        .filter_map(|r| r.metrics.navigation_time_s)
        .collect();
    let back: Vec<f64> = rs.iter().map(|r| r.metrics.backward_time_s).collect();
    let failures = FailReason::ALL.map(|k| {
        (
            k,
            rs.iter()
                .filter(|r| r.status.outcome == Outcome::Fail(k))
                .count(),
        )
    });
    let mut counts = (0, 0, 0);
    let (mut t_orth, mut t_edge) = (Vec::new(), Vec::new());
    for r in &rs {
        match r.metrics.first_climb {
            Some((ClimbMode::Orthogonal, t)) => {
                counts.0 += 1;
                t_orth.push(t);
            }
            Some((ClimbMode::Edge, t)) => {
                counts.1 += 1;
                t_edge.push(t);
            }
            None => counts.2 += 1,
        }
    }
    let mut accel = (0, 0);
    for r in &rs {
        for e in &r.metrics.accel_events {
            match e.trigger {
                CheckKind::Omega => accel.0 += 1,
                CheckKind::LinearSpeed => accel.1 += 1,
            }
        }
    }
    Some(BatchStats {
        terrain: first.terrain,
        algorithm: first.algorithm,
        n,
        successes,
        success_rate: successes as f64 / n as f64,
        navigation_time: MeanSd::of(&nav),
        backward_time: MeanSd::of(&back),
        failures,
        climb_counts: counts,
        theta_orthogonal: MeanSd::of(&t_orth),
        theta_edge: MeanSd::of(&t_edge),
        accel_by_trigger: accel,
    })
}

pub fn run_batch(seeds: &[u64], setup: &TrialSetup<'_>) -> Result<(BatchStats, Vec<TrialRecord>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter {
            key: "seeds".into(),
            reason: "batch needs at least one seed".into(),
        });
    }
    let records = seeds
        .iter()
        .map(|&s| run_trial(s, setup))
        .collect::<Result<Vec<_>>>()?;
    let stats = aggregate(&records).expect("non-empty batch");
    Ok((stats, records))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureContext {
    pub reason: FailReason,
    /// θ to the nearest obstacle at the end of the trial.
    pub theta_end: Option<f64>,
    /// Share of the final motionless window with a stimulus active.
    pub stimulus_fraction: f64,
    pub gamma_end: f64,
}

pub fn classify_failure(
    record: &TrialRecord,
    arena: &Arena,
    nav: &NavParams,
) -> Result<FailureContext> {
    let Outcome::Fail(reason) = record.status.outcome else {
        return Err(Error::NotFailed);
    };
    let last = record.rows.last().ok_or(Error::EmptyRecord)?;
    let w = nav.ticks(nav.motionless_window * 1000.0) as usize;
    let n = record.rows.len();
    let window = &record.rows[n.saturating_sub(w + 1)..n - 1];
    let active = window
        .iter()
        .filter(|r| r.cmd != StimulusKind::None)
        .count();
    Ok(FailureContext {
        reason,
        theta_end: arena.nearest_obstacle_angle(&last.pose).map(|(t, _)| t),
        stimulus_fraction: if window.is_empty() {
            0.0
        } else {
            active as f64 / window.len() as f64
        },
        gamma_end: last.gamma,
    })
}

/// Heading that points the body at `to` from `from`.
pub fn bearing(from: Vec2, to: Vec2) -> f64 {
    heading_of(to - from)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn band(name: &str, passed: bool, detail: String) -> BandCheck {
    BandCheck {
        name: name.into(),
        passed,
        detail,
    }
}

/// Mean of several mean±sd summaries, weighted by their counts.
fn pooled(ms: impl Iterator<Item = Option<MeanSd>>) -> Option<(usize, f64)> {
    let (n, sum) = ms
        .flatten()
        .fold((0, 0.0), |(n, s), m| (n + m.n, s + m.mean * m.n as f64));
    (n > 0).then(|| (n, sum / n as f64))
}

/// The terrain-comparison bands the calibrated model is held to. Bands
/// whose batches are absent from `stats` are skipped.
pub fn check_bands(stats: &[BatchStats]) -> Vec<BandCheck> {
    use Algorithm::{Predictive, Simple};
    let find =
        |t: TerrainKind, a: Algorithm| stats.iter().find(|s| s.terrain == t && s.algorithm == a);
    let mut out = Vec::new();
    for a in [Simple, Predictive] {
        if let Some(s) = find(TerrainKind::LowObstacle, a) {
            out.push(band(
                &format!("low_obstacle_{}_success", a.name()),
                s.success_rate >= 0.95,
                format!("{:.3} (>= 0.95)", s.success_rate),
            ));
        }
    }
    if let (Some(s), Some(p)) = (
        find(TerrainKind::TallWall, Simple),
        find(TerrainKind::TallWall, Predictive),
    ) {
        out.push(band(
            "tall_wall_simple_success",
            s.success_rate <= 0.5,
            format!("{:.3} (<= 0.50)", s.success_rate),
        ));
        out.push(band(
            "tall_wall_predictive_success",
            p.success_rate >= 0.8,
            format!("{:.3} (>= 0.80)", p.success_rate),
        ));
        let gap = p.success_rate - s.success_rate;
        out.push(band(
            "tall_wall_success_gap",
            gap >= 0.3,
            format!("{gap:.3} (>= 0.30)"),
        ));
        let (tp, ts) = (
            p.navigation_time.map(|m| m.mean),
            s.navigation_time.map(|m| m.mean),
        );
        out.push(band(
            "tall_wall_navigation_time",
            matches!((tp, ts), (Some(a), Some(b)) if a < b),
            format!("predictive {tp:?} s < simple {ts:?} s"),
        ));
        let (bp, bs) = (
            p.backward_time.map(|m| m.mean),
            s.backward_time.map(|m| m.mean),
        );
        let ratio = match (bs, bp) {
            (Some(a), Some(b)) if b > 0.0 => a / b,
            (Some(a), Some(_)) if a > 0.0 => f64::INFINITY,
            _ => f64::NAN,
        };
        out.push(band(
            "tall_wall_backward_ratio",
            ratio >= 3.0,
            format!("{ratio:.2} (>= 3)"),
        ));
    }
    let low: Vec<&BatchStats> = stats
        .iter()
        .filter(|s| s.terrain == TerrainKind::LowObstacle)
        .collect();
    if !low.is_empty() {
        let orth = pooled(low.iter().map(|s| s.theta_orthogonal));
        let edge = pooled(low.iter().map(|s| s.theta_edge));
        let in_band =
            |m: Option<(usize, f64)>, lo, hi| m.is_some_and(|(_, x)| (lo..=hi).contains(&x));
        out.push(band(
            "climb_theta_orthogonal",
            in_band(orth, 67.0, 83.0),
            format!("{orth:?} (n, mean) in [67, 83]"),
        ));
        out.push(band(
            "climb_theta_edge",
            in_band(edge, 31.0, 47.0),
            format!("{edge:?} (n, mean) in [31, 47]"),
        ));
        let (o, e) = low.iter().fold((0, 0), |(o, e), s| {
            (o + s.climb_counts.0, e + s.climb_counts.1)
        });
        out.push(band(
            "climb_orthogonal_majority",
            o > e,
            format!("{o} orthogonal vs {e} edge"),
        ));
    }
    out
}
