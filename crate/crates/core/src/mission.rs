//! Waypoint mission through a mock-disaster arena with 1 Hz thermal
//! detection from the insect-mounted camera.

use serde::{Deserialize, Serialize};

use crate::arena::{build_terrain, Arena, ArenaLayout, Bounds, Disc, ObstacleSegment, TerrainSpec};
use crate::detection::{DetectionResult, Detector, Label};
use crate::geometry::{heading_of, wrap_deg, Pose, Vec2};
use crate::harness::{compute_metrics, start_pose, Loop, SpeedSource, TrialRecord, TrialSetup};
use crate::insect::BehaviorParams;
use crate::navigation::{Algorithm, CheckKind, NavParams, Outcome, StatusMonitor};
use crate::seeds::rng_for;
use crate::sensing::ImuNoise;
use crate::thermal::{
    render_frame, subject, Placement, SceneSpec, SubjectKind, ThermalSubject, FOV_DEG,
};
use crate::{Error, Result};

pub const REFERENCE_SCENARIO_TOML: &str = include_str!("../data/mission_reference.toml");
/// Stream offset separating frame noise from the trial's own streams.
const FRAME_STREAM: u64 = 0xf4a3_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub height_cm: f64,
    pub thickness_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectSpec {
    pub id: String,
    pub position: [f64; 2],
    pub facing_deg: f64,
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub bounds: [[f64; 2]; 2],
    pub origin: [f64; 2],
    pub target_radius_cm: f64,
    pub leg_timeout_s: f64,
    pub detection_period_s: f64,
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub subjects: Vec<SubjectSpec>,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: "scenario".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub subject: ThermalSubject,
    pub position: Vec2,
    pub facing_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    /// Waypoints as targets; the origin disc is the final destination.
    pub arena: Arena,
    pub subjects: Vec<SceneObject>,
}

impl Scenario {
    pub fn from_spec(spec: ScenarioSpec) -> Result<Self> {
        let v = |p: [f64; 2]| Vec2::new(p[0], p[1]);
        let r = spec.target_radius_cm;
        let positive = |key: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    key: key.into(),
                    reason: format!("{x} must be positive"),
                })
            }
        };
        positive("leg_timeout_s", spec.leg_timeout_s)?;
        positive("detection_period_s", spec.detection_period_s)?;
        let layout = ArenaLayout {
            bounds: Bounds {
                min: v(spec.bounds[0]),
                max: v(spec.bounds[1]),
            },
            obstacles: spec
                .obstacles
                .iter()
                .map(|o| ObstacleSegment {
                    a: v(o.a),
                    b: v(o.b),
                    height: o.height_cm,
                    thickness: o.thickness_cm,
                })
                .collect(),
            origin: Disc::new(spec.origin[0], spec.origin[1], r),
            targets: spec
                .waypoints
                .iter()
                .map(|w| Disc::new(w[0], w[1], r))
                .collect(),
        };
        let arena = build_terrain(TerrainSpec::MockDisaster(layout))?;
        let subjects = spec
            .subjects
            .iter()
            .map(|s| {
                let subject = subject(&s.id).ok_or_else(|| Error::InvalidParameter {
                    key: "subjects".into(),
                    reason: format!("unknown subject `{}`", s.id),
                })?;
                Ok(SceneObject {
                    subject,
                    position: v(s.position),
                    facing_deg: s.facing_deg,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            spec,
            arena,
            subjects,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Scenario::from_spec(ScenarioSpec::from_toml(text)?)
    }

    /// Leg destinations: every waypoint, then back to the origin.
    pub fn legs(&self) -> Vec<Disc> {
        let mut legs = self.arena.targets.clone();
        legs.push(self.arena.origin);
        legs
    }
}

pub fn reference_scenario() -> Scenario {
    Scenario::from_toml(REFERENCE_SCENARIO_TOML).expect("reference scenario is valid")
}

/// A subject inside the horizontal field of view at capture time.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleSubject {
    pub id: String,
    pub kind: SubjectKind,
    /// Along the optical axis.
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLogRow {
    pub t_s: f64,
    pub pose: Pose,
    pub result: DetectionResult,
    pub visible: Vec<VisibleSubject>,
}

impl DetectionLogRow {
    pub fn sees_human_within(&self, max_m: f64) -> bool {
        self.visible
            .iter()
            .any(|v| v.kind == SubjectKind::Human && v.distance_m <= max_m)
    }

    /// Hot objects in view and no person.
    pub fn hot_objects_only(&self) -> bool {
        !self.visible.is_empty()
            && self
                .visible
                .iter()
                .all(|v| v.kind == SubjectKind::HotObject)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionRecord {
    pub scenario: String,
    pub seed: u64,
    pub legs: Vec<TrialRecord>,
    pub completed: bool,
    pub detections: Vec<DetectionLogRow>,
}

impl MissionRecord {
    /// Acceleration events by trigger: (ω, v_l).
    pub fn accel_tally(&self) -> (usize, usize) {
        self.legs
            .iter()
            .flat_map(|l| &l.metrics.accel_events)
            .fold((0, 0), |(w, v), e| match e.trigger {
                CheckKind::Omega => (w + 1, v),
                CheckKind::LinearSpeed => (w, v + 1),
            })
    }

    /// For each human in the scene: whether some frame that had it in view
    /// within `max_m` was labelled Human.
    pub fn human_hits(&self, scenario: &Scenario, max_m: f64) -> Vec<(String, bool)> {
        scenario
            .subjects
            .iter()
            .filter(|s| s.subject.kind == SubjectKind::Human)
            .map(|s| {
                let id = &s.subject.id;
                let hit = self.detections.iter().any(|d| {
                    d.result.label == Label::Human
                        && d.visible
                            .iter()
                            .any(|v| &v.id == id && v.distance_m <= max_m)
                });
                (id.clone(), hit)
            })
            .collect()
    }

    /// Frames with only hot objects in view that were labelled Human.
    pub fn false_alarms(&self) -> usize {
        self.detections
            .iter()
            .filter(|d| d.hot_objects_only() && d.result.label == Label::Human)
            .count()
    }

    pub fn gate_activations(&self) -> usize {
        self.detections
            .iter()
            .filter(|d| d.result.gate_active)
            .count()
    }
}

/// Camera on the insect's head, looking along the body axis.
pub fn camera_view(
    pose: &Pose,
    body_length: f64,
    objects: &[SceneObject],
) -> (Vec<Placement>, Vec<VisibleSubject>) {
    let fwd = pose.heading_unit();
    let right = Vec2::new(fwd.y, -fwd.x);
    let cam = pose.position + fwd * (body_length / 2.0);
    let half_fov = (FOV_DEG / 2.0).to_radians().tan();
    let mut placements = Vec::new();
    let mut visible = Vec::new();
    for o in objects {
        let rel = o.position - cam;
        let depth = rel.dot(&fwd);
        if depth <= 0.0 {
            continue;
        }
        let lateral = rel.dot(&right);
        let rotation = wrap_deg(o.facing_deg - heading_of(-rel));
        let half_width = o.subject.width_cm * o.subject.width_scale(rotation) / 2.0;
        if lateral.abs() - half_width < depth * half_fov {
            visible.push(VisibleSubject {
                id: o.subject.id.clone(),
                kind: o.subject.kind,
                distance_m: depth / 100.0,
            });
        }
        placements.push(Placement {
            subject: o.subject.clone(),
            distance_m: depth / 100.0,
            lateral_cm: lateral,
            vertical_cm: 0.0,
            rotation_deg: rotation,
        });
    }
    (placements, visible)
}

/// Runs the Predictive controller on IMU speed estimates through every leg
/// and captures a frame every detection period along the way. A leg that
/// fails ends the mission.
pub fn run_mission(
    scenario: &Scenario,
    detector: &Detector,
    nav: &NavParams,
    behavior: &BehaviorParams,
    seed: u64,
) -> Result<MissionRecord> {
    nav.validate()?;
    behavior.validate()?;
    let mut setup = TrialSetup::new(&scenario.arena, Algorithm::Predictive, nav, behavior);
    setup.speeds = SpeedSource::Imu(ImuNoise::default());
    let mut lp = Loop::new(setup, seed, start_pose(&scenario.arena, seed));
    let mut legs = Vec::new();
    let mut t0 = 0.0;
    let mut completed = true;
    for dest in scenario.legs() {
        let monitor = StatusMonitor::new(dest.radius, nav)
            .without_immobility()
            .with_limit_s(scenario.spec.leg_timeout_s);
        let (rows, status) = lp.run_leg(dest.center, dest.radius, t0, monitor)?;
        t0 = rows.last().map_or(t0, |r| r.t_ms) + nav.tick;
        let metrics = compute_metrics(&rows, status, &scenario.arena, nav);
        let ok = status.outcome == Outcome::Success;
        legs.push(TrialRecord {
            seed,
            terrain: scenario.arena.kind,
            algorithm: Algorithm::Predictive,
            rows,
            status,
            metrics,
        });
        if !ok {
            completed = false;
            break;
        }
    }

    let period_ms = scenario.spec.detection_period_s * 1000.0;
    let mut detections = Vec::new();
    let mut next = 0.0;
    for row in legs.iter().flat_map(|l| &l.rows) {
        if row.t_ms + 1e-9 < next {
            continue;
        }
        let k = detections.len() as u64;
        let (placements, visible) =
            camera_view(&row.pose, behavior.body_length, &scenario.subjects);
        let frame = render_frame(
            &SceneSpec::room(placements),
            &mut rng_for(seed, FRAME_STREAM + k),
        )?;
        detections.push(DetectionLogRow {
            t_s: row.t_ms / 1000.0,
            pose: row.pose,
            result: detector.detect(&frame)?,
            visible,
        });
        next += period_ms;
    }
    Ok(MissionRecord {
        scenario: scenario.spec.name.clone(),
        seed,
        legs,
        completed,
        detections,
    })
}
