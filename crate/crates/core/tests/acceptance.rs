//! End-to-end acceptance suite. Runs without the libtest harness so each
//! criterion prints one PASS/FAIL line in plain `cargo test` output.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;

use biobot_core::arena::{preset, TerrainKind};
use biobot_core::config::{RawConfig, RunConfig};
use biobot_core::detection::{
    compare_cell_sizes, hog, hog_len, hot_pixel_gate, median3x3, shipped_detector, train_svm,
    Kernel, Label, SvmConfig,
};
use biobot_core::geometry::{Pose, Vec2};
use biobot_core::harness::{
    check_bands, run_batch, run_trial, BatchStats, TrialRecord, TrialSetup,
};
use biobot_core::insect::{BehaviorParams, ClimbMode, StimulusKind};
use biobot_core::io::{
    batch_summary_csv, detection_csv, trajectory_csv, trial_provenance, Provenance,
};
use biobot_core::mission::{reference_scenario, run_mission};
use biobot_core::navigation::{
    Algorithm, CheckKind, Controller, NavParams, Observation, Phase, TickOutput,
};
use biobot_core::power::{power_budget, Battery, PowerComponent, SYSTEM_TOTAL_MW};
use biobot_core::seeds::rng_for;
use biobot_core::sensing::{
    distance_to_target, markers_from_pose, orientation_error, Side, SpeedEstimate,
};
use biobot_core::thermal::{synth_dataset, DatasetRecipe, ThermalImage, SIZE};

// ---- criterion 1: controller state machines -----------------------------

/// Constant inputs held for `ms`.
#[derive(Clone, Copy)]
struct Seg {
    ms: f64,
    gamma: f64,
    side: Side,
    omega: f64,
    v_l: f64,
    distance: f64,
}

fn seg(ms: f64, gamma: f64, side: Side, omega: f64, v_l: f64) -> Seg {
    Seg {
        ms,
        gamma,
        side,
        omega,
        v_l,
        distance: 50.0,
    }
}

fn arrive(ms: f64) -> Seg {
    Seg {
        ms,
        gamma: 0.0,
        side: Side::Aligned,
        omega: 0.0,
        v_l: 0.0,
        distance: 1.0,
    }
}

struct Step {
    t: f64,
    obs: Observation,
    out: TickOutput,
    phase: Phase,
}

const D_T: f64 = 5.0;

fn run_script(alg: Algorithm, nav: &NavParams, script: &[Seg]) -> Vec<Step> {
    let mut ctrl = Controller::new(alg);
    let mut log = Vec::new();
    let mut t = 0.0;
    for s in script {
        let end = t + s.ms;
        while t < end - 1e-9 {
            let obs = Observation {
                t_ms: t,
                distance: s.distance,
                gamma: s.gamma,
                side: s.side,
                speeds: Some(SpeedEstimate {
                    omega: s.omega,
                    v_l: s.v_l,
                    v_f: s.v_l,
                    t: t / 1000.0,
                }),
            };
            let out = ctrl.tick(&obs, D_T, nav).expect("fresh speeds every tick");
            log.push(Step {
                t,
                obs,
                out,
                phase: ctrl.state.phase,
            });
            if out.success {
                return log;
            }
            t += nav.tick;
        }
    }
    log
}

fn label(step: &Step) -> String {
    if step.out.success {
        "success".into()
    } else {
        step.phase.name().into()
    }
}

/// Phase names after each tick with repeats collapsed.
fn phase_runs(log: &[Step]) -> Vec<String> {
    let mut v: Vec<String> = Vec::new();
    for s in log {
        let l = label(s);
        if v.last() != Some(&l) {
            v.push(l);
        }
    }
    v
}

fn edges(log: &[Step]) -> BTreeSet<(String, String)> {
    let r = phase_runs(log);
    let coarse = |s: &str| {
        if s.starts_with("steer_") {
            "steer".to_string()
        } else {
            s.to_string()
        }
    };
    let mut e = BTreeSet::new();
    for w in r.windows(2) {
        let (a, b) = (coarse(&w[0]), coarse(&w[1]));
        e.insert(if a == b {
            (a, "steer_side_flip".into())
        } else {
            (a, b)
        });
    }
    if let Some(first) = r.first() {
        e.insert(("start".into(), coarse(first)));
    }
    e
}

fn checks(log: &[Step], kind: CheckKind) -> Vec<f64> {
    log.iter()
        .filter_map(|s| s.out.check.filter(|c| c.kind == kind).map(|c| c.t_ms))
        .collect()
}

fn is_steer(k: StimulusKind) -> bool {
    matches!(k, StimulusKind::LeftCercus | StimulusKind::RightCercus)
}

/// Timing rules every predictive log must obey, whatever the inputs.
fn validate_predictive(log: &[Step], nav: &NavParams) {
    let tick = nav.tick;
    let q = |ms: f64| nav.ticks(ms) as f64 * tick;
    let mut bout_start: Option<f64> = None;
    let mut last_omega_check: Option<f64> = None;
    let mut last_steer_cmd: Option<f64> = None;
    let mut last_accel_cmd: Option<f64> = None;
    let mut monitoring_since: Option<f64> = None;
    let mut prev_phase = Phase::Monitoring;
    for (i, s) in log.iter().enumerate() {
        let steering_now = matches!(s.phase, Phase::Steering(_))
            || s.out.check.is_some_and(|c| c.kind == CheckKind::Omega);
        if steering_now && bout_start.is_none() {
            bout_start = Some(s.t);
            last_omega_check = None;
        }
        if let Some(c) = s.out.check {
            assert_eq!(
                c.triggered,
                c.value.abs() < c.threshold,
                "trigger rule at {}",
                s.t
            );
            match c.kind {
                CheckKind::Omega => {
                    let start = bout_start.expect("omega check outside a steering bout");
                    let into = s.t - start;
                    assert!(into > nav.d_s, "omega check {into} ms into steering");
                    match last_omega_check {
                        Some(prev) => assert!(
                            (s.t - prev - q(nav.t_v)).abs() < 1e-9,
                            "omega cadence {}",
                            s.t - prev
                        ),
                        None => assert!(
                            into <= nav.d_s + tick + 1e-9,
                            "first omega check late: {into} ms"
                        ),
                    }
                    last_omega_check = Some(s.t);
                    if c.triggered {
                        let n = nav.ticks(nav.t_f1) as usize;
                        for k in 0..n {
                            if let Some(x) = log.get(i + k) {
                                assert!(
                                    !x.out.command.is_active(),
                                    "free walk after omega trigger"
                                );
                            }
                        }
                        if let Some(x) = log.get(i + n).filter(|x| !x.out.success) {
                            assert_eq!(
                                x.out.command.kind,
                                StimulusKind::Accelerate,
                                "accel after t_f1"
                            );
                        }
                    }
                }
                CheckKind::LinearSpeed => {
                    assert!(!steering_now, "v_l check while steering");
                    if let Some(t) = last_steer_cmd {
                        assert!(
                            s.t - t > nav.t_f3,
                            "v_l check {} ms after steering",
                            s.t - t
                        );
                    }
                    if let Some(t) = last_accel_cmd {
                        assert!(
                            s.t - t > nav.t_f2,
                            "v_l check {} ms after accelerating",
                            s.t - t
                        );
                    }
                    let since = monitoring_since.expect("v_l check outside monitoring");
                    let into = s.t - since;
                    let period = q(nav.t_v);
                    assert!(
                        into > 0.0 && (into / period - (into / period).round()).abs() < 1e-9,
                        "v_l check {into} ms into monitoring (period {period})"
                    );
                    if c.triggered {
                        assert_eq!(s.out.command.kind, StimulusKind::Accelerate);
                    }
                }
            }
        }
        if !steering_now {
            bout_start = None;
        }
        if s.phase == Phase::Monitoring
            && (prev_phase != Phase::Monitoring || monitoring_since.is_none())
        {
            // the first monitoring tick emits nothing and opens the period
            monitoring_since = Some(s.t);
        }
        if s.phase != Phase::Monitoring
            && !s
                .out
                .check
                .is_some_and(|c| c.kind == CheckKind::LinearSpeed)
        {
            monitoring_since = None;
        }
        if is_steer(s.out.command.kind) {
            last_steer_cmd = Some(s.t);
        }
        if s.out.command.kind == StimulusKind::Accelerate {
            last_accel_cmd = Some(s.t);
        }
        prev_phase = s.phase;
    }
    // acceleration bursts last d_a and are followed by t_f2 of silence
    let mut i = 0;
    while i < log.len() {
        if log[i].out.command.kind != StimulusKind::Accelerate {
            i += 1;
            continue;
        }
        let start = i;
        while i < log.len() && log[i].out.command.kind == StimulusKind::Accelerate {
            i += 1;
        }
        let truncated = i == log.len() || log[i].out.success;
        if !truncated {
            assert_eq!(
                (i - start) as u64,
                nav.ticks(nav.d_a),
                "burst at {}",
                log[start].t
            );
            let quiet = nav.ticks(nav.t_f2) as usize;
            for k in 0..quiet {
                if let Some(x) = log.get(i + k).filter(|x| !x.out.success) {
                    assert!(
                        !x.out.command.is_active(),
                        "grace after burst broken at {}",
                        x.t
                    );
                }
            }
        }
    }
}

fn validate_simple(log: &[Step], nav: &NavParams) {
    for s in log {
        assert!(s.out.check.is_none(), "simple controller sampled speeds");
        assert_ne!(s.out.command.kind, StimulusKind::Accelerate);
        if !s.out.success {
            let expect = if s.obs.gamma > nav.gamma_t {
                match s.obs.side {
                    Side::Left => StimulusKind::RightCercus,
                    Side::Right => StimulusKind::LeftCercus,
                    Side::Aligned => StimulusKind::None,
                }
            } else {
                StimulusKind::None
            };
            assert_eq!(s.out.command.kind, expect, "simple command at {}", s.t);
        }
    }
}

struct Row {
    name: &'static str,
    alg: Algorithm,
    script: Vec<Seg>,
    phases: &'static [&'static str],
    /// Expected check times at a 10 ms tick.
    omega_checks: &'static [f64],
    v_checks: &'static [f64],
}

fn trace_table() -> Vec<Row> {
    use Algorithm::{Predictive, Simple};
    use Side::{Left, Right};
    vec![
        Row {
            name: "aligned fast walk",
            alg: Predictive,
            script: vec![seg(2010.0, 0.0, Left, 0.0, 5.0)],
            phases: &["monitoring"],
            omega_checks: &[],
            v_checks: &[500.0, 1000.0, 1500.0, 2000.0],
        },
        Row {
            name: "slow walk escapes",
            alg: Predictive,
            script: vec![seg(3600.0, 0.0, Left, 0.0, 1.0)],
            phases: &[
                "monitoring",
                "accelerating",
                "post_accel_grace",
                "monitoring",
                "accelerating",
            ],
            omega_checks: &[],
            v_checks: &[500.0, 3500.0],
        },
        Row {
            name: "responsive turn",
            alg: Predictive,
            script: vec![
                seg(3000.0, 40.0, Left, 30.0, 3.0),
                seg(1000.0, 0.0, Left, 0.0, 3.0),
            ],
            phases: &["steer_left", "post_steer_grace", "monitoring"],
            omega_checks: &[2010.0, 2510.0],
            v_checks: &[3750.0],
        },
        Row {
            name: "turn after walking",
            alg: Predictive,
            script: vec![
                seg(600.0, 0.0, Left, 0.0, 3.0),
                seg(600.0, 40.0, Left, 30.0, 3.0),
            ],
            phases: &["monitoring", "steer_left"],
            omega_checks: &[],
            v_checks: &[500.0],
        },
        Row {
            name: "stalled turn",
            alg: Predictive,
            script: vec![seg(5000.0, 40.0, Right, 1.0, 3.0)],
            phases: &[
                "steer_right",
                "pre_accel_grace",
                "accelerating",
                "post_accel_grace",
                "steer_right",
            ],
            omega_checks: &[2010.0],
            v_checks: &[],
        },
        Row {
            name: "regained error during grace",
            alg: Predictive,
            script: vec![
                seg(1000.0, 40.0, Left, 30.0, 3.0),
                seg(100.0, 10.0, Left, 0.0, 3.0),
                seg(500.0, 40.0, Left, 30.0, 3.0),
            ],
            phases: &["steer_left", "post_steer_grace", "steer_left"],
            omega_checks: &[],
            v_checks: &[],
        },
        Row {
            name: "side flip keeps the bout",
            alg: Predictive,
            script: vec![
                seg(1000.0, 40.0, Left, 1.0, 3.0),
                seg(1500.0, 40.0, Right, 1.0, 3.0),
            ],
            phases: &[
                "steer_left",
                "steer_right",
                "pre_accel_grace",
                "accelerating",
            ],
            omega_checks: &[2010.0],
            v_checks: &[],
        },
        Row {
            name: "arrival while accelerating",
            alg: Predictive,
            script: vec![seg(1000.0, 0.0, Left, 0.0, 1.0), arrive(100.0)],
            phases: &["monitoring", "accelerating", "success"],
            omega_checks: &[],
            v_checks: &[500.0],
        },
        Row {
            name: "arrival while steering",
            alg: Predictive,
            script: vec![seg(500.0, 40.0, Left, 30.0, 3.0), arrive(100.0)],
            phases: &["steer_left", "success"],
            omega_checks: &[],
            v_checks: &[],
        },
        Row {
            name: "arrival in post-steer grace",
            alg: Predictive,
            script: vec![
                seg(500.0, 40.0, Left, 30.0, 3.0),
                seg(100.0, 0.0, Left, 0.0, 3.0),
                arrive(100.0),
            ],
            phases: &["steer_left", "post_steer_grace", "success"],
            omega_checks: &[],
            v_checks: &[],
        },
        Row {
            name: "arrival in pre-accel grace",
            alg: Predictive,
            script: vec![seg(2100.0, 40.0, Left, 1.0, 3.0), arrive(100.0)],
            phases: &["steer_left", "pre_accel_grace", "success"],
            omega_checks: &[2010.0],
            v_checks: &[],
        },
        Row {
            name: "arrival in post-accel grace",
            alg: Predictive,
            script: vec![seg(2600.0, 0.0, Left, 0.0, 1.0), arrive(100.0)],
            phases: &["monitoring", "accelerating", "post_accel_grace", "success"],
            omega_checks: &[],
            v_checks: &[500.0],
        },
        Row {
            name: "arrival while monitoring",
            alg: Predictive,
            script: vec![seg(300.0, 0.0, Left, 0.0, 3.0), arrive(100.0)],
            phases: &["monitoring", "success"],
            omega_checks: &[],
            v_checks: &[],
        },
        Row {
            name: "simple steers both ways",
            alg: Simple,
            script: vec![
                seg(300.0, 40.0, Left, 0.0, 0.0),
                seg(300.0, 10.0, Left, 0.0, 0.0),
                seg(300.0, 40.0, Right, 0.0, 0.0),
                seg(300.0, 40.0, Left, 0.0, 0.0),
                seg(300.0, 25.0, Left, 0.0, 0.0),
            ],
            phases: &[
                "steer_left",
                "monitoring",
                "steer_right",
                "steer_left",
                "monitoring",
            ],
            omega_checks: &[],
            v_checks: &[],
        },
        Row {
            name: "simple ignores stalls",
            alg: Simple,
            script: vec![
                seg(6000.0, 0.0, Left, 0.0, 0.0),
                seg(3000.0, 90.0, Right, 0.0, 0.0),
            ],
            phases: &["monitoring", "steer_right"],
            omega_checks: &[],
            v_checks: &[],
        },
        Row {
            name: "simple arrives while steering",
            alg: Simple,
            script: vec![seg(300.0, 40.0, Left, 0.0, 0.0), arrive(50.0)],
            phases: &["steer_left", "success"],
            omega_checks: &[],
            v_checks: &[],
        },
        Row {
            name: "simple arrives while monitoring",
            alg: Simple,
            script: vec![seg(300.0, 0.0, Left, 0.0, 0.0), arrive(50.0)],
            phases: &["monitoring", "success"],
            omega_checks: &[],
            v_checks: &[],
        },
    ]
}

fn random_script<R: Rng>(rng: &mut R) -> Vec<Seg> {
    (0..rng.random_range(1..12))
        .map(|_| {
            let steer = rng.random_bool(0.5);
            let side = if rng.random_bool(0.5) {
                Side::Left
            } else {
                Side::Right
            };
            Seg {
                ms: rng.random_range(20.0..4000.0),
                gamma: if steer {
                    rng.random_range(25.5..180.0)
                } else {
                    rng.random_range(0.0..25.0)
                },
                side,
                omega: rng.random_range(0.0..12.0),
                v_l: rng.random_range(0.0..4.0),
                distance: if rng.random_bool(0.02) { 2.0 } else { 50.0 },
            }
        })
        .collect()
}

fn criterion_1() -> String {
    let nav10 = NavParams {
        tick: 10.0,
        ..NavParams::default()
    };
    let mut covered = BTreeSet::new();
    let mut rows = 0;
    for row in trace_table() {
        let log = run_script(row.alg, &nav10, &row.script);
        let runs = phase_runs(&log);
        assert_eq!(runs, row.phases, "{}: phase sequence", row.name);
        assert_eq!(
            checks(&log, CheckKind::Omega),
            row.omega_checks,
            "{}: omega checks",
            row.name
        );
        assert_eq!(
            checks(&log, CheckKind::LinearSpeed),
            row.v_checks,
            "{}: v_l checks",
            row.name
        );
        match row.alg {
            Algorithm::Predictive => validate_predictive(&log, &nav10),
            Algorithm::Simple => validate_simple(&log, &nav10),
        }
        for e in edges(&log) {
            covered.insert((row.alg.name(), e));
        }
        rows += 1;
    }
    let e = |a: &str, b: &str| (a.to_string(), b.to_string());
    let predictive = [
        e("start", "monitoring"),
        e("start", "steer"),
        e("monitoring", "steer"),
        e("monitoring", "accelerating"),
        e("monitoring", "success"),
        e("steer", "post_steer_grace"),
        e("steer", "pre_accel_grace"),
        e("steer", "steer_side_flip"),
        e("steer", "success"),
        e("post_steer_grace", "monitoring"),
        e("post_steer_grace", "steer"),
        e("post_steer_grace", "success"),
        e("pre_accel_grace", "accelerating"),
        e("pre_accel_grace", "success"),
        e("accelerating", "post_accel_grace"),
        e("accelerating", "success"),
        e("post_accel_grace", "monitoring"),
        e("post_accel_grace", "steer"),
        e("post_accel_grace", "success"),
    ];
    let simple = [
        e("start", "monitoring"),
        e("start", "steer"),
        e("monitoring", "steer"),
        e("monitoring", "success"),
        e("steer", "monitoring"),
        e("steer", "steer_side_flip"),
        e("steer", "success"),
    ];
    let expected: BTreeSet<_> = predictive
        .into_iter()
        .map(|x| ("predictive", x))
        .chain(simple.into_iter().map(|x| ("simple", x)))
        .collect();
    let missing: Vec<_> = expected.difference(&covered).collect();
    assert!(
        missing.is_empty(),
        "transitions never exercised: {missing:?}"
    );
    let unexpected: Vec<_> = covered.difference(&expected).collect();
    assert!(
        unexpected.is_empty(),
        "transitions outside the table: {unexpected:?}"
    );

    // the same timing rules at other tick lengths, on random traces
    let mut rng = rng_for(1, 0);
    let mut traces = 0;
    for tick in [10.0, 30.0, 50.0] {
        let nav = NavParams {
            tick,
            ..NavParams::default()
        };
        for _ in 0..200 {
            let script = random_script(&mut rng);
            validate_predictive(&run_script(Algorithm::Predictive, &nav, &script), &nav);
            validate_simple(&run_script(Algorithm::Simple, &nav, &script), &nav);
            traces += 2;
        }
    }
    format!(
        "{rows} scripted traces, {} transitions covered, {traces} random traces",
        expected.len()
    )
}

// ---- criterion 2: geometry -----------------------------------------------

fn criterion_2() -> String {
    let body = 5.0;
    let mut rng = rng_for(2, 0);
    let n = 100_000;
    for _ in 0..n {
        let pose = Pose::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(-180.0..180.0),
        );
        let dest = Vec2::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        );
        let m = markers_from_pose(&pose, body).unwrap();
        // D: anterior point is half a body length ahead of the centre
        let h = pose.heading_deg.to_radians();
        let ax = pose.position.x + body / 2.0 * h.cos();
        let ay = pose.position.y + body / 2.0 * h.sin();
        let d_ref = ((ax - dest.x).powi(2) + (ay - dest.y).powi(2)).sqrt();
        let d = distance_to_target(m.anterior, dest);
        assert!((d - d_ref).abs() <= 1e-9, "D {d} vs {d_ref}");
        // gamma: difference of the two absolute bearings, wrapped
        let to = (dest.y - pose.position.y)
            .atan2(dest.x - pose.position.x)
            .to_degrees();
        let mut diff = to - pose.heading_deg;
        while diff > 180.0 {
            diff -= 360.0;
        }
        while diff <= -180.0 {
            diff += 360.0;
        }
        let (g, side) = orientation_error(&m, dest).unwrap();
        assert!(
            (g - diff.abs()).abs() <= 1e-9,
            "gamma {g} vs {}",
            diff.abs()
        );
        if diff.abs() > 1e-6 && diff.abs() < 180.0 - 1e-6 {
            assert_eq!(side, if diff > 0.0 { Side::Left } else { Side::Right });
        }
    }
    let at = |x: f64, y: f64| {
        let m = markers_from_pose(&Pose::new(0.0, 0.0, 0.0), body).unwrap();
        orientation_error(&m, Vec2::new(x, y)).unwrap()
    };
    assert_eq!(at(10.0, 0.0), (0.0, Side::Aligned));
    assert_eq!(at(0.0, 10.0), (90.0, Side::Left));
    assert_eq!(at(0.0, -10.0), (90.0, Side::Right));
    assert_eq!(at(-10.0, 0.0).0, 180.0);
    format!("{n} random configurations within 1e-9; 0/90/180 exact")
}

// ---- criterion 3: HOG lengths ---------------------------------------------

fn criterion_3() -> String {
    let img: Vec<f64> = (0..SIZE * SIZE).map(|i| (i * 7 % 13) as f64).collect();
    for (cell, len) in [(2, 8100), (4, 1764), (8, 324)] {
        assert_eq!(hog_len(cell).unwrap(), len);
        assert_eq!(hog(&img, cell).unwrap().features.len(), len);
    }
    "8100 / 1764 / 324".into()
}

// ---- criterion 4: gate --------------------------------------------------

fn with_hot(n: usize, t: f64) -> ThermalImage {
    let mut img = ThermalImage::filled(20.0);
    for k in 0..n {
        img.set(k / SIZE, k % SIZE, t);
    }
    img
}

fn criterion_4() -> String {
    assert_eq!(hot_pixel_gate(&with_hot(15, 33.0)), (false, 15));
    assert_eq!(hot_pixel_gate(&with_hot(16, 33.0)), (true, 16));
    assert_eq!(hot_pixel_gate(&with_hot(16, 28.0)), (true, 16));
    assert_eq!(hot_pixel_gate(&with_hot(16, 38.0)), (true, 16));
    assert_eq!(hot_pixel_gate(&with_hot(40, 27.99)), (false, 0));
    assert_eq!(hot_pixel_gate(&with_hot(40, 38.01)), (false, 0));
    assert_eq!(hot_pixel_gate(&with_hot(0, 33.0)), (false, 0));
    let mut rng = rng_for(4, 0);
    for _ in 0..1000 {
        let px: Vec<f64> = (0..SIZE * SIZE)
            .map(|_| rng.random_range(20.0..45.0))
            .collect();
        let count = px.iter().filter(|t| (28.0..=38.0).contains(*t)).count();
        let img = ThermalImage::from_pixels(px).unwrap();
        assert_eq!(hot_pixel_gate(&img), (count > 15, count));
    }
    "15 inactive, 16 active, band edges inclusive".into()
}

// ---- criteria 5-7: terrain comparison --------------------------------------

fn batches(kind: TerrainKind, seeds: &[u64]) -> Vec<(BatchStats, Vec<TrialRecord>)> {
    let arena = preset(kind);
    let nav = NavParams::default();
    let bp = BehaviorParams::default();
    [Algorithm::Simple, Algorithm::Predictive]
        .into_iter()
        .map(|a| run_batch(seeds, &TrialSetup::new(&arena, a, &nav, &bp)).unwrap())
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

struct Terrains {
    low: Vec<(BatchStats, Vec<TrialRecord>)>,
    tall: Vec<(BatchStats, Vec<TrialRecord>)>,
}

fn criterion_5(t: &Terrains) -> String {
    let rate = |b: &(BatchStats, Vec<TrialRecord>)| {
        let ok =
            b.1.iter()
                .filter(|r| r.metrics.navigation_time_s.is_some())
                .count();
        assert_eq!(ok, b.0.successes);
        ok as f64 / b.1.len() as f64
    };
    assert!(t.low.iter().chain(&t.tall).all(|b| b.1.len() >= 50));
    // pairing: both algorithms saw the same seeds
    for pair in [&t.low, &t.tall] {
        let s: Vec<u64> = pair[0].1.iter().map(|r| r.seed).collect();
        let p: Vec<u64> = pair[1].1.iter().map(|r| r.seed).collect();
        assert_eq!(s, p);
    }
    let (ls, lp) = (rate(&t.low[0]), rate(&t.low[1]));
    let (ts, tp) = (rate(&t.tall[0]), rate(&t.tall[1]));
    assert!(ls >= 0.95 && lp >= 0.95, "low obstacle success {ls} / {lp}");
    assert!(ts <= 0.5, "tall wall simple success {ts}");
    assert!(tp >= 0.8, "tall wall predictive success {tp}");
    assert!(tp - ts >= 0.3, "gap {}", tp - ts);
    let nav_time = |b: &(BatchStats, Vec<TrialRecord>)| {
        mean(
            &b.1.iter()
                .filter_map(|r| r.metrics.navigation_time_s)
                .collect::<Vec<_>>(),
        )
    };
    let (ns, np) = (nav_time(&t.tall[0]), nav_time(&t.tall[1]));
    assert!(np < ns, "navigation time predictive {np} vs simple {ns}");
    let stats: Vec<BatchStats> = t.low.iter().chain(&t.tall).map(|b| b.0.clone()).collect();
    let bands = check_bands(&stats);
    assert!(bands.iter().all(|b| b.passed), "{bands:?}");
    format!(
        "n={} low {:.2}/{:.2}, tall {:.2}/{:.2}, tall nav time {np:.1} < {ns:.1} s",
        t.tall[0].1.len(),
        ls,
        lp,
        ts,
        tp
    )
}

fn criterion_6(t: &Terrains) -> String {
    let back = |b: &(BatchStats, Vec<TrialRecord>)| {
        mean(
            &b.1.iter()
                .map(|r| r.metrics.backward_time_s)
                .collect::<Vec<_>>(),
        )
    };
    let (s, p) = (back(&t.tall[0]), back(&t.tall[1]));
    assert!(p > 0.0 || s > 0.0, "no backward motion at all");
    let ratio = s / p;
    assert!(ratio >= 3.0, "backward ratio {ratio} ({s} / {p})");
    format!("backward {s:.2} s / {p:.2} s = {ratio:.1}x")
}

fn criterion_7(t: &Terrains) -> String {
    let climbs: Vec<(ClimbMode, f64)> = t
        .low
        .iter()
        .flat_map(|b| b.1.iter().filter_map(|r| r.metrics.first_climb))
        .collect();
    assert!(climbs.len() >= 100, "only {} climbing trials", climbs.len());
    let of = |m: ClimbMode| {
        climbs
            .iter()
            .filter(|c| c.0 == m)
            .map(|c| c.1)
            .collect::<Vec<_>>()
    };
    let (o, e) = (of(ClimbMode::Orthogonal), of(ClimbMode::Edge));
    assert!(!o.is_empty() && !e.is_empty());
    let (mo, me) = (mean(&o), mean(&e));
    assert!((67.0..=83.0).contains(&mo), "orthogonal theta {mo}");
    assert!((31.0..=47.0).contains(&me), "edge theta {me}");
    assert!(
        o.len() > e.len(),
        "orthogonal {} vs edge {}",
        o.len(),
        e.len()
    );
    format!(
        "{} climbs: orthogonal {} at {mo:.1} deg, edge {} at {me:.1} deg",
        climbs.len(),
        o.len(),
        e.len()
    )
}

// ---- criterion 8: detection -----------------------------------------------

fn criterion_8() -> String {
    let train = synth_dataset(&DatasetRecipe::training(0.2), 0).unwrap();
    let val = synth_dataset(&DatasetRecipe::validation(0.1), 99).unwrap();
    let rows = compare_cell_sizes(&train, &val, &SvmConfig::new(Kernel::Linear, 1.0)).unwrap();
    let get = |c: usize| &rows.iter().find(|r| r.0 == c).unwrap().1;
    let (c2, c4) = (get(2), get(4));
    assert!(c4.accuracy >= 0.85, "cell 4 accuracy {}", c4.accuracy);
    assert!(
        c4.balanced_accuracy >= c2.balanced_accuracy,
        "cell 4 {} < cell 2 {}",
        c4.balanced_accuracy,
        c2.balanced_accuracy
    );
    // XOR: no line separates it, a quadratic kernel does
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y) in [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
        for k in 0..5 {
            let j = 0.05 * k as f64;
            xs.push(vec![x * (1.0 + j), y * (1.0 - j)]);
            ys.push(x * y > 0.0);
        }
    }
    let acc = |kernel: Kernel| {
        let m = train_svm(&xs, &ys, &SvmConfig::new(kernel, 10.0)).unwrap();
        let ok = xs
            .iter()
            .zip(&ys)
            .filter(|(x, y)| (m.classify(x).unwrap().1 == Label::Human) == **y)
            .count();
        ok as f64 / xs.len() as f64
    };
    let (lin, quad) = (acc(Kernel::Linear), acc(Kernel::Poly(2)));
    assert!(lin <= 0.75, "linear XOR accuracy {lin}");
    assert_eq!(quad, 1.0, "quadratic XOR accuracy");
    format!(
        "cell 4 accuracy {:.3}; balanced cell 4 {:.3} >= cell 2 {:.3}; XOR linear {lin:.2}, quadratic {quad:.2}",
        c4.accuracy, c4.balanced_accuracy, c2.balanced_accuracy
    )
}

// ---- criterion 9: median filter -------------------------------------------

fn brute_median(img: &ThermalImage) -> Vec<f64> {
    let n = SIZE as i64;
    let mut out = Vec::with_capacity(SIZE * SIZE);
    for r in 0..n {
        for c in 0..n {
            let mut w = Vec::new();
            for dr in -1..=1 {
                for dc in -1..=1 {
                    // replicate the border
                    let rr = (r + dr).clamp(0, n - 1) as usize;
                    let cc = (c + dc).clamp(0, n - 1) as usize;
                    w.push(img.get(rr, cc));
                }
            }
            w.sort_by(f64::total_cmp);
            out.push(w[4]);
        }
    }
    out
}

fn criterion_9() -> String {
    let flat = ThermalImage::filled(24.5);
    assert_eq!(median3x3(&flat), flat);
    let mut spike = ThermalImage::filled(24.5);
    spike.set(10, 17, 90.0);
    assert_eq!(median3x3(&spike), flat);
    let mut rng = rng_for(9, 0);
    for _ in 0..1000 {
        let px: Vec<f64> = (0..SIZE * SIZE)
            .map(|_| rng.random_range(15.0..45.0))
            .collect();
        let img = ThermalImage::from_pixels(px).unwrap();
        assert_eq!(median3x3(&img).pixels(), brute_median(&img).as_slice());
    }
    "fixpoint, outlier removal, 1000 images match brute force".into()
}

// ---- criterion 10: power --------------------------------------------------

fn criterion_10() -> String {
    let b = power_budget(
        &[PowerComponent::new("system", SYSTEM_TOTAL_MW, 0.0, 1.0)],
        Battery::lipo_120mah(),
    )
    .unwrap();
    let oracle = 120.0 * 3.7 / 205.5;
    assert!((b.endurance_h - oracle).abs() < 1e-12);
    assert!((b.endurance_h - 2.16).abs() <= 0.01, "{}", b.endurance_h);
    let reference = power_budget(
        &biobot_core::power::reference_components(),
        Battery::lipo_120mah(),
    )
    .unwrap();
    assert!((reference.total_mw - 205.5).abs() < 1e-9);
    assert!((reference.endurance_h - b.endurance_h).abs() < 1e-12);
    format!("205.5 mW on 120 mAh @ 3.7 V -> {:.3} h", b.endurance_h)
}

// ---- criterion 11: replay ---------------------------------------------------

fn config(text: &str) -> RunConfig {
    RawConfig::from_toml(text).unwrap().resolve().unwrap()
}

fn replay_trial(text: &str) -> String {
    let prov = Provenance::parse(text).unwrap();
    let cfg = prov.run_config().unwrap();
    let arena = preset(cfg.terrain);
    let mut setup = TrialSetup::new(&arena, cfg.algorithm, &cfg.nav, &cfg.behavior);
    setup.speeds = cfg.speeds.source();
    let rec = run_trial(prov.seed, &setup).unwrap();
    trajectory_csv(&trial_provenance(&cfg, &rec), &rec.rows).unwrap()
}

fn criterion_11() -> String {
    let mut files = 0;
    for text in [
        "seed = 5\nterrain = \"tall_wall\"\nalgorithm = \"predictive\"\nspeeds = \"imu\"\n",
        "seed = 6\nterrain = \"low_obstacle\"\nalgorithm = \"simple\"\n",
        "terrain = \"no_obstacle\"\n[nav]\ntick = 20\n",
    ] {
        let cfg = config(text);
        let arena = preset(cfg.terrain);
        let mut setup = TrialSetup::new(&arena, cfg.algorithm, &cfg.nav, &cfg.behavior);
        setup.speeds = cfg.speeds.source();
        let rec = run_trial(cfg.seed, &setup).unwrap();
        let csv = trajectory_csv(&trial_provenance(&cfg, &rec), &rec.rows).unwrap();
        assert_eq!(replay_trial(&csv), csv, "trial replay for {text:?}");
        files += 1;
    }

    let cfg = config("seed = 300\ntrials = 6\n");
    let arena = preset(TerrainKind::TallWall);
    let summary = |cfg: &RunConfig| {
        let stats: Vec<BatchStats> = [Algorithm::Simple, Algorithm::Predictive]
            .into_iter()
            .map(|a| {
                run_batch(
                    &cfg.seeds,
                    &TrialSetup::new(&arena, a, &cfg.nav, &cfg.behavior),
                )
                .unwrap()
                .0
            })
            .collect();
        batch_summary_csv(&Provenance::new("batch", cfg, cfg.seed), &stats).unwrap()
    };
    let first = summary(&cfg);
    let again = summary(&Provenance::parse(&first).unwrap().run_config().unwrap());
    assert_eq!(again, first, "batch replay");
    files += 1;

    let sc = reference_scenario();
    let det = shipped_detector();
    let cfg = config("seed = 3\n");
    let mission = |cfg: &RunConfig| {
        let m = run_mission(&sc, &det, &cfg.nav, &cfg.behavior, cfg.seed).unwrap();
        let prov = Provenance::new("mission", cfg, cfg.seed);
        let rows: Vec<_> = m.legs.iter().flat_map(|l| l.rows.iter().copied()).collect();
        (
            trajectory_csv(&prov, &rows).unwrap(),
            detection_csv(&prov, &m.detections).unwrap(),
        )
    };
    let (traj, dets) = mission(&cfg);
    let back = Provenance::parse(&dets).unwrap().run_config().unwrap();
    assert_eq!(mission(&back), (traj, dets), "mission replay");
    files += 2;
    format!("{files} CSV files regenerated bit-identically from their headers")
}

// ---- criterion 12: mission demo ---------------------------------------------

fn criterion_12() -> String {
    let sc = reference_scenario();
    assert_eq!(sc.spec.waypoints.len(), 5);
    let nav = NavParams::default();
    let m = run_mission(
        &sc,
        &shipped_detector(),
        &nav,
        &BehaviorParams::default(),
        0,
    )
    .unwrap();
    assert!(m.completed, "mission incomplete");
    assert_eq!(m.legs.len(), 6, "five waypoints plus the return leg");
    let hits = m.human_hits(&sc, 1.5);
    assert!(!hits.is_empty());
    assert!(hits.iter().all(|(_, h)| *h), "humans missed: {hits:?}");
    let false_alarms = m.false_alarms();
    assert_eq!(false_alarms, 0, "human labels on hot-object-only frames");

    // every acceleration must follow a below-threshold sample
    let mut events = 0;
    for leg in &m.legs {
        let rows = &leg.rows;
        for (i, r) in rows.iter().enumerate() {
            let enters = |p: Phase| matches!(p, Phase::PreAccelGrace | Phase::Accelerating);
            if !enters(r.phase) || (i > 0 && enters(rows[i - 1].phase)) {
                continue;
            }
            events += 1;
            match (r.phase, r.omega, r.v_l) {
                (Phase::PreAccelGrace, Some(w), _) => {
                    assert!(w.abs() < nav.omega_t, "omega {w} at {}", r.t_ms)
                }
                (Phase::Accelerating, None, Some(v)) => {
                    assert!(v < nav.v_t, "v_l {v} at {}", r.t_ms)
                }
                other => panic!(
                    "acceleration at {} ms without a triggering sample: {other:?}",
                    r.t_ms
                ),
            }
        }
    }
    let (w, v) = m.accel_tally();
    assert_eq!(w + v, events);
    format!(
        "6 legs completed, humans {}/{} flagged, {false_alarms} false alarms, {events} accelerations traced (omega {w}, v_l {v})",
        hits.len(),
        hits.len()
    )
}

/// Runs one criterion and prints its line; true on pass.
fn run(n: usize, name: &str, f: &mut dyn FnMut() -> String) -> bool {
    let t = Instant::now();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(detail) => {
            println!(
                "criterion {n:>2} PASS  {name}: {detail} ({:.1} s)",
                t.elapsed().as_secs_f64()
            );
            true
        }
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("criterion {n:>2} FAIL  {name}: {msg}");
            false
        }
    }
}

fn main() {
    std::panic::set_hook(Box::new(|info| {
        if let Some(loc) = info.location() {
            eprintln!("  assertion failed at {}:{}", loc.file(), loc.line());
        }
    }));
    let started = Instant::now();
    let mut failed = 0;
    failed += usize::from(!run(1, "controller state machines", &mut criterion_1));
    failed += usize::from(!run(2, "geometry oracles", &mut criterion_2));
    failed += usize::from(!run(3, "HOG descriptor lengths", &mut criterion_3));
    failed += usize::from(!run(4, "hot-pixel gate", &mut criterion_4));
    let terrains = catch_unwind(|| {
        let low_seeds: Vec<u64> = (0..100).collect();
        let tall_seeds: Vec<u64> = (0..60).collect();
        Terrains {
            low: batches(TerrainKind::LowObstacle, &low_seeds),
            tall: batches(TerrainKind::TallWall, &tall_seeds),
        }
    });
    match &terrains {
        Ok(t) => {
            failed += usize::from(!run(5, "terrain comparison", &mut || criterion_5(t)));
            failed += usize::from(!run(6, "backward-motion reduction", &mut || criterion_6(t)));
            failed += usize::from(!run(7, "climb-mode statistics", &mut || criterion_7(t)));
        }
        Err(_) => {
            for (n, name) in [
                (5, "terrain comparison"),
                (6, "backward-motion reduction"),
                (7, "climb-mode statistics"),
            ] {
                println!("criterion {n:>2} FAIL  {name}: batches did not run");
                failed += 1;
            }
        }
    }
    failed += usize::from(!run(8, "synthetic detection", &mut criterion_8));
    failed += usize::from(!run(9, "median filter", &mut criterion_9));
    failed += usize::from(!run(10, "power arithmetic", &mut criterion_10));
    failed += usize::from(!run(11, "determinism and replay", &mut criterion_11));
    failed += usize::from(!run(12, "mission demo", &mut criterion_12));
    println!(
        "acceptance: {} of 12 criteria passed in {:.1} s",
        12 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
