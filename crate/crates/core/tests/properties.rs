//! Property-based invariants of the pipeline stages.

use std::sync::OnceLock;

use proptest::prelude::*;

use biobot_core::arena::{preset, TerrainKind};
use biobot_core::config::{RawConfig, RunConfig};
use biobot_core::detection::{
    hog, kkt_gap, median3x3, train_svm, Kernel, Label, SvmConfig, HOG_BINS, KKT_TOLERANCE,
};
use biobot_core::geometry::{wrap_deg, Pose, Vec2};
use biobot_core::harness::{aggregate, run_trial, TrialRecord, TrialSetup};
use biobot_core::insect::BehaviorParams;
use biobot_core::io::Provenance;
use biobot_core::navigation::{Algorithm, NavParams};
use biobot_core::sensing::{distance_to_target, markers_from_pose, orientation_error, Side};
use biobot_core::thermal::{ThermalImage, SIZE};

fn image() -> impl Strategy<Value = ThermalImage> {
    prop::collection::vec(10.0f64..50.0, SIZE * SIZE)
        .prop_map(|px| ThermalImage::from_pixels(px).unwrap())
}

fn int_image() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..64).prop_map(f64::from), SIZE * SIZE)
}

fn neighbourhood(img: &ThermalImage, r: usize, c: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for dr in -1isize..=1 {
        for dc in -1isize..=1 {
            let rr = (r as isize + dr).clamp(0, SIZE as isize - 1) as usize;
            let cc = (c as isize + dc).clamp(0, SIZE as isize - 1) as usize;
            v.push(img.get(rr, cc));
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn median_output_is_a_neighbour_and_bounded(img in image()) {
        let out = median3x3(&img);
        for r in 0..SIZE {
            for c in 0..SIZE {
                let n = neighbourhood(&img, r, c);
                let v = out.get(r, c);
                prop_assert!(n.contains(&v));
                let below = n.iter().filter(|x| **x < v).count();
                let above = n.iter().filter(|x| **x > v).count();
                prop_assert!(below <= 4 && above <= 4);
            }
        }
    }

    #[test]
    fn median_commutes_with_increasing_maps(img in image(), a in 0.5f64..3.0, b in -10.0f64..10.0) {
        // an exact monotone map: doubling then shifting by a power of two
        let f = |t: f64| t * 2.0 + 16.0;
        prop_assert_eq!(median3x3(&img.map(f)), median3x3(&img).map(f));
        // for arbitrary affine maps only the ordering is guaranteed
        let g = |t: f64| a * t + b;
        let lhs = median3x3(&img.map(g));
        let rhs = median3x3(&img).map(g);
        for (x, y) in lhs.pixels().iter().zip(rhs.pixels()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn hog_ignores_a_temperature_offset(px in int_image(), offset in -20i32..20, cell in prop::sample::select(vec![2usize, 4, 8])) {
        let shifted: Vec<f64> = px.iter().map(|t| t + f64::from(offset)).collect();
        prop_assert_eq!(hog(&px, cell).unwrap(), hog(&shifted, cell).unwrap());
    }

    #[test]
    fn hog_blocks_have_norm_below_one(img in image(), cell in prop::sample::select(vec![2usize, 4, 8])) {
        let f = hog(img.pixels(), cell).unwrap().features;
        for block in f.chunks(4 * HOG_BINS) {
            let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n < 1.0, "block norm {}", n);
            prop_assert!(block.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn image_text_round_trips_at_millikelvin(mk in prop::collection::vec(10_000i32..50_000, SIZE * SIZE), img in image()) {
        // text keeps three decimals: exact for quantised frames, idempotent otherwise
        let q = ThermalImage::from_pixels(mk.iter().map(|m| f64::from(*m) / 1000.0).collect()).unwrap();
        prop_assert_eq!(ThermalImage::from_text(&q.to_text()).unwrap(), q);
        let once = ThermalImage::from_text(&img.to_text()).unwrap();
        prop_assert_eq!(once.to_text(), img.to_text());
        for (a, b) in once.pixels().iter().zip(img.pixels()) {
            prop_assert!((a - b).abs() <= 5e-4 + 1e-12);
        }
    }
}

/// Points at least `margin` from a random hyperplane through the box.
fn separable(dim: usize, margin: f64) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>)> {
    (
        prop::collection::vec(-1.0f64..1.0, dim),
        -0.5f64..0.5,
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 10..40),
    )
        .prop_filter_map("degenerate normal", move |(w, b, pts)| {
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 0.2 {
                return None;
            }
            let w: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for p in pts {
                let s: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                if s.abs() >= margin {
                    xs.push(p);
                    ys.push(s > 0.0);
                }
            }
            let pos = ys.iter().filter(|y| **y).count();
            (pos > 0 && pos < ys.len()).then_some((xs, ys))
        })
}

fn training_accuracy(kernel: Kernel, c: f64, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
    let m = train_svm(xs, ys, &SvmConfig::new(kernel, c)).unwrap();
    let ok = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| (m.classify(x).unwrap().1 == Label::Human) == **y)
        .count();
    ok as f64 / xs.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_svm_separates_separable_data((xs, ys) in separable(4, 0.75)) {
        prop_assert_eq!(training_accuracy(Kernel::Linear, 10.0, &xs, &ys), 1.0);
    }

    #[test]
    fn kernel_svm_meets_kkt(
        pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, any::<bool>()), 6..30),
        c in 0.1f64..10.0,
    ) {
        let xs: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
        let ys: Vec<bool> = pts.iter().map(|p| p.2).collect();
        prop_assume!(ys.iter().any(|y| *y) && ys.iter().any(|y| !*y));
        let m = train_svm(&xs, &ys, &SvmConfig::new(Kernel::Poly(2), c)).unwrap();
        let gap = kkt_gap(&m, &xs, &ys);
        prop_assert!(gap <= KKT_TOLERANCE, "KKT gap {}", gap);
    }
}

fn records() -> &'static [TrialRecord] {
    static RECORDS: OnceLock<Vec<TrialRecord>> = OnceLock::new();
    RECORDS.get_or_init(|| {
        let arena = preset(TerrainKind::LowObstacle);
        let nav = NavParams::default();
        let bp = BehaviorParams::default();
        let setup = TrialSetup::new(&arena, Algorithm::Predictive, &nav, &bp);
        (0..10).map(|s| run_trial(s, &setup).unwrap()).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batch_stats_ignore_record_order(perm in Just((0..10).collect::<Vec<usize>>()).prop_shuffle()) {
        let base = records();
        let shuffled: Vec<TrialRecord> = perm.iter().map(|&i| base[i].clone()).collect();
        prop_assert_eq!(aggregate(&shuffled), aggregate(base));
    }
}

fn pose() -> impl Strategy<Value = Pose> {
    (-200.0f64..200.0, -200.0f64..200.0, -180.0f64..180.0).prop_map(|(x, y, h)| Pose::new(x, y, h))
}

fn point() -> impl Strategy<Value = Vec2> {
    (-200.0f64..200.0, -200.0f64..200.0).prop_map(|(x, y)| Vec2::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wrap_lands_in_half_open_range(a in -5000.0f64..5000.0) {
        let w = wrap_deg(a);
        prop_assert!(w > -180.0 && w <= 180.0);
        let turns = (a - w) / 360.0;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn orientation_is_rigid_motion_invariant(p in pose(), dest in point(), shift in point(), turn in -180.0f64..180.0) {
        let body = 5.0;
        let m = markers_from_pose(&p, body).unwrap();
        prop_assume!((dest - p.position).norm() > 1e-3);
        let (g, side) = orientation_error(&m, dest).unwrap();
        let d = distance_to_target(m.anterior, dest);
        prop_assert!((0.0..=180.0).contains(&g));
        // move pose and destination together
        let rot = |v: Vec2| {
            let (s, c) = turn.to_radians().sin_cos();
            Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y) + shift
        };
        let p2 = Pose::new(rot(p.position).x, rot(p.position).y, p.heading_deg + turn);
        let m2 = markers_from_pose(&p2, body).unwrap();
        let (g2, side2) = orientation_error(&m2, rot(dest)).unwrap();
        prop_assert!((g - g2).abs() < 1e-6, "{} vs {}", g, g2);
        prop_assert!((d - distance_to_target(m2.anterior, rot(dest))).abs() < 1e-6);
        if g > 1e-3 && g < 180.0 - 1e-3 {
            prop_assert_eq!(side, side2);
        }
    }

    #[test]
    fn mirrored_destination_flips_side(p in pose(), dest in point()) {
        let m = markers_from_pose(&p, 5.0).unwrap();
        let h = p.heading_unit();
        let rel = dest - p.position;
        let along = h * rel.dot(&h);
        let mirrored = p.position + along * 2.0 - rel;
        let (g, s) = orientation_error(&m, dest).unwrap();
        prop_assume!(g > 1e-3 && g < 180.0 - 1e-3);
        let (g2, s2) = orientation_error(&m, mirrored).unwrap();
        prop_assert!((g - g2).abs() < 1e-6);
        let flipped = match s { Side::Left => Side::Right, Side::Right => Side::Left, Side::Aligned => Side::Aligned };
        prop_assert_eq!(s2, flipped);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resolved_config_round_trips(
        seed in any::<u64>(),
        trials in 1usize..20,
        tick in 5.0f64..100.0,
        gamma_t in 1.0f64..90.0,
        terrain in prop::sample::select(vec!["no_obstacle", "low_obstacle", "tall_wall"]),
    ) {
        let text = format!(
            "seed = {seed}\ntrials = {trials}\nterrain = \"{terrain}\"\n[nav]\ntick = {tick:?}\ngamma_t = {gamma_t:?}\n"
        );
        let cfg = RawConfig::from_toml(&text).unwrap().resolve().unwrap();
        prop_assert_eq!(cfg.seeds.len(), trials);
        prop_assert_eq!(cfg.nav.tick, tick);
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
        let prov = Provenance::new("trial", &cfg, seed).with("note", "x: y");
        let parsed = Provenance::parse(&prov.header()).unwrap();
        prop_assert_eq!(&parsed, &prov);
        prop_assert_eq!(parsed.run_config().unwrap(), cfg);
    }
}
