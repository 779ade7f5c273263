//! Hot paths: per-frame detection stages and whole navigation runs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use biobot_core::arena::{preset, TerrainKind};
use biobot_core::detection::{hog, median3x3, shipped_detector};
use biobot_core::harness::{run_trial, TrialSetup};
use biobot_core::insect::BehaviorParams;
use biobot_core::mission::{reference_scenario, run_mission};
use biobot_core::navigation::{Algorithm, NavParams};
use biobot_core::thermal::{synth_dataset, DatasetRecipe, ThermalImage};

fn frames() -> Vec<ThermalImage> {
    let set = synth_dataset(&DatasetRecipe::validation(0.01), 5).expect("dataset renders");
    set.into_iter().take(16).map(|l| l.image).collect()
}

fn detection(c: &mut Criterion) {
    let imgs = frames();
    let det = shipped_detector();
    let filtered: Vec<ThermalImage> = imgs.iter().map(median3x3).collect();
    c.bench_function("median3x3", |b| b.iter(|| median3x3(black_box(&imgs[0]))));
    c.bench_function("hog_cell4", |b| {
        b.iter(|| hog(black_box(filtered[0].pixels()), 4).unwrap())
    });
    c.bench_function("detect_16_frames", |b| {
        b.iter(|| {
            for img in &imgs {
                black_box(det.detect(img).unwrap());
            }
        })
    });
}

fn navigation(c: &mut Criterion) {
    let nav = NavParams::default();
    let bp = BehaviorParams::default();
    let mut g = c.benchmark_group("trial");
    g.sample_size(20);
    for kind in [TerrainKind::LowObstacle, TerrainKind::TallWall] {
        let arena = preset(kind);
        for alg in [Algorithm::Simple, Algorithm::Predictive] {
            let setup = TrialSetup::new(&arena, alg, &nav, &bp);
            g.bench_function(format!("{}/{}", kind.name(), alg.name()), |b| {
                b.iter(|| run_trial(black_box(3), &setup).unwrap())
            });
        }
    }
    g.finish();

    let scenario = reference_scenario();
    let det = shipped_detector();
    let mut g = c.benchmark_group("mission");
    g.sample_size(10);
    g.bench_function("reference", |b| {
        b.iter(|| run_mission(&scenario, &det, &nav, &bp, black_box(0)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, detection, navigation);
criterion_main!(benches);
