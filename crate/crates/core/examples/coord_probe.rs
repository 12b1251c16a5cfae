//! Isolated coordinate-learning probe: trains only the coordinate losses on
//! one class and reports per-class coordinate error by symmetry choice.

use canonlift::parallel::Parallelism;
use canonlift::scenes::{generate_dataset, split_instances, SceneConfig, ShapeClass};
use canonlift::symmetry::SymmetryConfig;
use canonlift::trainer::{run_training, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let class_name = args.get(1).map(String::as_str).unwrap_or("wedge_identity");
    let per_class: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let identity_only = args.get(4).map(|s| s == "identity").unwrap_or(false);
    let class = ShapeClass::from_name(class_name).expect("class name");

    let scene = SceneConfig {
        classes: vec![class],
        per_class,
        seed: 7,
        ..Default::default()
    };
    let instances = generate_dataset(&scene, Parallelism::Default).unwrap();
    let split = split_instances(&scene);

    let cfg = TrainConfig {
        epochs,
        lambda_vol: 0.0,
        lambda_vs: 0.0,
        symmetry: if identity_only {
            SymmetryConfig::identity_only(0)
        } else {
            SymmetryConfig::full(0)
        },
        supervision_views: 0,
        ..Default::default()
    };
    let run = run_training(&instances, &split.train, &cfg).unwrap();
    let take = run.trace.len().min(30);
    let late_coord: f64 = run.trace[run.trace.len() - take..]
        .iter()
        .map(|r| r.losses.coord)
        .sum::<f64>()
        / take as f64;
    let late_spur: f64 = run.trace[run.trace.len() - take..]
        .iter()
        .map(|r| r.losses.spurious)
        .sum::<f64>()
        / take as f64;
    println!(
        "{class_name} identity_only={identity_only}: late coord {late_coord:.4}, late spurious {late_spur:.4}"
    );
    println!(
        "epoch means: {:?}",
        run.epoch_means.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
}
