//! Desk-scale calibration probe: measures raw loss-term magnitudes, epoch
//! timing, and held-out metrics for the full model and the no-symmetry
//! ablation. Used to pin the default loss weights and training length.

use std::time::Instant;

use canonlift::parallel::Parallelism;
use canonlift::scenes::{generate_dataset, split_instances, SceneConfig};
use canonlift::trainer::{evaluate_parallel, run_training, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let per_class: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2e-3);

    let scene = SceneConfig { per_class, seed: 7, ..Default::default() };
    let t0 = Instant::now();
    let instances = generate_dataset(&scene, Parallelism::Default).unwrap();
    println!("datagen: {} instances in {:.1}s (parallel)", instances.len(), t0.elapsed().as_secs_f64());
    let split = split_instances(&scene);
    println!("split: {} train / {} val / {} test", split.train.len(), split.val.len(), split.test.len());

    let cfg = TrainConfig {
        epochs,
        optim: canonlift::diffcore::OptimConfig { lr, ..Default::default() },
        ..Default::default()
    };

    for (label, cfg) in [("full", cfg.clone()), ("ablation", cfg.without_symmetry())] {
        let t1 = Instant::now();
        let run = run_training(&instances, &split.train, &cfg).unwrap();
        let train_time = t1.elapsed().as_secs_f64();
        // Raw term magnitudes early and late.
        let early: Vec<_> = run.trace.iter().take(20).collect();
        let late: Vec<_> = run.trace.iter().rev().take(20).collect();
        let mean = |rows: &[&canonlift::trainer::TraceRow], f: fn(&canonlift::trainer::LossBreakdown) -> f64| {
            rows.iter().map(|r| f(&r.losses)).sum::<f64>() / rows.len() as f64
        };
        println!(
            "[{label}] train {:.1}s ({:.0} ms/step), epoch means: {:?}",
            train_time,
            train_time * 1000.0 / run.trace.len() as f64,
            run.epoch_means.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
        println!(
            "[{label}] raw terms early: coord {:.4} spur {:.4} vol {:.4} vs {:.4}",
            mean(&early, |l| l.coord),
            mean(&early, |l| l.spurious),
            mean(&early, |l| l.vol),
            mean(&early, |l| l.vs),
        );
        println!(
            "[{label}] raw terms late:  coord {:.4} spur {:.4} vol {:.4} vs {:.4}",
            mean(&late, |l| l.coord),
            mean(&late, |l| l.spurious),
            mean(&late, |l| l.vol),
            mean(&late, |l| l.vs),
        );
        let t2 = Instant::now();
        let report = evaluate_parallel(
            run.tape.store(),
            &cfg,
            &instances,
            &split.test,
            &[1, 2, 4],
            Parallelism::Default,
        )
        .unwrap();
        println!(
            "[{label}] eval {:.1}s: mean IoU {:.4} @ t={:.2}, L1x100 {:.2}",
            t2.elapsed().as_secs_f64(),
            report.mean_iou,
            report.threshold,
            report.mean_l1
        );
        for e in &report.view_sweep {
            println!("[{label}]   {} views: IoU {:.4} L1 {:.2}", e.views, e.mean_iou, e.mean_l1);
        }
        for (class, m) in &report.per_class {
            println!("[{label}]   {class}: IoU {:.4} L1 {:.2}", m.iou, m.l1);
        }
    }
}
