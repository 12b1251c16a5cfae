//! Per-pixel error analysis on a trained single-class coordinate model.

use canonlift::canonical::{predict_coords, PixelBatch};
use canonlift::parallel::Parallelism;
use canonlift::scenes::{generate_dataset, split_instances, SceneConfig, ShapeClass};
use canonlift::symmetry::SymmetryConfig;
use canonlift::trainer::{run_training, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let per_class: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(14);

    let scene = SceneConfig {
        classes: vec![ShapeClass::WedgeIdentity],
        per_class,
        seed: 7,
        ..Default::default()
    };
    let instances = generate_dataset(&scene, Parallelism::Default).unwrap();
    let split = split_instances(&scene);
    let lr: f64 = std::env::var("PROBE_LR").ok().and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let decay: f64 = std::env::var("PROBE_DECAY").ok().and_then(|s| s.parse().ok()).unwrap_or(0.8);
    let cfg = TrainConfig {
        epochs,
        lambda_vol: 0.0,
        lambda_vs: 0.0,
        symmetry: SymmetryConfig::identity_only(0),
        supervision_views: 0,
        optim: canonlift::diffcore::OptimConfig { lr, ..Default::default() },
        lr_decay: decay,
        ..Default::default()
    };
    let mut run = run_training(&instances, &split.train, &cfg).unwrap();

    for (label, indices) in [("train", &split.train), ("test", &split.test)] {
        let mut errors: Vec<f64> = Vec::new();
        let mut by_z: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0); 8];
        for &i in indices.iter().take(10) {
            let inst = &instances[i];
            for view in &inst.input_views {
                run.tape.clear_nodes();
                let (h, w) = view.image_size();
                let batch: PixelBatch<f32> =
                    PixelBatch::from_image(&view.image, &view.mask, h, w).unwrap();
                let field = predict_coords(
                    &mut run.tape,
                    &run.model.predictor,
                    &batch,
                    &cfg.symmetry,
                    cfg.feature_dim,
                )
                .unwrap();
                let gt = view.ground_truth();
                let gathered = gt.gather_for(&field.pixels).unwrap();
                let coords = run.tape.value(field.coords).data();
                for (row, gtp) in gathered.iter().enumerate() {
                    let c = [
                        coords[row * 3] as f64,
                        coords[row * 3 + 1] as f64,
                        coords[row * 3 + 2] as f64,
                    ];
                    let e = ((c[0] - gtp[0]).powi(2)
                        + (c[1] - gtp[1]).powi(2)
                        + (c[2] - gtp[2]).powi(2))
                    .sqrt();
                    errors.push(e);
                    let zbin = (((gtp[2] + 0.5) * 8.0) as usize).min(7);
                    by_z[zbin].0 += e;
                    by_z[zbin].2 += 1;
                }
            }
        }
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pct = |p: f64| errors[((errors.len() - 1) as f64 * p) as usize];
        let mean: f64 = errors.iter().sum::<f64>() / errors.len() as f64;
        println!(
            "[{label}] n={} mean {:.4} p10 {:.4} p50 {:.4} p90 {:.4} p99 {:.4}",
            errors.len(),
            mean,
            pct(0.1),
            pct(0.5),
            pct(0.9),
            pct(0.99)
        );
        let zs: Vec<String> = by_z
            .iter()
            .map(|(s, _, n)| {
                if *n > 0 {
                    format!("{:.3}", s / *n as f64)
                } else {
                    "-".into()
                }
            })
            .collect();
        println!("[{label}] mean error by z bin: {}", zs.join(" "));
    }

    // Nonparametric floor: nearest-neighbor regression in color space from
    // train pixels to test pixels.
    let mut train_pairs: Vec<([f64; 3], [f64; 3])> = Vec::new();
    for &i in split.train.iter().take(20) {
        let inst = &instances[i];
        for view in &inst.input_views {
            let (h, w) = view.image_size();
            for r in 0..h {
                for c in 0..w {
                    let px = r * w + c;
                    if !view.mask[px] {
                        continue;
                    }
                    train_pairs.push((
                        [
                            view.image[px * 3] as f64,
                            view.image[px * 3 + 1] as f64,
                            view.image[px * 3 + 2] as f64,
                        ],
                        [
                            view.gt_coords[px * 3] as f64,
                            view.gt_coords[px * 3 + 1] as f64,
                            view.gt_coords[px * 3 + 2] as f64,
                        ],
                    ));
                }
            }
        }
    }
    let mut nn_err = 0.0;
    let mut count = 0usize;
    for &i in split.test.iter().take(4) {
        let inst = &instances[i];
        for view in &inst.input_views {
            let (h, w) = view.image_size();
            for r in 0..h {
                for c in 0..w {
                    let px = r * w + c;
                    if !view.mask[px] {
                        continue;
                    }
                    let q = [
                        view.image[px * 3] as f64,
                        view.image[px * 3 + 1] as f64,
                        view.image[px * 3 + 2] as f64,
                    ];
                    let mut best = f64::INFINITY;
                    let mut best_c = [0.0; 3];
                    for (col, coord) in &train_pairs {
                        let d = (col[0] - q[0]).powi(2)
                            + (col[1] - q[1]).powi(2)
                            + (col[2] - q[2]).powi(2);
                        if d < best {
                            best = d;
                            best_c = *coord;
                        }
                    }
                    let gtc = [
                        view.gt_coords[px * 3] as f64,
                        view.gt_coords[px * 3 + 1] as f64,
                        view.gt_coords[px * 3 + 2] as f64,
                    ];
                    nn_err += ((best_c[0] - gtc[0]).powi(2)
                        + (best_c[1] - gtc[1]).powi(2)
                        + (best_c[2] - gtc[2]).powi(2))
                    .sqrt();
                    count += 1;
                }
            }
        }
    }
    println!(
        "color-NN floor over {} train pixels: test mean error {:.4} (n={})",
        train_pairs.len(),
        nn_err / count as f64,
        count
    );
}
