//! Subcommand implementations.

use std::path::{Path, PathBuf};

use clap::Args;

use canonlift::diffcore::{read_checkpoint, write_checkpoint, Tape};
use canonlift::heads::{decode, project, write_clim, write_ppm};
use canonlift::parallel::Parallelism;
use canonlift::scenes::{
    generate_dataset, read_dataset, read_instance, read_manifest, write_dataset, Manifest,
    SceneInstance, ShapeClass,
};
use canonlift::trainer::{
    evaluate_parallel, find_correspondences, forward_representation, run_training,
    saliency_backtrace, write_loss_trace_csv, write_metrics_csv, write_metrics_json, Model,
    TrainConfig,
};
use canonlift::voxelgrid::GridSpec;

use crate::runconfig::{self, RunConfig};

pub enum CliError {
    Core(canonlift::Error),
    Usage(String),
    CheckFailed(String),
}

impl From<canonlift::Error> for CliError {
    fn from(err: canonlift::Error) -> Self {
        CliError::Core(err)
    }
}

fn parallelism(threads: Option<usize>) -> Parallelism {
    match threads {
        Some(n) => Parallelism::Fixed(n.max(1)),
        None => Parallelism::from_env(),
    }
}

#[derive(Args)]
pub struct ConfigArgs {
    /// JSON run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key overrides, e.g. --set train.epochs=4
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        runconfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated class subset, e.g. table_rot4,bench_rot2
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    /// Instances per class.
    #[arg(long)]
    pub count: Option<usize>,
    /// Root dataset seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker pool size (CANONLIFT_THREADS as fallback; 1 = reference).
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let mut run = args.config.load()?;
    if !args.classes.is_empty() {
        let mut classes = Vec::new();
        for name in &args.classes {
            classes.push(ShapeClass::from_name(name).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown class {name:?}; valid classes: {}",
                    ShapeClass::ALL.map(|c| c.name()).join(", ")
                ))
            })?);
        }
        run.scene.classes = classes;
    }
    if let Some(count) = args.count {
        run.scene.per_class = count;
    }
    if let Some(seed) = args.seed {
        run.scene.seed = seed;
    }
    let instances = generate_dataset(&run.scene, parallelism(args.threads))?;
    let manifest = write_dataset(&args.out, &run.scene, &instances)?;
    runconfig::write_resolved(&args.out, &run)?;
    println!(
        "dataset: {} instances ({} classes x {}), seed {}, hash {}",
        manifest.instance_count,
        run.scene.classes.len(),
        run.scene.per_class,
        manifest.seed,
        manifest.config_hash
    );
    println!(
        "split: {} train / {} val / {} test",
        manifest.split.train.len(),
        manifest.split.val.len(),
        manifest.split.test.len()
    );
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<SceneInstance>), CliError> {
    Ok(read_dataset(dir)?)
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory from gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint, metrics, and traces.
    #[arg(long)]
    pub out: PathBuf,
    /// Train the no-symmetry ablation (identity-only type set).
    #[arg(long)]
    pub ablation: bool,
    /// Worker pool for the post-training evaluation.
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut run = args.config.load()?;
    if args.ablation {
        run.train = run.train.without_symmetry();
    }
    let (manifest, instances) = load_dataset(&args.data)?;
    let cfg = &run.train;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| canonlift::Error::io(args.out.display().to_string(), e))?;
    let result = run_training(&instances, &manifest.split.train, cfg)?;
    let checkpoint = args.out.join("checkpoint.clpm");
    write_checkpoint(result.tape.store(), &checkpoint)?;
    write_loss_trace_csv(&args.out.join("loss_trace.csv"), &result.trace)?;
    let eval_split =
        if manifest.split.val.is_empty() { &manifest.split.test } else { &manifest.split.val };
    let report = evaluate_parallel(
        result.tape.store(),
        cfg,
        &instances,
        eval_split,
        &[cfg.input_views],
        parallelism(args.threads),
    )?;
    write_metrics_json(&args.out.join("metrics.json"), &report)?;
    write_metrics_csv(&args.out.join("metrics.csv"), &report)?;
    runconfig::write_resolved(&args.out, &run)?;
    println!(
        "trained {} epochs over {} instances; final epoch mean loss {:.4}",
        cfg.epochs,
        manifest.split.train.len(),
        result.epoch_means.last().copied().unwrap_or(f64::NAN)
    );
    println!(
        "held-out mean IoU {:.4} (threshold {:.2}), mean L1x100 {:.3}",
        report.mean_iou, report.threshold, report.mean_l1
    );
    println!("checkpoint: {}", checkpoint.display());
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// View counts for the sweep, e.g. --views 1,2,3,4
    #[arg(long, value_delimiter = ',')]
    pub views: Vec<usize>,
    /// Which split to evaluate: train, val, or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let run = args.config.load()?;
    let cfg = &run.train;
    let (manifest, instances) = load_dataset(&args.data)?;
    let store = read_checkpoint::<f32>(&args.checkpoint)?;
    let split = match args.split.as_str() {
        "train" => &manifest.split.train,
        "val" => &manifest.split.val,
        "test" => &manifest.split.test,
        other => {
            return Err(CliError::Usage(format!(
                "unknown split {other:?}; valid splits: train, val, test"
            )))
        }
    };
    let views = if args.views.is_empty() { vec![cfg.input_views] } else { args.views.clone() };
    let report = evaluate_parallel(
        &store,
        cfg,
        &instances,
        split,
        &views,
        parallelism(args.threads),
    )?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| canonlift::Error::io(args.out.display().to_string(), e))?;
    write_metrics_json(&args.out.join("metrics.json"), &report)?;
    write_metrics_csv(&args.out.join("metrics.csv"), &report)?;
    runconfig::write_resolved(&args.out, &run)?;
    println!(
        "split {} ({} instances): mean IoU {:.4} at threshold {:.2}, mean L1x100 {:.3}",
        args.split,
        split.len(),
        report.mean_iou,
        report.threshold,
        report.mean_l1
    );
    for entry in &report.view_sweep {
        println!(
            "  {} views: IoU {:.4}, L1x100 {:.3}",
            entry.views, entry.mean_iou, entry.mean_l1
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Random seeds per op.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let checks = canonlift::gradsuite::run_suite(args.seeds)?;
    let mut failures = 0;
    println!("{:<22} {:>8} {:>12} {:>7}", "op", "checked", "max rel err", "status");
    for check in &checks {
        let status = if check.report.passed() { "pass" } else { "FAIL" };
        if !check.report.passed() {
            failures += 1;
        }
        println!(
            "{:<22} {:>8} {:>12.3e} {:>7}",
            check.op, check.report.checked, check.report.max_rel_error, status
        );
    }
    if failures > 0 {
        return Err(CliError::CheckFailed(format!(
            "{failures} of {} gradient checks failed",
            checks.len()
        )));
    }
    println!("all {} ops passed at tol {:.0e}", checks.len(), canonlift::gradsuite::SUITE_TOL);
    Ok(())
}

fn parse_triple(raw: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("{raw:?} is not x,y,z")));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| CliError::Usage(format!("{p:?} is not a number")))?;
    }
    Ok(out)
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset instance index.
    #[arg(long, default_value_t = 0)]
    pub instance: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Camera azimuth in degrees (defaults to the first supervision view).
    #[arg(long)]
    pub azimuth: Option<f64>,
    #[arg(long)]
    pub elevation: Option<f64>,
    /// Camera translation as x,y,z.
    #[arg(long)]
    pub translation: Option<String>,
    #[arg(long)]
    pub distance: Option<f64>,
    /// Also dump the raw f32 image.
    #[arg(long)]
    pub raw: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

struct LoadedModel {
    tape: Tape<f32>,
    model: Model,
}

fn load_model(checkpoint: &Path, cfg: &TrainConfig) -> Result<LoadedModel, CliError> {
    let store = read_checkpoint::<f32>(checkpoint)?;
    let tape = Tape::from_store(store);
    let model = Model::attach(&tape, cfg)?;
    Ok(LoadedModel { tape, model })
}

pub fn render(args: RenderArgs) -> Result<(), CliError> {
    let run = args.config.load()?;
    let cfg = &run.train;
    let manifest = read_manifest(&args.data)?;
    let inst = read_instance(&args.data, &manifest, args.instance)?;
    let LoadedModel { mut tape, model } = load_model(&args.checkpoint, cfg)?;

    let base = inst
        .supervision_views
        .first()
        .or_else(|| inst.input_views.first())
        .ok_or_else(|| CliError::Usage("instance has no views".into()))?;
    let mut camera = base.camera;
    if let Some(az) = args.azimuth {
        camera.azimuth_deg = az;
    }
    if let Some(el) = args.elevation {
        camera.elevation_deg = el;
    }
    if let Some(raw) = &args.translation {
        camera.translation = parse_triple(raw)?;
    }
    if let Some(d) = args.distance {
        camera.distance = d;
    }

    let k = cfg.input_views.min(inst.input_views.len());
    let spec = GridSpec::new(cfg.grid_cells, cfg.feature_dim)?;
    let (_, _, _, _, refined) =
        forward_representation(&mut tape, &model, cfg, &inst.input_views[..k])?;
    let pooled = project(&mut tape, refined, spec, &camera, &model.occlusion, &cfg.render)?;
    let image = decode(&mut tape, &model.decoder, pooled, &cfg.render)?;
    let out_size = cfg.render.output_size;
    let pixels: Vec<f32> = tape.value(image).data().iter().map(|&v| v as f32).collect();

    std::fs::create_dir_all(&args.out)
        .map_err(|e| canonlift::Error::io(args.out.display().to_string(), e))?;
    let ppm = args.out.join(format!("render_{:04}.ppm", args.instance));
    write_ppm(&ppm, &pixels, out_size, out_size)?;
    if args.raw {
        let clim = args.out.join(format!("render_{:04}.clim", args.instance));
        write_clim(&clim, &pixels, out_size, out_size, 3)?;
    }
    runconfig::write_resolved(&args.out, &run)?;
    println!("rendered instance {} to {}", args.instance, ppm.display());
    Ok(())
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub instance: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Saliency region in the rendered image as r0,c0,r1,c1 (inclusive).
    #[arg(long)]
    pub region: Option<String>,
    /// Query view index for correspondence lookup.
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    /// Query pixel as row,col (defaults to the first foreground pixel).
    #[arg(long)]
    pub pixel: Option<String>,
    /// Matches per view.
    #[arg(long, default_value_t = 8)]
    pub top_n: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn inspect(args: InspectArgs) -> Result<(), CliError> {
    let run = args.config.load()?;
    let cfg = &run.train;
    let manifest = read_manifest(&args.data)?;
    let inst = read_instance(&args.data, &manifest, args.instance)?;
    let LoadedModel { mut tape, model } = load_model(&args.checkpoint, cfg)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| canonlift::Error::io(args.out.display().to_string(), e))?;

    let k = cfg.input_views.min(inst.input_views.len());
    let views = &inst.input_views[..k];

    // Saliency back-tracing from a rendered region to the input images.
    let camera = inst
        .supervision_views
        .first()
        .map(|v| v.camera)
        .or_else(|| views.first().map(|v| v.camera))
        .ok_or_else(|| CliError::Usage("instance has no views".into()))?;
    let out_size = cfg.render.output_size;
    let region: Vec<(usize, usize)> = match &args.region {
        Some(raw) => {
            let parts: Vec<usize> = raw
                .split(',')
                .map(|p| p.parse().map_err(|_| CliError::Usage(format!("bad region {raw:?}"))))
                .collect::<Result<_, _>>()?;
            if parts.len() != 4 {
                return Err(CliError::Usage("region must be r0,c0,r1,c1".into()));
            }
            let mut px = Vec::new();
            for r in parts[0]..=parts[2].min(out_size - 1) {
                for c in parts[1]..=parts[3].min(out_size - 1) {
                    px.push((r, c));
                }
            }
            px
        }
        None => {
            let q = out_size / 4;
            let mut px = Vec::new();
            for r in q..out_size - q {
                for c in q..out_size - q {
                    px.push((r, c));
                }
            }
            px
        }
    };
    let maps = saliency_backtrace(&mut tape, &model, cfg, views, &camera, &region)?;
    for (i, (map, view)) in maps.iter().zip(views).enumerate() {
        let (h, w) = view.image_size();
        let rgb: Vec<f32> = map.iter().flat_map(|&v| [v, v, v]).collect();
        write_ppm(&args.out.join(format!("saliency_view{i}.ppm")), &rgb, h, w)?;
    }

    // Correspondence lookup over predicted fields.
    tape.clear_nodes();
    let (fields, _, _, _, _) = forward_representation(&mut tape, &model, cfg, views)?;
    let values: Vec<canonlift::canonical::CoordFieldValues> = fields
        .iter()
        .map(|f| canonlift::canonical::CoordFieldValues::from_tape(&tape, f))
        .collect();
    let query_field = values
        .get(args.view)
        .ok_or_else(|| CliError::Usage(format!("view {} out of range", args.view)))?;
    let query_pixel = match &args.pixel {
        Some(raw) => {
            let t = parse_triple(&format!("{raw},0"))?;
            (t[0] as u32, t[1] as u32)
        }
        None => *query_field
            .pixels
            .first()
            .ok_or_else(|| CliError::Usage("query view has no foreground".into()))?,
    };
    let matches = find_correspondences(&values, args.view, query_pixel, args.top_n)?;
    for (i, (per_view, view)) in matches.iter().zip(views).enumerate() {
        let (h, w) = view.image_size();
        let mut rgb = view.image.clone();
        for &(r, c, _) in per_view {
            let p = (r as usize * w + c as usize) * 3;
            rgb[p] = 1.0;
            rgb[p + 1] = 0.0;
            rgb[p + 2] = 0.0;
        }
        if i == args.view {
            let p = (query_pixel.0 as usize * w + query_pixel.1 as usize) * 3;
            rgb[p] = 0.0;
            rgb[p + 1] = 1.0;
            rgb[p + 2] = 0.0;
        }
        write_ppm(&args.out.join(format!("correspondence_view{i}.ppm")), &rgb, h, w)?;
    }
    runconfig::write_resolved(&args.out, &run)?;
    println!(
        "wrote {} saliency maps and {} correspondence overlays to {}",
        maps.len(),
        matches.len(),
        args.out.display()
    );
    Ok(())
}
