use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use vbrep_core::error::{FormatError, PipelineError};
use vbrep_core::eval::export::{export_scene, read_bundle, write_bundle, write_noised_bundle, write_report, write_vbrep, write_wireframe_dump};
use vbrep_core::eval::{gt_vbrep, run_pipeline, Ablation, MetricsReport, PipelineConfig, PipelineInput, Reconstruction, Truth};
use vbrep_core::io::{read_json, write_json};
use vbrep_core::synth::suites::{scene, suite, SceneKind};
use vbrep_core::synth::{corrupt_depth, raycast_scene, BilateralParams, FbmConfig};

#[derive(Parser)]
#[command(name = "vbrep", version, about = "VB-Rep reconstruction from a depth image and an instance map")]
struct Cli {
    /// Master seed for RANSAC, noise and metric sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with `pipeline`, `noise` and `blur` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Also write the edge graph and lifted wireframe under `<out>/stages`.
    #[arg(long, global = true)]
    dump_stages: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct AblationArgs {
    /// Skip the joint intersection refinement.
    #[arg(long)]
    no_int: bool,
    /// Drop the axis-alignment constraints.
    #[arg(long)]
    no_axis: bool,
    /// Both of the above.
    #[arg(long)]
    fit_only: bool,
}

impl AblationArgs {
    fn ablation(self) -> Ablation {
        Ablation { no_int: self.no_int || self.fit_only, no_axis: self.no_axis || self.fit_only }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into an input bundle with ground truth.
    Synth {
        #[arg(long, default_value = "box")]
        scene: SceneKind,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy a bundle with FBM noise added to its depth.
    Noise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply the bilateral blur after the noise.
        #[arg(long)]
        blur: bool,
    },
    /// Reconstruct a VB-Rep from a bundle.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        ablation: AblationArgs,
    },
    /// Extract the reference VB-Rep from a bundle's true primitives.
    GtVbrep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct and score against ground truth, for one bundle or a
    /// generated suite.
    Eval {
        #[arg(long, required_unless_present = "suite")]
        input: Option<PathBuf>,
        /// Generate and score this many harness scenes instead.
        #[arg(long, conflicts_with = "input")]
        suite: Option<usize>,
        /// Add FBM noise to suite scenes.
        #[arg(long)]
        noisy: bool,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        ablation: AblationArgs,
        /// Record wall time in report.json (makes reports run-dependent).
        #[arg(long)]
        wall_time: bool,
    },
    /// Merge a vbrep.json and its meshes into one OBJ with edge line sets.
    Export {
        #[arg(long)]
        vbrep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    pipeline: PipelineConfig,
    noise: FbmConfig,
    blur: BilateralParams,
}

fn load_config(cli: &Cli) -> Result<Config, FormatError> {
    let mut cfg: Config = match &cli.config {
        Some(path) => read_json(path)?,
        None => Config::default(),
    };
    cfg.pipeline.seed = cli.seed;
    cfg.noise.seed = cli.seed;
    cfg.pipeline.validate()?;
    Ok(cfg)
}

fn write_reconstruction(out: &Path, rec: &Reconstruction, dump: bool) -> Result<(), FormatError> {
    write_vbrep(out, &rec.vbrep, Some(rec.frame))?;
    if dump {
        let stages = out.join("stages");
        std::fs::create_dir_all(&stages).map_err(|e| FormatError::Io { path: stages.display().to_string(), source: e })?;
        write_json(&stages.join("edge_graph.json"), &rec.graph)?;
        write_wireframe_dump(&stages.join("wireframe.json"), &rec.wireframe)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SuiteEntry {
    scene: String,
    kind: SceneKind,
    report: MetricsReport,
}

#[derive(Serialize)]
struct SuiteSummary {
    ablation: &'static str,
    scenes: Vec<SuiteEntry>,
    mean_chamfer: f64,
    mean_primitive_alignment: Option<f64>,
}

fn suite_inputs(n: usize, cfg: &Config, noisy: bool, width: usize, height: usize) -> Result<Vec<(String, SceneKind, PipelineInput)>, PipelineError> {
    suite(n, cfg.pipeline.seed, width, height)
        .into_iter()
        .enumerate()
        .map(|(i, (kind, spec))| {
            let gt = raycast_scene(&spec)?;
            let depth = if noisy {
                corrupt_depth(&gt.depth, &FbmConfig { seed: cfg.noise.seed.wrapping_add(i as u64), ..cfg.noise }, None)
            } else {
                gt.depth.clone()
            };
            let truth = Truth { file: gt.truth_file(), depth: gt.depth.clone() };
            let name = format!("scene_{i:02}_{}", serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
            Ok((name, kind, PipelineInput { depth, instances: gt.instances, camera: gt.camera, truth: Some(truth) }))
        })
        .collect()
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth { scene: kind, width, height, out } => {
            let gt = raycast_scene(&scene(*kind, cli.seed, *width, *height))?;
            write_bundle(out, &gt)?;
        }
        Command::Noise { input, out, blur } => {
            let mut bundle = read_bundle(input)?;
            bundle.depth = corrupt_depth(&bundle.depth, &cfg.noise, blur.then_some(&cfg.blur));
            write_noised_bundle(input, out, &bundle)?;
        }
        Command::Reconstruct { input, out, ablation } => {
            let mut bundle = read_bundle(input)?;
            bundle.truth = None;
            let (rec, _) = run_pipeline(&bundle, ablation.ablation(), &cfg.pipeline)?;
            write_reconstruction(out, &rec, cli.dump_stages)?;
        }
        Command::GtVbrep { input, out } => {
            let bundle = read_bundle(input)?;
            let truth = bundle.truth.as_ref().ok_or_else(|| FormatError::InputMissing(input.join("truth.json").display().to_string()))?;
            let v = gt_vbrep(&truth.depth, &bundle.instances, &bundle.camera, &truth.file, &cfg.pipeline)?;
            write_vbrep(out, &v, Some(truth.file.frame))?;
        }
        Command::Eval { input, suite: n, noisy, width, height, out, ablation, wall_time } => {
            let pipeline = PipelineConfig { record_wall_time: *wall_time, ..cfg.pipeline };
            let ablation = ablation.ablation();
            let inputs = match (input, n) {
                (Some(dir), _) => {
                    let bundle = read_bundle(dir)?;
                    if bundle.truth.is_none() {
                        return Err(FormatError::InputMissing(dir.join("truth.json").display().to_string()).into());
                    }
                    vec![(String::new(), None, bundle)]
                }
                (None, Some(n)) => suite_inputs(*n, &cfg, *noisy, *width, *height)?.into_iter().map(|(s, k, b)| (s, Some(k), b)).collect(),
                (None, None) => return Err(FormatError::Invalid("eval needs --input or --suite".into()).into()),
            };
            let results: Vec<(Reconstruction, MetricsReport)> = inputs
                .par_iter()
                .map(|(_, _, bundle)| {
                    let (rec, report) = run_pipeline(bundle, ablation, &pipeline)?;
                    Ok((rec, report.expect("truth is attached")))
                })
                .collect::<Result<_, PipelineError>>()?;
            for ((name, _, _), (rec, report)) in inputs.iter().zip(&results) {
                let dir = out.join(name);
                write_reconstruction(&dir, rec, cli.dump_stages)?;
                write_report(&dir, report)?;
            }
            if n.is_some() {
                let axed: Vec<f64> = results.iter().filter_map(|(_, r)| r.primitive_alignment).collect();
                let summary = SuiteSummary {
                    ablation: ablation.name(),
                    mean_chamfer: results.iter().map(|(_, r)| r.chamfer).sum::<f64>() / results.len().max(1) as f64,
                    mean_primitive_alignment: (!axed.is_empty()).then(|| axed.iter().sum::<f64>() / axed.len() as f64),
                    scenes: inputs
                        .iter()
                        .zip(&results)
                        .map(|((name, kind, _), (_, r))| SuiteEntry { scene: name.clone(), kind: kind.expect("suite scene"), report: r.clone() })
                        .collect(),
                };
                write_json(&out.join("summary.json"), &summary)?;
            }
        }
        Command::Export { vbrep, out } => {
            let path = export_scene(vbrep, out)?;
            log::info!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
