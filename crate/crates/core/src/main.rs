use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use occlusionbound::features::FeatureSet;
use occlusionbound::learn::ForestParams;
use occlusionbound::pipeline::{self, stages, PipelineConfig};
use occlusionbound::synth::{fleet_scene, SceneSpec};
use occlusionbound::Error;

/// Occlusion boundary detection in video: pipeline stages and end-to-end runs.
///
/// Every stage reads its parameters from an optional key=value config file
/// (`--config`), then `--set key=value` overrides, then its own flags.
/// Config keys: seed, fleet.{videos,width,height,frames,save_videos},
/// flow.{source,alpha,iterations,levels,warps}, geom.noise,
/// seg.{k,min_size,sigma,w_occl}, edgelet.{min_len,rho},
/// forest.{trees,mtry,max_depth,min_leaf,bootstrap_ratio,max_samples},
/// infer.{lambda,window,threshold,max_iters,damping,tol},
/// eval.{folds,thresholds}, ablation.{enabled,unary_noise}.
///
/// Exit codes: 0 success, 2 configuration error, 3 missing artifact,
/// 4 numerical failure, 1 anything else.
#[derive(Parser)]
#[command(name = "occlusionbound", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "OCCLUSIONBOUND_THREADS")]
    threads: Option<usize>,
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureSetArg {
    App,
    AppFlow,
    All,
}

impl From<FeatureSetArg> for FeatureSet {
    fn from(a: FeatureSetArg) -> Self {
        match a {
            FeatureSetArg::App => FeatureSet::App,
            FeatureSetArg::AppFlow => FeatureSet::AppFlow,
            FeatureSetArg::All => FeatureSet::All,
        }
    }
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "all")]
    feature_set: FeatureSetArg,
}

impl ForestArgs {
    fn params(&self, cfg: &PipelineConfig) -> ForestParams {
        let base = cfg.forest;
        ForestParams {
            trees: self.trees.unwrap_or(base.trees),
            mtry: self.mtry.unwrap_or(base.mtry),
            max_depth: self.max_depth.unwrap_or(base.max_depth),
            min_leaf: self.min_leaf.unwrap_or(base.min_leaf),
            seed: self.seed.unwrap_or(cfg.seed),
            ..base
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into a dataset directory (exact flow, noisy geometry).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Scene description file; a random fleet scene is generated otherwise.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        geom_noise: Option<f64>,
    },
    /// Estimate forward and backward optical flow (replaces the dataset's flow).
    Flow {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        warps: Option<usize>,
    },
    /// Super-voxel segmentation into labels.svlm.
    Segment {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        min_size: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        w_occl: Option<f64>,
        /// Per-pixel occlusion probabilities (GCM1), required when --w-occl > 0.
        #[arg(long, visible_alias = "occl-map")]
        occlusion: Option<PathBuf>,
        /// Coarser hierarchy levels written as labels_level{i}.svlm.
        #[arg(long, default_value_t = 0)]
        levels: usize,
        /// Merge scale of the first hierarchy level (doubles per level).
        #[arg(long, default_value_t = 50.0)]
        k_region: f64,
    },
    /// Extract edgelets and write the JSON dump.
    Edgelets {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        min_len: Option<usize>,
    },
    /// Compute the per-edgelet feature table.
    Features {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Train the unary forest from labelled feature tables.
    TrainUnary {
        #[arg(long, num_args = 1.., required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Train the pairwise continuity forest from segmented, featurised datasets.
    TrainPairwise {
        #[arg(long, num_args = 1.., required = true)]
        dataset: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Score edgelets, run loopy BP and temporal smoothing.
    Infer {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        unary_model: PathBuf,
        #[arg(long)]
        pairwise_model: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Precision/recall evaluation of inferred boundaries.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        dataset: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        thresholds: Option<usize>,
    },
    /// Re-segment using the inferred occlusion probabilities.
    OcclusionSegment {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        w_occl: f64,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        min_size: Option<usize>,
    },
    /// Full synthetic-fleet run: data, cross-validated training, inference, evaluation.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) | Error::Parse(_) | Error::SceneSpec(_) => 2,
        Error::MissingArtifact(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> occlusionbound::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn read_scene(path: &Path) -> occlusionbound::Result<SceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SceneSpec::parse(&text)
}

fn run(cli: Cli) -> occlusionbound::Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth {
            out,
            scene,
            seed,
            width,
            height,
            frames,
            geom_noise,
        } => {
            let seed = seed.unwrap_or(cfg.seed);
            let spec = match scene {
                Some(p) => read_scene(&p)?,
                None => fleet_scene(
                    seed,
                    width.unwrap_or(cfg.width),
                    height.unwrap_or(cfg.height),
                    frames.unwrap_or(cfg.frames),
                ),
            };
            stages::synth(&spec, geom_noise.unwrap_or(cfg.geom_noise), pipeline::derive_seed(seed, "geom"), &out)?;
            println!("wrote {}x{}x{} dataset to {}", spec.width, spec.height, spec.frame_count, out.display());
        }
        Command::Flow {
            dataset,
            alpha,
            iterations,
            levels,
            warps,
        } => {
            let p = &mut cfg.flow;
            p.alpha = alpha.unwrap_or(p.alpha);
            p.iterations = iterations.unwrap_or(p.iterations);
            p.levels = levels.unwrap_or(p.levels);
            p.warps = warps.unwrap_or(p.warps);
            p.validate()?;
            stages::flow(&dataset, p)?;
            println!("estimated flow for {}", dataset.display());
        }
        Command::Segment {
            dataset,
            k,
            min_size,
            sigma,
            w_occl,
            occlusion,
            levels,
            k_region,
        } => {
            let s = &mut cfg.seg;
            s.k = k.unwrap_or(s.k);
            s.min_size = min_size.unwrap_or(s.min_size);
            s.sigma = sigma.unwrap_or(s.sigma);
            s.w_occl = w_occl.unwrap_or(s.w_occl);
            let out = dataset.join("labels.svlm");
            let labels = stages::segment(&dataset, s, occlusion.as_deref(), &out)?;
            println!("{} regions -> {}", labels.region_count(), out.display());
            for (p, n) in stages::segment_levels(&dataset, &labels, levels, k_region)? {
                println!("{n} regions -> {}", p.display());
            }
        }
        Command::Edgelets { dataset, min_len } => {
            let n = stages::edgelets(&dataset, min_len.unwrap_or(cfg.min_len))?;
            println!("{n} edgelet instances");
        }
        Command::Features { dataset, min_len, rho } => {
            let n = stages::features(&dataset, min_len.unwrap_or(cfg.min_len), rho.unwrap_or(cfg.rho))?;
            println!("{n} feature rows");
        }
        Command::TrainUnary { features, out, forest } => {
            let m = stages::train_unary(&features, forest.feature_set.into(), &forest.params(&cfg), cfg.min_len, &out)?;
            println!("{} trees over {} features -> {}", m.trees.len(), m.dim(), out.display());
        }
        Command::TrainPairwise { dataset, out, forest } => {
            let m = stages::train_pairwise(&dataset, forest.feature_set.into(), &forest.params(&cfg), cfg.min_len, &out)?;
            println!("{} trees over {} features -> {}", m.trees.len(), m.dim(), out.display());
        }
        Command::Infer {
            dataset,
            unary_model,
            pairwise_model,
            window,
            lambda,
            threshold,
        } => {
            let opts = stages::InferOptions {
                window: window.unwrap_or(cfg.window),
                lambda: lambda.unwrap_or(cfg.lambda),
                threshold: threshold.unwrap_or(cfg.threshold),
                bp: cfg.bp,
                min_len: cfg.min_len,
            };
            let unconverged = stages::infer(&dataset, &unary_model, &pairwise_model, &opts)?;
            if !unconverged.is_empty() {
                eprintln!("warning: belief propagation did not converge in frames {unconverged:?}");
            }
            println!("wrote probabilities for {}", dataset.display());
        }
        Command::Eval {
            dataset,
            out,
            thresholds,
        } => {
            let curve = stages::eval(&dataset, thresholds.unwrap_or(cfg.thresholds), cfg.min_len, &out)?;
            let best = curve.best();
            println!(
                "best F1 {:.4} (P {:.4}, R {:.4}) at threshold {}",
                best.f1, best.precision, best.recall, best.threshold
            );
        }
        Command::OcclusionSegment {
            dataset,
            w_occl,
            k,
            min_size,
        } => {
            let s = &mut cfg.seg;
            s.k = k.unwrap_or(s.k);
            s.min_size = min_size.unwrap_or(s.min_size);
            s.w_occl = w_occl;
            let (plain, aware) = stages::occlusion_segment(&dataset, s)?;
            println!("boundary coverage: colour-only {plain:.4}, occlusion-aware {aware:.4}");
        }
        Command::Pipeline { out, seed } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = pipeline::run(&cfg, &out)?;
            println!(
                "best F1 {:.4} (P {:.4}, R {:.4}) at threshold {}; run directory {}",
                report.best.f1,
                report.best.precision,
                report.best.recall,
                report.best.threshold,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
