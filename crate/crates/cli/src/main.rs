use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use facetrace::config::RunConfigFile;
use facetrace::data::{build_manifest, generate_synthetic, Manifest, Split};
use facetrace::evaluation::{evaluate, pairs_from_manifest, render_grid, LoadedTracer, Tracer};
use facetrace::imageio::{read_face, write_png, write_rgb};
use facetrace::losses::RedundancyMode;
use facetrace::training::{log::truncate_log, Checkpoint, RunOutputs, Trainer, TrainingSet};
use facetrace::{Error, ErrorKind, Result};

/// Directory for corpora and runs when `--output` is not given.
const CACHE_ENV: &str = "FACETRACE_CACHE_DIR";

#[derive(Parser)]
#[command(
    name = "facetrace",
    version,
    about = "Trace deepfake faces back to the original identity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-level seed; every module seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Model and corpus resolution in pixels.
    #[arg(long)]
    resolution: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic forgery corpus with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build a pair manifest from a frame-directory video dataset.
    Prepare {
        /// Dataset root containing `real/` and `fake/`.
        root: PathBuf,
        /// Naming convention: celebdf or ffpp.
        #[arg(long)]
        convention: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the network on a manifest's train split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pair manifest (overrides `data.manifest`).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Total epochs; when resuming, counts the epochs already done.
        #[arg(long)]
        epochs: Option<usize>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Signed or absolute cosine in the redundancy loss.
        #[arg(long, value_name = "raw|absolute")]
        redundancy_mode: Option<RedundancyMode>,
        /// Weight of the optional attribute constraint.
        #[arg(long)]
        attr_loss_weight: Option<f64>,
    },
    /// Trace a fake image, or every image in a directory.
    Trace {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output file for a single image, directory otherwise.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest's test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint, or an oracle tracer file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pair manifest whose test split is evaluated.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Rows in the comparison grid.
        #[arg(long)]
        grid: Option<usize>,
    },
}

fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".facetrace-cache"))
}

fn default_corpus_dir() -> PathBuf {
    cache_dir().join("synthetic")
}

fn load_config(common: &Common) -> Result<RunConfigFile> {
    let mut cfg = match &common.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(r) = common.resolution {
        cfg.model.resolution = r;
        cfg.data.synthetic.resolution = r;
    }
    Ok(cfg)
}

fn manifest_path(flag: Option<PathBuf>, cfg: &RunConfigFile) -> PathBuf {
    flag.or_else(|| cfg.data.manifest.clone())
        .unwrap_or_else(|| default_corpus_dir().join(facetrace::data::synthetic::MANIFEST_NAME))
}

fn cmd_synth(common: Common) -> Result<()> {
    let cfg = load_config(&common)?.resolve()?;
    let out = common.output.unwrap_or_else(default_corpus_dir);
    let manifest = generate_synthetic(&cfg.data.synthetic, &out)?;
    cfg.archive(&out)?;
    let c = manifest.counts();
    println!(
        "{} pairs ({} train, {} test) in {}",
        c.train + c.test,
        c.train,
        c.test,
        out.display()
    );
    Ok(())
}

fn cmd_prepare(root: PathBuf, convention: Option<String>, common: Common) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if let Some(c) = convention {
        cfg.data.convention = c;
    }
    let cfg = cfg.resolve()?;
    let out = common.output.unwrap_or_else(|| cache_dir().join("prepared"));
    let (manifest, report) = build_manifest(
        &root,
        cfg.convention()?,
        cfg.data.split_seed,
        cfg.data.test_fraction,
        cfg.data.interval,
        &out,
    )?;
    manifest.write(&out.join("manifest.jsonl"))?;
    let rp = out.join("prepare_report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&rp, text + "\n").map_err(|e| Error::io(&rp, e))?;
    cfg.archive(&out)?;
    println!(
        "{} pairs, {} orphan fakes, {} malformed names -> {}",
        report.pairs,
        report.orphan_fakes.len(),
        report.malformed.len(),
        out.display()
    );
    Ok(())
}

struct TrainArgs {
    common: Common,
    manifest: Option<PathBuf>,
    epochs: Option<usize>,
    checkpoint: Option<PathBuf>,
    redundancy_mode: Option<RedundancyMode>,
    attr_loss_weight: Option<f64>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = a.redundancy_mode {
        cfg.train.redundancy_mode = m;
    }
    if let Some(w) = a.attr_loss_weight {
        cfg.train.weights.lambda_attr = w;
    }
    let (cfg, mut trainer) = match &a.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            log::info!("resuming from {} at epoch {}", p.display(), ck.epoch);
            cfg.model = ck.params.config.clone();
            let mut cfg = cfg.resolve()?;
            let epochs = cfg.train.epochs;
            cfg.train = ck.train_config.clone();
            if a.epochs.is_some() {
                cfg.train.epochs = epochs;
            }
            cfg.validate()?;
            let mut t = Trainer::from_checkpoint(ck)?;
            t.config = cfg.train.clone();
            (cfg, t)
        }
        None => {
            let cfg = cfg.resolve()?;
            let t = Trainer::new(cfg.train.clone(), &cfg.model)?;
            (cfg, t)
        }
    };
    let mpath = manifest_path(a.manifest, &cfg);
    let manifest = Manifest::read(&mpath)?;
    let supervisor = cfg.supervisor()?;
    let data = TrainingSet::from_manifest(&manifest, cfg.model.resolution, &supervisor)?;
    let out = a.common.output.unwrap_or_else(|| cache_dir().join("run"));
    cfg.archive(&out)?;
    let log_path = out.join("train_log.jsonl");
    if a.checkpoint.is_some() {
        truncate_log(&log_path, trainer.epoch)?;
    } else if log_path.exists() {
        std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
    }
    trainer.fit(
        &data,
        &RunOutputs {
            checkpoint_dir: Some(out.join("checkpoints")),
            log_path: Some(log_path),
            stop_after: None,
        },
    )?;
    trainer.checkpoint().save(&out.join("final.safetensors"))?;
    let summary = trainer.log.summary();
    let sp = out.join("summary.txt");
    std::fs::write(&sp, &summary).map_err(|e| Error::io(&sp, e))?;
    let tp = out.join("timing.json");
    let timing = serde_json::json!({"epoch_wall_clock_s": trainer.log.wall_clock_s});
    std::fs::write(&tp, timing.to_string() + "\n").map_err(|e| Error::io(&tp, e))?;
    print!("{summary}");
    Ok(())
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn cmd_trace(input: PathBuf, checkpoint: PathBuf, output: Option<PathBuf>) -> Result<()> {
    let tracer = LoadedTracer::load(&checkpoint)?;
    let r = tracer.resolution();
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        let out = output.unwrap_or_else(|| cache_dir().join("traced"));
        let mut files: Vec<PathBuf> = std::fs::read_dir(&input)
            .map_err(|e| Error::io(&input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|f| {
                let name = Path::new(f.file_name().expect("file")).with_extension("png");
                (f, out.join(name))
            })
            .collect()
    } else {
        let out = output.unwrap_or_else(|| {
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
            cache_dir().join("traced").join(format!("{stem}.png"))
        });
        vec![(input, out)]
    };
    for (src, dst) in &jobs {
        let fake = read_face(src, Some(r))?;
        let traced = tracer.trace(&[&fake], &[&fake])?.remove(0);
        write_png(dst, &traced)?;
    }
    println!("traced {} image(s)", jobs.len());
    Ok(())
}

fn cmd_eval(common: Common, checkpoint: PathBuf, manifest: Option<PathBuf>, grid: Option<usize>) -> Result<()> {
    let tracer = LoadedTracer::load(&checkpoint)?;
    let mut cfg = load_config(&common)?;
    if let LoadedTracer::Network(p) = &tracer {
        cfg.model = p.config.clone();
    } else {
        cfg.model.resolution = tracer.resolution();
    }
    if let Some(g) = grid {
        cfg.eval.grid = g;
    }
    let cfg = cfg.resolve()?;
    let manifest = Manifest::read(&manifest_path(manifest, &cfg))?;
    let pairs = pairs_from_manifest(&manifest, Split::Test, cfg.model.resolution)?;
    let backbone = cfg.evaluator()?;
    let snapshot = serde_json::json!({
        "checkpoint": checkpoint.file_name().map(|n| n.to_string_lossy().into_owned()),
        "model": cfg.model,
        "evaluation_backbone": cfg.identity.evaluation,
    });
    let report = evaluate(&tracer, &pairs, &backbone, &cfg.eval.dataset, snapshot)?;
    let out = common.output.unwrap_or_else(|| cache_dir().join("eval"));
    report.write(&out)?;
    cfg.archive(&out)?;
    if cfg.eval.grid > 0 {
        let rows: Vec<_> = pairs.iter().take(cfg.eval.grid).collect();
        let fakes: Vec<_> = rows.iter().map(|p| &p.fake).collect();
        let originals: Vec<_> = rows.iter().map(|p| &p.original).collect();
        let traced = tracer.trace(&fakes, &originals)?;
        let samples: Vec<_> = rows
            .iter()
            .zip(traced)
            .map(|(p, t)| (p.fake.clone(), p.original.clone(), t))
            .collect();
        write_rgb(&out.join("grid.png"), &render_grid(&samples)?)?;
    }
    print!("{}", report.table());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => cmd_synth(common),
        Command::Prepare {
            root,
            convention,
            common,
        } => cmd_prepare(root, convention, common),
        Command::Train {
            common,
            manifest,
            epochs,
            checkpoint,
            redundancy_mode,
            attr_loss_weight,
        } => cmd_train(TrainArgs {
            common,
            manifest,
            epochs,
            checkpoint,
            redundancy_mode,
            attr_loss_weight,
        }),
        Command::Trace {
            input,
            checkpoint,
            output,
        } => cmd_trace(input, checkpoint, output),
        Command::Eval {
            common,
            checkpoint,
            manifest,
            grid,
        } => cmd_eval(common, checkpoint, manifest, grid),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let record = serde_json::json!({
                "error": format!("{kind:?}").to_lowercase(),
                "message": e.to_string(),
            });
            eprintln!("{record}");
            ExitCode::from(exit_code(kind))
        }
    }
}
