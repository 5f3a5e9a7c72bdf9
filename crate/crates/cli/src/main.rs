use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use siamdamage::geodata::ClassScheme;
use siamdamage::model::EncoderKind;
use siamdamage::pipeline::{
    collect_records, comparison_report, parse_device, write_synthetic_project, EvalSummary, Overrides, Project,
    ReportAxis, DEVICE_ENV,
};
use siamdamage::synthetic::SyntheticConfig;
use siamdamage::training::InitSource;

/// Building damage mapping from pre/post image pairs.
#[derive(Parser)]
#[command(name = "siamdamage", version)]
struct Cli {
    /// Project file (TOML).
    #[arg(short, long, global = true, default_value = "project.toml")]
    config: PathBuf,

    /// Compute device: cpu, cuda, cuda:N or metal.
    #[arg(long, global = true, env = DEVICE_ENV, default_value = "cpu")]
    device: String,

    /// Folds trained concurrently.
    #[arg(short, long, global = true, default_value_t = 1)]
    jobs: usize,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated scene and a matching project file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2048)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Assign damage points to footprints and rasterize the label mask.
    Label,
    /// Split the scene into quarters and write the patch manifest.
    Tile {
        /// Ignore a stale label artifact.
        #[arg(long)]
        force: bool,
    },
    /// Train one fold or all four.
    Train {
        /// 0..3 or "all".
        #[arg(long, default_value = "all")]
        fold: String,
        #[command(flatten)]
        run: RunArgs,
        /// Retrain even when a checkpoint exists; ignore stale manifests.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate the four fold models on their held-out quarters.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Report schemes, e.g. "3,2" (defaults to the model scheme and every coarser one).
        #[arg(long = "report-classes", value_delimiter = ',')]
        report_classes: Vec<usize>,
        /// Apply this checkpoint to every quarter instead (zero-shot).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Accept checkpoints whose fingerprint differs from the config.
        #[arg(long)]
        force: bool,
    },
    /// Average the probabilities of several encoders' runs.
    Ensemble {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "resnet,seresnext,senet,dpn")]
        encoders: Vec<String>,
        #[arg(long = "report-classes", value_delimiter = ',')]
        report_classes: Vec<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Compare every evaluated run along one experimental axis.
    Report {
        /// encoder, init, augment or dilate.
        #[arg(long, default_value = "encoder")]
        axis: String,
    },
}

/// Settings that select a run; each combination has its own artifacts.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// resnet, seresnext, senet or dpn.
    #[arg(long)]
    encoder: Option<String>,
    /// Training classes: 2, 3 or 4.
    #[arg(long)]
    classes: Option<usize>,
    /// Train without augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Train on undilated labels.
    #[arg(long)]
    no_dilate: bool,
    /// "scratch" or the path of a checkpoint to start from.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Result<Overrides> {
        Ok(Overrides {
            encoder: self.encoder.as_deref().map(EncoderKind::parse).transpose()?,
            classes: self.classes,
            augment: self.no_augment.then_some(false),
            dilate: self.no_dilate.then_some(false),
            init: self.init.as_deref().map(|s| match s {
                "scratch" => InitSource::Scratch,
                path => InitSource::Pretrained { path: path.into() },
            }),
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
        })
    }
}

fn schemes(requested: &[usize], model_classes: usize) -> Result<Vec<ClassScheme>> {
    if requested.is_empty() {
        let all = [4, 3, 2].into_iter().filter(|&c| c <= model_classes);
        return Ok(all.map(ClassScheme::from_num_classes).collect::<Result<_, _>>()?);
    }
    Ok(requested
        .iter()
        .map(|&c| ClassScheme::from_num_classes(c))
        .collect::<Result<_, _>>()?)
}

fn load(cli: &Cli, overrides: &Overrides) -> Result<Project> {
    let device = parse_device(&cli.device)?;
    let project = Project::load(&cli.config, overrides).with_context(|| format!("loading {}", cli.config.display()))?;
    Ok(project.with_device(device))
}

fn print_eval(summary: &EvalSummary) {
    println!("{}", summary.table);
    println!("reports written to {}", summary.dir.display());
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { out, size, seed } => {
            let mut cfg = SyntheticConfig {
                width: *size,
                height: *size,
                seed: *seed,
                ..SyntheticConfig::default()
            };
            // Small scenes get a finer building grid so every quarter has buildings.
            if *size < 512 {
                cfg.cell = 32;
                cfg.min_side = 10;
                cfg.max_side = 24;
                cfg.occupancy = 0.8;
            }
            let path = write_synthetic_project(out, &cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Label => {
            let p = load(cli, &Overrides::default())?;
            let s = p.label()?;
            let names = [
                "No Damage",
                "Moderate Damage",
                "Severe Damage",
                "Destroyed",
                "Unlabeled",
            ];
            for (name, n) in names.iter().zip(s.counts) {
                println!("{name:>16}: {n}");
            }
            println!("{:>16}: {}", "Dropped points", s.unassigned_points);
            println!("label mask: {}", s.label_mask.display());
        }
        Command::Tile { force } => {
            let p = load(cli, &Overrides::default())?;
            let s = p.tile(*force)?;
            for k in 0..4 {
                println!(
                    "fold {k}: {} train / {} test patches",
                    s.train_patches[k], s.test_patches[k]
                );
            }
            println!("manifest: {}", s.manifest.display());
        }
        Command::Train { fold, run, force } => {
            let folds: Vec<usize> = match fold.as_str() {
                "all" => (0..4).collect(),
                k => match k.parse::<usize>() {
                    Ok(k) if k < 4 => vec![k],
                    _ => bail!("--fold must be 0..3 or all, got {k:?}"),
                },
            };
            let p = load(cli, &run.overrides()?)?;
            for s in p.train(&folds, cli.jobs, *force)? {
                let loss = s.final_loss.map_or("n/a".to_string(), |l| format!("{l:.4}"));
                println!(
                    "fold {}: {} epoch(s) run, final loss {loss}, checkpoint {}",
                    s.fold,
                    s.epochs_run,
                    s.checkpoint.display()
                );
            }
        }
        Command::Eval {
            run,
            report_classes,
            checkpoint,
            force,
        } => {
            let p = load(cli, &run.overrides()?)?;
            let schemes = schemes(report_classes, p.config.classes)?;
            let summary = match checkpoint {
                Some(path) => p.eval_checkpoint(path, &schemes, *force)?,
                None => p.eval(&schemes, *force)?,
            };
            print_eval(&summary);
        }
        Command::Ensemble {
            run,
            encoders,
            report_classes,
            force,
        } => {
            let base = run.overrides()?;
            let p = load(cli, &base)?;
            let members = encoders
                .iter()
                .map(|e| {
                    let o = Overrides {
                        encoder: Some(EncoderKind::parse(e)?),
                        ..base.clone()
                    };
                    load(cli, &o)
                })
                .collect::<Result<Vec<_>>>()?;
            let schemes = schemes(report_classes, p.config.classes)?;
            print_eval(&p.ensemble(&members, &schemes, *force)?);
        }
        Command::Report { axis } => {
            let p = load(cli, &Overrides::default())?;
            let axis_kind = ReportAxis::parse(axis)?;
            let records = collect_records(p.output())?;
            if records.is_empty() {
                bail!("no evaluation reports under {}; run `eval` first", p.output().display());
            }
            let table = comparison_report(&records, axis_kind)?;
            let path = p.output().join(format!("report-{axis}.md"));
            write(&path, &table)?;
            println!("{table}");
            println!("written to {}", path.display());
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
