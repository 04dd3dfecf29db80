//! `gesture`: curation, training, sampling and evaluation from the shell.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gesture_core::config::RunConfig;
use gesture_core::curation::run::{curate_directory, parse_annotations, CurationConfig, REPORT_FILE};
use gesture_core::curation::{WindowMode, WristLimits};
use gesture_core::pipeline::{self, RunPaths};
use gesture_core::{checkpoint, export, Error, ErrorFamily, Result};

#[derive(Parser)]
#[command(name = "gesture", version, about = "Speech-conditioned gesture diffusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; overrides the configuration and GESTURE_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, segment and smooth raw sequences into a clip manifest.
    Curate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tab-separated external filter decisions: id, reason[, start, end].
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        clip_seconds: f64,
        #[arg(long, default_value_t = 150.0)]
        angle_limit: f64,
        #[arg(long, default_value_t = 25.0)]
        delta_limit: f64,
        #[arg(long, default_value = "centered")]
        window: String,
        /// Odd smoothing window in frames; 0 disables smoothing.
        #[arg(long, default_value_t = 5)]
        smooth_window: usize,
    },
    /// Write the synthetic paired dataset.
    Synth(RunArgs),
    /// Train the unconditional gesture expert.
    Pretrain(RunArgs),
    /// Train the audio ControlNet against the saved expert.
    Finetune(RunArgs),
    /// Draw unconditional and audio-conditioned samples.
    Sample(RunArgs),
    /// Score saved samples against the held-out clips.
    Eval(RunArgs),
    /// Run every stage and write a report.
    E2e(RunArgs),
    /// Export loss logs or a curation histogram as TSV.
    Export {
        #[command(subcommand)]
        what: ExportKind,
    },
}

#[derive(Subcommand)]
enum ExportKind {
    /// Normalise a run's loss logs into `<to>/{pretrain,finetune}_loss.tsv`.
    Loss {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        to: PathBuf,
    },
    /// Motion-degree histogram of a curation output directory.
    Histogram {
        #[arg(long)]
        curated: PathBuf,
        #[arg(long)]
        to: PathBuf,
    },
}

fn exit_code(family: ErrorFamily) -> u8 {
    match family {
        ErrorFamily::Config => 10,
        ErrorFamily::Io => 11,
        ErrorFamily::Format => 12,
        ErrorFamily::Numerical => 13,
        ErrorFamily::Data => 14,
    }
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default_desk(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn curate(
    input: &Path,
    out: &Path,
    annotations: Option<&Path>,
    config: CurationConfig,
) -> Result<()> {
    let ann = match annotations {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_annotations(&text)?
        }
        None => Vec::new(),
    };
    let s = curate_directory(input, out, &config, &ann)?;
    println!(
        "{} sources, {} clips accepted, {} discarded; report in {}",
        s.sources,
        s.accepted,
        s.discarded.values().sum::<usize>(),
        out.join(REPORT_FILE).display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Curate {
            input,
            out,
            annotations,
            clip_seconds,
            angle_limit,
            delta_limit,
            window,
            smooth_window,
        } => {
            let mode: WindowMode = window.parse()?;
            let config = CurationConfig {
                clip_seconds,
                limits: WristLimits {
                    angle_deg: angle_limit,
                    delta_deg: delta_limit,
                    mode,
                    ..WristLimits::default()
                },
                smooth_window: (smooth_window > 0).then_some(smooth_window),
                ..CurationConfig::default()
            };
            curate(&input, &out, annotations.as_deref(), config)
        }
        Command::Synth(a) => {
            let cfg = load(&a)?;
            let paths = RunPaths::new(&cfg.out_dir);
            let n = pipeline::generate_data(&cfg, &paths)?;
            println!("wrote {n} clip pairs to {}", paths.data().display());
            Ok(())
        }
        Command::Pretrain(a) => {
            let cfg = load(&a)?;
            let paths = RunPaths::new(&cfg.out_dir);
            let data = pipeline::load_data(&cfg, &paths)?;
            let (model, opt, log) = pipeline::pretrain(&cfg, &data)?;
            let hash = pipeline::save_expert(&paths.expert(), &model, Some(&opt))?;
            export::write_loss_log(&paths.pretrain_log(), &log)?;
            println!("expert {} ({} steps), sha256 {hash}", paths.expert().display(), log.len());
            Ok(())
        }
        Command::Finetune(a) => {
            let cfg = load(&a)?;
            let paths = RunPaths::new(&cfg.out_dir);
            let data = pipeline::load_data(&cfg, &paths)?;
            let (expert, hash) = pipeline::load_expert(&paths.expert())?;
            let (cnet, opt, log) = pipeline::finetune(&cfg, &data, &expert)?;
            pipeline::save_controlnet(&paths.controlnet(), &cnet, &hash, Some(&opt))?;
            export::write_loss_log(&paths.finetune_log(), &log)?;
            println!("ControlNet {} ({} steps)", paths.controlnet().display(), log.len());
            Ok(())
        }
        Command::Sample(a) => {
            let cfg = load(&a)?;
            let paths = RunPaths::new(&cfg.out_dir);
            let data = pipeline::load_data(&cfg, &paths)?;
            let (expert, hash) = pipeline::load_expert(&paths.expert())?;
            let cnet = match paths.controlnet().exists() {
                true => Some(pipeline::load_controlnet_file(&paths.controlnet(), &expert, &hash)?),
                false => None,
            };
            let samples = pipeline::generate(&cfg, &expert, cnet.as_ref(), &data.held_out)?;
            pipeline::write_samples(&cfg, &paths, &samples)?;
            println!("samples written under {}", paths.root.join("samples").display());
            Ok(())
        }
        Command::Eval(a) => {
            let cfg = load(&a)?;
            let paths = RunPaths::new(&cfg.out_dir);
            let data = pipeline::load_data(&cfg, &paths)?;
            let samples = pipeline::read_samples(&paths)?;
            let (fe, loss) = pipeline::train_extractor(&cfg, &data)?;
            checkpoint::extractor_checkpoint(&fe).write(&paths.extractor())?;
            let report = pipeline::evaluate(&cfg, &data, &fe, loss, &samples)?;
            let json = pipeline::eval_json(&report);
            gesture_core::container::write_file(&paths.root.join("eval.json"), json.as_bytes())?;
            print!("{json}");
            Ok(())
        }
        Command::E2e(a) => {
            let cfg = load(&a)?;
            let report = pipeline::run_end_to_end(&cfg)?;
            print!("{}", report.to_json());
            Ok(())
        }
        Command::Export { what } => match what {
            ExportKind::Loss { run, to } => {
                let paths = RunPaths::new(run);
                let mut wrote = 0;
                for (src, name) in [(paths.pretrain_log(), "pretrain_loss.tsv"), (paths.finetune_log(), "finetune_loss.tsv")] {
                    if src.exists() {
                        export::write_loss_log(&to.join(name), &export::read_loss_log(&src)?)?;
                        wrote += 1;
                    }
                }
                if wrote == 0 {
                    return Err(Error::InsufficientData(format!("no loss logs under {}", paths.root.display())));
                }
                println!("exported {wrote} loss log(s) to {}", to.display());
                Ok(())
            }
            ExportKind::Histogram { curated, to } => {
                let h = export::histogram_from_curation_report(&curated.join(REPORT_FILE))?;
                export::write_histogram(&to, &h)?;
                println!("exported {} bins to {}", h.counts.len(), to.display());
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.family()))
        }
    }
}
