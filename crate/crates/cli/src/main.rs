use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use refsr_core::experiment::{self, ExperimentManifest};
use refsr_core::train::{self, Mode, ModelCheckpoint};
use refsr_core::{selfcheck, volume, Error};

#[derive(Parser)]
#[command(name = "refsr", version, about = "Reference-guided super-resolution of diffusion-weighted cardiac volumes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment manifest (JSON); built-in desk defaults when omitted.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Overrides the phantom and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Validate and print the plan without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Number of phantom cases.
    #[arg(long, global = true)]
    cases: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Proposed,
    Conventional,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Proposed => Mode::Proposed,
            ModeArg::Conventional => Mode::Conventional,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write noisy, normalized phantom cases.
    Phantom,
    /// Degrade phantom cases and write hr/, lr/ and bilinear/ per case.
    Degrade {
        /// Directory of case directories written by `phantom`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Train one model on degraded cases.
    Train {
        /// Directory written by `degrade`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "proposed")]
        mode: ModeArg,
    },
    /// Super-resolve one degraded case with a checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A case directory written by `degrade` (with lr/ and hr/).
        #[arg(long)]
        input: PathBuf,
    },
    /// Train both models, evaluate and write tables, maps and montages.
    RunAblation,
    /// Numerical self-tests.
    Check {
        /// Elements checked per tensor for the larger full-graph shapes.
        #[arg(long, default_value_t = 48)]
        sample: usize,
    },
    /// Print the resolved manifest.
    Manifest,
}

fn manifest(c: &Common) -> Result<ExperimentManifest> {
    let mut m = match &c.manifest {
        Some(p) => ExperimentManifest::load(p).with_context(|| format!("reading manifest {}", p.display()))?,
        None => ExperimentManifest::default(),
    };
    if let Some(s) = c.seed {
        m = m.with_seed(s);
    }
    if let Some(n) = c.cases {
        m.cases = n;
    }
    if let Some(o) = &c.output {
        m.output_dir = o.clone();
    }
    Ok(m)
}

fn output(c: &Common, m: &ExperimentManifest, sub: &str) -> PathBuf {
    c.output.clone().unwrap_or_else(|| m.output_dir.join(sub))
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("REFSR_THREADS") {
        let n: usize = v.parse().with_context(|| format!("REFSR_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    let m = manifest(c)?;
    match cli.command {
        Command::Manifest => print!("{}", m.to_json()?),
        Command::Phantom => {
            m.validate()?;
            let dir = output(c, &m, "phantoms");
            if c.dry_run {
                println!("would write {} cases to {}", m.cases, dir.display());
                return Ok(ExitCode::SUCCESS);
            }
            experiment::prepare_output_dir(&dir, c.force)?;
            experiment::write_cases(&experiment::make_cases(&m)?, &dir)?;
            write(&dir.join("manifest.json"), &m.to_json()?)?;
            println!("wrote {} cases to {}", m.cases, dir.display());
        }
        Command::Degrade { input } => {
            m.degrade.validate_for(m.phantom.dims)?;
            let dir = output(c, &m, "degraded");
            let cases = experiment::read_cases(&input)?;
            if c.dry_run {
                println!("would degrade {} cases into {}", cases.len(), dir.display());
                return Ok(ExitCode::SUCCESS);
            }
            experiment::prepare_output_dir(&dir, c.force)?;
            experiment::write_degraded_cases(&experiment::degrade_cases(&m, &cases)?, &dir)?;
            println!("wrote {} degraded cases to {}", cases.len(), dir.display());
        }
        Command::Train { input, mode } => {
            let cfg = m.train.with_mode(mode.into());
            cfg.validate()?;
            let dir = output(c, &m, cfg.mode.as_str());
            let cases = experiment::read_degraded_cases(&input)?;
            let ids: Vec<String> = cases.iter().map(|d| d.hr.case_id.clone()).collect();
            let split = train::split_cases(&ids, cfg.split_ratio, cfg.seed)?;
            if c.dry_run {
                println!("split {split:?}; would train {} for {} epochs into {}", cfg.mode, cfg.epochs, dir.display());
                return Ok(ExitCode::SUCCESS);
            }
            experiment::prepare_output_dir(&dir, c.force)?;
            let pick = |ids: &[String]| cases.iter().filter(|d| ids.contains(&d.hr.case_id)).cloned().collect::<Vec<_>>();
            let out = train::train(&cfg, &pick(&split.train), &pick(&split.val))?;
            out.checkpoint.save(dir.join("model.rckp"))?;
            write(&dir.join("train_log.csv"), &train::epoch_log_csv(&out.log))?;
            write(&dir.join("split.json"), &(serde_json::to_string_pretty(&split)? + "\n"))?;
            println!(
                "best epoch {} (val PSNR {:.3} dB), checkpoint {}",
                out.checkpoint.best_epoch,
                out.checkpoint.best_val_psnr,
                dir.join("model.rckp").display()
            );
        }
        Command::Infer { checkpoint, input } => {
            let ckpt = ModelCheckpoint::load(&checkpoint)?;
            let hr = volume::read_case(input.join("hr"))?;
            let lr = refsr_core::degrade::read_lr_series(input.join("lr"))?;
            let dir = output(c, &m, "inferred");
            if c.dry_run {
                println!("would super-resolve {} DWIs of {} into {}", lr.dwis.len(), lr.case_id, dir.display());
                return Ok(ExitCode::SUCCESS);
            }
            experiment::prepare_output_dir(&dir, c.force)?;
            let sr = train::infer_volume(&ckpt, &lr, &hr.b0, hr.geometry.clone(), ckpt.config.mode)?;
            volume::write_case(&sr, &dir)?;
            println!("wrote {} super-resolved DWIs to {}", sr.dwis.len(), dir.display());
        }
        Command::RunAblation => {
            if c.dry_run {
                print!("{}", experiment::dry_run_plan(&m)?);
                return Ok(ExitCode::SUCCESS);
            }
            let start = Instant::now();
            let out = match experiment::run_ablation_to_dir(&m, c.force) {
                Err(e @ Error::Divergence { .. }) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(3));
                }
                r => r?,
            };
            let o = &out.summary.ordering;
            println!("b={} mean PSNR proposed {:.3} / conventional {:.3} / bilinear {:.3} dB", o.b_value, o.psnr[0], o.psnr[1], o.psnr[2]);
            println!("b={} mean SSIM proposed {:.4} / conventional {:.4} / bilinear {:.4}", o.b_value, o.ssim[0], o.ssim[1], o.ssim[2]);
            for a in &out.summary.table2 {
                println!("b={} {} PSNR {:.3} dB SSIM {:.4}", a.b_value, a.method, a.psnr_mean, a.ssim_mean);
            }
            for (method, e) in &out.summary.maps {
                println!("{method} map MAE: MD {:.3e} FA {:.4} HA {:.2} deg", e.md_mae, e.fa_mae, e.ha_mae_deg);
            }
            println!("report in {} ({:.0} s)", m.output_dir.display(), start.elapsed().as_secs_f64());
            if !out.summary.ordering_holds() {
                eprintln!("ordering proposed > conventional > bilinear does not hold");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Check { sample } => {
            let start = Instant::now();
            let results = selfcheck::run_all(c.seed.unwrap_or(1), sample)?;
            print!("{}", selfcheck::render_matrix(&results));
            println!("{:.0} s", start.elapsed().as_secs_f64());
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
