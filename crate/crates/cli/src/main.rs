use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hullforge::pvh::FusionMode;
use hullforge_cli::{
    cmd_eval, cmd_infer, cmd_mesh, cmd_pvh, cmd_synth, cmd_train, parse_camera_list, parse_frame_range, CliError,
    CliResult, Overrides, PipelineConfig,
};

/// Visual hulls from a few views, refined by a patch autoencoder.
#[derive(Debug, Parser)]
#[command(name = "hullforge", version)]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Pipeline config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Low-view camera subset, e.g. `0,1` or `0-3`.
    #[arg(long, global = true)]
    cameras: Option<String>,
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// paper_literal, calibrated_sigmoid or product.
    #[arg(long, global = true)]
    fusion: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Fixed iso-level for meshing and reprojection.
    #[arg(long, global = true)]
    iso: Option<f32>,
    /// Worker threads; falls back to HULLFORGE_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic multi-view dataset.
    Synth,
    /// Build low- and high-view hulls.
    Pvh {
        /// Half-open frame range `A..B` (default: every frame).
        #[arg(long)]
        frames: Option<String>,
    },
    /// Train the autoencoder on training-split hull pairs.
    Train,
    /// Refine the test-split low-view hulls.
    Infer,
    /// Mesh the refined hulls.
    Mesh,
    /// Score input and refined hulls against the high-view hulls.
    Eval,
}

fn thread_count(flag: Option<usize>, cfg: &PipelineConfig) -> CliResult<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    if let Ok(v) = std::env::var("HULLFORGE_THREADS") {
        let n = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("HULLFORGE_THREADS={v:?} is not a thread count")))?;
        return Ok(Some(n));
    }
    Ok(cfg.threads)
}

fn run(args: Args) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let overrides = Overrides {
        seed: args.seed,
        cameras: args.cameras.as_deref().map(parse_camera_list).transpose()?,
        patch_size: args.patch_size,
        stride: args.stride,
        fusion: args
            .fusion
            .as_deref()
            .map(|s| s.parse::<FusionMode>())
            .transpose()
            .map_err(|e| CliError::Usage(e.to_string()))?,
        epochs: args.epochs,
        iso: args.iso,
        threads: None,
    };
    overrides.apply(&mut cfg);
    cfg.threads = thread_count(args.threads, &cfg)?;
    cfg.validate()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;

    pool.install(|| match args.command {
        Command::Synth => {
            let path = cmd_synth(&cfg)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Pvh { frames } => {
            let range = frames.as_deref().map(parse_frame_range).transpose()?;
            for dir in cmd_pvh(&cfg, range)? {
                println!("{}", dir.display());
            }
            Ok(())
        }
        Command::Train => {
            let losses = cmd_train(&cfg)?;
            println!("{} (final loss {:.6})", cfg.model_path().display(), losses.last().copied().unwrap_or(f64::NAN));
            Ok(())
        }
        Command::Infer => {
            let s = cmd_infer(&cfg)?;
            println!("{} ({} frames, {:.2} frames/s)", s.out_dir.display(), s.frames, s.frames_per_second);
            Ok(())
        }
        Command::Mesh => {
            let s = cmd_mesh(&cfg)?;
            println!("{} ({} meshes, {} empty)", s.out_dir.display(), s.meshes, s.empty);
            Ok(())
        }
        Command::Eval => {
            let report = cmd_eval(&cfg)?;
            print!("{}", report.to_table());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
        Err(e) => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(if matches!(e, CliError::Usage(_)) { 2 } else { 1 })
        }
    }
}
