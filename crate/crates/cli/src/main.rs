//! `objfuse`: simulate sensor data, fuse it with the filter and evaluate the
//! estimate against ground truth.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 malformed input data,
//! 5 file system, 6 evaluation, 7 filter failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use objfuse::config::ExperimentConfig;
use objfuse::pipeline::{self, DEFAULT_MAX_DT};
use objfuse::PipelineError;

#[derive(Debug, Parser)]
#[command(name = "objfuse", version, about = "Object-relative visual-inertial fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a measurement log, IMU ground truth and object poses.
    Simulate {
        /// TOML experiment configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the filter over a measurement log.
    Fuse {
        #[arg(long)]
        log: PathBuf,
        /// TOML experiment configuration; its anchor must match the log.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-axis RMSE of an estimate against ground truth, both TUM files.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Align with a similarity transform instead of a rigid one.
        #[arg(long)]
        with_scale: bool,
        /// Largest timestamp difference for pairing samples, s.
        #[arg(long, default_value_t = DEFAULT_MAX_DT)]
        max_dt: f64,
        /// Also write the result as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let s = pipeline::simulate(&cfg, &out)?;
            println!(
                "simulated {:.3} s: {} IMU samples, {} frames, {} detections",
                cfg.trajectory.duration,
                s.sim.imu_stream.len(),
                s.sim.frames.len(),
                s.sim.frames.iter().map(|f| f.detections.len()).sum::<usize>()
            );
            for p in [&s.log_path, &s.ground_truth_path, &s.objects_path] {
                println!("wrote {}", p.display());
            }
        }
        Command::Fuse { log, config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let f = pipeline::fuse(&log, &cfg, &out)?;
            let s = f.summary;
            println!(
                "frames {}: applied {}, skipped {} (anchor not visible {}, all rejected {})",
                s.frames,
                s.applied,
                s.frames - s.applied,
                s.skipped_anchor_absent,
                s.skipped_all_rejected
            );
            println!(
                "detections: accepted {}, rejected {}",
                s.accepted_detections, s.rejected_detections
            );
            for p in [&f.estimate_path, &f.report_path] {
                println!("wrote {}", p.display());
            }
        }
        Command::Eval {
            est,
            gt,
            with_scale,
            max_dt,
            out,
        } => {
            let e = pipeline::eval_files(&est, &gt, with_scale, max_dt, out.as_deref())?;
            let r = e.rmse;
            let a = e.alignment;
            let q = a.rotation;
            println!("samples            {}", r.n_samples);
            println!(
                "position RMSE  m   x {:.6}  y {:.6}  z {:.6}",
                r.pos_rmse[0], r.pos_rmse[1], r.pos_rmse[2]
            );
            println!(
                "Euler RMSE   deg   roll {:.4}  pitch {:.4}  yaw {:.4}",
                r.euler_rmse_deg[0], r.euler_rmse_deg[1], r.euler_rmse_deg[2]
            );
            println!(
                "alignment {}  t [{:.6}, {:.6}, {:.6}]  q_xyzw [{:.6}, {:.6}, {:.6}, {:.6}]  s {:.6}",
                if with_scale { "sim3" } else { "se3" },
                a.translation.x,
                a.translation.y,
                a.translation.z,
                q.i,
                q.j,
                q.k,
                q.w,
                a.scale
            );
            if let Some(p) = out {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
