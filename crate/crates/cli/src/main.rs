use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use masq::algo::Mode;
use masq::checkpoint::Checkpoint;
use masq::config::RunConfig;
use masq::eval::{gait_trace, push_recovery, terrain_report, write_terrain_csv, EvalOptions};
use masq::obs::Gait;
use masq::reward::Term;
use masq::train::run_training;
use nalgebra::Vector3;

#[derive(Parser)]
#[command(
    name = "masq",
    about = "Leg-as-agent quadruped training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    GaitTrace,
    PushRecovery,
    Terrain,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy into the run directory named by the config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// masq or ppo_single
        #[arg(long)]
        mode: Option<String>,
        /// Use this run directory instead of the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint deterministically.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        scenario: Scenario,
        /// Body-frame impulse `x,y,z` in N*s, for push-recovery.
        #[arg(long, allow_hyphen_values = true)]
        push: Option<String>,
        /// Restrict to one gait (pace, trot, bound, pronk).
        #[arg(long)]
        gait: Option<String>,
        /// Report directory (default: `eval/` next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write contact-force traces for every gait.
    ExportTraces {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_gait(name: &str) -> Result<Gait> {
    match Gait::parse(name) {
        Some(g) => Ok(g),
        None => bail!("unknown gait {name:?} (expected pace, trot, bound or pronk)"),
    }
}

fn parse_push(s: &str) -> Result<Vector3<f64>> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("bad --push {s:?}"))?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vector3::new(x, y, z)),
        _ => bail!("--push takes three finite numbers x,y,z, got {s:?}"),
    }
}

fn train(
    config: &Path,
    seed: Option<u64>,
    mode: Option<String>,
    out: Option<PathBuf>,
    quiet: bool,
) -> Result<()> {
    let mut cfg =
        RunConfig::load(config).with_context(|| format!("loading config {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = match Mode::parse(&m) {
            Some(m) => m,
            None => bail!("unknown mode {m:?} (expected masq or ppo_single)"),
        };
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    let dir = cfg.out_dir.clone();
    let run = run_training(&cfg, &dir, |r, t| {
        if !quiet {
            eprintln!(
                "update {:4}  reward/step {:8.4}  tracking_lin {:.4}  falls {:3}  kl {:.4}  {:6.0} steps/s",
                r.update,
                r.mean_step_reward,
                r.term(Term::TrackingLin),
                r.falls,
                r.stats.approx_kl,
                t.steps_per_s
            );
        }
    })?;
    println!("{}", run.dir.display());
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn write_traces(ckpt: &Checkpoint, gaits: &[Gait], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let opts = EvalOptions::default();
    for &g in gaits {
        let tr = gait_trace(ckpt, g, &opts)?;
        let path = out.join(format!("contact_forces_{}.csv", g.name()));
        tr.write_csv(create(&path)?)?;
        println!(
            "{}: {} rows, max pairwise phase lag {:.3} cycle{}",
            path.display(),
            tr.rows.len(),
            tr.max_pairwise_phase_lag(),
            if tr.interrupted {
                ", episode ended during trace"
            } else {
                ""
            }
        );
    }
    Ok(())
}

fn eval(
    checkpoint: &Path,
    scenario: Scenario,
    push: Option<String>,
    gait: Option<String>,
    out: Option<PathBuf>,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let out = match out {
        Some(o) => o,
        None => checkpoint.parent().unwrap_or(Path::new(".")).join("eval"),
    };
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let gait = gait.as_deref().map(parse_gait).transpose()?;
    let opts = EvalOptions::default();
    match scenario {
        Scenario::GaitTrace => {
            let gaits = match gait {
                Some(g) => vec![g],
                None => ckpt.config.task.gaits.clone(),
            };
            write_traces(&ckpt, &gaits, &out)?;
        }
        Scenario::PushRecovery => {
            let impulse = match push {
                Some(p) => parse_push(&p)?,
                None => Vector3::new(0.0, 3.0, 0.0),
            };
            let report = push_recovery(&ckpt, gait.unwrap_or(Gait::Bound), impulse, &opts)?;
            let path = out.join("push_recovery.json");
            serde_json::to_writer_pretty(create(&path)?, &report)?;
            match report.recovery_cycles {
                Some(c) => println!("recovered after {c} gait cycles ({})", path.display()),
                None => println!("did not recover ({})", path.display()),
            }
        }
        Scenario::Terrain => {
            let (rows, uneven) = terrain_report(&ckpt, &opts)?;
            let path = out.join("terrain_report.csv");
            write_terrain_csv(&rows, create(&path)?)?;
            uneven.write_csv(create(&out.join("heightfield_uneven.csv"))?)?;
            for r in &rows {
                println!(
                    "{:?} {:6} mean tracking {:.4} falls {}",
                    r.terrain,
                    r.gait.name(),
                    r.mean_tracking,
                    r.falls
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Train {
            config,
            seed,
            mode,
            out,
            quiet,
        } => train(&config, seed, mode, out, quiet),
        Cmd::Eval {
            checkpoint,
            scenario,
            push,
            gait,
            out,
        } => eval(&checkpoint, scenario, push, gait, out),
        Cmd::ExportTraces { checkpoint, out } => Checkpoint::load(&checkpoint)
            .with_context(|| format!("loading checkpoint {}", checkpoint.display()))
            .and_then(|c| write_traces(&c, &Gait::ALL, &out)),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
