use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use aic_core::config::{ConfigSources, RunConfig};
use aic_core::gradcheck::{run_gradcheck, GradcheckOptions};
use aic_core::harness::{self, STANDARD_SCENARIOS};
use aic_core::{run_episode, AicError, TrajectoryLog};

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_GRADCHECK: u8 = 3;

#[derive(Parser)]
#[command(
    name = "aic",
    version,
    about = "Actor-identifier-critic tracking under packet dropouts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one episode and write its trajectory CSV.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output path, or `-` for stdout.
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Repeat runs over dropout scenarios and print the metrics table.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// `standard` or `gs,gc;gs,gc;...`
        #[arg(long, default_value = "standard")]
        scenarios: String,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Finite-difference checks of every analytic derivative.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Critic value over a grid of tracking errors.
    Surface {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Use these critic weights instead of running an episode.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Option<Vec<f64>>,
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        hi: f64,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Grid-frequency case study on the virtual synchronous machine.
    Vsm {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trajectory CSV path; omitted means summary only.
        #[arg(long)]
        out: Option<String>,
    },
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// `simo-faithful`, `simo-tuned`, `mimo-faithful`, `mimo-tuned`, `vsm`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    benchmark: Option<String>,
    /// INI config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    gamma_s: Option<f64>,
    #[arg(long)]
    gamma_c: Option<f64>,
    #[arg(long)]
    eta_c: Option<f64>,
    /// Sets both actor rates.
    #[arg(long)]
    eta_a: Option<f64>,
    /// Sets both identifier rates.
    #[arg(long)]
    eta_i: Option<f64>,
    #[arg(long)]
    settle_band: Option<f64>,
    #[arg(long)]
    allow_unstable: bool,
    /// Zero command; the networks still run.
    #[arg(long)]
    uncontrolled: bool,
    /// Any config key, e.g. `--set actor.hidden=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved config as INI to stderr.
    #[arg(long)]
    print_config: bool,
}

impl ConfigArgs {
    fn resolve(&self, default_preset: Option<&str>) -> Result<RunConfig, AicError> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((k.to_string(), v));
            }
        };
        let s = |v: Option<f64>| v.map(|x| x.to_string());
        push("run.seed", self.seed.map(|x| x.to_string()));
        push("run.dt", s(self.dt));
        push("run.horizon", s(self.horizon));
        push("run.settle_band", s(self.settle_band));
        push("channels.gamma_bar_s", s(self.gamma_s));
        push("channels.gamma_bar_c", s(self.gamma_c));
        push("critic.eta", s(self.eta_c));
        push("actor.eta_w", s(self.eta_a));
        push("actor.eta_v", s(self.eta_a));
        push("identifier.eta_w", s(self.eta_i));
        push("identifier.eta_v", s(self.eta_i));
        if self.allow_unstable {
            push("run.allow_unstable", Some("true".into()));
        }
        if self.uncontrolled {
            push("run.uncontrolled", Some("true".into()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| AicError::config(kv.clone(), "expected KEY=VALUE"))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let file_text = match &self.config {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| AicError::config("--config", format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        let preset = self.preset.clone().or_else(|| {
            (file_text.is_none() && self.benchmark.is_none())
                .then(|| default_preset.map(str::to_owned))
                .flatten()
        });
        let cfg = ConfigSources {
            preset,
            benchmark: self.benchmark.clone(),
            file_text,
            overrides,
            ..ConfigSources::from_env()
        }
        .resolve()?;
        if self.print_config {
            eprint!("{}", cfg.to_ini());
        }
        Ok(cfg)
    }
}

fn open_out(path: &str) -> io::Result<Box<dyn Write>> {
    Ok(if path == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        Box::new(BufWriter::new(File::create(path)?))
    })
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

/// Runs an episode; on divergence the partial log is still returned.
fn episode(cfg: &RunConfig) -> (TrajectoryLog, Option<AicError>) {
    match run_episode(cfg) {
        Ok(log) => (log, None),
        Err(f) => (f.log, Some(f.error)),
    }
}

fn write_log(log: &TrajectoryLog, out: &str) -> Result<(), ExitCode> {
    open_out(out)
        .and_then(|w| harness::write_csv(log, w))
        .map_err(|e| fail(EXIT_CONFIG, format!("writing {out}: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { cfg, out } => {
            let cfg = match cfg.resolve(None) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let (log, err) = episode(&cfg);
            if let Err(code) = write_log(&log, &out) {
                return code;
            }
            match err {
                None => ExitCode::SUCCESS,
                Some(e) => fail(EXIT_DIVERGED, e),
            }
        }
        Command::Sweep {
            cfg,
            repeats,
            scenarios,
            out,
        } => {
            let cfg = match cfg.resolve(None) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let scen = match harness::parse_scenarios(&scenarios) {
                Ok(s) if !s.is_empty() => s,
                Ok(_) => STANDARD_SCENARIOS.to_vec(),
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            if repeats == 0 {
                return fail(EXIT_CONFIG, "--repeats must be at least 1");
            }
            let report = harness::run_sweep(&cfg, &scen, repeats);
            let written = open_out(&out).and_then(|mut w| {
                write!(w, "{report}")?;
                w.flush()
            });
            if let Err(e) = written {
                return fail(EXIT_CONFIG, format!("writing {out}: {e}"));
            }
            if report.all_failed() {
                fail(EXIT_DIVERGED, "every run diverged")
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Gradcheck { seed, points } => {
            let report = run_gradcheck(
                seed,
                GradcheckOptions {
                    points,
                    ..Default::default()
                },
            );
            print!("{report}");
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                let names: Vec<_> = report.failures().map(|c| c.name).collect();
                fail(
                    EXIT_GRADCHECK,
                    format!("failed checks: {}", names.join(", ")),
                )
            }
        }
        Command::Surface {
            cfg,
            weights,
            points,
            lo,
            hi,
            out,
        } => {
            let w = match weights {
                Some(w) => DVector::from_vec(w),
                None => {
                    let cfg = match cfg.resolve(None) {
                        Ok(c) => c,
                        Err(e) => return fail(EXIT_CONFIG, e),
                    };
                    match run_episode(&cfg) {
                        Ok(log) => log.critic_weights,
                        Err(f) => return fail(EXIT_DIVERGED, f),
                    }
                }
            };
            let grid = match harness::value_surface(&w, lo, hi, points) {
                Ok(g) => g,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match open_out(&out).and_then(|w| harness::write_surface(&grid, w)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(EXIT_CONFIG, format!("writing {out}: {e}")),
            }
        }
        Command::Vsm { cfg, out } => {
            let cfg = match cfg.resolve(Some("vsm")) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let (log, err) = episode(&cfg);
            if let Some(out) = &out {
                if let Err(code) = write_log(&log, out) {
                    return code;
                }
            }
            let mode = if cfg.uncontrolled {
                "uncontrolled"
            } else {
                "controlled"
            };
            match harness::frequency_summary(&log) {
                Some(s) => eprintln!(
                    "vsm {mode}: steps={} max|Δf|={:.4} Hz final-half max|Δf|={:.4} Hz final Δf={:+.4} Hz",
                    log.len(),
                    s.max_abs_hz,
                    s.final_half_max_abs_hz,
                    s.final_hz
                ),
                None => eprintln!("vsm {mode}: no steps simulated"),
            }
            match err {
                None => ExitCode::SUCCESS,
                Some(e) => fail(EXIT_DIVERGED, e),
            }
        }
    }
}
