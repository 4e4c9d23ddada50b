use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use qmu::harness::{
    emit_report, load_cells, parse_seeds, render_markdown, run_sweep, selftest, BackendChoice, ExperimentConfig,
    HarnessError, Method, MetricsReport, ReportFormat, SweepOptions,
};

#[derive(Parser)]
#[command(name = "qmu", version, about = "Machine unlearning experiments on simulated quantum classifiers")]
struct Cli {
    /// Worker threads (defaults to QMU_THREADS, then the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the original model (and optionally the retained-set target) per seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        with_target: bool,
    },
    /// Membership-inference rates of the original and target models.
    Attack {
        #[command(flatten)]
        common: Common,
    },
    /// Run unlearning methods; defaults to every non-baseline method in the config.
    Unlearn {
        #[command(flatten)]
        common: Common,
        /// Method name, e.g. `Gradient-U(8.4)R(1)`; repeatable.
        #[arg(long = "method")]
        methods: Vec<String>,
    },
    /// Render reports from the cells already stored under the output directory.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv,json,md")]
        format: String,
    },
    /// Full sweep of every configured method and seed, then the report.
    Reproduce {
        #[command(flatten)]
        common: Common,
    },
    /// Fast property checks of the simulator, gradients and unlearning rules.
    Selftest,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// `a..b` or `1,4,5`; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
    /// `noiseless` or `shots:N`; overrides the config.
    #[arg(long)]
    backend: Option<String>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv,json,md")]
    format: String,
    /// Recompute cells even if a stored result exists.
    #[arg(long)]
    fresh: bool,
}

struct Prepared {
    cfg: ExperimentConfig,
    opts: SweepOptions,
    formats: Vec<ReportFormat>,
}

fn parse_formats(s: &str) -> Result<Vec<ReportFormat>, HarnessError> {
    s.split(',').map(str::parse).collect()
}

fn prepare(c: &Common) -> Result<Prepared, HarnessError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = &c.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(b) = &c.backend {
        cfg.backend = b.parse::<BackendChoice>()?;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    let mut opts = SweepOptions::new(cfg.out.clone());
    opts.resume = !c.fresh;
    Ok(Prepared { cfg, opts, formats: parse_formats(&c.format)? })
}

fn sweep(p: &Prepared) -> anyhow::Result<MetricsReport> {
    let report = run_sweep(&p.cfg, &p.cfg.seeds, &p.opts)?;
    if !report.rows.is_empty() || !report.failures.is_empty() {
        for path in emit_report(&report, &p.opts.out, &p.formats)? {
            eprintln!("wrote {}", path.display());
        }
    }
    print!("{}", render_markdown(&report));
    Ok(report)
}

fn configure_threads(cli: Option<usize>) -> anyhow::Result<()> {
    let n = match cli {
        Some(n) => Some(n),
        None => match std::env::var("QMU_THREADS") {
            Ok(v) => Some(v.trim().parse().with_context(|| format!("QMU_THREADS must be a number, got {v:?}"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    configure_threads(cli.threads)?;
    let report = match cli.command {
        Command::Selftest => {
            let checks = selftest::run_all();
            let mut ok = true;
            for c in &checks {
                ok &= c.passed;
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("[{tag}] {:>2} {} ({:.1}s): {}", c.id, c.name, c.seconds, c.detail);
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) });
        }
        Command::Evaluate { out, format } => {
            let report = load_cells(&out)?;
            for path in emit_report(&report, &out, &parse_formats(&format)?)? {
                eprintln!("wrote {}", path.display());
            }
            print!("{}", render_markdown(&report));
            report
        }
        Command::Train { common, with_target } => {
            let mut p = prepare(&common)?;
            p.cfg.methods = if with_target { vec![Method::Original, Method::Target] } else { vec![Method::Original] };
            sweep(&p)?
        }
        Command::Attack { common } => {
            let mut p = prepare(&common)?;
            p.cfg.methods = vec![Method::Original, Method::Target];
            sweep(&p)?
        }
        Command::Unlearn { common, methods } => {
            let mut p = prepare(&common)?;
            p.cfg.methods = if methods.is_empty() {
                p.cfg.methods.iter().filter(|m| !matches!(m, Method::Original | Method::Target)).cloned().collect()
            } else {
                methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?
            };
            if p.cfg.methods.is_empty() {
                return Err(HarnessError::Config("no unlearning methods selected".into()).into());
            }
            sweep(&p)?
        }
        Command::Reproduce { common } => sweep(&prepare(&common)?)?,
    };
    if !report.failures.is_empty() {
        for f in &report.failures {
            eprintln!("cell failed: {} {} {} seed {}: {}", f.model, f.method, f.backend, f.seed, f.error);
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
