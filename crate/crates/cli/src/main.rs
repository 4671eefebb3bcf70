use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowcast_cli::{
    cmd_eval, cmd_gen, cmd_lse, cmd_report, cmd_sweep, cmd_train, config::read_config, exit_code, selftest,
    PlacementSpec, RunConfig,
};
use flowcast_core::estimators::EstimatorKind;
use flowcast_core::par::{self, Execution};

#[derive(Parser)]
#[command(
    name = "flowcast",
    version,
    about = "PMU-based flow and injection estimation pipeline"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true, env = "FLOWCAST_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true)]
    case: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// `none`, `gaussian` or `gmm`.
    #[arg(long, global = true)]
    noise: Option<String>,
    /// Epochs for every network.
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve load scenarios and write the dataset.
    Gen {
        /// `hv`, `greedy-dominating`, `greedy-vertex-cover` or a comma-separated bus list.
        #[arg(long)]
        placement: Option<String>,
    },
    /// Train estimators on the dataset.
    Train {
        /// Estimator name or `all` (LR, Direct, Indirect and PIC-DNN).
        #[arg(long, default_value = "all")]
        model: String,
    },
    /// Repeated-trial evaluation on the test split.
    Eval {
        #[arg(long, default_value = "all")]
        model: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Linear state estimation under each noise setting.
    Lse {
        #[arg(long)]
        placement: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Incremental PMU placement search.
    Sweep {
        /// Estimators to search for (repeatable); defaults to the config list.
        #[arg(long)]
        model: Vec<String>,
        #[arg(long)]
        start: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Candidates tried per step; 0 tries every unplaced bus.
        #[arg(long)]
        pool: Option<usize>,
        #[arg(long)]
        candidate_epochs: Option<usize>,
    },
    /// Check report files and write the run manifest.
    Report,
    /// Run the built-in oracle and invariant checks.
    Selftest,
    /// Print the effective configuration as TOML.
    Config,
}

fn kinds(spec: &str, default: &[EstimatorKind]) -> anyhow::Result<Vec<EstimatorKind>> {
    if spec == "all" {
        return Ok(default.to_vec());
    }
    spec.split(',')
        .map(|s| Ok(s.trim().parse::<EstimatorKind>()?))
        .collect()
}

fn placement(s: &str) -> anyhow::Result<PlacementSpec> {
    PlacementSpec::parse(s)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = cli.global;
    let mut cfg: RunConfig = read_config(g.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(c) = g.case {
        cfg.case = c;
    }
    if let Some(o) = g.output {
        cfg.output = o;
    }
    if let Some(n) = g.noise {
        cfg.noise = n;
    }
    if let Some(e) = g.epochs {
        cfg.train.epochs = e;
    }
    par::init_threads(g.threads);
    let exec = Execution::Parallel;

    match cli.command {
        Command::Gen { placement: p } => {
            if let Some(p) = p {
                cfg.placement = placement(&p)?;
            }
            let ds = cmd_gen(&cfg, exec)?;
            println!(
                "{} samples, {} features, {} targets",
                ds.len(),
                ds.z.ncols(),
                ds.y.ncols()
            );
        }
        Command::Train { model } => {
            let kinds = kinds(&model, &cfg.estimators)?;
            for est in cmd_train(&cfg, &kinds, exec)? {
                println!(
                    "wrote {}",
                    cfg.models_dir().join(format!("{}.json", est.kind)).display()
                );
            }
        }
        Command::Eval { model, trials, subset } => {
            if let Some(t) = trials {
                cfg.eval.trials = t;
            }
            if let Some(s) = subset {
                cfg.eval.subset = s;
            }
            let kinds = kinds(&model, &cfg.estimators)?;
            for r in cmd_eval(&cfg, &kinds, exec)? {
                println!("{:<14} {:.4} +- {:.4} MW", r.kind.title(), r.rmse_mean, r.rmse_std);
            }
        }
        Command::Lse { placement: p, samples } => {
            if let Some(p) = p {
                cfg.lse.placement = placement(&p)?;
            }
            if let Some(n) = samples {
                cfg.lse.samples = n;
            }
            for r in cmd_lse(&cfg, exec)? {
                println!(
                    "{:<10} |V| {:.3e} pu, angle {:.3e} deg, flow {:.3e} MW, injection {:.3e} MW",
                    r.noise, r.v_mag_pu, r.v_ang_deg, r.flow_mw, r.injection_mw
                );
            }
        }
        Command::Sweep {
            model,
            start,
            steps,
            pool,
            candidate_epochs,
        } => {
            if !model.is_empty() {
                cfg.sweep.models = model
                    .iter()
                    .map(|m| kinds(m, &cfg.estimators))
                    .collect::<anyhow::Result<Vec<_>>>()?
                    .concat();
            }
            if let Some(s) = start {
                cfg.sweep.start = placement(&s)?;
            }
            if let Some(s) = steps {
                cfg.sweep.steps = s;
            }
            if let Some(p) = pool {
                cfg.sweep.pool = p;
            }
            if let Some(e) = candidate_epochs {
                cfg.sweep.candidate_epochs = e;
            }
            let models = cfg.sweep.models.clone();
            for r in cmd_sweep(&cfg, &models, exec)? {
                let buses: Vec<String> = r.sequence.iter().filter_map(|s| s.bus).map(|b| b.to_string()).collect();
                let last = r.sequence.last().map(|s| s.validation_rmse).unwrap_or(f64::NAN);
                println!(
                    "{:<14} added [{}], final validation RMSE {last:.4} MW",
                    r.kind.title(),
                    buses.join(", ")
                );
            }
        }
        Command::Report => {
            let m = cmd_report(&cfg)?;
            println!(
                "{} artifacts hashed into {}",
                m.files.len(),
                cfg.report_dir().join("run-manifest.json").display()
            );
        }
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                println!("{c}");
            }
            if let Some(c) = checks.iter().find(|c| !c.passed) {
                anyhow::bail!("selftest check {} failed", c.name);
            }
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { flowcast_cli::EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}
