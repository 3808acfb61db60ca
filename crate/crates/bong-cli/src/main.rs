//! Command-line front end: `bong run`, `bong tune`, `bong selftest`.

use std::path::PathBuf;
use std::process::ExitCode;

use bong::harness::{run_experiment, run_selftest, write_outputs, DatasetSpec, MetricSet, RunConfig};
use bong::{Activation, Algorithm, BongError, Dynamics, EstimatorKind, FamilyTag};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bong", version, about = "Online variational Bayes filters for neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one filter over a data stream and write the evaluation trace.
    Run(RunArgs),
    /// Choose the learning rate on a validation split, then run.
    Tune {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated learning-rate grid.
        #[arg(long, value_delimiter = ',', required = true)]
        lr_grid: Vec<f64>,
        /// Score each trial after this many fitting steps instead of at the end.
        #[arg(long)]
        tune_at: Option<usize>,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// bong | blr | bog | bbb
    #[arg(long, default_value = "bong")]
    algorithm: String,
    /// fc | fc_mom | diag | diag_mom | dlr
    #[arg(long, default_value = "fc")]
    family: String,
    /// mc-hess | mc-ef | lin-hess | lin-ef
    #[arg(long, default_value = "lin-hess")]
    estimator: String,
    /// Low-rank dimension R of the DLR family.
    #[arg(long, default_value_t = 10)]
    rank: usize,
    /// Monte-Carlo samples M.
    #[arg(long, default_value_t = 10)]
    samples: usize,
    /// Hutchinson probes for diagonal MC-HESS (default 10·M).
    #[arg(long)]
    probes: Option<usize>,
    /// Draw Monte-Carlo samples in antithetic pairs.
    #[arg(long)]
    antithetic: bool,
    /// Inner iterations I.
    #[arg(long, default_value_t = 1)]
    iters: usize,
    /// Learning rate α.
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    /// synth-linreg | synth-nonlin | idx:<images>,<labels>
    #[arg(long, default_value = "synth-linreg")]
    dataset: String,
    /// Input dimension of the synthetic datasets.
    #[arg(long, default_value_t = 10)]
    input_dim: usize,
    /// Noise standard deviation of synth-linreg.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Training-stream length T.
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    /// Held-out test-set size.
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the synthetic data (defaults to --seed).
    #[arg(long)]
    data_seed: Option<u64>,
    /// Prior variance σ₀².
    #[arg(long, default_value_t = 1.0)]
    sigma0: f64,
    /// Evaluate every K steps (0: final step only).
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    /// Posterior samples S for the Monte-Carlo and linearized metrics.
    #[arg(long, default_value_t = 100)]
    eval_samples: usize,
    /// Comma-separated subset of plugin,mc,lin.
    #[arg(long, default_value = "plugin,mc,lin")]
    metrics: String,
    /// Comma-separated hidden-layer widths (empty: linear model).
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
    /// tanh | relu
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// Regression observation variance (default 0.1·Var(y_train)).
    #[arg(long)]
    obs_var: Option<f64>,
    /// Random-walk dynamics θ_t = γθ_{t-1} + N(0, qI), given as γ,q.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    random_walk: Option<Vec<f64>>,
    /// Repair non-PSD covariances by adding ε·I (ε defaults to 1e-8).
    #[arg(long, num_args = 0..=1, default_missing_value = "1e-8")]
    jitter: Option<f64>,
    /// Floor negative variances at 1e-12 instead of failing.
    #[arg(long)]
    clamp_variance: bool,
    /// Output CSV path; the resolved configuration goes next to it as JSON.
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig, BongError> {
        FamilyTag::parse(&self.family)?;
        let activation = match self.activation.as_str() {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            other => return Err(BongError::InvalidConfig(format!("unknown activation '{other}'"))),
        };
        let dynamics = match self.random_walk.as_deref() {
            None => Dynamics::Static,
            Some([gamma, q]) => Dynamics::RandomWalk { gamma: *gamma, q: *q },
            Some(_) => return Err(BongError::InvalidConfig("--random-walk takes gamma,q".into())),
        };
        Ok(RunConfig {
            algorithm: Algorithm::parse(&self.algorithm)?,
            family: self.family.clone(),
            estimator: EstimatorKind::parse(&self.estimator)?,
            rank: self.rank,
            samples: self.samples,
            probes: self.probes,
            antithetic: self.antithetic,
            iters: self.iters,
            lr: self.lr,
            dataset: DatasetSpec::parse(&self.dataset, self.input_dim, self.noise)?,
            n_train: self.n_train,
            n_test: self.n_test,
            seed: self.seed,
            data_seed: self.data_seed,
            sigma0: self.sigma0,
            eval_every: self.eval_every,
            eval_samples: self.eval_samples,
            metrics: MetricSet::parse(&self.metrics)?,
            hidden: self.hidden.clone(),
            activation,
            obs_var: self.obs_var,
            jitter: self.jitter,
            clamp_variance: self.clamp_variance,
            dynamics,
            ..RunConfig::default()
        })
    }
}

fn execute(args: &RunArgs, grid: Option<(Vec<f64>, Option<usize>)>) -> Result<(), BongError> {
    let mut cfg = args.to_config()?;
    if let Some((lr_grid, tune_at)) = grid {
        cfg.lr_grid = Some(lr_grid);
        cfg.tune_at = tune_at;
    }
    let output = run_experiment(&cfg)?;
    write_outputs(&args.out, &output)?;
    if let Some(last) = output.trace.last() {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        println!(
            "t={} lr={} nlpd_plugin={} miscl_plugin={} update_ns={}",
            last.t,
            output.resolved.lr_resolved,
            fmt(last.metrics.nlpd_plugin),
            fmt(last.metrics.miscl_plugin),
            last.wall_ns
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => execute(args, None),
        Command::Tune { run, lr_grid, tune_at } => execute(run, Some((lr_grid.clone(), *tune_at))),
        Command::Selftest => {
            let results = run_selftest();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().all(|r| r.passed) {
                Ok(())
            } else {
                eprintln!("selftest failed");
                return ExitCode::from(1);
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(2)
        }
    }
}
