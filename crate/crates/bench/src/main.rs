use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use ilr_bench::config::{parse_config_text, ExperimentConfig};
use ilr_bench::BenchError;

/// Runs one experiment and writes ledger.csv, summary.csv, metadata.json
/// and the generated streams to --out.
#[derive(Parser, Debug)]
#[command(name = "ilr-bench", version)]
struct Cli {
    /// regret | bandit | boosting | batch | lowerbound
    #[arg(long)]
    experiment: Option<String>,
    /// Flat key=value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long = "K")]
    k: Option<String>,
    #[arg(long = "B")]
    b: Option<String>,
    #[arg(long = "R")]
    r: Option<String>,
    #[arg(long = "L")]
    l: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    /// Number of weak learners (boosting).
    #[arg(long = "N")]
    big_n: Option<String>,
    /// Weak-learner edge (boosting) or margin (margin streams, lowerbound).
    #[arg(long)]
    gamma: Option<String>,
    /// grid | langevin
    #[arg(long)]
    sampler: Option<String>,
    /// Langevin chains.
    #[arg(long)]
    m: Option<String>,
    /// Langevin steps per chain.
    #[arg(long)]
    steps: Option<String>,
    /// OGD step constant, or the linear weak learner's step size.
    #[arg(long)]
    eta: Option<String>,
    /// Number of seeds, run as seed, seed + 1, ...
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Grid points per free dimension.
    #[arg(long)]
    grid: Option<String>,
    /// stochastic | realizable | margin
    #[arg(long)]
    stream: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    /// cheating | linear
    #[arg(long)]
    weak: Option<String>,
    /// Support size of the batch distribution.
    #[arg(long)]
    support: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl Cli {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let fields: [(&'static str, &Option<String>); 23] = [
            ("experiment", &self.experiment),
            ("d", &self.d),
            ("K", &self.k),
            ("B", &self.b),
            ("R", &self.r),
            ("L", &self.l),
            ("n", &self.n),
            ("mu", &self.mu),
            ("delta", &self.delta),
            ("N", &self.big_n),
            ("gamma", &self.gamma),
            ("sampler", &self.sampler),
            ("m", &self.m),
            ("steps", &self.steps),
            ("eta", &self.eta),
            ("seeds", &self.seeds),
            ("seed", &self.seed),
            ("grid", &self.grid),
            ("stream", &self.stream),
            ("noise", &self.noise),
            ("weak", &self.weak),
            ("support", &self.support),
            ("out", &self.out),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect()
    }
}

fn load(cli: &Cli) -> Result<Option<ExperimentConfig>, BenchError> {
    let mut pairs: Vec<(String, String)> = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
            parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    pairs.extend(cli.flag_pairs().into_iter().map(|(k, v)| (k.to_string(), v)));
    if !pairs.iter().any(|(k, _)| k == "experiment") {
        return Ok(None);
    }
    Ok(Some(ExperimentConfig::from_pairs(
        pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())),
    )?))
}

fn init_threads() -> Result<(), BenchError> {
    if let Ok(v) = std::env::var("ILR_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| BenchError::Config(format!("ILR_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BenchError::Run(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| load(&cli));
    let cfg = match result {
        Ok(Some(cfg)) => cfg,
        Ok(None) => {
            eprintln!("error: --experiment is required (on the command line or in --config)\n");
            eprintln!("{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match ilr_bench::run(&cfg) {
        Ok(out) => {
            println!(
                "{} run: {} seeds, {} ledger rows, output in {}",
                serde_json::to_value(cfg.experiment).map(|v| v.as_str().unwrap_or("").to_string()).unwrap_or_default(),
                out.seeds.len(),
                out.ledger.rows.len(),
                cfg.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
