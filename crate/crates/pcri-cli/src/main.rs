use clap::{Args, Parser, Subcommand};
use pcri_cli::{cmd_gen, cmd_run, cmd_score, EXIT_FATAL};
use pcri_core::adapters::{ModelEndpointConfig, SyntheticModelSpec};
use pcri_core::ingest::synth::{DistractorLayout, SyntheticDatasetSpec};
use pcri_core::pipeline::{AdapterSource, RunConfig};
use std::collections::BTreeSet;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "pcri",
    about = "Patch-context robustness evaluation for vision-language models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline: ingest -> patch -> infer -> score -> report
    Run(RunArgs),
    /// Recompute reports from a replay cache (bit-exact, no inference)
    Score(ScoreArgs),
    /// Generate a synthetic fixture dataset with known expected PCRI
    Gen(GenArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Dataset manifest; repeat for multiple datasets
    #[arg(long = "manifest", required = true, num_args = 1)]
    manifests: Vec<PathBuf>,
    /// Patch grid sides (1 = full image, always included)
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u32, 2, 3])]
    grids: Vec<u32>,
    /// Run seed; drives bootstrap resampling and shuffle floors
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gate margin on [0,1]-scaled metrics
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Bootstrap resample count
    #[arg(long, default_value_t = 1000)]
    bootstrap: u32,
    /// Half-width of the "robust" interpretation band
    #[arg(long, default_value_t = 0.02)]
    epsilon: f64,
    /// Output directory for cache, scored records, and reports
    #[arg(long)]
    out: PathBuf,
    /// Upper bound on concurrent endpoint requests
    #[arg(long, default_value_t = 4)]
    max_parallel: usize,
    /// Model id for cache keys and report rows (defaults per source)
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Chat-completion endpoint URL (live inference)
    #[arg(long)]
    endpoint_url: Option<String>,
    /// Environment variable holding the bearer token for the endpoint
    #[arg(long, default_value = "PCRI_API_TOKEN")]
    auth_env: String,
    /// Replay cache file (no live inference)
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Built-in synthetic model: local_solver, distractible:<k>,
    /// or global_integrator:<coverage>
    #[arg(long)]
    synthetic: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Replay cache file produced by a previous run
    #[arg(long)]
    replay: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for images and manifest.jsonl
    #[arg(long)]
    out: PathBuf,
    /// Dataset id written into the manifest
    #[arg(long, default_value = "synthetic")]
    id: String,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 64)]
    height: u32,
    #[arg(long, default_value_t = 64)]
    width: u32,
    /// Target cell as grid,row,col (0-based), e.g. 2,0,0
    #[arg(long, default_value = "2,0,0")]
    target: String,
    /// Distractor layout: none, outside_target, or mixed:<clean_samples>
    #[arg(long, default_value = "none")]
    layout: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grids to precompute expectations for
    #[arg(long, value_delimiter = ',', default_values_t = vec![2u32])]
    grids: Vec<u32>,
}

fn build_config(common: CommonArgs, source: AdapterSource) -> RunConfig {
    let mut config = RunConfig::new(common.manifests, source, common.out);
    config.model_id = common.model;
    config.grids = BTreeSet::from_iter(common.grids);
    config.seed = common.seed;
    config.delta = common.delta;
    config.bootstrap_b = common.bootstrap;
    config.epsilon_band = common.epsilon;
    config.max_parallel = common.max_parallel;
    config
}

fn run_source(args: &RunArgs) -> Result<AdapterSource, String> {
    let picked = [
        args.endpoint_url.is_some(),
        args.replay.is_some(),
        args.synthetic.is_some(),
    ]
    .iter()
    .filter(|&&p| p)
    .count();
    if picked != 1 {
        return Err(
            "pass exactly one of --endpoint-url, --replay, or --synthetic".to_string()
        );
    }
    if let Some(url) = &args.endpoint_url {
        let model = args
            .common
            .model
            .clone()
            .ok_or_else(|| "--endpoint-url requires --model".to_string())?;
        let mut endpoint = ModelEndpointConfig::new(url, model);
        endpoint.auth_token_env_var = args.auth_env.clone();
        return Ok(AdapterSource::Endpoint(endpoint));
    }
    if let Some(path) = &args.replay {
        return Ok(AdapterSource::Replay(path.clone()));
    }
    let spec = SyntheticModelSpec::parse(args.synthetic.as_deref().expect("checked"))?;
    Ok(AdapterSource::Synthetic(spec))
}

fn parse_target(s: &str) -> Result<(u32, u32, u32), String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|_| format!("invalid target '{s}'")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [grid, row, col] => Ok((*grid, *row, *col)),
        _ => Err(format!("invalid target '{s}' (expected grid,row,col)")),
    }
}

fn parse_layout(s: &str) -> Result<DistractorLayout, String> {
    match s.split_once(':') {
        None if s == "none" => Ok(DistractorLayout::None),
        None if s == "outside_target" => Ok(DistractorLayout::OutsideTarget),
        Some(("mixed", k)) => k
            .parse::<usize>()
            .map(|clean_samples| DistractorLayout::Mixed { clean_samples })
            .map_err(|_| format!("invalid mixed clean count '{k}'")),
        _ => Err(format!(
            "unknown layout '{s}' (expected none, outside_target, or mixed:<k>)"
        )),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => match run_source(&args) {
            Ok(source) => cmd_run(build_config(args.common, source)),
            Err(msg) => {
                eprintln!("error: {msg}");
                EXIT_FATAL
            }
        },
        Command::Score(args) => {
            let source = AdapterSource::Replay(args.replay.clone());
            cmd_score(build_config(args.common, source))
        }
        Command::Gen(args) => {
            let parsed = parse_target(&args.target).and_then(|target| {
                parse_layout(&args.layout).map(|layout| (target, layout))
            });
            match parsed {
                Ok(((grid, row, col), layout)) => {
                    let spec = SyntheticDatasetSpec {
                        dataset_id: args.id,
                        n_samples: args.samples,
                        image_height: args.height,
                        image_width: args.width,
                        target_grid: grid,
                        target_row: row,
                        target_col: col,
                        distractor_layout: layout,
                        seed: args.seed,
                        grids: args.grids,
                    };
                    cmd_gen(spec, &args.out)
                }
                Err(msg) => {
                    eprintln!("error: {msg}");
                    EXIT_FATAL
                }
            }
        }
    };
    std::process::exit(code);
}
