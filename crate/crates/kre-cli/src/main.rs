//! `kre`: re-rank retrieval results with reciprocal-neighbor encoding.
//!
//! Subcommands: `synth` generates seeded clustered features, `rerank` runs a
//! re-ranking method over a feature or distance file, `eval` additionally
//! scores the ranking with CMC/mAP, and `sweep` grids one or more
//! hyperparameters and emits a CSV of rank-1/mAP per combination.
//!
//! Exit codes: 0 success, 1 data/computation error, 2 usage error.

mod sweep;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kre_core::io::{
    format_eval_text, load_distance_matrix, load_features, save_features, save_ranking_csv,
    write_eval_csv, write_ranking_csv,
};
use kre_core::{
    average_query_expansion, evaluate, generate_synthetic, original_ranking, pairwise_distance,
    rerank_distances, DistanceMatrix, EmbeddingSet, EvalReport, GroundTruth, JunkPolicy,
    MetricMatrix, MetricSpec, RankedResult, RerankOptions, RerankParams,
};

use sweep::SweepSpec;

#[derive(Parser)]
#[command(name = "kre", version, about = "k-reciprocal re-ranking engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-rank a gallery for each probe and write the ranking CSV.
    Rerank(RerankArgs),
    /// Re-rank and score with CMC and mAP.
    Eval(EvalArgs),
    /// Sweep hyperparameters and emit rank-1/mAP per grid point.
    Sweep(SweepArgs),
    /// Generate seeded synthetic clustered features (KRF1).
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Euclidean,
    Mahalanobis,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Kreciprocal,
    Aqe,
    None,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum JunkArg {
    None,
    Camid,
}

#[derive(Args)]
struct InputArgs {
    /// Feature file: KRF1, or CSV with header `f0..f{d-1}[,id][,cam]`.
    #[arg(long)]
    features: Option<PathBuf>,

    /// Precomputed square distance matrix (headerless CSV). May be combined
    /// with --features to supply labels for evaluation.
    #[arg(long)]
    dist: Option<PathBuf>,

    /// Number of leading rows that are probes.
    #[arg(long)]
    n_probe: usize,

    /// Reciprocal neighborhood size.
    #[arg(long, default_value_t = 20)]
    k1: usize,

    /// Local query expansion size.
    #[arg(long, default_value_t = 6)]
    k2: usize,

    /// Weight of the original distance in the final blend.
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,

    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    metric: MetricArg,

    /// Square metric matrix as headerless CSV (required for mahalanobis).
    #[arg(long)]
    metric_matrix: Option<PathBuf>,

    /// Re-ranking method; `aqe` uses --k2 as its expansion size, `none`
    /// emits the original distance ranking.
    #[arg(long, value_enum, default_value_t = MethodArg::Kreciprocal)]
    method: MethodArg,

    /// Skip per-item distance normalization before the kernel and blend.
    #[arg(long)]
    no_normalize: bool,

    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RerankArgs {
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Highest rank reported in the CMC curve.
    #[arg(long, default_value_t = 50)]
    max_rank: usize,

    /// Junk policy: `camid` drops gallery entries sharing id and camera
    /// with the probe.
    #[arg(long, value_enum, default_value_t = JunkArg::None)]
    junk: JunkArg,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,

    /// Grid spec `name=start:stop:step` or `name=v1,v2,...` for k1, k2, or
    /// lambda. Repeat the flag to sweep a cartesian product.
    #[arg(long = "sweep", required = true)]
    sweeps: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    n_ids: usize,

    #[arg(long, default_value_t = 8)]
    per_id: usize,

    #[arg(long, default_value_t = 32)]
    dim: usize,

    /// Per-coordinate Gaussian noise around each cluster center.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Output KRF1 file.
    #[arg(long)]
    out: PathBuf,
}

/// Usage problems that clap cannot see (flag combinations); exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Rerank(args) => cmd_rerank(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Loaded inputs: the distance matrix to rank over plus optional embeddings
/// (needed for AQE and for labels).
struct LoadedInput {
    dist: DistanceMatrix,
    features: Option<EmbeddingSet>,
    options: RerankOptions,
    metric: MetricSpec,
}

fn load_metric(args: &InputArgs, dim: Option<usize>) -> Result<MetricSpec> {
    match args.metric {
        MetricArg::Euclidean => {
            if args.metric_matrix.is_some() {
                return Err(usage("--metric-matrix requires --metric mahalanobis"));
            }
            Ok(MetricSpec::SquaredEuclidean)
        }
        MetricArg::Mahalanobis => {
            let path = args
                .metric_matrix
                .as_ref()
                .ok_or_else(|| usage("--metric mahalanobis requires --metric-matrix"))?;
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let n = rows.len();
            let mut values = Vec::with_capacity(n * n);
            for row in &rows {
                for field in row.split(',') {
                    values.push(
                        field
                            .trim()
                            .parse::<f64>()
                            .map_err(|_| anyhow!("bad metric matrix entry {field:?}"))?,
                    );
                }
            }
            let m = MetricMatrix::new(values, n)?;
            if let Some(dim) = dim {
                if m.dim() != dim {
                    bail!("metric matrix is {}x{} but features have dim {dim}", n, n);
                }
            }
            Ok(MetricSpec::Mahalanobis(m))
        }
    }
}

fn load_input(args: &InputArgs) -> Result<LoadedInput> {
    if args.features.is_none() && args.dist.is_none() {
        return Err(usage("one of --features or --dist is required"));
    }
    let features = args
        .features
        .as_ref()
        .map(|p| load_features(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let metric = load_metric(args, features.as_ref().map(|f| f.dim()))?;
    let dist = match &args.dist {
        Some(path) => {
            let (matrix, report) =
                load_distance_matrix(path, args.n_probe).with_context(|| {
                    format!("loading distance matrix {}", path.display())
                })?;
            if report.symmetrized {
                eprintln!(
                    "warning: distance matrix asymmetric by {:.3e}; mirror entries averaged",
                    report.max_asymmetry
                );
            }
            if let Some(f) = &features {
                if f.len() != matrix.n_total() {
                    bail!(
                        "--features has {} rows but --dist is {}x{}",
                        f.len(),
                        matrix.n_total(),
                        matrix.n_total()
                    );
                }
            }
            matrix
        }
        None => pairwise_distance(features.as_ref().unwrap(), &metric, args.n_probe)?,
    };
    if args.n_probe == 0 || args.n_probe >= dist.n_total() {
        return Err(usage(format!(
            "--n-probe must be in 1..{} (got {})",
            dist.n_total(),
            args.n_probe
        )));
    }
    let options = RerankOptions {
        params: RerankParams::new(args.k1, args.k2, args.lambda),
        normalize: !args.no_normalize,
        ..Default::default()
    };
    Ok(LoadedInput {
        dist,
        features,
        options,
        metric,
    })
}

fn run_method(args: &InputArgs, input: &LoadedInput) -> Result<Vec<RankedResult>> {
    match args.method {
        MethodArg::Kreciprocal => Ok(rerank_distances(&input.dist, &input.options)?),
        MethodArg::None => Ok(original_ranking(&input.dist)),
        MethodArg::Aqe => {
            let features = input.features.as_ref().ok_or_else(|| {
                usage("--method aqe recomputes query vectors and needs --features")
            })?;
            Ok(average_query_expansion(
                features,
                args.n_probe,
                args.k2,
                &input.metric,
            )?)
        }
    }
}

fn cmd_rerank(args: RerankArgs) -> Result<()> {
    let input = load_input(&args.input)?;
    let results = run_method(&args.input, &input)?;
    match &args.input.out {
        Some(path) => save_ranking_csv(&results, path)?,
        None => {
            let mut buf = Vec::new();
            write_ranking_csv(&results, &mut buf)?;
            print!("{}", String::from_utf8(buf).expect("ASCII CSV"));
        }
    }
    Ok(())
}

fn ground_truth(args: &EvalArgs, input: &LoadedInput) -> Result<GroundTruth> {
    let features = input
        .features
        .as_ref()
        .ok_or_else(|| usage("eval needs --features carrying id labels"))?;
    let ids = features
        .ids()
        .ok_or_else(|| usage("eval needs id labels in the feature file"))?;
    let n_probe = args.input.n_probe;
    let cams = features.cams();
    let junk = match args.junk {
        JunkArg::None => JunkPolicy::None,
        JunkArg::Camid => JunkPolicy::SameCameraSameId,
    };
    if junk == JunkPolicy::SameCameraSameId && cams.is_none() {
        return Err(usage("--junk camid needs camera labels in the feature file"));
    }
    Ok(GroundTruth {
        probe_ids: ids[..n_probe].to_vec(),
        probe_cams: cams.map(|c| c[..n_probe].to_vec()),
        gallery_ids: ids[n_probe..].to_vec(),
        gallery_cams: cams.map(|c| c[n_probe..].to_vec()),
        junk,
    })
}

fn run_eval(args: &EvalArgs, input: &LoadedInput) -> Result<EvalReport> {
    let results = run_method(&args.input, input)?;
    let truth = ground_truth(args, input)?;
    Ok(evaluate(&results, &truth, args.max_rank)?)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let input = load_input(&args.input)?;
    let report = run_eval(&args, &input)?;
    print!("{}", format_eval_text(&report));
    if let Some(path) = &args.input.out {
        let mut buf = Vec::new();
        write_eval_csv(&report, &mut buf)?;
        fs::write(path, buf)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    if args.eval.input.method != MethodArg::Kreciprocal {
        return Err(usage("sweep grids k-reciprocal parameters; drop --method"));
    }
    let specs: Vec<SweepSpec> = args
        .sweeps
        .iter()
        .map(|s| SweepSpec::parse(s).map_err(usage))
        .collect::<Result<_>>()?;
    let input = load_input(&args.eval.input)?;

    let truth = ground_truth(&args.eval, &input)?;
    let mut header: Vec<String> = specs.iter().map(|s| s.name().to_string()).collect();
    header.push("rank1".into());
    header.push("mAP".into());
    let mut csv = header.join(",");
    csv.push('\n');

    for combo in sweep::cartesian(&specs) {
        let mut params = RerankParams::new(
            args.eval.input.k1,
            args.eval.input.k2,
            args.eval.input.lambda,
        );
        for (spec, value) in specs.iter().zip(&combo) {
            spec.apply(*value, &mut params)?;
        }
        params.validated(input.dist.n_total())?;
        let options = RerankOptions {
            params,
            normalize: !args.eval.input.no_normalize,
            ..Default::default()
        };
        let results = rerank_distances(&input.dist, &options)?;
        let report = evaluate(&results, &truth, args.eval.max_rank)?;
        let rank1 = report.cmc.first().copied().unwrap_or(0.0);
        for (spec, value) in specs.iter().zip(&combo) {
            csv.push_str(&spec.format(*value));
            csv.push(',');
        }
        csv.push_str(&format!("{rank1:.6},{:.6}\n", report.map));
    }

    match &args.eval.input.out {
        Some(path) => fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let set = generate_synthetic(args.n_ids, args.per_id, args.dim, args.sigma, args.seed)?;
    save_features(&set, &args.out)?;
    eprintln!(
        "wrote {} rows x {} dims ({} ids, {} per id) to {}",
        set.len(),
        set.dim(),
        args.n_ids,
        args.per_id,
        args.out.display()
    );
    Ok(())
}
