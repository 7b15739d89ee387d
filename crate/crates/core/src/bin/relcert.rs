use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relcert::corpus::{random_instance, random_network, rng};
use relcert::model::load_network;
use relcert::norm::Norm;
use relcert::pipeline::{run, Method, PipelineConfig};
use relcert::refine::RefineConfig;
use relcert::relspec::{build, DataFile, PropertyKind};
use relcert::report::{emit_reports, VerificationReport};
use relcert::{Error, Result};

/// Relational robustness verification for ReLU classifiers.
#[derive(Parser)]
#[command(name = "relcert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound worst-case k-UAP accuracy or hamming distance.
    Verify(VerifyArgs),
    /// Write a random network and data file.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// kuap or hamming
    #[arg(long, default_value = "kuap")]
    property: String,
    /// Overrides the radius stored in the data file.
    #[arg(long)]
    epsilon: Option<f64>,
    /// "inf" or p >= 1; overrides the data file.
    #[arg(long)]
    norm: Option<String>,
    #[arg(long, default_value = "racoon",
          value_parser = ["nonrel", "io", "indiv", "indiv-milp", "cross", "racoon"])]
    method: String,
    /// Use only the first k executions of the data file.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 6)]
    k0: usize,
    #[arg(long, default_value_t = 4)]
    k1: usize,
    #[arg(long, default_value_t = 20)]
    adam_iters: usize,
    /// Recorded for reproducibility; verification itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Append a (method, epsilon, k, bound, seconds) row.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    no_timings: bool,
    /// Keep individually proved executions in the MILP.
    #[arg(long)]
    no_elimination: bool,
    /// Write the solved MILP in LP-like text form.
    #[arg(long)]
    dump_milp: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "kuap")]
    property: String,
    #[arg(long, default_value_t = 2)]
    input_dim: usize,
    /// Comma-separated hidden widths.
    #[arg(long, default_value = "8,8")]
    hidden: String,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn verify(args: VerifyArgs) -> Result<()> {
    let kind: PropertyKind = args.property.parse()?;
    let method: Method = args.method.parse()?;
    let net = load_network(&args.network)?;
    let data = DataFile::load(&args.data)?;
    let norm = match &args.norm {
        Some(n) => n.parse::<Norm>()?,
        None => data.norm,
    };
    let epsilon = args.epsilon.unwrap_or(data.epsilon);
    let mut inputs = data.inputs();
    let mut labels = data.labels.clone();
    if let Some(k) = args.k {
        if k == 0 || k > inputs.len() {
            return Err(Error::Property(format!(
                "k={k} but the data file has {} executions",
                inputs.len()
            )));
        }
        inputs.truncate(k);
        labels.truncate(k);
    }
    let instance = build(kind, inputs, labels, epsilon, norm, net.output_dim())?;
    let config = PipelineConfig {
        k0: args.k0,
        k1: args.k1,
        refine: RefineConfig {
            adam_iters: args.adam_iters,
            ..RefineConfig::default()
        },
        elimination: !args.no_elimination,
        ..PipelineConfig::default()
    };
    let outcome = run(&net, &instance, method, config)?;
    let report = VerificationReport::from_outcome(&outcome, !args.no_timings);
    emit_reports(&report, &args.out, args.csv.as_deref())?;
    if let Some(path) = &args.dump_milp {
        write(path, outcome.model_dump.clone().unwrap_or_default())?;
    }
    println!(
        "{} {} k={} epsilon={}: bound {}",
        method, kind, instance.k(), epsilon, outcome.bound
    );
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let kind: PropertyKind = args.property.parse()?;
    let hidden = args
        .hidden
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Precondition(format!("invalid width {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let classes = if kind == PropertyKind::Hamming { 2 } else { args.classes };
    let mut r = rng(args.seed);
    let net = random_network(&mut r, args.input_dim, &hidden, classes)?;
    let inst = random_instance(&mut r, &net, kind, args.k, args.epsilon, Norm::Inf)?;
    fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    let to_json = |v: serde_json::Result<String>| v.expect("serializable") + "\n";
    write(
        &args.out_dir.join("network.json"),
        to_json(serde_json::to_string_pretty(&net.to_json())),
    )?;
    write(
        &args.out_dir.join("data.json"),
        to_json(serde_json::to_string_pretty(&DataFile::from_instance(&inst))),
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(a) => verify(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
