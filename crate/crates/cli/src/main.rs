use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use rhem_core::estimator::{
    compare_node_type_submodels, effect_contributions, fit, write_coefficients_csv, write_comparison_csv,
    write_contributions_csv, write_estimates_tsv,
};
use rhem_core::event_model::{descriptives, parse_event_stream, write_descriptives_csv, ParseOptions};
use rhem_core::riskset::DesignMeta;
use rhem_core::synthgen::{simulate, SynthConfig};
use rhem_core::{build_design_matrix, DesignMatrix, EffectCatalog, EventSequence, NodeType};

#[derive(Parser, Debug)]
#[command(name = "rhem", version, about = "Relational hyperevent models for publication events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse an event file and report basic counts.
    Validate(InputArgs),
    /// Size descriptives per period.
    Describe(InputArgs),
    /// Build the sampled case/control design.
    Design(DesignArgs),
    /// Fit the conditional-logit model.
    Fit(FitArgs),
    /// Full model against the three drop-one-node-type sub-models.
    Compare(DesignInput),
    /// Leave-one-effect-out AIC table.
    Contrib(DesignInput),
    /// Generate a synthetic event file.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Serialize)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sort records by timestamp instead of rejecting disorder.
    #[arg(long)]
    sort: bool,
}

#[derive(Args, Debug, Serialize)]
struct DesignArgs {
    #[command(flatten)]
    io: InputArgs,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    m: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Catalog file, one `name[,kappa,lambda]` per line.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Default decay for the first GWSR side.
    #[arg(long, default_value_t = 5.0)]
    kappa: f64,
    /// Default decay for the second GWSR side.
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    #[arg(long)]
    strict_closure: bool,
}

#[derive(Args, Debug, Serialize)]
struct DesignInput {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[command(flatten)]
    io: DesignInput,
    /// Comma-separated effect subset; all columns when omitted.
    #[arg(long, value_delimiter = ',')]
    effects: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// JSON generator config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Writes through a temporary sibling file and renames on success.
fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut w = BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
        body(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn read_events(args: &InputArgs) -> Result<EventSequence> {
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let seq = parse_event_stream(BufReader::new(file), ParseOptions { sort: args.sort })
        .with_context(|| format!("reading {}", args.input.display()))?;
    Ok(seq)
}

fn sidecar(design: &Path) -> PathBuf {
    design.with_extension("meta.json")
}

/// Loads the design CSV and checks its header against the sidecar catalog.
fn read_design(path: &Path) -> Result<DesignMatrix> {
    let meta_path = sidecar(path);
    let meta: Option<DesignMeta> = match fs::read_to_string(&meta_path) {
        Ok(text) => Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", meta_path.display()))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            log::warn!("no sidecar {}; column names are not checked", meta_path.display());
            None
        }
        Err(e) => return Err(e).with_context(|| format!("reading {}", meta_path.display())),
    };
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let d = DesignMatrix::read_csv(BufReader::new(file), meta).with_context(|| format!("reading {}", path.display()))?;
    Ok(d)
}

const PATH_KEYS: [&str; 4] = ["input", "design", "config", "catalog"];

/// Hash of everything that determines the outputs. Paths are left out; input
/// files enter through their content hashes.
fn hash_config(config: &Value) -> String {
    fn strip(v: &Value) -> Value {
        match v {
            Value::Object(map) => Value::Object(map.iter().filter(|(k, _)| *k != "out" && !PATH_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), strip(v))).collect()),
            other => other.clone(),
        }
    }
    hex::encode(Sha256::digest(strip(config).to_string().as_bytes()))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest(out: &Path, command: &str, mut config: Value, seed: Option<u64>, details: Value) -> Result<()> {
    for key in PATH_KEYS {
        let path = config.get(key).or_else(|| config.get("io").and_then(|io| io.get(key))).and_then(Value::as_str).map(PathBuf::from);
        if let Some(path) = path {
            config[format!("{key}_sha256")] = json!(file_sha256(&path)?);
        }
    }
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "versions": { "rhem-cli": env!("CARGO_PKG_VERSION"), "rhem-core": rhem_core::VERSION },
        "seed": seed,
        "config_hash": hash_config(&config),
        "config": config,
        "threads": rayon::current_num_threads(),
        "details": details,
    });
    write_atomic(&out.join(format!("{command}.manifest.json")), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)
    })
}

fn node_counts(seq: &EventSequence) -> Value {
    json!({
        "authors": seq.registry().count(NodeType::Author),
        "references": seq.registry().count(NodeType::Reference),
        "keywords": seq.registry().count(NodeType::Keyword),
    })
}

fn design_details(d: &DesignMatrix) -> Value {
    json!({
        "n_strata": d.meta.n_strata,
        "n_obs": d.n_rows(),
        "case_only_strata": d.meta.case_only_strata,
        "duplicate_controls": d.meta.duplicate_controls,
        "columns": d.columns,
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Validate(args) => {
            let seq = read_events(&args)?;
            let details = json!({
                "n_events": seq.len(),
                "nodes": node_counts(&seq),
                "dropped_duplicate_nodes": seq.dedup_warnings(),
            });
            println!("{}", serde_json::to_string_pretty(&details)?);
            write_manifest(&args.out, "validate", serde_json::to_value(&args)?, None, details)
        }
        Command::Describe(args) => {
            let seq = read_events(&args)?;
            let rows = descriptives(&seq)?;
            write_atomic(&args.out.join("descriptives.csv"), |w| write_descriptives_csv(&rows, w))?;
            let details = json!({ "n_events": seq.len(), "rows": rows.len() });
            write_manifest(&args.out, "describe", serde_json::to_value(&args)?, None, details)
        }
        Command::Design(args) => {
            let seq = read_events(&args.io)?;
            let base = EffectCatalog::with_decay(args.kappa, args.lambda).with_strict_closure(args.strict_closure);
            let catalog = match &args.catalog {
                Some(path) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    EffectCatalog::parse_config(&text, &base)?
                }
                None => base,
            };
            let design = build_design_matrix(&seq, &catalog, args.m as usize, args.seed)?;
            let csv = args.io.out.join("design.csv");
            write_atomic(&csv, |w| design.write_csv(w))?;
            write_atomic(&sidecar(&csv), |w| {
                serde_json::to_writer_pretty(&mut *w, &design.meta)?;
                writeln!(w)
            })?;
            let mut details = design_details(&design);
            details["n_events"] = json!(seq.len());
            details["nodes"] = node_counts(&seq);
            let mut config = serde_json::to_value(&args)?;
            config["catalog_config"] = json!(catalog.to_config_string());
            println!("{} strata, {} rows", design.meta.n_strata, design.n_rows());
            write_manifest(&args.io.out, "design", config, Some(args.seed), details)
        }
        Command::Fit(args) => {
            let design = read_design(&args.io.design)?;
            let f = fit(&design, &args.effects)?;
            write_atomic(&args.io.out.join("estimates.tsv"), |w| write_estimates_tsv(&f, w))?;
            if !f.converged {
                log::warn!("Newton iterations did not converge (gradient norm {:.2e})", f.gradient_norm);
            }
            let mut details = design_details(&design);
            details["fit"] = json!({
                "effects": f.effects,
                "log_lik": f.log_lik,
                "aic": f.aic,
                "n_events": f.n_events,
                "n_obs": f.n_obs,
                "converged": f.converged,
                "iterations": f.iterations,
                "ridge_used": f.ridge_used,
            });
            details["n_obs"] = json!(f.n_obs);
            println!("logLik {:.4}, AIC {:.4}, n_obs {}", f.log_lik, f.aic, f.n_obs);
            write_manifest(&args.io.out, "fit", serde_json::to_value(&args)?, Some(design.meta.seed), details)
        }
        Command::Compare(args) => {
            let design = read_design(&args.design)?;
            let rows = compare_node_type_submodels(&design)?;
            write_atomic(&args.out.join("comparison.csv"), |w| write_comparison_csv(&rows, w))?;
            write_atomic(&args.out.join("coefficients.csv"), |w| write_coefficients_csv(&rows, w))?;
            let mut details = design_details(&design);
            details["models"] = json!(rows.iter().map(|r| json!({ "model": r.model, "aic": r.fit.aic, "delta_aic": r.delta_aic })).collect::<Vec<_>>());
            write_manifest(&args.out, "compare", serde_json::to_value(&args)?, Some(design.meta.seed), details)
        }
        Command::Contrib(args) => {
            let design = read_design(&args.design)?;
            let table = effect_contributions(&design)?;
            write_atomic(&args.out.join("contributions.csv"), |w| write_contributions_csv(&table, w))?;
            let mut details = design_details(&design);
            details["full_aic"] = json!(table.full.aic);
            write_manifest(&args.out, "contrib", serde_json::to_value(&args)?, Some(design.meta.seed), details)
        }
        Command::Simulate(args) => {
            let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
            let mut cfg = SynthConfig::from_json(&text)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let seq = simulate(&cfg)?;
            write_atomic(&args.out.join("events.jsonl"), |w| seq.write_jsonl(w))?;
            let details = json!({ "n_events": seq.len(), "nodes": node_counts(&seq) });
            write_manifest(&args.out, "simulate", serde_json::to_value(&cfg)?, Some(cfg.seed), details)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
