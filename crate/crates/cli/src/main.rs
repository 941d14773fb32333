//! Command-line interface: dataset validation, forest training, pool
//! generation, guarded scoring, and the k-fold evaluation, bench and sweep
//! runs.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 runtime
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fairguard::classifier::{train_forest, FeatureSubset, ForestConfig, ForestModel};
use fairguard::dataset::{
    fit_standardizer, load_dataset_delim, ColumnKind, Dataset, Schema, Standardizer,
};
use fairguard::generator::{
    distribution_report, fit_native_sampler, load_external_pool_delim, SyntheticPool,
};
use fairguard::guardrail::{guard_batch, write_guarded_dump, GuardrailConfig, PoolPair};
use fairguard::harness::{
    emit_bench, emit_report, render_table, render_timing_table, run_bench, run_experiment,
    sweep_augmentations, BiasInjection, ExperimentConfig, HarnessError, PoolConfig,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

struct AppError {
    code: u8,
    message: String,
}

impl AppError {
    fn usage(message: impl Into<String>) -> Self {
        AppError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl std::fmt::Display) -> Self {
        AppError {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl std::fmt::Display) -> Self {
        AppError {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }

    fn usage_from_guard(e: fairguard::guardrail::GuardError) -> AppError {
        AppError::usage(e.to_string())
    }
}

impl From<HarnessError> for AppError {
    fn from(e: HarnessError) -> Self {
        match &e {
            HarnessError::Config(_) => AppError::usage(e.to_string()),
            HarnessError::Schema(_) | HarnessError::Data(_) | HarnessError::Pool(_) => {
                AppError::data(e)
            }
            _ => AppError::runtime(e),
        }
    }
}

impl From<fairguard::dataset::SchemaError> for AppError {
    fn from(e: fairguard::dataset::SchemaError) -> Self {
        AppError::data(e)
    }
}

impl From<fairguard::dataset::DataError> for AppError {
    fn from(e: fairguard::dataset::DataError) -> Self {
        AppError::data(e)
    }
}

impl From<fairguard::generator::GeneratorError> for AppError {
    fn from(e: fairguard::generator::GeneratorError) -> Self {
        AppError::data(e)
    }
}

#[derive(Parser)]
#[command(name = "fairguard", version, about = "Inference-time fairness guardrail for tabular binary classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Schema file (TOML) declaring columns, protected attribute and label.
    #[arg(long)]
    schema: PathBuf,
    /// Delimiter-separated data file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Cell delimiter.
    #[arg(long, default_value = ",")]
    delimiter: char,
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 12)]
    max_depth: usize,
    #[arg(long, default_value_t = 2)]
    min_leaf: usize,
    /// Fraction of features per split; omitted means ceil(sqrt(n)).
    #[arg(long)]
    features_fraction: Option<f64>,
}

impl ForestArgs {
    fn to_config(&self) -> ForestConfig {
        ForestConfig {
            trees: self.trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            feature_subset: match self.features_fraction {
                Some(f) => FeatureSubset::Fraction(f),
                None => FeatureSubset::Sqrt,
            },
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Augmentation count; repeat for a sweep (default 2 4 6 8).
    #[arg(long = "t")]
    t: Vec<usize>,
    /// Members per generated pool.
    #[arg(long, default_value_t = 1000)]
    pool_size: usize,
    /// External pool as PA=PATH (0=... and 1=...); overrides generation.
    #[arg(long = "pool-external")]
    pool_external: Vec<String>,
    /// Aggregation weight on the original score.
    #[arg(long, default_value_t = 0.5)]
    weight: f64,
    #[command(flatten)]
    forest: ForestArgs,
    /// Flip favorable training labels of one group (format PA:PROB, e.g.
    /// 0:0.3) before fitting, to study mitigation under injected bias.
    #[arg(long)]
    inject_bias: Option<String>,
    /// Output directory for report files.
    #[arg(long, default_value = "fairguard-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Check a schema and data file pair, printing a dataset summary.
    Validate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train the bundled forest and save the model bundle.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Model bundle output path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic pools for both protected groups.
    Pools {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        pool_size: usize,
        /// Output directory for pool files and their metadata header.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a test file with the guardrail and write the prediction dump.
    Guard {
        #[command(flatten)]
        data: DataArgs,
        /// Model bundle from `train`.
        #[arg(long)]
        model: PathBuf,
        /// Directory produced by `pools`.
        #[arg(long)]
        pools: Option<PathBuf>,
        /// External pool as PA=PATH; pass twice, once per group.
        #[arg(long = "pool-external")]
        pool_external: Vec<String>,
        #[arg(long = "t", default_value_t = 8)]
        t: usize,
        #[arg(long, default_value_t = 0.5)]
        weight: f64,
        /// Dump file path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Full k-fold experiment comparing all methods.
    Evaluate {
        #[command(flatten)]
        args: ExperimentArgs,
    },
    /// Timing-focused run emitting the per-method wall-clock table.
    Bench {
        #[command(flatten)]
        args: ExperimentArgs,
    },
    /// Sensitivity run: one report row per augmentation count.
    Sweep {
        #[command(flatten)]
        args: ExperimentArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Validate { data } => validate(&data),
        Command::Train {
            data,
            forest,
            seed,
            out,
        } => train(&data, &forest, seed, &out),
        Command::Pools {
            data,
            seed,
            pool_size,
            out,
        } => pools(&data, seed, pool_size, &out),
        Command::Guard {
            data,
            model,
            pools,
            pool_external,
            t,
            weight,
            out,
        } => guard(&data, &model, pools.as_deref(), &pool_external, t, weight, &out),
        Command::Evaluate { args } => {
            let cfg = experiment_config(&args)?;
            let report = run_experiment(&cfg)?;
            let files = emit_report(&report, &args.out)?;
            print!("{}", render_table(&report));
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Bench { args } => {
            let cfg = experiment_config(&args)?;
            let timing = run_bench(&cfg)?;
            let files = emit_bench(&timing, &args.out)?;
            print!("{}", render_timing_table(&timing));
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Sweep { args } => {
            let cfg = experiment_config(&args)?;
            let report = sweep_augmentations(&cfg)?;
            let files = emit_report(&report, &args.out)?;
            print!("{}", render_table(&report));
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

fn delimiter_byte(c: char) -> Result<u8, AppError> {
    u8::try_from(c).map_err(|_| AppError::usage(format!("delimiter `{c}` is not a single byte")))
}

fn load_inputs(args: &DataArgs) -> Result<(Arc<Schema>, Dataset), AppError> {
    let schema = Arc::new(Schema::from_path(&args.schema)?);
    let data = load_dataset_delim(&args.data, &schema, delimiter_byte(args.delimiter)?)?;
    Ok((schema, data))
}

fn validate(args: &DataArgs) -> Result<(), AppError> {
    let (schema, data) = load_inputs(args)?;
    let pa = data.pa_values();
    let labels = data.labels();
    let numeric = schema
        .columns()
        .iter()
        .filter(|c| matches!(c.kind, ColumnKind::Numeric))
        .count();
    println!("ok: {} rows, {} columns", data.len(), schema.n_columns());
    println!(
        "columns: {} numeric, {} categorical",
        numeric,
        schema.n_columns() - numeric
    );
    let priv_n = pa.iter().filter(|&&g| g == 1).count();
    let fav_n = labels.iter().filter(|&&y| y == 1).count();
    println!(
        "protected: {} privileged / {} unprivileged",
        priv_n,
        data.len() - priv_n
    );
    println!(
        "label: {} favorable / {} unfavorable",
        fav_n,
        data.len() - fav_n
    );
    Ok(())
}

/// Trained model plus the standardizer fitted on the same data, enough to
/// guard a test file later.
#[derive(Serialize, Deserialize)]
struct ModelBundle {
    version: u32,
    forest: ForestModel,
    standardizer: Standardizer,
}

const BUNDLE_VERSION: u32 = 1;

fn train(args: &DataArgs, forest: &ForestArgs, seed: u64, out: &Path) -> Result<(), AppError> {
    let (_, data) = load_inputs(args)?;
    let model = train_forest(&data, &forest.to_config(), seed).map_err(AppError::runtime)?;
    let bundle = ModelBundle {
        version: BUNDLE_VERSION,
        standardizer: fit_standardizer(&data),
        forest: model,
    };
    let text = serde_json::to_string_pretty(&bundle).expect("bundle serializes");
    std::fs::write(out, text).map_err(AppError::runtime)?;
    println!(
        "trained {} trees on {} rows; bundle written to {}",
        bundle.forest.n_trees(),
        data.len(),
        out.display()
    );
    Ok(())
}

fn load_bundle(path: &Path) -> Result<ModelBundle, AppError> {
    let text = std::fs::read_to_string(path).map_err(AppError::data)?;
    let bundle: ModelBundle =
        serde_json::from_str(&text).map_err(|e| AppError::data(format!("model bundle: {e}")))?;
    if bundle.version != BUNDLE_VERSION {
        return Err(AppError::data(format!(
            "unsupported model bundle version {}",
            bundle.version
        )));
    }
    Ok(bundle)
}

#[derive(Serialize, Deserialize)]
struct PoolMeta {
    version: u32,
    seed: u64,
    pool_size: usize,
    resample_probability: f64,
    source_data: String,
    schema: String,
    unprivileged_file: String,
    privileged_file: String,
}

const POOL_FILES: [&str; 2] = ["pool_pa0.csv", "pool_pa1.csv"];

fn pools(args: &DataArgs, seed: u64, pool_size: usize, out: &Path) -> Result<(), AppError> {
    let (_, data) = load_inputs(args)?;
    std::fs::create_dir_all(out).map_err(AppError::runtime)?;
    for pa in [0u8, 1u8] {
        let sampler = fit_native_sampler(&data, pa, seed.wrapping_add(pa as u64))?;
        let pool = sampler.generate(pool_size, seed.wrapping_add(pa as u64))?;
        let path = out.join(POOL_FILES[pa as usize]);
        pool.as_dataset()
            .write_to_path(&path, delimiter_byte(args.delimiter)?)
            .map_err(AppError::runtime)?;

        let group_rows: Vec<usize> = (0..data.len())
            .filter(|&i| data.schema().pa_value(data.row(i)) == pa)
            .collect();
        let reference = data.subset(&group_rows);
        let report = distribution_report(&pool, &reference)?;
        println!("pool pa={pa}: {} members -> {}", pool.len(), path.display());
        print!("{report}");
    }
    let meta = PoolMeta {
        version: 1,
        seed,
        pool_size,
        resample_probability: fairguard::generator::DEFAULT_RESAMPLE_PROBABILITY,
        source_data: args.data.display().to_string(),
        schema: args.schema.display().to_string(),
        unprivileged_file: POOL_FILES[0].to_string(),
        privileged_file: POOL_FILES[1].to_string(),
    };
    let text = toml::to_string(&meta).expect("meta serializes");
    std::fs::write(out.join("pools.meta.toml"), text).map_err(AppError::runtime)?;
    Ok(())
}

fn parse_pool_spec(spec: &str) -> Result<(u8, PathBuf), AppError> {
    let (pa, path) = spec
        .split_once('=')
        .ok_or_else(|| AppError::usage(format!("pool spec `{spec}` must be PA=PATH")))?;
    let pa: u8 = pa
        .parse()
        .map_err(|_| AppError::usage(format!("pool spec `{spec}`: PA must be 0 or 1")))?;
    if pa > 1 {
        return Err(AppError::usage(format!(
            "pool spec `{spec}`: PA must be 0 or 1"
        )));
    }
    Ok((pa, PathBuf::from(path)))
}

fn external_pool_paths(specs: &[String]) -> Result<(PathBuf, PathBuf), AppError> {
    let mut unpriv = None;
    let mut privileged = None;
    for spec in specs {
        let (pa, path) = parse_pool_spec(spec)?;
        if pa == 0 {
            unpriv = Some(path);
        } else {
            privileged = Some(path);
        }
    }
    match (unpriv, privileged) {
        (Some(u), Some(p)) => Ok((u, p)),
        _ => Err(AppError::usage(
            "external pools need both 0=PATH and 1=PATH specs",
        )),
    }
}

fn guard(
    args: &DataArgs,
    model: &Path,
    pools_dir: Option<&Path>,
    pool_external: &[String],
    t: usize,
    weight: f64,
    out: &Path,
) -> Result<(), AppError> {
    let (schema, test) = load_inputs(args)?;
    let bundle = load_bundle(model)?;
    let delimiter = delimiter_byte(args.delimiter)?;

    let load_pool = |path: &Path, pa: u8| -> Result<SyntheticPool, AppError> {
        Ok(load_external_pool_delim(path, &schema, pa, delimiter)?)
    };
    let (pool0, pool1) = if let Some(dir) = pools_dir {
        (
            load_pool(&dir.join(POOL_FILES[0]), 0)?,
            load_pool(&dir.join(POOL_FILES[1]), 1)?,
        )
    } else {
        let (u, p) = external_pool_paths(pool_external)?;
        (load_pool(&u, 0)?, load_pool(&p, 1)?)
    };
    let pools = PoolPair::new(pool0, pool1).map_err(AppError::usage_from_guard)?;

    let cfg = GuardrailConfig::with_weight(t, weight).map_err(AppError::usage_from_guard)?;
    let (preds, stats) = guard_batch(&bundle.forest, &test, &pools, &cfg, &bundle.standardizer)
        .map_err(AppError::runtime)?;
    write_guarded_dump(out, &preds).map_err(AppError::runtime)?;
    println!(
        "guarded {} rows: {} triggered, {} flipped, {:.3} s ({:.3} s scoring, {:.3} s neighbors)",
        preds.len(),
        stats.triggered,
        stats.flips,
        stats.wall.as_secs_f64(),
        stats.scoring.as_secs_f64(),
        stats.neighbor_search.as_secs_f64()
    );
    println!("dump written to {}", out.display());
    Ok(())
}

fn parse_bias_spec(spec: &str) -> Result<BiasInjection, AppError> {
    let (pa, prob) = spec
        .split_once(':')
        .ok_or_else(|| AppError::usage(format!("bias spec `{spec}` must be PA:PROB")))?;
    let pa_value: u8 = pa
        .parse()
        .map_err(|_| AppError::usage(format!("bias spec `{spec}`: PA must be 0 or 1")))?;
    let flip_probability: f64 = prob
        .parse()
        .map_err(|_| AppError::usage(format!("bias spec `{spec}`: PROB must be a number")))?;
    Ok(BiasInjection {
        pa_value,
        flip_probability,
    })
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig, AppError> {
    let mut cfg = ExperimentConfig::new(&args.data.schema, &args.data.data);
    cfg.delimiter = delimiter_byte(args.data.delimiter)?;
    cfg.seed = args.seed;
    cfg.folds = args.folds;
    if !args.t.is_empty() {
        cfg.sweep = args.t.clone();
    }
    cfg.aggregation_weight = args.weight;
    cfg.forest = args.forest.to_config();
    cfg.pools = if args.pool_external.is_empty() {
        PoolConfig::Native {
            size: args.pool_size,
        }
    } else {
        let (unprivileged, privileged) = external_pool_paths(&args.pool_external)?;
        PoolConfig::External {
            unprivileged,
            privileged,
        }
    };
    if let Some(spec) = &args.inject_bias {
        cfg.bias_injection = Some(parse_bias_spec(spec)?);
    }
    cfg.validate()?;
    Ok(cfg)
}
