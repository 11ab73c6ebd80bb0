
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trafo::forest::{fit_forest, ForestConfig, SampleMode, WeightMode};
use trafo::inference::{
    independence_lr_test, model_based_bootstrap, prediction_interval, variable_importance, ImportanceRows,
    Permutation,
};
use trafo::simbench::{
    generate_n, run_benchmark, summarize, BenchmarkConfig, BenchmarkRecord, DgpFamily, DgpSpec, Dim, Effect, Method,
};
use trafo::{grow_tree, BaseDistribution, Dataset, Family, Model, SupportInterval, TreeConfig};

use trafo_cli::doc::{parse_split_mode, LoadedModel, ModelDocument};
use trafo_cli::error::CliError;
use trafo_cli::table::{fmt_bound, write_table, Table};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "trafo", version, about = "Transformation trees and forests for conditional distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a transformation tree or forest and write a model document.
    Fit {
        #[command(flatten)]
        fit: FitArgs,
        /// Model document to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict quantiles, intervals and densities for new rows.
    Predict(PredictArgs),
    /// Permutation variable importance of a forest.
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate on all learning rows instead of out-of-bag rows.
        #[arg(long)]
        all_rows: bool,
        /// Use the identity permutation (all importances are zero).
        #[arg(long)]
        identity: bool,
    },
    /// Bootstrap likelihood-ratio test of independence.
    Lrtest {
        #[command(flatten)]
        fit: FitArgs,
        /// Bootstrap replications.
        #[arg(long = "K", alias = "k", default_value_t = 99)]
        k: usize,
    },
    /// Model-based bootstrap: refit forests on responses sampled from the model.
    Bootstrap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "K", alias = "k", default_value_t = 1)]
        k: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving one model document per replication.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Draw a sample from a simulation design.
    Simulate {
        #[arg(long, default_value = "tree")]
        dgp: String,
        #[arg(long, default_value = "h2c")]
        effect: String,
        #[arg(long, default_value = "low")]
        dim: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run methods on replicated simulation designs.
    Benchmark(BenchArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Delimited input with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Comma-separated names of categorical predictors.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// Comma-separated names of ordinal predictors.
    #[arg(long, value_delimiter = ',')]
    ordinal: Vec<String>,
    /// Bernstein polynomial order M.
    #[arg(long, default_value_t = 5)]
    order: usize,
    /// normal, logistic or minextreme
    #[arg(long, default_value = "normal")]
    dist: String,
    /// tree or forest
    #[arg(long, default_value = "forest")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Support of the transformation as LO,HI.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    support: Option<Vec<f64>>,
    #[arg(long, default_value_t = 25)]
    minsplit: usize,
    #[arg(long)]
    minbucket: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// score, likelihood or mse
    #[arg(long, default_value = "score")]
    split: String,
    #[arg(long, default_value_t = 0.632)]
    subsample: f64,
    /// Stop growing forest trees on non-significant nodes as well.
    #[arg(long)]
    stop_on_alpha: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Comma-separated probabilities.
    #[arg(long, value_delimiter = ',')]
    quantiles: Vec<f64>,
    /// Prediction interval level alpha.
    #[arg(long)]
    interval: Option<f64>,
    /// Comma-separated response values at which to report the log-density.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    density_at: Vec<f64>,
    /// Rows are the learning rows; use out-of-bag forest weights.
    #[arg(long)]
    oob: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "tree")]
    dgp: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "h2c")]
    effect: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "low")]
    dim: Vec<String>,
    /// Learning sample size; defaults to the design's standard size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 250)]
    n_test: usize,
    #[arg(long, default_value_t = 2)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "ttree1,tforest1")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn seed_or_default(seed: Option<u64>) -> u64 {
    let s = seed.unwrap_or(DEFAULT_SEED);
    eprintln!("seed: {s}");
    s
}

fn delimiter(c: char) -> Result<u8, CliError> {
    u8::try_from(c).map_err(|_| CliError::Usage(format!("delimiter `{c}` must be a single-byte character")))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { fit, out } => cmd_fit(&fit, &out),
        Command::Predict(args) => cmd_predict(&args),
        Command::Importance { model, seed, all_rows, identity } => cmd_importance(&model, seed, all_rows, identity),
        Command::Lrtest { fit, k } => cmd_lrtest(&fit, k),
        Command::Bootstrap { model, k, seed, out_dir } => cmd_bootstrap(&model, k, seed, &out_dir),
        Command::Simulate { dgp, effect, dim, n, seed, out } => cmd_simulate(&dgp, &effect, &dim, n, seed, &out),
        Command::Benchmark(args) => cmd_benchmark(&args),
    }
}

struct Prepared {
    data: Dataset,
    family: Family,
    tree: TreeConfig,
    forest: ForestConfig,
    is_forest: bool,
}

fn prepare_fit(args: &FitArgs) -> Result<Prepared, CliError> {
    let is_forest = match args.mode.as_str() {
        "tree" => false,
        "forest" => true,
        m => return Err(CliError::Usage(format!("unknown mode `{m}`; expected tree or forest"))),
    };
    let dist = BaseDistribution::from_name(&args.dist)
        .ok_or_else(|| CliError::Usage(format!("unknown distribution `{}`; expected normal, logistic or minextreme", args.dist)))?;
    if args.order == 0 {
        return Err(CliError::Usage("--order must be at least 1".into()));
    }
    let table = Table::read(&args.data, delimiter(args.delimiter)?)?;
    let data = table.dataset(&args.categorical, &args.ordinal)?;
    let family = match &args.support {
        Some(s) => {
            let support = SupportInterval::new(s[0], s[1]).map_err(|e| CliError::Usage(format!("--support: {e}")))?;
            Family::new(args.order, support, dist)
        }
        None => Family::for_responses(args.order, data.responses(), dist),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut tree = TreeConfig::with_minsplit(args.minsplit);
    if let Some(b) = args.minbucket {
        tree.minbucket = b;
    }
    tree.alpha = args.alpha;
    tree.max_depth = args.max_depth;
    tree.split_mode = parse_split_mode(&args.split)?;
    tree.stop_on_alpha = !is_forest || args.stop_on_alpha;
    if !is_forest {
        tree.mtry = args.mtry;
    }
    tree.validate(family.dim()).map_err(|e| CliError::Usage(e.to_string()))?;
    let forest = ForestConfig {
        n_trees: args.trees,
        subsample_fraction: args.subsample,
        mtry: args.mtry,
        tree,
        seed: seed_or_default(args.seed),
    };
    forest.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Prepared { data, family, tree, forest, is_forest })
}

fn cmd_fit(args: &FitArgs, out: &Path) -> Result<(), CliError> {
    let p = prepare_fit(args)?;
    let start = Instant::now();
    let (doc, ll, n_trees) = if p.is_forest {
        let forest = fit_forest(&p.data, &p.family, &p.forest).map_err(CliError::runtime)?;
        let ll = forest.log_likelihood(SampleMode::InBag).map_err(CliError::runtime)?;
        (ModelDocument::from_forest(&forest), ll, forest.trees().len())
    } else {
        let rows: Vec<usize> = (0..p.data.n()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(p.forest.seed);
        let tree = grow_tree(&p.data, &p.family, &rows, &p.tree, &mut rng).map_err(CliError::runtime)?;
        let mut ll = 0.0;
        for (i, r) in p.data.responses().iter().enumerate() {
            ll += tree.predict_model(&p.data.row(i)).log_likelihood(r).map_err(CliError::runtime)?;
        }
        (ModelDocument::from_tree(&tree, &p.data, &p.tree, p.forest.seed), ll, 1)
    };
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    doc.save(out)?;
    let mut so = io::stdout().lock();
    writeln!(so, "N: {}", p.data.n()).map_err(CliError::io)?;
    writeln!(so, "J: {}", p.data.n_columns()).map_err(CliError::io)?;
    writeln!(so, "log_likelihood: {ll}").map_err(CliError::io)?;
    writeln!(so, "trees: {n_trees}").map_err(CliError::io)?;
    writeln!(so, "wall_ms: {elapsed:.1}").map_err(CliError::io)?;
    Ok(())
}

fn predict_models(model: &LoadedModel, rows: &[Vec<f64>], oob: bool) -> Result<Vec<Model>, CliError> {
    match model {
        LoadedModel::Tree(tree) => {
            if oob {
                return Err(CliError::Usage("--oob needs a forest model".into()));
            }
            Ok(rows.iter().map(|x| tree.predict_model(x)).collect())
        }
        LoadedModel::Forest(forest) => {
            if oob {
                if rows.len() != forest.data().n() {
                    return Err(CliError::Usage(format!(
                        "--oob expects the {} learning rows, got {}",
                        forest.data().n(),
                        rows.len()
                    )));
                }
                rows.iter()
                    .enumerate()
                    .map(|(i, x)| forest.predict_params(x, WeightMode::OutOfBag(i)).map_err(|e| CliError::Runtime(format!("row {}: {e}", i + 1))))
                    .collect()
            } else {
                forest.predict_many(rows).map_err(CliError::runtime)
            }
        }
    }
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let doc = ModelDocument::load(&args.model)?;
    let model = doc.load_model()?;
    let table = Table::read(&args.data, delimiter(args.delimiter)?)?;
    let rows = table.predictor_rows(&doc.schema()?)?;
    let responses = if table.has_response() { Some(table.responses()?) } else { None };
    for &p in &args.quantiles {
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::Usage(format!("quantile probability {p} outside (0, 1)")));
        }
    }
    let models = predict_models(&model, &rows, args.oob)?;

    let mut header = vec!["row".to_string()];
    header.extend(args.quantiles.iter().map(|p| format!("q_{p}")));
    if args.interval.is_some() {
        header.extend(["pi_lower", "pi_upper", "pi_clamped"].map(String::from));
    }
    header.extend(args.density_at.iter().map(|v| format!("logdens_{v}")));
    if responses.is_some() {
        header.push("log_lik".into());
    }
    let mut records = Vec::with_capacity(models.len());
    for (i, m) in models.iter().enumerate() {
        let mut r = vec![(i + 1).to_string()];
        for &p in &args.quantiles {
            r.push(m.quantile(p).map_err(CliError::runtime)?.to_string());
        }
        if let Some(alpha) = args.interval {
            let pi = prediction_interval(m, alpha).map_err(|e| CliError::Usage(e.to_string()))?;
            r.extend([pi.lower.to_string(), pi.upper.to_string(), pi.clamped.to_string()]);
        }
        for &v in &args.density_at {
            r.push(m.log_density(v).to_string());
        }
        if let Some(resp) = &responses {
            r.push(m.log_likelihood(&resp[i]).map_or(f64::NEG_INFINITY, |v| v).to_string());
        }
        records.push(r);
    }
    write_table(output(&args.out)?, &header, records)
}

fn load_forest(path: &Path) -> Result<trafo::Forest, CliError> {
    match ModelDocument::load(path)?.load_model()? {
        LoadedModel::Forest(f) => Ok(f),
        LoadedModel::Tree(_) => Err(CliError::Usage("this command needs a forest model".into())),
    }
}

fn cmd_importance(model: &Path, seed: Option<u64>, all_rows: bool, identity: bool) -> Result<(), CliError> {
    let forest = load_forest(model)?;
    let seed = seed_or_default(seed);
    let rows = if all_rows { ImportanceRows::All } else { ImportanceRows::OutOfBag };
    let perm = if identity { Permutation::Identity } else { Permutation::Random };
    let report = variable_importance(&forest, seed, rows, perm);
    let header = ["variable", "importance"].map(String::from);
    let records = forest
        .data()
        .columns()
        .iter()
        .zip(&report.importance)
        .map(|(c, v)| vec![c.name.clone(), v.to_string()]);
    write_table(io::stdout().lock(), &header, records)
}

fn cmd_lrtest(args: &FitArgs, k: usize) -> Result<(), CliError> {
    let p = prepare_fit(args)?;
    let test = independence_lr_test(&p.data, &p.family, &p.forest, k, p.forest.seed).map_err(|e| match e {
        trafo::inference::InferenceError::TooFewReplications { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    })?;
    let header = ["log_lr", "p_value", "K"].map(String::from);
    write_table(io::stdout().lock(), &header, [vec![test.log_lr.to_string(), test.p_value.to_string(), k.to_string()]])
}

fn cmd_bootstrap(model: &Path, k: usize, seed: Option<u64>, out_dir: &Path) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::Usage("--K must be at least 1".into()));
    }
    let forest = load_forest(model)?;
    let seed = seed_or_default(seed);
    let refits = model_based_bootstrap(&forest, k, seed).map_err(CliError::runtime)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", out_dir.display())))?;
    for (i, f) in refits.iter().enumerate() {
        let path = out_dir.join(format!("bootstrap_{}.json", i + 1));
        ModelDocument::from_forest(f).save(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn parse_named<T: std::str::FromStr<Err = trafo::simbench::BenchError>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(|e: trafo::simbench::BenchError| CliError::Usage(e.to_string()))
}

fn cmd_simulate(dgp: &str, effect: &str, dim: &str, n: Option<usize>, seed: Option<u64>, out: &Option<PathBuf>) -> Result<(), CliError> {
    let family: DgpFamily = parse_named(dgp)?;
    let mut spec = DgpSpec::new(family, parse_named::<Effect>(effect)?, parse_named::<Dim>(dim)?);
    spec.seed = seed_or_default(seed);
    let n = n.unwrap_or(spec.n_learn);
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (data, _) = generate_n(&spec, n, &mut rng);
    let mut header: Vec<String> = data.columns().iter().map(|c| c.name.clone()).collect();
    header.push("y".into());
    let records = (0..data.n()).map(|i| {
        let mut r: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        r.push(fmt_bound(data.responses()[i].exact_value().expect("simulated responses are exact")));
        r
    });
    write_table(output(out)?, &header, records)
}

fn cmd_benchmark(args: &BenchArgs) -> Result<(), CliError> {
    let methods = args.methods.iter().map(|m| parse_named::<Method>(m)).collect::<Result<Vec<_>, _>>()?;
    let seed = seed_or_default(args.seed);
    let mut specs = Vec::new();
    for d in &args.dgp {
        for e in &args.effect {
            for m in &args.dim {
                let mut s = DgpSpec::new(parse_named(d)?, parse_named(e)?, parse_named(m)?);
                if let Some(n) = args.n {
                    s.n_learn = n;
                }
                s.n_test = args.n_test;
                s.seed = seed;
                specs.push(s);
            }
        }
    }
    if args.reps == 0 || args.trees == 0 {
        return Err(CliError::Usage("--reps and --trees must be positive".into()));
    }
    let config = BenchmarkConfig {
        reps: args.reps,
        seed,
        forest: ForestConfig { n_trees: args.trees, ..ForestConfig::default() },
        ..BenchmarkConfig::default()
    };
    let records = run_benchmark(&specs, &methods, &config);
    for r in records.iter().filter(|r| r.error.is_some()) {
        eprintln!("{} {} {} {} rep {}: {}", r.dgp, r.effect, r.dim, r.method, r.rep, r.error.as_deref().unwrap_or(""));
    }
    let header = BenchmarkRecord::HEADER.map(String::from);
    write_table(output(&args.out)?, &header, records.iter().map(|r| r.fields().to_vec()))?;
    eprintln!("median nll_diff q10_risk abs_err q90_risk");
    for (d, e, m, method, med) in summarize(&records) {
        eprintln!("{d} {e} {m} {method}: {} {} {} {}", med[0], med[1], med[2], med[3]);
    }
    Ok(())
}
