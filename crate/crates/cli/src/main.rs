//! `pbdn` — train, evaluate, and inspect parsimonious Bayesian deep networks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pbdn_core::dataset::{
    apply_standardization, load_dense, load_sparse, make_two_spirals, standardize,
};
use pbdn_core::map::run_map;
use pbdn_core::stack::GrowOptions;
use pbdn_core::{
    grow, Concatenation, Criterion, Dataset, EngineConfig, GibbsConfig, IshmHyperparams,
    IshmModel, MapConfig, PbdnStack, RngStream,
};

#[derive(Parser)]
#[command(name = "pbdn", version, about = "Parsimonious Bayesian deep networks")]
struct Cli {
    /// Worker threads (training engines currently run single-threaded).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a stack and write the serialized model.
    Train(TrainArgs),
    /// Evaluate a trained model on a dataset.
    Eval(EvalArgs),
    /// L2-regularized logistic regression baseline (single frozen hyperplane).
    Baseline(BaselineArgs),
    /// Export a decision-surface grid for a 2-D model.
    Contour(ContourArgs),
    /// Print per-layer widths, weights, and optional subtype prototypes.
    Inspect(InspectArgs),
    /// Generate a synthetic dataset file.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dense,
    Sparse,
}

#[derive(Clone, Copy, ValueEnum)]
enum Inference {
    Gibbs,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Aic,
    AicEps,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Dense)]
    format: Format,
    /// Column holding the label in dense files (0-based).
    #[arg(long, default_value_t = 0)]
    label_column: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Inference::Sgd)]
    inference: Inference,
    #[arg(long, value_enum, default_value_t = CriterionArg::Aic)]
    criterion: CriterionArg,
    /// Threshold fraction for the sparsity-aware criterion.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Hyperplane truncation level per iSHM.
    #[arg(long, default_value_t = 20)]
    kmax: usize,
    #[arg(long, default_value_t = 10)]
    max_layers: usize,
    /// Gibbs sweeps per iSHM.
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    /// SGD minibatches per iSHM.
    #[arg(long, default_value_t = 4000)]
    batches: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    standardize: bool,
    /// Checkpoint period for hyperplane pruning (iterations).
    #[arg(long)]
    prune_every: Option<usize>,
    /// Base learning rate for the SGD engine (per-layer rate is base/(4+T)).
    #[arg(long, default_value_t = 0.05)]
    base_lr: f64,
    /// Stddev of the SGD engine's symmetry-breaking initialization.
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
    #[arg(long)]
    out: PathBuf,
    /// Emit per-iteration trace records on stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Held-out data; defaults to evaluating on the training data.
    #[arg(long)]
    test: Option<PathBuf>,
    /// L2 penalty on the coefficients.
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
    #[arg(long, default_value_t = 4000)]
    batches: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    standardize: bool,
}

#[derive(Args)]
struct ContourArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    xmin: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    xmax: f64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    ymin: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    ymax: f64,
    #[arg(long, default_value_t = 100)]
    grid_n: usize,
    /// Probability level for the polytope violation counts.
    #[arg(long, default_value_t = 0.5)]
    p0: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Dense)]
    format: Format,
    #[arg(long, default_value_t = 0)]
    label_column: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    TwoSpirals,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::TwoSpirals)]
    kind: SynthKind,
    /// Points per class.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 1.5)]
    turns: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct EvalReport {
    error_rate: f64,
    mean_log_likelihood: f64,
    complexity: f64,
    depth: usize,
    layer_widths: Vec<usize>,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct TrainReport {
    depth: usize,
    layer_widths: Vec<usize>,
    criterion_trace: Vec<(usize, f64)>,
    complexity: f64,
    wall_time_s: f64,
    warnings: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads != 1 {
        eprintln!("note: training engines run single-threaded; --threads ignored");
    }
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Baseline(args) => cmd_baseline(&args),
        Command::Contour(args) => cmd_contour(&args),
        Command::Inspect(args) => cmd_inspect(&args),
        Command::Synth(args) => cmd_synth(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load(args: &DataArgs, dim_hint: Option<usize>) -> pbdn_core::Result<Dataset> {
    load_path(&args.data, args.format, args.label_column, dim_hint)
}

fn load_path(
    path: &Path,
    format: Format,
    label_column: usize,
    dim_hint: Option<usize>,
) -> pbdn_core::Result<Dataset> {
    match format {
        Format::Dense => load_dense(path, label_column, None),
        Format::Sparse => load_sparse(path, dim_hint),
    }
}

fn cmd_train(args: &TrainArgs) -> pbdn_core::Result<()> {
    let start = Instant::now();
    let raw = load(&args.data, None)?;
    let data = if args.standardize { standardize(&raw)? } else { raw };

    let (hp, engine) = match args.inference {
        Inference::Gibbs => (
            IshmHyperparams::gibbs_defaults(args.kmax),
            EngineConfig::Gibbs(GibbsConfig {
                iterations: args.iters,
                k_max: args.kmax,
                seed: args.seed,
                verbose: args.verbose,
                prune_every: args.prune_every.unwrap_or(200),
                ..GibbsConfig::default()
            }),
        ),
        Inference::Sgd => (
            IshmHyperparams::map_defaults(args.kmax),
            EngineConfig::Map(MapConfig {
                num_batches: args.batches,
                minibatch_size: args.batch_size,
                k_max: args.kmax,
                seed: args.seed,
                verbose: args.verbose,
                prune_every: args.prune_every.unwrap_or(500),
                base_lr: args.base_lr,
                init_scale: args.init_scale,
                ..MapConfig::default()
            }),
        ),
    };
    let criterion = match args.criterion {
        CriterionArg::Aic => Criterion::Aic,
        CriterionArg::AicEps => Criterion::AicEps(args.epsilon),
    };
    let opts = GrowOptions {
        criterion,
        max_layers: args.max_layers,
        concatenation: Concatenation::Full,
    };
    let mut rng = RngStream::new(args.seed);
    let (stack, warnings) = grow(&data, &hp, &engine, &opts, &mut rng)?;
    std::fs::write(&args.out, stack.to_json()?)?;

    let report = TrainReport {
        depth: stack.selected_depth,
        layer_widths: stack.layer_widths.clone(),
        criterion_trace: stack.criterion_trace.clone(),
        complexity: stack.complexity(),
        wall_time_s: start.elapsed().as_secs_f64(),
        warnings,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!();
    println!("depth          {}", report.depth);
    println!("layer widths   {:?}", report.layer_widths);
    println!("complexity     {:.3}", report.complexity);
    for (t, c) in &report.criterion_trace {
        println!("criterion({t})   {c:.3}");
    }
    println!("wall time      {:.2}s", report.wall_time_s);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn evaluate_stack(stack: &PbdnStack, data: &Dataset, start: Instant) -> pbdn_core::Result<EvalReport> {
    let mut errors = 0usize;
    let mut ll_sum = 0.0;
    for i in 0..data.len() {
        let p = stack.predict(&data.row(i)[1..])?;
        let label = u8::from(p > 0.5);
        if label != data.label(i) {
            errors += 1;
        }
        let p_obs = if data.label(i) == 1 { p } else { 1.0 - p };
        ll_sum += p_obs.max(1e-300).ln();
    }
    Ok(EvalReport {
        error_rate: errors as f64 / data.len() as f64,
        mean_log_likelihood: ll_sum / data.len() as f64,
        complexity: stack.complexity(),
        depth: stack.selected_depth,
        layer_widths: stack.layer_widths.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn print_report(report: &EvalReport) -> pbdn_core::Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    println!();
    println!("error rate        {:.4}", report.error_rate);
    println!("mean log-lik      {:.4}", report.mean_log_likelihood);
    println!("complexity        {:.3}", report.complexity);
    println!("depth             {}", report.depth);
    println!("layer widths      {:?}", report.layer_widths);
    println!("wall time         {:.2}s", report.wall_time_s);
    Ok(())
}

fn load_stack(path: &Path) -> pbdn_core::Result<PbdnStack> {
    PbdnStack::from_json(&std::fs::read_to_string(path)?)
}

fn prepare_eval_data(stack: &PbdnStack, raw: Dataset) -> pbdn_core::Result<Dataset> {
    match &stack.standardization {
        Some(params) => apply_standardization(&raw, params),
        None => Ok(raw),
    }
}

fn cmd_eval(args: &EvalArgs) -> pbdn_core::Result<()> {
    let start = Instant::now();
    let stack = load_stack(&args.model)?;
    let raw = load(&args.data, Some(stack.covariate_dim()))?;
    let data = prepare_eval_data(&stack, raw)?;
    let report = evaluate_stack(&stack, &data, start)?;
    print_report(&report)
}

fn cmd_baseline(args: &BaselineArgs) -> pbdn_core::Result<()> {
    let start = Instant::now();
    let raw = load(&args.data, None)?;
    let data = if args.standardize { standardize(&raw)? } else { raw };
    let hp = IshmHyperparams::map_defaults(1);
    let cfg = MapConfig {
        minibatch_size: args.batch_size,
        num_batches: args.batches,
        k_max: 1,
        seed: args.seed,
        freeze_r: true,
        prune_every: usize::MAX, // single hyperplane, never pruned
        l2: args.l2,
        ..MapConfig::default()
    };
    let mut rng = RngStream::new(args.seed);
    let result = run_map(&data, &hp, &cfg, &mut rng)?;
    let model = result.model;

    let test = match &args.test {
        Some(path) => {
            let raw = load_path(path, args.data.format, args.data.label_column, None)?;
            match &data.standardization {
                Some(params) => apply_standardization(&raw, params)?,
                None => raw,
            }
        }
        None => data,
    };
    let mut errors = 0usize;
    let mut ll_sum = 0.0;
    for i in 0..test.len() {
        let p = model.prob_one(test.row(i))?;
        if u8::from(p > 0.5) != test.label(i) {
            errors += 1;
        }
        let p_obs = if test.label(i) == 1 { p } else { 1.0 - p };
        ll_sum += p_obs.max(1e-300).ln();
    }
    let report = EvalReport {
        error_rate: errors as f64 / test.len() as f64,
        mean_log_likelihood: ll_sum / test.len() as f64,
        // a single logistic hyperplane costs one by definition
        complexity: 1.0,
        depth: 1,
        layer_widths: vec![model.input_dim - 1, 1],
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    print_report(&report)
}

fn cmd_contour(args: &ContourArgs) -> pbdn_core::Result<()> {
    let stack = load_stack(&args.model)?;
    if stack.covariate_dim() != 2 {
        return Err(pbdn_core::Error::DimensionMismatch {
            expected: 2,
            got: stack.covariate_dim(),
        });
    }
    assert!(args.grid_n >= 2, "need at least a 2 x 2 grid");
    let depth = stack.selected_depth.max(1);
    let pair = &stack.pairs[depth - 1];
    let mut out = String::from(
        "x1,x2,prob_one_pos,prob_one_neg,pair_prob,violated_count_pos,violated_count_neg\n",
    );
    for iy in 0..args.grid_n {
        for ix in 0..args.grid_n {
            let x1 = args.xmin + (args.xmax - args.xmin) * ix as f64 / (args.grid_n - 1) as f64;
            let x2 = args.ymin + (args.ymax - args.ymin) * iy as f64 / (args.grid_n - 1) as f64;
            let mut raw = vec![x1, x2];
            if let Some(params) = &stack.standardization {
                for (c, v) in raw.iter_mut().enumerate() {
                    *v = (*v - params.mean[c + 1]) / params.stddev[c + 1];
                }
            }
            let features = stack.features_at_depth(&raw, depth)?;
            let p_pos = pair.model_pos.prob_one(&features)?;
            let p_neg = pair.model_neg.prob_one(&features)?;
            let pair_p = (p_pos + 1.0 - p_neg) / 2.0;
            let v_pos = pair.model_pos.polytope_margin(&features, args.p0)?;
            let v_neg = pair.model_neg.polytope_margin(&features, args.p0)?;
            out.push_str(&format!(
                "{x1},{x2},{p_pos},{p_neg},{pair_p},{v_pos},{v_neg}\n"
            ));
        }
    }
    std::fs::write(&args.out, out)?;
    Ok(())
}

fn print_model_block(name: &str, model: &IshmModel) {
    println!("  {name}: {} active hyperplanes", model.num_active());
    let mut weights: Vec<f64> = model.hyperplanes.iter().map(|h| h.weight).collect();
    weights.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (k, r) in weights.iter().enumerate() {
        println!("    r[{k}] = {r:.6}");
    }
}

fn cmd_inspect(args: &InspectArgs) -> pbdn_core::Result<()> {
    let stack = load_stack(&args.model)?;
    let data = match &args.data {
        Some(path) => {
            let raw = load_path(path, args.format, args.label_column, Some(stack.covariate_dim()))?;
            Some(prepare_eval_data(&stack, raw)?)
        }
        None => None,
    };
    println!("covariates      {}", stack.covariate_dim());
    println!("selected depth  {}", stack.selected_depth);
    println!("layer widths    {:?}", stack.layer_widths);
    for pair in &stack.pairs {
        let t = pair.layer_index;
        println!("layer {t} (width {}):", pair.width());
        print_model_block("positive-label model", &pair.model_pos);
        print_model_block("negative-label model", &pair.model_neg);
        if let Some(data) = &data {
            // subtype prototypes live in the layer's input space
            let rows: Vec<Vec<f64>> = (0..data.len())
                .map(|i| stack.features_at_depth(&data.row(i)[1..], t).map(|f| f[1..].to_vec()))
                .collect::<pbdn_core::Result<_>>()?;
            let layer_data = Dataset::from_rows(&rows, data.labels())?;
            for (name, model) in [
                ("positive-label", &pair.model_pos),
                ("negative-label", &pair.model_neg),
            ] {
                let (subtypes, omitted) = model.extract_subtypes(&layer_data)?;
                for s in &subtypes {
                    println!(
                        "  {name} subtype {}: mass {:.4}, prototype {:?}",
                        s.hyperplane_index, s.mass, s.prototype
                    );
                }
                if !omitted.is_empty() {
                    println!("  {name}: {} hyperplanes below mass threshold", omitted.len());
                }
            }
        }
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> pbdn_core::Result<()> {
    let mut rng = RngStream::new(args.seed);
    let data = match args.kind {
        SynthKind::TwoSpirals => make_two_spirals(args.n, args.noise, args.turns, &mut rng),
    };
    let mut out = String::from("label,x1,x2\n");
    for i in 0..data.len() {
        let row = data.row(i);
        out.push_str(&format!("{},{},{}\n", data.label(i), row[1], row[2]));
    }
    std::fs::write(&args.out, out)?;
    println!("wrote {} rows to {}", data.len(), args.out.display());
    Ok(())
}
