//! `milc` command-line entry point.

mod args;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::{json, Map, Value};

use args::{
    BoundsCurveCmd, Cli, Command, DatagenCmd, EvalCmd, GaussBoundCmd, GaussMiCmd, ModelArgs,
    Oracle, SplitArg, SweepCmd, SweepParam, TrainArgs, TrainCmd,
};
use milc::bounds::{self, BoundPoint};
use milc::data::{self, Dataset, DatasetFile, DatasetHeader};
use milc::gauss::{self, GaussBinaryModel};
use milc::info::{convert, LogBase};
use milc::losses::{LossConfig, LossKind};
use milc::nn;
use milc::train::{self, EpochMetrics, Split, TrainConfig, TrainReport};
use milc::{Error, Result};

const SEED_ENV: &str = "MILC_SEED";
const MNIST_ENV: &str = "MILC_MNIST_DIR";

/// Result of one subcommand: files written and headline numbers.
#[derive(Default)]
struct Summary {
    outputs: Vec<String>,
    metrics: Map<String, Value>,
    wrote_stdout: bool,
}

impl Summary {
    fn metric(&mut self, key: &str, value: impl Into<Value>) {
        self.metrics.insert(key.to_owned(), value.into());
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (name, started) = (subcommand_name(&cli.command), Instant::now());
    let result = match cli.command {
        Command::Train(cmd) => run_train(cmd),
        Command::Eval(cmd) => run_eval(cmd),
        Command::BoundsCurve(cmd) => run_bounds_curve(cmd),
        Command::GaussMi(cmd) => run_gauss_mi(cmd),
        Command::GaussBound(cmd) => run_gauss_bound(cmd),
        Command::Datagen(cmd) => run_datagen(cmd),
        Command::Sweep(cmd) => run_sweep(cmd),
    };
    match result {
        Ok(summary) => {
            let doc = json!({
                "subcommand": name,
                "elapsed_seconds": started.elapsed().as_secs_f64(),
                "outputs": summary.outputs,
                "headline_metrics": summary.metrics,
            });
            if summary.wrote_stdout {
                eprintln!("{doc}");
            } else {
                println!("{doc}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("milc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) => 1,
        Error::Numeric(_) => 2,
        Error::Format(_) | Error::Io(_) => 3,
    }
}

fn subcommand_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::BoundsCurve(_) => "bounds-curve",
        Command::GaussMi(_) => "gauss-mi",
        Command::GaussBound(_) => "gauss-bound",
        Command::Datagen(_) => "datagen",
        Command::Sweep(_) => "sweep",
    }
}

/// Write `bytes` to `out`, where `-` is stdout.
fn emit(out: &str, bytes: &[u8], summary: &mut Summary) -> Result<()> {
    if out == "-" {
        let mut stdout = io::stdout().lock();
        stdout.write_all(bytes)?;
        stdout.flush()?;
        summary.wrote_stdout = true;
        summary.outputs.push("-".into());
    } else {
        let path = Path::new(out);
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
        summary.output(path);
    }
    Ok(())
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                Error::Validation(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))
            })
        }
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn mnist_dir(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(MNIST_ENV).map(PathBuf::from))
}

fn mnist_files(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Defaults, then the config file, then `$MILC_SEED` if the file sets no
/// seed, then flags.
fn build_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut file_seed = false;
    if let Some(path) = &args.config {
        for (key, value) in data::parse_config(
            &fs::read_to_string(path)
                .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?,
        )? {
            file_seed |= key == "seed";
            config.set(&key, &value)?;
        }
    }
    if !file_seed {
        if let Some(seed) = env_seed()? {
            config.seed = seed;
        }
    }
    let dir = match &args.data_dir {
        Some(dir) => {
            config.train_images = None;
            config.train_labels = None;
            config.test_images = None;
            config.test_labels = None;
            Some(dir.clone())
        }
        None => mnist_dir(None),
    };
    if let Some(dir) = dir {
        let (ti, tl) = mnist_files(&dir, Split::Train);
        let (vi, vl) = mnist_files(&dir, Split::Test);
        config.train_images.get_or_insert(ti);
        config.train_labels.get_or_insert(tl);
        config.test_images.get_or_insert(vi);
        config.test_labels.get_or_insert(vl);
    }

    let mut set = |key: &str, value: Option<String>| value.map_or(Ok(()), |v| config.set(key, &v));
    set("loss_kind", args.loss.clone())?;
    set("epsilon", args.epsilon.map(|v| v.to_string()))?;
    set("lambda_ent", args.lambda_ent.map(|v| v.to_string()))?;
    set("learning_rate", args.learning_rate.map(|v| v.to_string()))?;
    set("momentum", args.momentum.map(|v| v.to_string()))?;
    set("batch_size", args.batch_size.map(|v| v.to_string()))?;
    set("epochs", args.epochs.map(|v| v.to_string()))?;
    set("seed", args.seed.map(|v| v.to_string()))?;
    set("layer_sizes", args.layers.clone())?;
    set("init", args.init.clone())?;
    set("marginal_scope", args.marginal_scope.clone())?;
    set(
        "checkpoint_every",
        args.checkpoint_every.map(|v| v.to_string()),
    )?;
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    set("train_images", path(&args.train_images))?;
    set("train_labels", path(&args.train_labels))?;
    set("test_images", path(&args.test_images))?;
    set("test_labels", path(&args.test_labels))?;
    config.validate()?;
    Ok(config)
}

fn load_split(
    images: &Option<PathBuf>,
    labels: &Option<PathBuf>,
    what: &str,
    limit: Option<usize>,
) -> Result<Dataset> {
    let (Some(images), Some(labels)) = (images, labels) else {
        return Err(Error::Validation(format!(
            "no {what} data: pass --data-dir, set {MNIST_ENV}, or give the {what} image and label files"
        )));
    };
    let ds = Dataset::from_idx(images, labels, 10)?;
    Ok(match limit {
        Some(n) if n < ds.len() => ds.head(n),
        _ => ds,
    })
}

fn load_train_data(config: &TrainConfig, args: &TrainArgs) -> Result<(Dataset, Dataset)> {
    let train_set = load_split(
        &config.train_images,
        &config.train_labels,
        "training",
        args.train_limit,
    )?;
    let test_set = load_split(
        &config.test_images,
        &config.test_labels,
        "test",
        args.test_limit,
    )?;
    Ok((train_set, test_set))
}

fn metrics_bytes(metrics: &[EpochMetrics]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    train::write_metrics_csv(&mut buf, metrics)?;
    Ok(buf)
}

fn report_headlines(report: &TrainReport, summary: &mut Summary) {
    if let Some(acc) = report.final_test_accuracy() {
        summary.metric("final_test_accuracy", acc);
    }
    if let Some((acc, epoch)) = report.best_test_accuracy() {
        summary.metric("best_test_accuracy", acc);
        summary.metric("best_epoch", epoch);
    }
    if let Some(m) = report.metrics.iter().rev().find(|m| m.split == Split::Test) {
        summary.metric("final_test_mi_bits", m.mi_bits);
    }
}

fn train_into(
    mut config: TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    out: &Path,
) -> Result<(TrainReport, Vec<PathBuf>)> {
    fs::create_dir_all(out)?;
    config.checkpoint_dir = Some(out.to_path_buf());
    let report = train::train(&config, train_set, test_set, |_| {})?;
    let csv = out.join("metrics.csv");
    fs::write(&csv, metrics_bytes(&report.metrics)?)?;
    let mut written = vec![csv];
    written.extend(report.checkpoints.iter().cloned());
    Ok((report, written))
}

fn run_train(cmd: TrainCmd) -> Result<Summary> {
    let config = build_train_config(&cmd.train)?;
    let (train_set, test_set) = load_train_data(&config, &cmd.train)?;
    log::info!(
        "training {} on {} samples ({} test), seed {}",
        config.loss_kind,
        train_set.len(),
        test_set.len(),
        config.seed
    );
    let (report, written) = train_into(config, &train_set, &test_set, &cmd.out)?;
    let mut summary = Summary::default();
    written.iter().for_each(|p| summary.output(p));
    report_headlines(&report, &mut summary);
    Ok(summary)
}

fn run_eval(cmd: EvalCmd) -> Result<Summary> {
    let kind: LossKind = cmd.loss.parse()?;
    let loss_config = LossConfig {
        epsilon: cmd.epsilon,
        lambda_ent: cmd.lambda_ent,
        base: LogBase::Nats,
    };
    loss_config.validate()?;
    let checkpoint = nn::load_checkpoint(&cmd.checkpoint)?;
    let split = match cmd.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let (images, labels) = match (cmd.images, cmd.labels) {
        (Some(i), Some(l)) => (Some(i), Some(l)),
        _ => match mnist_dir(cmd.data_dir) {
            Some(dir) => {
                let (i, l) = mnist_files(&dir, split);
                (Some(i), Some(l))
            }
            None => (None, None),
        },
    };
    let dataset = load_split(&images, &labels, split.name(), cmd.limit)?;
    let eval = train::evaluate(&checkpoint.model, &dataset, kind, &loss_config)?;
    let row = EpochMetrics {
        epoch: checkpoint.epoch as usize,
        split,
        error_rate: eval.error_rate,
        loss_nats: eval.loss_nats,
        mi_bits: eval.mi_bits,
        h_y_bits: eval.h_y_bits,
        h_y_given_x_bits: eval.h_y_given_x_bits,
    };
    let mut summary = Summary::default();
    emit(&cmd.out, &metrics_bytes(&[row])?, &mut summary)?;
    summary.metric("accuracy", eval.accuracy());
    summary.metric("mi_bits", eval.mi_bits);
    summary.metric("samples", dataset.len());
    Ok(summary)
}

fn run_bounds_curve(cmd: BoundsCurveCmd) -> Result<Summary> {
    let h = bounds::label_entropy_bits(cmd.classes, cmd.skew)?;
    let grid = if cmd.mi.is_empty() {
        if cmd.points == 0 {
            return Err(Error::Validation("--points must be positive".into()));
        }
        bounds::even_grid(h, cmd.points)
    } else {
        cmd.mi
    };
    let points = bounds::bound_curve(cmd.classes, cmd.skew, &grid)?;
    let mut buf = Vec::new();
    bounds::write_curve_csv(&points, cmd.classic.then_some(cmd.classes), &mut buf)?;
    let mut summary = Summary::default();
    emit(&cmd.out, &buf, &mut summary)?;
    summary.metric("h_y_bits", h);
    summary.metric("rows", points.len());
    if let Some(BoundPoint { lower_bound, .. }) = points.first() {
        summary.metric("max_lower_bound", *lower_bound);
    }
    Ok(summary)
}

fn build_model(args: &ModelArgs) -> Result<GaussBinaryModel> {
    let n = args.mu.len();
    let sigma = match args.sigma.len() {
        1 => {
            let mut s = vec![0.0; n * n];
            (0..n).for_each(|i| s[i * n + i] = args.sigma[0]);
            s
        }
        len if len == n * n => args.sigma.clone(),
        len => {
            return Err(Error::Validation(format!(
                "--sigma needs 1 or {} values for a {n}-dimensional mean, got {len}",
                n * n
            )))
        }
    };
    GaussBinaryModel::new(args.q, args.mu.clone(), sigma)
}

fn model_json(model: &GaussBinaryModel) -> Value {
    let n = model.dim();
    let rows: Vec<&[f64]> = model.sigma().chunks(n).collect();
    json!({ "q": model.q(), "mu": model.mu(), "sigma": rows })
}

fn json_bytes(value: &Value) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    buf.push(b'\n');
    Ok(buf)
}

fn run_gauss_mi(cmd: GaussMiCmd) -> Result<Summary> {
    let model = build_model(&cmd.model)?;
    let (lower, upper) = gauss::closed_form_mi_bounds(&model);
    let oracle = cmd.oracle.unwrap_or(if model.dim() == 1 {
        Oracle::Quadrature
    } else {
        Oracle::Mc
    });
    let (mi, stderr, oracle_name) = match oracle {
        Oracle::Quadrature => {
            let half_width = model.mu()[0].abs() + 10.0 * model.sigma()[0].sqrt();
            (
                gauss::quadrature_mi_1d(&model, half_width, cmd.points)?,
                0.0,
                "quadrature",
            )
        }
        Oracle::Mc => {
            let est = gauss::mc_mi(&model, cmd.samples, resolve_seed(cmd.seed)?)?;
            (est.estimate, est.stderr, "mc")
        }
    };
    let slack = 3.0 * stderr + 1e-9;
    let lower_violated = mi + slack < lower;
    let upper_violated = mi - slack > upper;
    let h_y = model.label_entropy();
    let doc = json!({
        "model": model_json(&model),
        "separation": model.separation(),
        "h_y_nats": h_y,
        "closed_form_lower_nats": lower,
        "closed_form_upper_nats": upper,
        "oracle": oracle_name,
        "mi_nats": mi,
        "mi_bits": convert(mi, LogBase::Nats, LogBase::Bits),
        "stderr_nats": stderr,
        "lower_bound_violated": lower_violated,
        "upper_bound_violated": upper_violated,
        "lower_bound_exceeds_h_y": lower > h_y,
        "discrepancy": lower_violated || upper_violated,
    });
    if lower_violated || upper_violated {
        log::warn!("closed-form bounds [{lower:.6}, {upper:.6}] nats do not bracket the oracle value {mi:.6}");
    }
    let mut summary = Summary::default();
    emit(&cmd.out, &json_bytes(&doc)?, &mut summary)?;
    summary.metric("mi_nats", mi);
    summary.metric("closed_form_lower_nats", lower);
    summary.metric("closed_form_upper_nats", upper);
    summary.metric("discrepancy", lower_violated || upper_violated);
    Ok(summary)
}

fn run_gauss_bound(cmd: GaussBoundCmd) -> Result<Summary> {
    let model = build_model(&cmd.model)?;
    let (_, upper) = gauss::closed_form_mi_bounds(&model);
    let bound = bounds::gauss_error_lower_bound(&model)?;
    let doc = json!({
        "model": model_json(&model),
        "separation": model.separation(),
        "h_y_bits": model.label_entropy() / std::f64::consts::LN_2,
        "mi_upper_nats": upper,
        "mi_upper_bits": convert(upper, LogBase::Nats, LogBase::Bits),
        "p_error_lower_bound": bound,
    });
    let mut summary = Summary::default();
    emit(&cmd.out, &json_bytes(&doc)?, &mut summary)?;
    summary.metric("p_error_lower_bound", bound);
    Ok(summary)
}

fn run_datagen(cmd: DatagenCmd) -> Result<Summary> {
    let model = build_model(&cmd.model)?;
    let seed = resolve_seed(cmd.seed)?;
    let draws = gauss::sample(&model, cmd.count, seed)?;
    let n = model.dim();
    let file = DatasetFile {
        header: DatasetHeader {
            n,
            q: model.q(),
            mu: model.mu().to_vec(),
            sigma: model.sigma().chunks(n).map(<[f64]>::to_vec).collect(),
            seed,
            count: cmd.count,
        },
        features: draws.features,
        labels: draws.labels,
    };
    if let Some(parent) = cmd.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    data::write_dataset_file(&cmd.out, &file)?;
    let negatives = file.labels.iter().filter(|&&y| y < 0).count();
    let mut summary = Summary::default();
    summary.output(&cmd.out);
    summary.metric("count", cmd.count);
    summary.metric("negative_fraction", negatives as f64 / cmd.count as f64);
    Ok(summary)
}

fn run_sweep(cmd: SweepCmd) -> Result<Summary> {
    if cmd.jobs == 0 {
        return Err(Error::Validation("--jobs must be positive".into()));
    }
    let base = build_train_config(&cmd.train)?;
    let key = match cmd.param {
        SweepParam::BatchSize => "batch_size",
        SweepParam::LambdaEnt => "lambda_ent",
    };
    if cmd.param == SweepParam::LambdaEnt && base.loss_kind != LossKind::Mil {
        log::warn!(
            "lambda_ent only affects the mil objective; this sweep trains {}",
            base.loss_kind
        );
    }
    let mut points = Vec::with_capacity(cmd.values.len());
    for value in &cmd.values {
        let mut config = base.clone();
        config.set(key, value)?;
        config.validate()?;
        points.push((value.clone(), config));
    }
    let (train_set, test_set) = load_train_data(&base, &cmd.train)?;
    fs::create_dir_all(&cmd.out)?;

    let run_point =
        |(value, config): &(String, TrainConfig)| -> Result<(TrainReport, Vec<PathBuf>)> {
            log::info!("sweep point {key} = {value}");
            train_into(
                config.clone(),
                &train_set,
                &test_set,
                &cmd.out.join(format!("{key}-{value}")),
            )
        };
    let mut results = Vec::with_capacity(points.len());
    for chunk in points.chunks(cmd.jobs) {
        if cmd.jobs == 1 {
            results.push(run_point(&chunk[0])?);
            continue;
        }
        let batch: Vec<Result<_>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|p| s.spawn(|| run_point(p))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Numeric("sweep worker panicked".into())))
                })
                .collect()
        });
        for r in batch {
            results.push(r?);
        }
    }

    let mut csv =
        format!("{key},final_test_accuracy,best_test_accuracy,best_epoch,final_test_mi_bits\n");
    let mut summary = Summary::default();
    let mut best: Option<(f64, &str)> = None;
    for ((value, _), (report, written)) in points.iter().zip(&results) {
        let final_acc = report.final_test_accuracy().unwrap_or(f64::NAN);
        let (best_acc, best_epoch) = report.best_test_accuracy().unwrap_or((f64::NAN, 0));
        let mi = report
            .metrics
            .iter()
            .rev()
            .find(|m| m.split == Split::Test)
            .map_or(f64::NAN, |m| m.mi_bits);
        csv.push_str(&format!(
            "{value},{final_acc:.6},{best_acc:.6},{best_epoch},{mi:.6}\n"
        ));
        written.iter().for_each(|p| summary.output(p));
        if best.map_or(true, |(b, _)| final_acc > b) {
            best = Some((final_acc, value));
        }
    }
    let table = cmd.out.join("sweep.csv");
    fs::write(&table, csv)?;
    summary.output(&table);
    if let Some((acc, value)) = best {
        summary.metric("best_final_test_accuracy", acc);
        summary.metric(&format!("best_{key}"), value);
    }
    Ok(summary)
}
