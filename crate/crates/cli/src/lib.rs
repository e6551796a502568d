//! Experiment harness: resolves a layered configuration (defaults, config
//! file, command-line flags), drives training and periodic evaluation, and
//! writes the run artifacts.
//!
//! Every run produces three files under its output directory:
//!
//! * `config.txt` - the effective configuration, itself loadable via
//!   `--config`;
//! * `metrics.csv` - one row per evaluation point;
//! * `checkpoint.txt` - the final parameters, bit-exact.
//!
//! A run is a pure function of its configuration: rerunning the same
//! `config.txt` reproduces `metrics.csv` except for the `sec_per_iter`
//! timing column, and reproduces `checkpoint.txt` bitwise.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use smaml_core::error::{Error, Result};
use smaml_core::meta::{evaluate, meta_step, EvalReport, MetaConfig, Method, Order};
use smaml_core::model::{Activation, Head, Mlp, ModelConfig, ParamSet};
use smaml_core::rng::{eval_task_seed, train_task_seed};
use smaml_core::stats::median;
use smaml_core::tasks::{
    load_folder_dataset, GaussianFamily, Split, SplitSpec, Task, TaskFamily,
};
use smaml_core::KernelParams;

pub use smaml_core::meta::{Method as CliMethod, Order as CliOrder};

/// Fully merged run settings. Field names match the config-file keys and the
/// command-line flags (kebab-case).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    /// `None` means the method's default order.
    pub order: Option<Order>,
    pub ways: usize,
    pub shots: usize,
    pub query: usize,
    pub inner_steps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub episodes: usize,
    pub eval_every: usize,
    pub eval_tasks: usize,
    pub task_batch: usize,
    pub seed: u64,
    /// Training family: `gaussian`, `gaussian-wide`, `sinusoid`, or
    /// `folder:PATH`.
    pub dataset: String,
    /// Optional `TRAIN:TEST` pair of family specs for cross-family
    /// evaluation; overrides `dataset`.
    pub scenario: Option<String>,
    /// Fraction of folder classes assigned to meta-train.
    pub split: f64,
    /// File listing meta-train class names; overrides `split`.
    pub split_classes: Option<PathBuf>,
    pub kernel_mu: f64,
    pub kernel_lambda: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Smaml,
            order: None,
            ways: 5,
            shots: 1,
            query: 15,
            inner_steps: 5,
            alpha: 0.01,
            beta: 0.001,
            episodes: 2000,
            eval_every: 200,
            eval_tasks: 200,
            // Meta-gradients are summed over the batch, so with the small
            // default beta this is the main lever on meta progress per
            // episode; 32 is calibrated so the default gaussian run clears
            // 90% query accuracy within the default 2000 episodes.
            task_batch: 32,
            seed: 7,
            dataset: "gaussian".into(),
            scenario: None,
            split: 0.5,
            split_classes: None,
            kernel_mu: 0.0,
            kernel_lambda: 1.0,
            hidden: vec![32],
            activation: Activation::Relu,
            out: None,
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| {
        Error::InvalidConfig(format!("could not parse {key} value {value:?}"))
    })
}

fn parse_hidden(value: &str) -> Result<Vec<usize>> {
    let widths: Vec<usize> = value
        .split(',')
        .map(|w| parse_as::<usize>("hidden", w.trim()))
        .collect::<Result<_>>()?;
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "hidden must be a comma-separated list of positive widths, got {value:?}"
        )));
    }
    Ok(widths)
}

impl RunConfig {
    /// Applies one `key = value` setting. Config files and command-line
    /// flags both funnel through here, so they cannot drift apart.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "method" => self.method = value.parse()?,
            "order" => self.order = Some(value.parse()?),
            "ways" => self.ways = parse_as(key, value)?,
            "shots" => self.shots = parse_as(key, value)?,
            "query" => self.query = parse_as(key, value)?,
            "inner-steps" => self.inner_steps = parse_as(key, value)?,
            "alpha" => self.alpha = parse_as(key, value)?,
            "beta" => self.beta = parse_as(key, value)?,
            "episodes" => self.episodes = parse_as(key, value)?,
            "eval-every" => self.eval_every = parse_as(key, value)?,
            "eval-tasks" => self.eval_tasks = parse_as(key, value)?,
            "task-batch" => self.task_batch = parse_as(key, value)?,
            "seed" => self.seed = parse_as(key, value)?,
            "dataset" => self.dataset = value.to_string(),
            "scenario" => self.scenario = Some(value.to_string()),
            "split" => self.split = parse_as(key, value)?,
            "split-classes" => self.split_classes = Some(PathBuf::from(value)),
            "kernel-mu" => self.kernel_mu = parse_as(key, value)?,
            "kernel-lambda" => self.kernel_lambda = parse_as(key, value)?,
            "hidden" => self.hidden = parse_hidden(value)?,
            "activation" => self.activation = value.parse()?,
            "out" => self.out = Some(PathBuf::from(value)),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Layers a `key = value` config file over the current settings. Blank
    /// lines and `#` comments are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{}:{}: expected 'key = value', got {raw:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply_kv(key.trim(), value.trim()).map_err(|e| {
                Error::InvalidConfig(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    /// The order actually used: explicit if set, the method default
    /// otherwise.
    pub fn effective_order(&self) -> Order {
        self.order.unwrap_or_else(|| self.method.default_order())
    }

    /// Renders the effective configuration in the config-file syntax, so the
    /// echo written next to a run's results can itself be replayed.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "order = {}", self.effective_order());
        let _ = writeln!(s, "ways = {}", self.ways);
        let _ = writeln!(s, "shots = {}", self.shots);
        let _ = writeln!(s, "query = {}", self.query);
        let _ = writeln!(s, "inner-steps = {}", self.inner_steps);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "episodes = {}", self.episodes);
        let _ = writeln!(s, "eval-every = {}", self.eval_every);
        let _ = writeln!(s, "eval-tasks = {}", self.eval_tasks);
        let _ = writeln!(s, "task-batch = {}", self.task_batch);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "dataset = {}", self.dataset);
        if let Some(scenario) = &self.scenario {
            let _ = writeln!(s, "scenario = {scenario}");
        }
        let _ = writeln!(s, "split = {}", self.split);
        if let Some(path) = &self.split_classes {
            let _ = writeln!(s, "split-classes = {}", path.display());
        }
        let _ = writeln!(s, "kernel-mu = {}", self.kernel_mu);
        let _ = writeln!(s, "kernel-lambda = {}", self.kernel_lambda);
        let hidden: Vec<String> = self.hidden.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let activation = match self.activation {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        };
        let _ = writeln!(s, "activation = {activation}");
        if let Some(out) = &self.out {
            let _ = writeln!(s, "out = {}", out.display());
        }
        s
    }

    fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval-every must be at least 1".into()));
        }
        if self.eval_tasks < 2 {
            return Err(Error::InvalidConfig(
                "eval-tasks must be at least 2 so confidence intervals exist".into(),
            ));
        }
        if self.shots == 0 || self.query == 0 {
            return Err(Error::InvalidConfig(
                "shots and query must be at least 1".into(),
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden must list at least one positive layer width".into(),
            ));
        }
        Ok(())
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| {
            Error::InvalidConfig("an output directory is required (--out)".into())
        })
    }

    fn to_meta_config(&self) -> Result<MetaConfig> {
        let cfg = MetaConfig {
            method: self.method,
            order: self.effective_order(),
            alpha: self.alpha,
            beta: self.beta,
            inner_steps: self.inner_steps,
            task_batch: self.task_batch,
            seed: self.seed,
            kernel: KernelParams::new(self.kernel_lambda, self.kernel_mu)?,
            graph_budget: smaml_core::DEFAULT_NODE_BUDGET,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which side of a run a family spec is being resolved for; decides the
/// class split used by folder datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FamilyRole {
    Train,
    Eval,
}

fn split_spec(cfg: &RunConfig) -> SplitSpec {
    match &cfg.split_classes {
        Some(path) => SplitSpec::ClassList(path.clone()),
        None => SplitSpec::Fraction(cfg.split),
    }
}

/// Extracts the path from a `folder:PATH` (or `folder=PATH`) family spec.
fn folder_path(spec: &str) -> Option<&str> {
    spec.strip_prefix("folder:")
        .or_else(|| spec.strip_prefix("folder="))
}

fn parse_family(spec: &str, cfg: &RunConfig, role: FamilyRole) -> Result<TaskFamily> {
    match spec {
        "gaussian" => Ok(TaskFamily::Gaussian(GaussianFamily::default())),
        "gaussian-wide" => Ok(TaskFamily::Gaussian(GaussianFamily::wide())),
        "sinusoid" => Ok(TaskFamily::Sinusoid),
        other => {
            if let Some(path) = folder_path(other) {
                let dataset = load_folder_dataset(Path::new(path), &split_spec(cfg))?;
                let split = match role {
                    FamilyRole::Train => Split::MetaTrain,
                    FamilyRole::Eval => Split::MetaTest,
                };
                Ok(TaskFamily::Folder { dataset, split })
            } else {
                Err(Error::InvalidConfig(format!(
                    "unknown dataset '{other}' (expected gaussian, gaussian-wide, \
                     sinusoid, or folder:PATH)"
                )))
            }
        }
    }
}

/// Resolves the training and evaluation families. Without a scenario, both
/// come from `dataset` (folder datasets evaluate on their held-out class
/// split; synthetic families rely on disjoint train/eval seed streams). A
/// scenario `TRAIN:TEST` is split at the first `:` where both sides parse.
fn resolve_families(cfg: &RunConfig) -> Result<(TaskFamily, TaskFamily)> {
    if let Some(scenario) = &cfg.scenario {
        for (idx, _) in scenario.match_indices(':') {
            let (left, right) = (&scenario[..idx], &scenario[idx + 1..]);
            let train = parse_family(left, cfg, FamilyRole::Train);
            let eval = parse_family(right, cfg, FamilyRole::Eval);
            if let (Ok(train), Ok(eval)) = (train, eval) {
                return Ok((train, eval));
            }
        }
        return Err(Error::InvalidConfig(format!(
            "scenario {scenario:?} does not split into TRAIN:TEST family specs"
        )));
    }
    if let Some(path) = folder_path(&cfg.dataset) {
        // Load once; train and eval share the dataset but use disjoint
        // class splits.
        let dataset = load_folder_dataset(Path::new(path), &split_spec(cfg))?;
        return Ok((
            TaskFamily::Folder {
                dataset: dataset.clone(),
                split: Split::MetaTrain,
            },
            TaskFamily::Folder {
                dataset,
                split: Split::MetaTest,
            },
        ));
    }
    let train = parse_family(&cfg.dataset, cfg, FamilyRole::Train)?;
    let eval = parse_family(&cfg.dataset, cfg, FamilyRole::Eval)?;
    Ok((train, eval))
}

fn model_config(cfg: &RunConfig, train: &TaskFamily, eval: &TaskFamily) -> Result<ModelConfig> {
    if train.input_dim() != eval.input_dim()
        || train.is_classification() != eval.is_classification()
    {
        return Err(Error::InvalidConfig(format!(
            "train family '{}' and eval family '{}' are shape-incompatible",
            train.label(),
            eval.label()
        )));
    }
    let classification = train.is_classification();
    if classification && cfg.ways < 2 {
        return Err(Error::InvalidConfig(format!(
            "classification needs ways >= 2, got {}",
            cfg.ways
        )));
    }
    Ok(ModelConfig {
        input_dim: train.input_dim(),
        hidden_dims: cfg.hidden.clone(),
        output_dim: if classification { cfg.ways } else { 1 },
        activation: cfg.activation,
        head: if classification {
            Head::SoftmaxCrossEntropy
        } else {
            Head::MeanSquaredError
        },
    })
}

/// One evaluation row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    /// Mean post-adaptation query loss over the evaluation tasks.
    pub meta_loss: f64,
    /// Mean post-adaptation query accuracy, or the query loss again for
    /// families without an accuracy.
    pub query_acc_mean: f64,
    /// 95% confidence half-width over per-task scores.
    pub query_acc_ci95: Option<f64>,
    /// Mean inner-loop gradient norm per adaptation step.
    pub grad_norms: Vec<f64>,
    /// Running median of wall-clock seconds per meta-iteration.
    pub sec_per_iter: f64,
    pub eval_family: String,
}

impl MetricsRow {
    fn csv_cells(&self) -> Vec<String> {
        let mut cells = vec![
            self.iter.to_string(),
            self.meta_loss.to_string(),
            self.query_acc_mean.to_string(),
            self.query_acc_ci95.map(|v| v.to_string()).unwrap_or_default(),
        ];
        cells.extend(self.grad_norms.iter().map(|v| v.to_string()));
        cells.push(self.sec_per_iter.to_string());
        cells.push(self.eval_family.clone());
        cells
    }
}

/// Column names for a `metrics.csv` with `inner_steps` adaptation steps.
pub fn metrics_columns(inner_steps: usize) -> Vec<String> {
    let mut cols = vec![
        "iter".to_string(),
        "meta_loss".to_string(),
        "query_acc_mean".to_string(),
        "query_acc_ci95".to_string(),
    ];
    cols.extend((1..=inner_steps).map(|k| format!("grad_norm_step_{k}")));
    cols.push("sec_per_iter".to_string());
    cols.push("eval_family".to_string());
    cols
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct RunSummary {
    pub config: RunConfig,
    pub rows: Vec<MetricsRow>,
    pub final_params: ParamSet,
    pub final_report: Option<EvalReport>,
    pub csv_path: PathBuf,
    pub config_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains one method and writes `config.txt`, `metrics.csv`, and
/// `checkpoint.txt` under the configured output directory.
///
/// Training tasks are drawn from the even-parity seed stream and evaluation
/// tasks from the odd-parity stream, so the two can never collide; both are
/// pure functions of the run seed.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out_dir = cfg.out_dir()?.to_path_buf();
    let meta_cfg = cfg.to_meta_config()?;
    let (train_family, eval_family) = resolve_families(cfg)?;
    let model_cfg = model_config(cfg, &train_family, &eval_family)?;
    let model = Mlp::new(model_cfg)?;
    let classification = train_family.is_classification();
    let ways = if classification { cfg.ways } else { 1 };

    let mut params = model.init_params(cfg.seed)?;
    if !cfg.method.uses_stiefel() {
        // Plain methods treat every parameter as unconstrained; drop the
        // manifold tags so the stored set reflects how it was trained.
        params = params.retagged_euclidean();
    }

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let config_path = out_dir.join("config.txt");
    write_file(&config_path, &cfg.echo())?;

    let csv_path = out_dir.join("metrics.csv");
    let mut csv = String::new();
    let _ = writeln!(csv, "{}", metrics_columns(cfg.inner_steps).join(","));

    let eval_label = eval_family.label();
    let mut durations: Vec<f64> = Vec::with_capacity(cfg.episodes);
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut final_report = None;
    let mut train_task_index: u64 = 0;
    let mut eval_task_index: u64 = 0;

    for iter in 1..=cfg.episodes {
        let mut batch = Vec::with_capacity(cfg.task_batch);
        for _ in 0..cfg.task_batch {
            let seed = train_task_seed(cfg.seed, train_task_index);
            train_task_index += 1;
            batch.push(train_family.sample(ways, cfg.shots, cfg.query, seed)?);
        }
        let started = Instant::now();
        params = meta_step(&model, &params, &batch, &meta_cfg)?;
        durations.push(started.elapsed().as_secs_f64());

        if iter % cfg.eval_every == 0 {
            let mut eval_batch: Vec<Task> = Vec::with_capacity(cfg.eval_tasks);
            for _ in 0..cfg.eval_tasks {
                let seed = eval_task_seed(cfg.seed, eval_task_index);
                eval_task_index += 1;
                eval_batch.push(eval_family.sample(ways, cfg.shots, cfg.query, seed)?);
            }
            let report = evaluate(&model, &params, &eval_batch, &meta_cfg)?;
            let row = MetricsRow {
                iter,
                meta_loss: report.mean_query_loss,
                query_acc_mean: report.mean_accuracy.unwrap_or(report.mean_query_loss),
                query_acc_ci95: report.ci95,
                grad_norms: report.mean_grad_norms.clone(),
                sec_per_iter: median(&durations).expect("at least one iteration has run"),
                eval_family: eval_label.clone(),
            };
            println!(
                "[{}] iter {}/{} meta_loss {:.4} score {:.4} +/- {} sec/iter {:.5}",
                cfg.method,
                iter,
                cfg.episodes,
                row.meta_loss,
                row.query_acc_mean,
                row.query_acc_ci95
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
                row.sec_per_iter
            );
            let _ = writeln!(csv, "{}", row.csv_cells().join(","));
            rows.push(row);
            final_report = Some(report);
        }
    }

    write_file(&csv_path, &csv)?;
    let checkpoint_path = out_dir.join("checkpoint.txt");
    params.save_checkpoint(&checkpoint_path)?;

    Ok(RunSummary {
        config: cfg.clone(),
        rows,
        final_params: params,
        final_report,
        csv_path,
        config_path,
        checkpoint_path,
    })
}

/// Result of running several methods under one configuration.
#[derive(Debug)]
pub struct CompareSummary {
    pub runs: Vec<(Method, RunSummary)>,
    pub csv_path: PathBuf,
    /// Final-row `sec_per_iter` ratio smaml / maml, when both methods ran.
    pub sec_per_iter_ratio: Option<f64>,
}

/// Trains each method on *identical* task sequences (same seed, same
/// derivation) and merges their metrics into one `comparison.csv` with
/// method-prefixed column blocks. Each method also keeps its full per-run
/// artifacts in an `out/<method>/` subdirectory.
pub fn compare_methods(cfg: &RunConfig, methods: &[Method]) -> Result<CompareSummary> {
    if methods.len() < 2 {
        return Err(Error::InvalidConfig(
            "compare needs at least two methods".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for m in methods {
        if !seen.insert(m.name()) {
            return Err(Error::InvalidConfig(format!(
                "method {m} listed more than once"
            )));
        }
    }
    let out_root = cfg.out_dir()?.to_path_buf();
    let mut runs = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut sub = cfg.clone();
        sub.method = method;
        // An explicit order applies to every method; otherwise each method
        // runs at its own default.
        sub.out = Some(out_root.join(method.name()));
        let summary = run_experiment(&sub)?;
        runs.push((method, summary));
    }

    // All runs share eval points and families by construction.
    let n_rows = runs[0].1.rows.len();
    let mut header: Vec<String> = vec!["iter".into()];
    for (method, _) in &runs {
        for col in metrics_columns(cfg.inner_steps) {
            if col == "iter" || col == "eval_family" {
                continue;
            }
            header.push(format!("{}_{col}", method.name()));
        }
    }
    header.push("eval_family".into());
    let mut csv = String::new();
    let _ = writeln!(csv, "{}", header.join(","));
    for i in 0..n_rows {
        let mut cells = vec![runs[0].1.rows[i].iter.to_string()];
        for (_, summary) in &runs {
            let row = &summary.rows[i];
            let mut row_cells = row.csv_cells();
            row_cells.remove(0); // iter
            row_cells.pop(); // eval_family
            cells.extend(row_cells);
        }
        cells.push(runs[0].1.rows[i].eval_family.clone());
        let _ = writeln!(csv, "{}", cells.join(","));
    }
    std::fs::create_dir_all(&out_root).map_err(|e| Error::io(&out_root, e))?;
    let csv_path = out_root.join("comparison.csv");
    write_file(&csv_path, &csv)?;

    let final_sec = |m: Method| -> Option<f64> {
        runs.iter()
            .find(|(method, _)| *method == m)
            .and_then(|(_, s)| s.rows.last())
            .map(|r| r.sec_per_iter)
    };
    let sec_per_iter_ratio = match (final_sec(Method::Smaml), final_sec(Method::Maml)) {
        (Some(s), Some(m)) if m > 0.0 => Some(s / m),
        _ => None,
    };

    Ok(CompareSummary {
        runs,
        csv_path,
        sec_per_iter_ratio,
    })
}

/// Human-readable closing summary for a comparison run.
pub fn render_comparison(summary: &CompareSummary) -> String {
    let mut s = String::new();
    for (method, run) in &summary.runs {
        if let Some(row) = run.rows.last() {
            let ci = row
                .query_acc_ci95
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "n/a".into());
            let norms: Vec<String> =
                row.grad_norms.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(
                s,
                "{method}: final score {:.4} +/- {ci}, meta_loss {:.4}, \
                 inner grad norms [{}], median sec/iter {:.5}",
                row.query_acc_mean,
                row.meta_loss,
                norms.join(", "),
                row.sec_per_iter
            );
        }
    }
    if let Some(ratio) = summary.sec_per_iter_ratio {
        let _ = writeln!(s, "sec/iter ratio smaml/maml: {ratio:.3}");
    }
    s
}
