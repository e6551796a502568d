//! Meta-learning trainer: inner-loop adaptation, outer meta-updates, and
//! held-out evaluation.
//!
//! Four methods share one code path, differing only in two switches:
//!
//! * whether Stiefel-kind parameters are updated by tangent projection and
//!   QR retraction (`smaml`, `fo-smaml`) or by plain vector steps
//!   (`maml`, `fomaml`), and
//! * whether the meta-gradient differentiates through the unrolled inner
//!   loop (second order) or evaluates the query gradient at the adapted
//!   parameters and applies it at the initialization (first order).
//!
//! On a parameter set whose entries are all Euclidean-kind, the manifold
//! methods reduce *bitwise* to their unconstrained counterparts: both
//! switches collapse to identical arithmetic in identical order. A test
//! below pins that down.
//!
//! Second-order gradients reuse the loss graph twice: the inner gradient is
//! emitted as graph nodes (so the unrolled update chain
//! `theta -> theta_1 -> ... -> theta_K -> query loss` is itself a graph),
//! and a single numeric backward pass over that graph then yields the exact
//! meta-gradient, including the curvature terms a first-order method drops.
//!
//! Per-task work (gradient computation in a meta-step, adaptation during
//! evaluation) is independent and fans out across available threads; the
//! reduction always happens in task order, so results are bitwise identical
//! whatever the thread count.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, DEFAULT_NODE_BUDGET};
use crate::kernel::{proximal_term_nodes, KernelParams};
use crate::matrix::Matrix;
use crate::model::{ParamKind, ParamSet, TaskModel};
use crate::stats::compute_ci95;
use crate::stiefel::{project_tangent, retract_qr, StiefelPoint};
use crate::tasks::Task;

/// Whether the meta-gradient differentiates through the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Order::First => "first",
            Order::Second => "second",
        })
    }
}

impl std::str::FromStr for Order {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Order::First),
            "second" => Ok(Order::Second),
            other => Err(Error::InvalidConfig(format!(
                "unknown order '{other}' (expected first or second)"
            ))),
        }
    }
}

/// Meta-learning method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Unconstrained, differentiates through the inner loop by default.
    Maml,
    /// Unconstrained, first-order by definition.
    FoMaml,
    /// Manifold-aware updates for Stiefel-kind parameters.
    Smaml,
    /// Manifold-aware, first-order by definition.
    FoSmaml,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Maml, Method::FoMaml, Method::Smaml, Method::FoSmaml];

    /// Whether Stiefel-kind entries get projection + retraction updates.
    pub fn uses_stiefel(self) -> bool {
        matches!(self, Method::Smaml | Method::FoSmaml)
    }

    /// The `fo-` variants admit no second-order mode.
    pub fn first_order_only(self) -> bool {
        matches!(self, Method::FoMaml | Method::FoSmaml)
    }

    pub fn default_order(self) -> Order {
        match self {
            // The full methods differentiate through the inner loop unless
            // asked otherwise; the fo- variants exist to name the cheaper
            // approximation explicitly.
            Method::Maml | Method::Smaml => Order::Second,
            Method::FoMaml | Method::FoSmaml => Order::First,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Maml => "maml",
            Method::FoMaml => "fomaml",
            Method::Smaml => "smaml",
            Method::FoSmaml => "fo-smaml",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maml" => Ok(Method::Maml),
            "fomaml" => Ok(Method::FoMaml),
            "smaml" => Ok(Method::Smaml),
            "fo-smaml" => Ok(Method::FoSmaml),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}' (expected maml, fomaml, smaml, or fo-smaml)"
            ))),
        }
    }
}

/// Trainer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub method: Method,
    pub order: Order,
    /// Inner-loop step size.
    pub alpha: f64,
    /// Outer (meta) step size.
    pub beta: f64,
    /// Number of inner adaptation steps K.
    pub inner_steps: usize,
    /// Tasks per meta-update.
    pub task_batch: usize,
    /// Base seed for anything the surrounding loop derives from this config.
    pub seed: u64,
    /// Proximal kernel; `mu = 0` disables the proximal term.
    pub kernel: KernelParams,
    /// Node cap for second-order graphs.
    pub graph_budget: usize,
}

impl MetaConfig {
    /// Defaults with the order the method calls for.
    pub fn for_method(method: Method) -> Self {
        MetaConfig {
            method,
            order: method.default_order(),
            alpha: 0.01,
            beta: 0.001,
            inner_steps: 5,
            task_batch: 4,
            seed: 7,
            kernel: KernelParams::default(),
            graph_budget: DEFAULT_NODE_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha must be finite and > 0, got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if self.task_batch == 0 {
            return Err(Error::InvalidConfig("task_batch must be at least 1".into()));
        }
        if self.graph_budget == 0 {
            return Err(Error::InvalidConfig("graph budget must be at least 1".into()));
        }
        KernelParams::new(self.kernel.lambda, self.kernel.mu)?;
        if self.method.first_order_only() && self.order == Order::Second {
            return Err(Error::InvalidConfig(format!(
                "method {} is first-order by definition; order=second contradicts it",
                self.method
            )));
        }
        Ok(())
    }

    /// Proximal anchor term is only meaningful for manifold methods; plain
    /// methods ignore the kernel entirely.
    fn proximal_active(&self) -> bool {
        self.kernel.proximal_enabled() && self.method.uses_stiefel()
    }
}

/// Per-step diagnostics from one inner-loop adaptation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptTrace {
    /// Support loss *before* each step, length `inner_steps`.
    pub support_losses: Vec<f64>,
    /// Norm of the actually-applied gradient at each step (tangent norm for
    /// manifold updates, Euclidean norm otherwise), in quadrature across
    /// parameter entries.
    pub grad_norms: Vec<f64>,
}

/// One gradient step over every entry: Stiefel-kind entries move by tangent
/// projection and QR retraction when `use_manifold` is set, everything else
/// takes a plain step `value + t * grad`. Returns the updated set and the
/// quadrature norm of the applied (projected) gradient.
fn apply_gradient_step(
    params: &ParamSet,
    grads: &BTreeMap<String, Matrix>,
    t: f64,
    use_manifold: bool,
) -> Result<(ParamSet, f64)> {
    let mut values = BTreeMap::new();
    let mut norm_sq = 0.0;
    for e in params.entries() {
        let g = grads.get(&e.name).ok_or_else(|| {
            Error::InvalidConfig(format!("missing gradient for parameter '{}'", e.name))
        })?;
        let new = if use_manifold && e.kind == ParamKind::Stiefel {
            let x = StiefelPoint::new(e.value.clone())?;
            let z = project_tangent(&x, g)?;
            norm_sq += z.value().frobenius_norm_sq();
            retract_qr(&x, &z, t)?.into_value()
        } else {
            norm_sq += g.frobenius_norm_sq();
            let mut v = e.value.clone();
            v.add_scaled_assign(g, t);
            v
        };
        values.insert(e.name.clone(), new);
    }
    Ok((params.with_values(&values)?, norm_sq.sqrt()))
}

/// Runs K inner-loop steps on the support set and returns the adapted
/// parameters with per-step diagnostics. The input set is untouched; with
/// `inner_steps = 0` the result is a bitwise copy.
pub fn inner_adapt<M: TaskModel>(
    model: &M,
    params: &ParamSet,
    support_x: &Matrix,
    support_y: &crate::model::Targets,
    cfg: &MetaConfig,
) -> Result<(ParamSet, AdaptTrace)> {
    cfg.validate()?;
    let anchor = if cfg.proximal_active() {
        Some(params.clone())
    } else {
        None
    };
    let mut current = params.clone();
    let mut trace = AdaptTrace::default();
    for _ in 0..cfg.inner_steps {
        let prox = anchor.as_ref().map(|a| (a, &cfg.kernel));
        let (loss, grads) = model.loss_and_grads(&current, support_x, support_y, prox)?;
        let (next, norm) =
            apply_gradient_step(&current, &grads, -cfg.alpha, cfg.method.uses_stiefel())?;
        trace.support_losses.push(loss);
        trace.grad_norms.push(norm);
        current = next;
    }
    Ok((current, trace))
}

/// First-order meta-gradient for one task: the query-set gradient at the
/// adapted parameters, to be applied back at the initialization (projected
/// there first for manifold methods).
fn first_order_task_grads<M: TaskModel>(
    model: &M,
    params: &ParamSet,
    task: &Task,
    cfg: &MetaConfig,
) -> Result<BTreeMap<String, Matrix>> {
    let (adapted, _) = inner_adapt(model, params, &task.support_x, &task.support_y, cfg)?;
    let (_, grads) = model.loss_and_grads(&adapted, &task.query_x, &task.query_y, None)?;
    Ok(grads)
}

/// Exact meta-gradient for one task, differentiating through the unrolled
/// inner loop. The K update steps are laid down as graph nodes (inner
/// gradients emitted symbolically, manifold steps as in-graph projection and
/// QR), and one numeric backward pass over the query loss produces the
/// gradient at the initialization.
fn second_order_task_grads<M: TaskModel>(
    model: &M,
    params: &ParamSet,
    task: &Task,
    cfg: &MetaConfig,
) -> Result<BTreeMap<String, Matrix>> {
    let mut g = Graph::with_budget(cfg.graph_budget);
    let mut init_nodes: BTreeMap<String, NodeId> = BTreeMap::new();
    for e in params.entries() {
        let node = g.input(&e.name, e.value.rows(), e.value.cols())?;
        init_nodes.insert(e.name.clone(), node);
    }
    let mut theta = init_nodes.clone();
    for _ in 0..cfg.inner_steps {
        let mut loss = model.loss_graph(&mut g, &theta, &task.support_x, &task.support_y)?;
        if cfg.proximal_active() {
            let pairs: Vec<(NodeId, NodeId)> = params
                .entries()
                .iter()
                .filter(|e| e.kind == ParamKind::Stiefel)
                .map(|e| (theta[&e.name], init_nodes[&e.name]))
                .collect();
            if !pairs.is_empty() {
                let prox = proximal_term_nodes(&mut g, &pairs, &cfg.kernel)?;
                loss = g.add(loss, prox)?;
            }
        }
        let wrt: Vec<NodeId> = params.entries().iter().map(|e| theta[&e.name]).collect();
        let grad_nodes = g.grads_nodes(loss, &wrt)?;
        let mut next = BTreeMap::new();
        for (e, grad) in params.entries().iter().zip(grad_nodes) {
            let x = theta[&e.name];
            let updated = if cfg.method.uses_stiefel() && e.kind == ParamKind::Stiefel {
                // Tangent projection Z = G - X sym(X^T G) (fused node), then
                // the QR retraction of X - alpha Z.
                let z = g.project_tangent(x, grad)?;
                let step = g.scalar_mul(z, -cfg.alpha)?;
                let moved = g.add(x, step)?;
                g.qr_q(moved)?
            } else {
                let step = g.scalar_mul(grad, cfg.alpha)?;
                g.sub(x, step)?
            };
            next.insert(e.name.clone(), updated);
        }
        theta = next;
    }
    let query_loss = model.loss_graph(&mut g, &theta, &task.query_x, &task.query_y)?;
    g.forward_eval(&params.bindings(), query_loss)?;
    g.backward_grads(query_loss)
}

/// One meta-update over a batch of tasks: per-task meta-gradients are summed
/// in task order and applied at the initialization with step `beta`
/// (projection + retraction for Stiefel-kind entries under manifold methods).
/// Threads available for fanning out independent per-task work.
fn worker_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Runs `f` over every task, fanning out across `threads` workers when more
/// than one is requested. Per-task work is independent (tasks are pre-sampled
/// and `f` is pure), so the only contract that matters is reduction order:
/// results come back in task order and the first error in task order wins,
/// making the outcome bitwise independent of the thread count.
fn map_tasks<T, F>(tasks: &[Task], threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Task) -> Result<T> + Sync,
{
    let threads = threads.clamp(1, tasks.len().max(1));
    if threads == 1 {
        return tasks.iter().map(f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = Vec::with_capacity(tasks.len());
    slots.resize_with(tasks.len(), || None);
    let chunk = tasks.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        for (task_chunk, slot_chunk) in tasks.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (task, slot) in task_chunk.iter().zip(slot_chunk.iter_mut()) {
                    *slot = Some(f(task));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.expect("scope joined every worker"))
        .collect()
}

pub fn meta_step<M: TaskModel + Sync>(
    model: &M,
    params: &ParamSet,
    tasks: &[Task],
    cfg: &MetaConfig,
) -> Result<ParamSet> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidConfig(
            "meta step requires at least one task".into(),
        ));
    }
    let per_task = map_tasks(tasks, worker_threads(), |task| match cfg.order {
        Order::First => first_order_task_grads(model, params, task, cfg),
        Order::Second => second_order_task_grads(model, params, task, cfg),
    })?;
    let mut grad_sum: BTreeMap<String, Matrix> = params
        .entries()
        .iter()
        .map(|e| {
            (
                e.name.clone(),
                Matrix::zeros(e.value.rows(), e.value.cols()),
            )
        })
        .collect();
    for task_grads in &per_task {
        for (name, acc) in grad_sum.iter_mut() {
            let g = task_grads.get(name).ok_or_else(|| {
                Error::InvalidConfig(format!("task gradient is missing parameter '{name}'"))
            })?;
            acc.add_scaled_assign(g, 1.0);
        }
    }
    let (next, _) = apply_gradient_step(params, &grad_sum, -cfg.beta, cfg.method.uses_stiefel())?;
    Ok(next)
}

/// Post-adaptation performance over held-out tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_tasks: usize,
    /// Mean query loss after adaptation.
    pub mean_query_loss: f64,
    /// Mean query accuracy after adaptation; `None` for models without one.
    pub mean_accuracy: Option<f64>,
    /// 95% confidence half-width over per-task scores; `None` below 2 tasks.
    pub ci95: Option<f64>,
    /// Per-task score: accuracy where defined, query loss otherwise.
    pub per_task_scores: Vec<f64>,
    /// Inner-loop gradient norms averaged over tasks, one per step.
    pub mean_grad_norms: Vec<f64>,
    /// Inner-loop support losses averaged over tasks, one per step.
    pub mean_support_losses: Vec<f64>,
}

/// Adapts a copy of `params` on each task's support set and scores the query
/// set. The incoming parameters are never modified.
pub fn evaluate<M: TaskModel + Sync>(
    model: &M,
    params: &ParamSet,
    tasks: &[Task],
    cfg: &MetaConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidConfig(
            "evaluation requires at least one task".into(),
        ));
    }
    let per_task = map_tasks(tasks, worker_threads(), |task| {
        let (adapted, trace) =
            inner_adapt(model, params, &task.support_x, &task.support_y, cfg)?;
        let loss = model.task_loss(&adapted, &task.query_x, &task.query_y, None)?;
        let accuracy = model.accuracy(&adapted, &task.query_x, &task.query_y)?;
        Ok((loss, accuracy, trace))
    })?;
    let mut losses = Vec::with_capacity(tasks.len());
    let mut accuracies: Vec<f64> = Vec::with_capacity(tasks.len());
    let mut all_have_accuracy = true;
    let mut scores = Vec::with_capacity(tasks.len());
    let mut norm_sums = vec![0.0; cfg.inner_steps];
    let mut loss_sums = vec![0.0; cfg.inner_steps];
    for (loss, accuracy, trace) in &per_task {
        losses.push(*loss);
        match accuracy {
            Some(acc) => {
                accuracies.push(*acc);
                scores.push(*acc);
            }
            None => {
                all_have_accuracy = false;
                scores.push(*loss);
            }
        }
        for (sum, v) in norm_sums.iter_mut().zip(&trace.grad_norms) {
            *sum += v;
        }
        for (sum, v) in loss_sums.iter_mut().zip(&trace.support_losses) {
            *sum += v;
        }
    }
    let n = tasks.len() as f64;
    Ok(EvalReport {
        n_tasks: tasks.len(),
        mean_query_loss: losses.iter().sum::<f64>() / n,
        mean_accuracy: if all_have_accuracy && !accuracies.is_empty() {
            Some(accuracies.iter().sum::<f64>() / n)
        } else {
            None
        },
        ci95: compute_ci95(&scores),
        per_task_scores: scores,
        mean_grad_norms: norm_sums.into_iter().map(|s| s / n).collect(),
        mean_support_losses: loss_sums.into_iter().map(|s| s / n).collect(),
    })
}
