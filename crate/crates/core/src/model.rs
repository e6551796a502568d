//! Task models and their parameter sets.
//!
//! A [`ParamSet`] is an ordered list of named matrices, each tagged with how
//! it should be treated by optimization ([`ParamKind`]) and how its stored
//! layout maps onto the layer weight it represents ([`Orientation`]).
//! Orthonormality is a *storage* invariant: every Stiefel-kind entry is a
//! valid Stiefel point in its stored orientation, checked on construction and
//! on checkpoint load. Weight matrices are stored tall (rows >= cols) so that
//! this is always satisfiable; a layer whose effective weight is wide is
//! stored transposed and marked as such.
//!
//! [`Mlp`] is the reference model: a fully connected network whose weights
//! are Stiefel points and whose biases are unconstrained. Its single source
//! of truth is [`TaskModel::loss_graph`], which assembles the forward pass
//! and loss as graph nodes; every numeric path (loss values, gradients,
//! higher-order unrolls) goes through that same assembly.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernel::{proximal_term_nodes, KernelParams};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, STREAM_INIT};
use crate::stiefel::{orthonormality_defect, random_point, ORTHONORMALITY_TOLERANCE};

/// Targets for one batch: class labels for classification heads, a value
/// matrix (batch x output_dim) for regression heads.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Values(Matrix),
}

impl Targets {
    /// Number of examples the targets describe.
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Values(v) => v.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How an optimizer must treat a parameter entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Ordinary unconstrained parameter.
    Euclidean,
    /// Constrained to have orthonormal columns in stored orientation.
    Stiefel,
}

/// How the stored matrix maps onto the effective layer weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// The stored matrix *is* the effective (out x in) weight.
    AsStored,
    /// The stored matrix is the transpose of the effective weight; storage
    /// stays tall while the effective weight is wide.
    Transposed,
}

/// One named parameter with its treatment tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    pub kind: ParamKind,
    pub orientation: Orientation,
}

/// Ordered, name-unique collection of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

const CHECKPOINT_HEADER: &str = "smaml-params v1";

impl ParamSet {
    /// Validates name uniqueness and the orthonormality of every
    /// Stiefel-kind entry.
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if e.name.is_empty() || e.name.contains(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!(
                    "parameter name {:?} must be non-empty and free of whitespace",
                    e.name
                )));
            }
            if !seen.insert(e.name.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate parameter name '{}'",
                    e.name
                )));
            }
            if e.kind == ParamKind::Stiefel {
                if e.value.rows() < e.value.cols() {
                    return Err(Error::InvalidConfig(format!(
                        "Stiefel entry '{}' must be stored tall, got {}x{}",
                        e.name,
                        e.value.rows(),
                        e.value.cols()
                    )));
                }
                let defect = orthonormality_defect(&e.value);
                if defect > ORTHONORMALITY_TOLERANCE {
                    return Err(Error::NotOrthonormal {
                        defect,
                        tolerance: ORTHONORMALITY_TOLERANCE,
                    });
                }
            }
        }
        Ok(ParamSet { entries })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Name/value pairs in entry order, as needed by graph evaluation.
    pub fn bindings(&self) -> Vec<(&str, &Matrix)> {
        self.entries
            .iter()
            .map(|e| (e.name.as_str(), &e.value))
            .collect()
    }

    /// Copy with every entry retagged as Euclidean. Used to run unconstrained
    /// baselines on a model whose parameters are normally manifold-valued.
    pub fn retagged_euclidean(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    kind: ParamKind::Euclidean,
                    ..e.clone()
                })
                .collect(),
        }
    }

    /// Replaces entry values, keeping names/tags, without re-running
    /// construction-time validation. Internal to optimization loops, which
    /// maintain the Stiefel invariant through retraction; external mutation
    /// goes through [`ParamSet::new`] or checkpoint load, which validate.
    pub(crate) fn with_values(&self, values: &BTreeMap<String, Matrix>) -> Result<ParamSet> {
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let value = values.get(&e.name).ok_or_else(|| {
                Error::InvalidConfig(format!("missing updated value for parameter '{}'", e.name))
            })?;
            if value.shape() != e.value.shape() {
                return Err(Error::InvalidConfig(format!(
                    "updated value for '{}' has shape {:?}, expected {:?}",
                    e.name,
                    value.shape(),
                    e.value.shape()
                )));
            }
            entries.push(ParamEntry {
                name: e.name.clone(),
                value: value.clone(),
                kind: e.kind,
                orientation: e.orientation,
            });
        }
        Ok(ParamSet { entries })
    }

    /// Writes a versioned, bit-exact text serialization.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_HEADER}")?;
        writeln!(w, "entries {}", self.entries.len())?;
        for e in &self.entries {
            let kind = match e.kind {
                ParamKind::Euclidean => "euclidean",
                ParamKind::Stiefel => "stiefel",
            };
            let orientation = match e.orientation {
                Orientation::AsStored => "as-stored",
                Orientation::Transposed => "transposed",
            };
            writeln!(
                w,
                "entry {} {} {} {} {}",
                e.name,
                e.value.rows(),
                e.value.cols(),
                kind,
                orientation
            )?;
            for i in 0..e.value.rows() {
                let row: Vec<String> = (0..e.value.cols())
                    .map(|j| format!("{:016x}", e.value[(i, j)].to_bits()))
                    .collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }

    /// Parses the serialization produced by [`ParamSet::write_to`] and
    /// re-runs construction-time validation.
    pub fn read_from<R: Read>(r: R) -> Result<ParamSet> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let mut next_line = || -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::Checkpoint(format!("read failure: {e}"))),
                None => Err(Error::Checkpoint("unexpected end of file".into())),
            }
        };
        let header = next_line()?;
        if header.trim() != CHECKPOINT_HEADER {
            return Err(Error::Checkpoint(format!(
                "unsupported header {header:?}, expected {CHECKPOINT_HEADER:?}"
            )));
        }
        let count_line = next_line()?;
        let count: usize = match count_line.trim().strip_prefix("entries ") {
            Some(n) => n
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad entry count line {count_line:?}")))?,
            None => {
                return Err(Error::Checkpoint(format!(
                    "bad entry count line {count_line:?}"
                )))
            }
        };
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let head = next_line()?;
            let fields: Vec<&str> = head.split_whitespace().collect();
            if fields.len() != 6 || fields[0] != "entry" {
                return Err(Error::Checkpoint(format!("bad entry header {head:?}")));
            }
            let name = fields[1].to_string();
            let rows: usize = fields[2]
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad row count in {head:?}")))?;
            let cols: usize = fields[3]
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad column count in {head:?}")))?;
            let kind = match fields[4] {
                "euclidean" => ParamKind::Euclidean,
                "stiefel" => ParamKind::Stiefel,
                other => {
                    return Err(Error::Checkpoint(format!("unknown parameter kind {other:?}")))
                }
            };
            let orientation = match fields[5] {
                "as-stored" => Orientation::AsStored,
                "transposed" => Orientation::Transposed,
                other => return Err(Error::Checkpoint(format!("unknown orientation {other:?}"))),
            };
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                let line = next_line()?;
                let words: Vec<&str> = line.split_whitespace().collect();
                if words.len() != cols {
                    return Err(Error::Checkpoint(format!(
                        "entry '{name}' row {i}: expected {cols} values, got {}",
                        words.len()
                    )));
                }
                for w in words {
                    let bits = u64::from_str_radix(w, 16).map_err(|_| {
                        Error::Checkpoint(format!("entry '{name}': bad hex word {w:?}"))
                    })?;
                    let v = f64::from_bits(bits);
                    if !v.is_finite() {
                        return Err(Error::Checkpoint(format!(
                            "entry '{name}' contains a non-finite value"
                        )));
                    }
                    data.push(v);
                }
            }
            let value = Matrix::from_vec(rows, cols, data)
                .map_err(|e| Error::Checkpoint(format!("entry '{name}': {e}")))?;
            entries.push(ParamEntry {
                name,
                value,
                kind,
                orientation,
            });
        }
        ParamSet::new(entries)
    }

    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut file).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<ParamSet> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        ParamSet::read_from(file)
    }

    /// True when every value of every entry is bitwise identical.
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        if self.entries.len() != other.entries.len() {
            return false;
        }
        self.entries.iter().zip(&other.entries).all(|(a, b)| {
            a.name == b.name
                && a.kind == b.kind
                && a.orientation == b.orientation
                && a.value.shape() == b.value.shape()
                && a.value
                    .data()
                    .iter()
                    .zip(b.value.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation '{other}' (expected tanh or relu)"
            ))),
        }
    }
}

/// Loss head applied to the final linear layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Mean softmax cross-entropy against integer labels.
    SoftmaxCrossEntropy,
    /// Mean (over examples) squared error against a value matrix.
    MeanSquaredError,
}

/// Fully connected network architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub head: Head,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig(
                "input and output dimensions must be at least 1".into(),
            ));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(
                "hidden layer widths must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// (fan_in, fan_out) per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

/// A model that can express its loss as graph nodes over named parameters.
///
/// `loss_graph` is the single source of truth for the objective; the provided
/// numeric methods (`task_loss`, `loss_and_grads`) and any higher-order
/// machinery all route through it, so values and gradients can never drift
/// apart.
pub trait TaskModel {
    /// Appends the forward pass and scalar loss for one batch, reading
    /// parameters through `param_nodes` (one node per parameter entry, keyed
    /// by name, shaped as stored).
    fn loss_graph(
        &self,
        g: &mut Graph,
        param_nodes: &BTreeMap<String, NodeId>,
        x: &Matrix,
        y: &Targets,
    ) -> Result<NodeId>;

    /// Mean fraction of correctly classified examples, or `None` for models
    /// without a notion of accuracy (regression heads).
    fn accuracy(&self, params: &ParamSet, x: &Matrix, y: &Targets) -> Result<Option<f64>>;

    /// Builds a fresh graph holding the batch loss, with one input node per
    /// parameter entry. When `prox` carries an anchor set and an enabled
    /// kernel, the proximal kernel term over Stiefel-kind entries is added.
    fn build_loss(
        &self,
        params: &ParamSet,
        x: &Matrix,
        y: &Targets,
        prox: Option<(&ParamSet, &KernelParams)>,
    ) -> Result<(Graph, NodeId)> {
        let mut g = Graph::new();
        let mut nodes = BTreeMap::new();
        for e in params.entries() {
            let node = g.input(&e.name, e.value.rows(), e.value.cols())?;
            nodes.insert(e.name.clone(), node);
        }
        let mut loss = self.loss_graph(&mut g, &nodes, x, y)?;
        if let Some((anchor, kp)) = prox {
            if kp.proximal_enabled() {
                let mut pairs = Vec::new();
                for e in params.entries() {
                    if e.kind != ParamKind::Stiefel {
                        continue;
                    }
                    let anchor_entry = anchor.get(&e.name).ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "proximal anchor is missing parameter '{}'",
                            e.name
                        ))
                    })?;
                    let anchor_node = g.constant(anchor_entry.value.clone())?;
                    pairs.push((nodes[&e.name], anchor_node));
                }
                if !pairs.is_empty() {
                    let prox_node = proximal_term_nodes(&mut g, &pairs, kp)?;
                    loss = g.add(loss, prox_node)?;
                }
            }
        }
        Ok((g, loss))
    }

    /// Scalar batch loss at the given parameters.
    fn task_loss(
        &self,
        params: &ParamSet,
        x: &Matrix,
        y: &Targets,
        prox: Option<(&ParamSet, &KernelParams)>,
    ) -> Result<f64> {
        let (mut g, loss) = self.build_loss(params, x, y, prox)?;
        Ok(g.forward_eval(&params.bindings(), loss)?.as_scalar())
    }

    /// Batch loss and its Euclidean gradient with respect to every parameter
    /// entry (keyed by name, shaped as stored).
    fn loss_and_grads(
        &self,
        params: &ParamSet,
        x: &Matrix,
        y: &Targets,
        prox: Option<(&ParamSet, &KernelParams)>,
    ) -> Result<(f64, BTreeMap<String, Matrix>)> {
        let (mut g, loss) = self.build_loss(params, x, y, prox)?;
        let value = g.forward_eval(&params.bindings(), loss)?.as_scalar();
        let grads = g.backward_grads(loss)?;
        Ok((value, grads))
    }
}

/// Fully connected network with orthonormal weights and free biases.
#[derive(Debug, Clone)]
pub struct Mlp {
    config: ModelConfig,
}

impl Mlp {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Mlp { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn weight_name(layer: usize) -> String {
        format!("layer{layer}.weight")
    }

    fn bias_name(layer: usize) -> String {
        format!("layer{layer}.bias")
    }

    /// Storage shape and orientation for a layer with the given fan-in and
    /// fan-out: the effective (out x in) weight is stored directly when tall,
    /// and stored transposed when wide, so storage always satisfies the
    /// Stiefel shape requirement rows >= cols.
    fn weight_layout(fan_in: usize, fan_out: usize) -> (usize, usize, Orientation) {
        if fan_out >= fan_in {
            (fan_out, fan_in, Orientation::AsStored)
        } else {
            (fan_in, fan_out, Orientation::Transposed)
        }
    }

    /// Draws orthonormal weights (uniform over the manifold via QR of a
    /// Gaussian matrix) and zero biases. Deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        let mut entries = Vec::new();
        for (layer, (fan_in, fan_out)) in self.config.layer_dims().into_iter().enumerate() {
            let (rows, cols, orientation) = Self::weight_layout(fan_in, fan_out);
            let point = random_point(rows, cols, derive_seed(seed, STREAM_INIT, layer as u64))?;
            entries.push(ParamEntry {
                name: Self::weight_name(layer),
                value: point.into_value(),
                kind: ParamKind::Stiefel,
                orientation,
            });
            entries.push(ParamEntry {
                name: Self::bias_name(layer),
                value: Matrix::zeros(1, fan_out),
                kind: ParamKind::Euclidean,
                orientation: Orientation::AsStored,
            });
        }
        ParamSet::new(entries)
    }

    /// Appends the linear/nonlinear stack up to the final logits node.
    fn forward_nodes(
        &self,
        g: &mut Graph,
        param_nodes: &BTreeMap<String, NodeId>,
        x_node: NodeId,
    ) -> Result<NodeId> {
        let dims = self.config.layer_dims();
        let last = dims.len() - 1;
        let mut h = x_node;
        for (layer, (fan_in, fan_out)) in dims.into_iter().enumerate() {
            let (_, _, orientation) = Self::weight_layout(fan_in, fan_out);
            let w_name = Self::weight_name(layer);
            let b_name = Self::bias_name(layer);
            let w = *param_nodes.get(&w_name).ok_or_else(|| {
                Error::InvalidConfig(format!("loss graph is missing parameter node '{w_name}'"))
            })?;
            let b = *param_nodes.get(&b_name).ok_or_else(|| {
                Error::InvalidConfig(format!("loss graph is missing parameter node '{b_name}'"))
            })?;
            // h @ W_eff^T: multiply by the stored matrix directly when it
            // already holds W^T, otherwise transpose it in-graph.
            let z = match orientation {
                Orientation::Transposed => g.matmul(h, w)?,
                Orientation::AsStored => {
                    let wt = g.transpose(w)?;
                    g.matmul(h, wt)?
                }
            };
            let z = g.add_row_broadcast(z, b)?;
            h = if layer == last {
                z
            } else {
                match self.config.activation {
                    Activation::Tanh => g.tanh(z)?,
                    Activation::Relu => g.relu(z)?,
                }
            };
        }
        Ok(h)
    }

    /// Logits (classification) or predictions (regression) for a batch.
    pub fn forward(&self, params: &ParamSet, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.config.input_dim {
            return Err(Error::InvalidConfig(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.config.input_dim
            )));
        }
        let mut g = Graph::new();
        let mut nodes = BTreeMap::new();
        for e in params.entries() {
            nodes.insert(
                e.name.clone(),
                g.input(&e.name, e.value.rows(), e.value.cols())?,
            );
        }
        let x_node = g.constant(x.clone())?;
        let out = self.forward_nodes(&mut g, &nodes, x_node)?;
        g.forward_eval(&params.bindings(), out)
    }
}

impl TaskModel for Mlp {
    fn loss_graph(
        &self,
        g: &mut Graph,
        param_nodes: &BTreeMap<String, NodeId>,
        x: &Matrix,
        y: &Targets,
    ) -> Result<NodeId> {
        if x.cols() != self.config.input_dim {
            return Err(Error::InvalidConfig(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.config.input_dim
            )));
        }
        if y.len() != x.rows() {
            return Err(Error::InvalidConfig(format!(
                "batch has {} examples but targets describe {}",
                x.rows(),
                y.len()
            )));
        }
        let x_node = g.constant(x.clone())?;
        let out = self.forward_nodes(g, param_nodes, x_node)?;
        match (self.config.head, y) {
            (Head::SoftmaxCrossEntropy, Targets::Labels(labels)) => {
                g.softmax_cross_entropy(out, labels)
            }
            (Head::MeanSquaredError, Targets::Values(values)) => {
                if values.cols() != self.config.output_dim {
                    return Err(Error::InvalidConfig(format!(
                        "target values have {} columns, model outputs {}",
                        values.cols(),
                        self.config.output_dim
                    )));
                }
                let target = g.constant(values.clone())?;
                let diff = g.sub(out, target)?;
                let total = g.frobenius_norm_sq(diff)?;
                g.scalar_mul(total, 1.0 / x.rows() as f64)
            }
            (Head::SoftmaxCrossEntropy, Targets::Values(_)) => Err(Error::InvalidConfig(
                "classification head requires label targets, got values".into(),
            )),
            (Head::MeanSquaredError, Targets::Labels(_)) => Err(Error::InvalidConfig(
                "regression head requires value targets, got labels".into(),
            )),
        }
    }

    fn accuracy(&self, params: &ParamSet, x: &Matrix, y: &Targets) -> Result<Option<f64>> {
        let labels = match y {
            Targets::Labels(l) => l,
            Targets::Values(_) => return Ok(None),
        };
        if labels.len() != x.rows() {
            return Err(Error::InvalidConfig(format!(
                "batch has {} examples but targets describe {}",
                x.rows(),
                labels.len()
            )));
        }
        let logits = self.forward(params, x)?;
        let mut correct = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            if label >= logits.cols() {
                return Err(Error::LabelOutOfRange {
                    label,
                    n_way: logits.cols(),
                });
            }
            let mut best = 0usize;
            for j in 1..logits.cols() {
                if logits[(i, j)] > logits[(i, best)] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        Ok(Some(correct as f64 / labels.len() as f64))
    }
}

/// Batch-independent diagnostic objective `0.5 * sum_e ||P_e - T_e||_F^2`
/// over named targets. Useful for exercising optimization machinery where the
/// exact minimizer and gradient are known in closed form.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    targets: BTreeMap<String, Matrix>,
}

impl QuadraticModel {
    pub fn new(targets: BTreeMap<String, Matrix>) -> Self {
        QuadraticModel { targets }
    }
}

impl TaskModel for QuadraticModel {
    fn loss_graph(
        &self,
        g: &mut Graph,
        param_nodes: &BTreeMap<String, NodeId>,
        _x: &Matrix,
        _y: &Targets,
    ) -> Result<NodeId> {
        let mut total: Option<NodeId> = None;
        for (name, target) in &self.targets {
            let node = *param_nodes.get(name).ok_or_else(|| {
                Error::InvalidConfig(format!("loss graph is missing parameter node '{name}'"))
            })?;
            let t = g.constant(target.clone())?;
            let diff = g.sub(node, t)?;
            let sq = g.frobenius_norm_sq(diff)?;
            total = Some(match total {
                Some(acc) => g.add(acc, sq)?,
                None => sq,
            });
        }
        let total = total.ok_or_else(|| {
            Error::InvalidConfig("quadratic objective requires at least one target".into())
        })?;
        g.scalar_mul(total, 0.5)
    }

    fn accuracy(&self, _params: &ParamSet, _x: &Matrix, _y: &Targets) -> Result<Option<f64>> {
        Ok(None)
    }
}
