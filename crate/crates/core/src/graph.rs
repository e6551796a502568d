//! Reverse-mode automatic differentiation over matrices.
//!
//! A [`Graph`] is an append-only tape of primitive matrix operations. Nodes
//! are created through builder methods that validate shapes eagerly - an
//! ill-shaped program is rejected at construction time with the offending
//! node index, never at evaluation time. Evaluation then proceeds in two
//! passes:
//!
//! * [`Graph::forward_eval`] binds named input matrices, computes every node
//!   value in insertion order, and rejects any non-finite intermediate;
//! * [`Graph::backward_grads`] walks the tape in reverse from a scalar output
//!   and accumulates adjoints with a fixed order, so gradients are bitwise
//!   reproducible for identical inputs.
//!
//! For meta-learning the crate also needs gradients *of* gradients: the
//! inner-loop update consumes a gradient, and the outer loop differentiates
//! through that update. [`Graph::grads_nodes`] serves this by emitting the
//! backward pass of a subgraph as new graph nodes (a symbolic
//! vector-Jacobian product), after which one ordinary numeric backward pass
//! over the enlarged graph yields the second-order gradient. Only the ops
//! that can appear in a loss computation need symbolic rules; ops that exist
//! solely as emitted adjoints or unrolled update steps (softmax, column sums,
//! scalar rescaling, the QR factor, the fused tangent projection) carry
//! numeric rules only, which bounds the machinery at exactly second order.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::qr::{qr_backward, qr_thin};

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input { name: String },
    Constant { value: Matrix },
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    ScalarMul { a: NodeId, c: f64 },
    Transpose { a: NodeId },
    Hadamard { a: NodeId, b: NodeId },
    Tanh { a: NodeId },
    Relu { a: NodeId },
    /// 1.0 where the parent is positive, else 0.0; piecewise constant, so it
    /// contributes no gradient of its own. Exists for emitted relu adjoints.
    ReluMask { a: NodeId },
    Exp { a: NodeId },
    /// Row-wise softmax. Appears only as an emitted adjoint of the fused
    /// cross-entropy op, but is public for diagnostics.
    Softmax { a: NodeId },
    /// Column sums: (m x n) -> (1 x n).
    ColSum { a: NodeId },
    /// Adds a 1 x n row vector to every row of an m x n matrix (bias add).
    AddRowBroadcast { a: NodeId, row: NodeId },
    /// Mean softmax cross-entropy of logits against fixed integer labels.
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize> },
    FrobeniusNormSq { a: NodeId },
    /// Entrywise product of a matrix with the value of a 1 x 1 node.
    ScaleByScalar { a: NodeId, s: NodeId },
    /// Q factor of the thin QR factorization (positive-diagonal convention).
    QrQ { a: NodeId },
    /// Tangent projection z = g - x * sym(x^T g), fused into one node.
    ProjectTangent { x: NodeId, g: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant { .. } => "constant",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::ScalarMul { .. } => "scalar_mul",
            Op::Transpose { .. } => "transpose",
            Op::Hadamard { .. } => "hadamard",
            Op::Tanh { .. } => "tanh",
            Op::Relu { .. } => "relu",
            Op::ReluMask { .. } => "relu_mask",
            Op::Exp { .. } => "exp",
            Op::Softmax { .. } => "softmax",
            Op::ColSum { .. } => "col_sum",
            Op::AddRowBroadcast { .. } => "add_row_broadcast",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::FrobeniusNormSq { .. } => "frobenius_norm_sq",
            Op::ScaleByScalar { .. } => "scale_by_scalar",
            Op::QrQ { .. } => "qr_q",
            Op::ProjectTangent { .. } => "project_tangent",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
}

/// Default cap on graph size; second-order unrolling is the only realistic
/// way to approach it, and hitting it produces a budget error rather than an
/// opaque slowdown.
pub const DEFAULT_NODE_BUDGET: usize = 262_144;

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: BTreeMap<String, NodeId>,
    /// Node values from the most recent forward pass; cleared whenever the
    /// graph grows, so staleness is detectable.
    values: Vec<Matrix>,
    /// R factors stashed by QrQ nodes during the forward pass.
    qr_r: BTreeMap<usize, Matrix>,
    /// sym(x^T g) factors stashed by ProjectTangent nodes during the forward
    /// pass; the backward rule reuses them.
    proj_sym: BTreeMap<usize, Matrix>,
    budget: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_budget(DEFAULT_NODE_BUDGET)
    }

    /// A graph that refuses to grow past `budget` nodes.
    pub fn with_budget(budget: usize) -> Self {
        Graph {
            nodes: Vec::new(),
            inputs: BTreeMap::new(),
            values: Vec::new(),
            qr_r: BTreeMap::new(),
            proj_sym: BTreeMap::new(),
            budget,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_budget(&self) -> usize {
        self.budget
    }

    /// Shape of an existing node.
    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let node = &self.nodes[id.0];
        (node.rows, node.cols)
    }

    /// Value of a node from the most recent forward pass, if one has run
    /// since the graph last grew.
    pub fn value(&self, id: NodeId) -> Option<&Matrix> {
        self.values.get(id.0)
    }

    fn check_id(&self, id: NodeId, op: &'static str) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::InvalidConfig(format!(
                "{op}: node id {} does not belong to this graph",
                id.0
            )));
        }
        Ok(())
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize) -> Result<NodeId> {
        let needed = self.nodes.len() + 1;
        if needed > self.budget {
            return Err(Error::GraphBudget {
                needed,
                budget: self.budget,
            });
        }
        // Any change to the program invalidates previously computed values.
        self.values.clear();
        self.qr_r.clear();
        self.proj_sym.clear();
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, rows, cols });
        Ok(id)
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::ShapeMismatch {
            op,
            node: self.nodes.len(),
            detail,
        }
    }

    // ---- builders ---------------------------------------------------------

    /// A named placeholder that must be bound at `forward_eval` time.
    pub fn input(&mut self, name: &str, rows: usize, cols: usize) -> Result<NodeId> {
        if rows == 0 || cols == 0 {
            return Err(self.shape_err("input", format!("dimensions must be positive, got {rows}x{cols}")));
        }
        if self.inputs.contains_key(name) {
            return Err(Error::InvalidConfig(format!(
                "duplicate graph input name '{name}'"
            )));
        }
        let id = self.push(
            Op::Input {
                name: name.to_string(),
            },
            rows,
            cols,
        )?;
        self.inputs.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, value: Matrix) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::InvalidConfig(
                "constant node value must be finite".into(),
            ));
        }
        let (rows, cols) = value.shape();
        self.push(Op::Constant { value }, rows, cols)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a, "matmul")?;
        self.check_id(b, "matmul")?;
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != rb {
            return Err(self.shape_err("matmul", format!("{ra}x{ca} * {rb}x{cb}")));
        }
        self.push(Op::MatMul { a, b }, ra, cb)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "add", |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "sub", |a, b| Op::Sub { a, b })
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "hadamard", |a, b| Op::Hadamard { a, b })
    }

    fn binary_same_shape(
        &mut self,
        a: NodeId,
        b: NodeId,
        opname: &'static str,
        make: impl FnOnce(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        self.check_id(a, opname)?;
        self.check_id(b, opname)?;
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(self.shape_err(
                opname,
                format!("{}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1),
            ));
        }
        self.push(make(a, b), sa.0, sa.1)
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check_id(a, "scalar_mul")?;
        if !c.is_finite() {
            return Err(Error::InvalidConfig(
                "scalar_mul coefficient must be finite".into(),
            ));
        }
        let (r, co) = self.shape(a);
        self.push(Op::ScalarMul { a, c }, r, co)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "transpose")?;
        let (r, c) = self.shape(a);
        self.push(Op::Transpose { a }, c, r)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary_same_shape(a, "tanh", |a| Op::Tanh { a })
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary_same_shape(a, "relu", |a| Op::Relu { a })
    }

    pub fn relu_mask(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary_same_shape(a, "relu_mask", |a| Op::ReluMask { a })
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary_same_shape(a, "exp", |a| Op::Exp { a })
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary_same_shape(a, "softmax", |a| Op::Softmax { a })
    }

    fn unary_same_shape(
        &mut self,
        a: NodeId,
        opname: &'static str,
        make: impl FnOnce(NodeId) -> Op,
    ) -> Result<NodeId> {
        self.check_id(a, opname)?;
        let (r, c) = self.shape(a);
        self.push(make(a), r, c)
    }

    pub fn col_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "col_sum")?;
        let (_, c) = self.shape(a);
        self.push(Op::ColSum { a }, 1, c)
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.check_id(a, "add_row_broadcast")?;
        self.check_id(row, "add_row_broadcast")?;
        let (ra, ca) = self.shape(a);
        let (rr, cr) = self.shape(row);
        if rr != 1 || cr != ca {
            return Err(self.shape_err(
                "add_row_broadcast",
                format!("matrix is {ra}x{ca}, row must be 1x{ca}, got {rr}x{cr}"),
            ));
        }
        self.push(Op::AddRowBroadcast { a, row }, ra, ca)
    }

    /// Mean softmax cross-entropy over the batch (rows of `logits`), against
    /// integer labels fixed at construction. Labels are validated eagerly.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check_id(logits, "softmax_cross_entropy")?;
        let (batch, classes) = self.shape(logits);
        if labels.len() != batch {
            return Err(self.shape_err(
                "softmax_cross_entropy",
                format!("{batch} logit rows but {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                n_way: classes,
            });
        }
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            1,
            1,
        )
    }

    pub fn frobenius_norm_sq(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "frobenius_norm_sq")?;
        self.push(Op::FrobeniusNormSq { a }, 1, 1)
    }

    /// Scales every entry of `a` by the value of the 1 x 1 node `s`.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        self.check_id(a, "scale_by_scalar")?;
        self.check_id(s, "scale_by_scalar")?;
        let (sr, sc) = self.shape(s);
        if (sr, sc) != (1, 1) {
            return Err(self.shape_err(
                "scale_by_scalar",
                format!("scale argument must be 1x1, got {sr}x{sc}"),
            ));
        }
        let (r, c) = self.shape(a);
        self.push(Op::ScaleByScalar { a, s }, r, c)
    }

    /// Q factor of the thin QR factorization of a tall (rows >= cols) node.
    pub fn qr_q(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "qr_q")?;
        let (r, c) = self.shape(a);
        if r < c {
            return Err(self.shape_err("qr_q", format!("need rows >= cols, got {r}x{c}")));
        }
        self.push(Op::QrQ { a }, r, c)
    }

    /// Tangent projection z = g - x * sym(x^T g) at a tall point `x`.
    ///
    /// Semantically equal to spelling the projection out of transpose/matmul/
    /// add/scale primitives, but fused into a single node: one of these sits
    /// in every unrolled manifold update step, and the composed form costs
    /// half a dozen temporaries there.
    pub fn project_tangent(&mut self, x: NodeId, g: NodeId) -> Result<NodeId> {
        self.check_id(x, "project_tangent")?;
        self.check_id(g, "project_tangent")?;
        let (r, c) = self.shape(x);
        let (gr, gc) = self.shape(g);
        if (gr, gc) != (r, c) {
            return Err(self.shape_err(
                "project_tangent",
                format!("x is {r}x{c}, g is {gr}x{gc}"),
            ));
        }
        if r < c {
            return Err(self.shape_err(
                "project_tangent",
                format!("need rows >= cols, got {r}x{c}"),
            ));
        }
        self.push(Op::ProjectTangent { x, g }, r, c)
    }

    // ---- forward ----------------------------------------------------------

    /// Computes every node value in insertion order and returns the value of
    /// `output`. All declared inputs must be bound exactly once with matching
    /// shapes; any non-finite intermediate aborts with the offending node.
    pub fn forward_eval(&mut self, bindings: &[(&str, &Matrix)], output: NodeId) -> Result<Matrix> {
        self.check_id(output, "forward_eval")?;
        let mut bound: BTreeMap<&str, &Matrix> = BTreeMap::new();
        for (name, m) in bindings {
            if bound.insert(name, m).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "input '{name}' bound more than once"
                )));
            }
            if !self.inputs.contains_key(*name) {
                return Err(Error::InvalidConfig(format!(
                    "binding '{name}' does not correspond to a graph input"
                )));
            }
        }
        for (name, id) in &self.inputs {
            let m = bound
                .get(name.as_str())
                .ok_or_else(|| Error::InvalidConfig(format!("graph input '{name}' is not bound")))?;
            let node = &self.nodes[id.0];
            if m.shape() != (node.rows, node.cols) {
                return Err(Error::ShapeMismatch {
                    op: "input",
                    node: id.0,
                    detail: format!(
                        "input '{name}' declared {}x{}, bound {}x{}",
                        node.rows,
                        node.cols,
                        m.rows(),
                        m.cols()
                    ),
                });
            }
        }

        self.values.clear();
        self.qr_r.clear();
        self.proj_sym.clear();
        for idx in 0..self.nodes.len() {
            let value = self.eval_node(idx, &bound)?;
            if !value.all_finite() {
                let op = self.nodes[idx].op.name();
                self.values.clear();
                return Err(Error::NonFinite { node: idx, op });
            }
            self.values.push(value);
        }
        Ok(self.values[output.0].clone())
    }

    fn eval_node(&mut self, idx: usize, bound: &BTreeMap<&str, &Matrix>) -> Result<Matrix> {
        macro_rules! v {
            ($id:expr) => {
                &self.values[$id.0]
            };
        }
        let out = match &self.nodes[idx].op {
            Op::Input { name } => (*bound.get(name.as_str()).expect("validated above")).clone(),
            Op::Constant { value } => value.clone(),
            Op::MatMul { a, b } => v!(a).matmul(v!(b)),
            Op::Add { a, b } => v!(a).add(v!(b)),
            Op::Sub { a, b } => v!(a).sub(v!(b)),
            Op::ScalarMul { a, c } => v!(a).scale(*c),
            Op::Transpose { a } => v!(a).transpose(),
            Op::Hadamard { a, b } => v!(a).hadamard(v!(b)),
            Op::Tanh { a } => v!(a).map(f64::tanh),
            Op::Relu { a } => v!(a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::ReluMask { a } => v!(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Exp { a } => v!(a).map(f64::exp),
            Op::Softmax { a } => softmax_rows(v!(a)),
            Op::ColSum { a } => {
                let m = v!(a);
                let mut out = Matrix::zeros(1, m.cols());
                for i in 0..m.rows() {
                    for j in 0..m.cols() {
                        out[(0, j)] += m[(i, j)];
                    }
                }
                out
            }
            Op::AddRowBroadcast { a, row } => {
                let m = v!(a);
                let r = v!(row);
                let mut out = m.clone();
                for i in 0..out.rows() {
                    for j in 0..out.cols() {
                        out[(i, j)] += r[(0, j)];
                    }
                }
                out
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                Matrix::scalar(mean_cross_entropy(v!(logits), labels))
            }
            Op::FrobeniusNormSq { a } => Matrix::scalar(v!(a).frobenius_norm_sq()),
            Op::ScaleByScalar { a, s } => v!(a).scale(v!(s).as_scalar()),
            Op::QrQ { a } => {
                let (q, r) = qr_thin(v!(a))?;
                self.qr_r.insert(idx, r);
                q
            }
            Op::ProjectTangent { x, g } => {
                let s = sym_of_xt_y(v!(x), v!(g));
                let z = v!(g).sub(&v!(x).matmul(&s));
                self.proj_sym.insert(idx, s);
                z
            }
        };
        Ok(out)
    }

    // ---- numeric backward -------------------------------------------------

    /// Gradient of the scalar node `output` with respect to every declared
    /// input, as a name-keyed map. Inputs that `output` does not depend on
    /// map to zero matrices. Requires a completed [`Graph::forward_eval`].
    pub fn backward_grads(&self, output: NodeId) -> Result<BTreeMap<String, Matrix>> {
        self.check_id(output, "backward_grads")?;
        if self.values.len() != self.nodes.len() {
            return Err(Error::InvalidConfig(
                "backward_grads requires forward_eval on the current graph".into(),
            ));
        }
        let (r, c) = self.shape(output);
        if (r, c) != (1, 1) {
            return Err(Error::InvalidConfig(format!(
                "backward output must be a scalar node, node {} is {r}x{c}",
                output.0
            )));
        }

        let mut grads: BTreeMap<String, Matrix> = BTreeMap::new();
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let go = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Input { name } => {
                    grads.insert(name.clone(), go);
                }
                Op::Constant { .. } | Op::ReluMask { .. } => {}
                Op::MatMul { a, b } => {
                    let da = go.matmul(&self.values[b.0].transpose());
                    let db = self.values[a.0].transpose().matmul(&go);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj, *a, go.clone());
                    accumulate(&mut adj, *b, go);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut adj, *b, go.scale(-1.0));
                    accumulate(&mut adj, *a, go);
                }
                Op::ScalarMul { a, c } => accumulate(&mut adj, *a, go.scale(*c)),
                Op::Transpose { a } => accumulate(&mut adj, *a, go.transpose()),
                Op::Hadamard { a, b } => {
                    accumulate(&mut adj, *a, go.hadamard(&self.values[b.0]));
                    accumulate(&mut adj, *b, go.hadamard(&self.values[a.0]));
                }
                Op::Tanh { a } => {
                    let y = &self.values[idx];
                    accumulate(&mut adj, *a, go.hadamard(&y.map(|v| 1.0 - v * v)));
                }
                Op::Relu { a } => {
                    let mask = self.values[a.0].map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut adj, *a, go.hadamard(&mask));
                }
                Op::Exp { a } => {
                    accumulate(&mut adj, *a, go.hadamard(&self.values[idx]));
                }
                Op::Softmax { a } => {
                    let s = &self.values[idx];
                    let mut da = Matrix::zeros(s.rows(), s.cols());
                    for i in 0..s.rows() {
                        let mut dot = 0.0;
                        for j in 0..s.cols() {
                            dot += s[(i, j)] * go[(i, j)];
                        }
                        for j in 0..s.cols() {
                            da[(i, j)] = s[(i, j)] * (go[(i, j)] - dot);
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::ColSum { a } => {
                    let (rows, cols) = self.shape(*a);
                    let mut da = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            da[(i, j)] = go[(0, j)];
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::AddRowBroadcast { a, row } => {
                    let mut drow = Matrix::zeros(1, go.cols());
                    for i in 0..go.rows() {
                        for j in 0..go.cols() {
                            drow[(0, j)] += go[(i, j)];
                        }
                    }
                    accumulate(&mut adj, *row, drow);
                    accumulate(&mut adj, *a, go);
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let x = &self.values[logits.0];
                    let s = softmax_rows(x);
                    let batch = x.rows() as f64;
                    let g = go.as_scalar();
                    let mut da = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        for j in 0..x.cols() {
                            let target = if labels[i] == j { 1.0 } else { 0.0 };
                            da[(i, j)] = g * (s[(i, j)] - target) / batch;
                        }
                    }
                    accumulate(&mut adj, *logits, da);
                }
                Op::FrobeniusNormSq { a } => {
                    let g = go.as_scalar();
                    accumulate(&mut adj, *a, self.values[a.0].scale(2.0 * g));
                }
                Op::ScaleByScalar { a, s } => {
                    let sval = self.values[s.0].as_scalar();
                    let ds = Matrix::scalar(go.frobenius_dot(&self.values[a.0]));
                    accumulate(&mut adj, *a, go.scale(sval));
                    accumulate(&mut adj, *s, ds);
                }
                Op::QrQ { a } => {
                    let q = &self.values[idx];
                    let r = self.qr_r.get(&idx).expect("stashed during forward");
                    let da = qr_backward(q, r, &go)?;
                    accumulate(&mut adj, *a, da);
                }
                Op::ProjectTangent { x, g } => {
                    // With z = g - x*s, s = sym(x^T g), and upstream gradient
                    // zbar, the adjoints are
                    //   dg = zbar - x * sym(x^T zbar)   (the projection again)
                    //   dx = -zbar * s - g * sym(x^T zbar).
                    let xv = &self.values[x.0];
                    let gv = &self.values[g.0];
                    let s = self.proj_sym.get(&idx).expect("stashed during forward");
                    let m = sym_of_xt_y(xv, &go);
                    let dg = go.sub(&xv.matmul(&m));
                    let mut dx = go.matmul(s).scale(-1.0);
                    dx.add_scaled_assign(&gv.matmul(&m), -1.0);
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *g, dg);
                }
            }
        }

        for (name, id) in &self.inputs {
            grads
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(self.nodes[id.0].rows, self.nodes[id.0].cols));
        }
        Ok(grads)
    }

    // ---- symbolic backward ------------------------------------------------

    /// Emits the gradient of the scalar node `output` with respect to each of
    /// `wrt` as new graph nodes and returns them in the same order.
    ///
    /// The `wrt` nodes act as leaves: adjoints do not propagate past them, so
    /// the result is the partial gradient treating each `wrt` node as an
    /// independent variable (exactly what an unrolled inner-loop update
    /// consumes). Ops that only ever appear as emitted adjoints do not carry
    /// symbolic rules; encountering one in a loss subgraph is an error rather
    /// than a silently wrong higher-order derivative.
    pub fn grads_nodes(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.check_id(output, "grads_nodes")?;
        for &w in wrt {
            self.check_id(w, "grads_nodes")?;
        }
        if self.shape(output) != (1, 1) {
            return Err(Error::InvalidConfig(format!(
                "grads_nodes output must be a scalar node, node {} is {}x{}",
                output.0,
                self.shape(output).0,
                self.shape(output).1
            )));
        }

        let wrt_set: BTreeSet<usize> = wrt.iter().map(|w| w.0).collect();
        let mut adj: Vec<Option<NodeId>> = vec![None; output.0 + 1];
        adj[output.0] = Some(self.constant(Matrix::scalar(1.0))?);

        for idx in (0..=output.0).rev() {
            if adj[idx].is_none() || wrt_set.contains(&idx) {
                continue;
            }
            let go = adj[idx].expect("checked above");
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Input { .. } | Op::Constant { .. } | Op::ReluMask { .. } => {}
                Op::MatMul { a, b } => {
                    let bt = self.transpose(b)?;
                    let da = self.matmul(go, bt)?;
                    let at = self.transpose(a)?;
                    let db = self.matmul(at, go)?;
                    self.accumulate_node(&mut adj, a, da)?;
                    self.accumulate_node(&mut adj, b, db)?;
                }
                Op::Add { a, b } => {
                    self.accumulate_node(&mut adj, a, go)?;
                    self.accumulate_node(&mut adj, b, go)?;
                }
                Op::Sub { a, b } => {
                    let neg = self.scalar_mul(go, -1.0)?;
                    self.accumulate_node(&mut adj, a, go)?;
                    self.accumulate_node(&mut adj, b, neg)?;
                }
                Op::ScalarMul { a, c } => {
                    let da = self.scalar_mul(go, c)?;
                    self.accumulate_node(&mut adj, a, da)?;
                }
                Op::Transpose { a } => {
                    let da = self.transpose(go)?;
                    self.accumulate_node(&mut adj, a, da)?;
                }
                Op::Hadamard { a, b } => {
                    let da = self.hadamard(go, b)?;
                    let db = self.hadamard(go, a)?;
                    self.accumulate_node(&mut adj, a, da)?;
                    self.accumulate_node(&mut adj, b, db)?;
                }
                Op::Tanh { a } => {
                    // go * (1 - y^2) written as go - go .* y .* y.
                    let y = NodeId(idx);
                    let y2 = self.hadamard(y, y)?;
                    let goy2 = self.hadamard(go, y2)?;
                    let da = self.sub(go, goy2)?;
                    self.accumulate_node(&mut adj, a, da)?;
                }
                Op::Relu { a } => {
                    let mask = self.relu_mask(a)?;
                    let da = self.hadamard(go, mask)?;
                    self.accumulate_node(&mut adj, a, da)?;
                }
                Op::Exp { a } => {
                    let da = self.hadamard(go, NodeId(idx))?;
                    self.accumulate_node(&mut adj, a, da)?;
                }
                Op::AddRowBroadcast { a, row } => {
                    let drow = self.col_sum(go)?;
                    self.accumulate_node(&mut adj, a, go)?;
                    self.accumulate_node(&mut adj, row, drow)?;
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let (batch, classes) = self.shape(logits);
                    let mut onehot = Matrix::zeros(batch, classes);
                    for (i, &l) in labels.iter().enumerate() {
                        onehot[(i, l)] = 1.0;
                    }
                    let s = self.softmax(logits)?;
                    let oh = self.constant(onehot)?;
                    let diff = self.sub(s, oh)?;
                    let scaled = self.scalar_mul(diff, 1.0 / batch as f64)?;
                    let da = self.scale_by(scaled, go)?;
                    self.accumulate_node(&mut adj, logits, da)?;
                }
                Op::FrobeniusNormSq { a } => {
                    let scaled = self.scale_by(a, go)?;
                    let da = self.scalar_mul(scaled, 2.0)?;
                    self.accumulate_node(&mut adj, a, da)?;
                }
                Op::Softmax { .. }
                | Op::ColSum { .. }
                | Op::ScaleByScalar { .. }
                | Op::QrQ { .. }
                | Op::ProjectTangent { .. } => {
                    return Err(Error::NoSymbolicGradient {
                        op: self.nodes[idx].op.name(),
                    })
                }
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match adj[w.0] {
                Some(id) => out.push(id),
                None => {
                    let (r, c) = self.shape(w);
                    out.push(self.constant(Matrix::zeros(r, c))?);
                }
            }
        }
        Ok(out)
    }

    fn accumulate_node(
        &mut self,
        adj: &mut [Option<NodeId>],
        target: NodeId,
        contribution: NodeId,
    ) -> Result<()> {
        adj[target.0] = Some(match adj[target.0] {
            Some(prev) => self.add(prev, contribution)?,
            None => contribution,
        });
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], target: NodeId, contribution: Matrix) {
    match &mut adj[target.0] {
        Some(existing) => existing.add_scaled_assign(&contribution, 1.0),
        slot @ None => *slot = Some(contribution),
    }
}

/// sym(x^T y) = (x^T y + (x^T y)^T) / 2.
fn sym_of_xt_y(x: &Matrix, y: &Matrix) -> Matrix {
    let m = x.transpose().matmul(y);
    let p = m.rows();
    let mut s = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            s[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    s
}

/// Row-wise softmax with the usual max-shift for overflow safety.
fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let mut max = f64::NEG_INFINITY;
        for j in 0..x.cols() {
            max = max.max(x[(i, j)]);
        }
        let mut sum = 0.0;
        for j in 0..x.cols() {
            let e = (x[(i, j)] - max).exp();
            out[(i, j)] = e;
            sum += e;
        }
        for j in 0..x.cols() {
            out[(i, j)] /= sum;
        }
    }
    out
}

/// Mean of per-row cross-entropy, computed through log-sum-exp.
fn mean_cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..logits.rows() {
        let mut max = f64::NEG_INFINITY;
        for j in 0..logits.cols() {
            max = max.max(logits[(i, j)]);
        }
        let mut sum = 0.0;
        for j in 0..logits.cols() {
            sum += (logits[(i, j)] - max).exp();
        }
        let lse = max + sum.ln();
        total += lse - logits[(i, labels[i])];
    }
    total / logits.rows() as f64
}
