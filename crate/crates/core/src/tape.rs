//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Forward operations execute eagerly and record themselves as nodes; the
//! backward pass walks the tape once in reverse, accumulating gradients only
//! through nodes that require them. Leaves registered with [`Tape::param`]
//! receive entries in the gradient map; frozen leaves never do, which is the
//! mechanism that keeps the base model untouched while gradients flow through
//! it into the prompts.
//!
//! The tape is single-threaded by construction. Identical inputs replay to
//! bit-identical gradients: nodes are visited in reverse insertion order and
//! every accumulation is an ordered in-place add.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Transpose {
        a: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
        bias_row: bool,
    },
    Scale {
        a: NodeId,
        c: f64,
    },
    ConcatRows {
        parts: Vec<NodeId>,
    },
    SliceRows {
        a: NodeId,
        lo: usize,
        hi: usize,
    },
    Embed {
        table: NodeId,
        tokens: Vec<usize>,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        // per-row statistics saved by the forward pass
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax {
        a: NodeId,
    },
    Gelu {
        a: NodeId,
    },
    CausalMask {
        a: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<(usize, usize)>,
        // softmax rows for the supervised positions, in target order
        probs: Vec<f64>,
    },
    Sum {
        a: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op,
    param: Option<String>,
}

/// Execution arena and operation record for one forward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    strict: bool,
}

const MASK_NEG: f64 = -1e30;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Tape {
    /// Strict tapes reject non-finite operands; tests and gradient checks run strict.
    pub fn new(strict: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            strict,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].data.clone())
            .expect("tape nodes hold valid shapes")
    }

    /// Frozen leaf: participates in the graph, never receives gradient.
    pub fn leaf(&mut self, t: &Tensor) -> Result<NodeId> {
        self.check_finite("leaf", t.data())?;
        Ok(self.push(t.data().to_vec(), t.shape().to_vec(), false, Op::Leaf, None))
    }

    /// Trainable leaf: appears in the gradient map under `name`.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Result<NodeId> {
        self.check_finite("param", t.data())?;
        Ok(self.push(
            t.data().to_vec(),
            t.shape().to_vec(),
            true,
            Op::Leaf,
            Some(name.to_string()),
        ))
    }

    fn push(
        &mut self,
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op,
        param: Option<String>,
    ) -> NodeId {
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            op,
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check_finite(&self, op: &'static str, data: &[f64]) -> Result<()> {
        if self.strict && !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("op '{op}'"),
                diagnostics: None,
            });
        }
        Ok(())
    }

    fn rows_cols(&self, id: NodeId) -> (usize, usize) {
        let s = &self.nodes[id.0].shape;
        if s.len() == 2 {
            (s[0], s[1])
        } else {
            (1, s[0])
        }
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- forward operations ------------------------------------------------

    /// (m,k) x (k,n) -> (m,n)
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rows_cols(a);
        let (k2, n) = self.rows_cols(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        self.check_finite("matmul", &self.nodes[a.0].data)?;
        self.check_finite("matmul", &self.nodes[b.0].data)?;
        let out = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(out, vec![m, n], rg, Op::MatMul { a, b }, None))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.rows_cols(a);
        self.check_finite("transpose", &self.nodes[a.0].data)?;
        let src = &self.nodes[a.0].data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, vec![n, m], rg, Op::Transpose { a }, None))
    }

    /// Same-shape elementwise add, or (m,n) + (1,n) bias-row broadcast.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ma, na) = self.rows_cols(a);
        let (mb, nb) = self.rows_cols(b);
        let bias_row = !(ma == mb && na == nb);
        if bias_row && !(mb == 1 && na == nb) {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", self.shape(a), self.shape(b)),
            ));
        }
        self.check_finite("add", &self.nodes[a.0].data)?;
        self.check_finite("add", &self.nodes[b.0].data)?;
        let bdat = &self.nodes[b.0].data;
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + if bias_row { bdat[i % na] } else { bdat[i] })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(out, shape, rg, Op::Add { a, b, bias_row }, None))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check_finite("scale", &self.nodes[a.0].data)?;
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, shape, rg, Op::Scale { a, c }, None))
    }

    /// Stack parts vertically. The backward pass splits the upstream gradient
    /// by row ranges, which is what routes prompt gradients around a frozen
    /// feature producer.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat-rows", "no parts".to_string()));
        }
        let (_, n0) = self.rows_cols(parts[0]);
        let mut rows = 0;
        for &p in parts {
            let (m, n) = self.rows_cols(p);
            if n != n0 {
                return Err(Error::shape(
                    "concat-rows",
                    format!("column mismatch: {n} vs {n0}"),
                ));
            }
            rows += m;
        }
        let mut out = Vec::with_capacity(rows * n0);
        for &p in parts {
            self.check_finite("concat-rows", &self.nodes[p.0].data)?;
            out.extend_from_slice(&self.nodes[p.0].data);
        }
        let rg = self.needs_grad(parts);
        Ok(self.push(
            out,
            vec![rows, n0],
            rg,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            None,
        ))
    }

    /// Rows lo..hi as a new node.
    pub fn slice_rows(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        let (m, n) = self.rows_cols(a);
        if lo >= hi || hi > m {
            return Err(Error::shape(
                "slice-rows",
                format!("range {lo}..{hi} of {m} rows"),
            ));
        }
        self.check_finite("slice-rows", &self.nodes[a.0].data)?;
        let out = self.nodes[a.0].data[lo * n..hi * n].to_vec();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, vec![hi - lo, n], rg, Op::SliceRows { a, lo, hi }, None))
    }

    /// Gather rows of `table` for each token id.
    pub fn embed(&mut self, table: NodeId, tokens: &[usize]) -> Result<NodeId> {
        let (v, e) = self.rows_cols(table);
        if tokens.is_empty() {
            return Err(Error::shape("embedding-lookup", "empty token list".to_string()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= v) {
            return Err(Error::shape(
                "embedding-lookup",
                format!("token id {bad} out of range for table with {v} rows"),
            ));
        }
        self.check_finite("embedding-lookup", &self.nodes[table.0].data)?;
        let src = &self.nodes[table.0].data;
        let mut out = Vec::with_capacity(tokens.len() * e);
        for &t in tokens {
            out.extend_from_slice(&src[t * e..(t + 1) * e]);
        }
        let rg = self.needs_grad(&[table]);
        Ok(self.push(
            out,
            vec![tokens.len(), e],
            rg,
            Op::Embed {
                table,
                tokens: tokens.to_vec(),
            },
            None,
        ))
    }

    /// Per-row normalization with learned affine: gamma, beta are (1,n).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (m, n) = self.rows_cols(x);
        let (mg, ng) = self.rows_cols(gamma);
        let (mb, nb) = self.rows_cols(beta);
        if mg != 1 || mb != 1 || ng != n || nb != n {
            return Err(Error::shape(
                "layer-norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    self.shape(x),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        self.check_finite("layer-norm", &self.nodes[x.0].data)?;
        let xd = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut out = vec![0.0; m * n];
        let mut means = vec![0.0; m];
        let mut rstds = vec![0.0; m];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            means[i] = mean;
            rstds[i] = rstd;
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        let rg = self.needs_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            vec![m, n],
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
            None,
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.rows_cols(a);
        self.check_finite("softmax", &self.nodes[a.0].data)?;
        let xd = &self.nodes[a.0].data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                denom += e;
            }
            for j in 0..n {
                out[i * n + j] /= denom;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, shape, rg, Op::Softmax { a }, None))
    }

    /// tanh-approximation GELU.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_finite("gelu", &self.nodes[a.0].data)?;
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, shape, rg, Op::Gelu { a }, None))
    }

    /// Additive causal mask on a square score matrix: positions j > i get a
    /// large negative offset so softmax sends them to zero.
    pub fn causal_mask(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.rows_cols(a);
        if m != n {
            return Err(Error::shape(
                "causal-mask-apply",
                format!("square matrix required, got {:?}", self.shape(a)),
            ));
        }
        self.check_finite("causal-mask-apply", &self.nodes[a.0].data)?;
        let mut out = self.nodes[a.0].data.clone();
        for i in 0..m {
            for j in (i + 1)..n {
                out[i * n + j] += MASK_NEG;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, shape, rg, Op::CausalMask { a }, None))
    }

    /// Mean cross-entropy of `logits` rows against integer classes at the
    /// given (row, class) positions. Output is a scalar.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[(usize, usize)]) -> Result<NodeId> {
        let (m, v) = self.rows_cols(logits);
        if targets.is_empty() {
            return Err(Error::InvalidArgument(
                "cross-entropy with no supervised positions".to_string(),
            ));
        }
        for &(row, class) in targets {
            if row >= m || class >= v {
                return Err(Error::shape(
                    "cross-entropy",
                    format!("target ({row},{class}) outside logits {:?}", self.shape(logits)),
                ));
            }
        }
        self.check_finite("cross-entropy", &self.nodes[logits.0].data)?;
        let xd = &self.nodes[logits.0].data;
        let mut probs = Vec::with_capacity(targets.len() * v);
        let mut total = 0.0;
        for &(row, class) in targets {
            let r = &xd[row * v..(row + 1) * v];
            let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &x in r {
                denom += (x - max).exp();
            }
            let log_denom = denom.ln() + max;
            total -= r[class] - log_denom;
            for &x in r {
                probs.push((x - log_denom).exp());
            }
        }
        let loss = total / targets.len() as f64;
        let rg = self.needs_grad(&[logits]);
        Ok(self.push(
            vec![loss],
            vec![1],
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            None,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_finite("sum", &self.nodes[a.0].data)?;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(vec![s], vec![1], rg, Op::Sum { a }, None))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Returns gradients for every `param`
    /// leaf (zero-filled when the loss does not reach it); frozen leaves and
    /// interior nodes are absent from the map.
    pub fn backward(&mut self, loss: NodeId) -> Result<BTreeMap<String, Tensor>> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty tape".to_string()));
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }

        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(i, &g, &mut grads);
            if self.nodes[i].param.is_some() {
                grads[i] = Some(g); // keep for the output map
            }
        }

        let mut map = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.data.len()]);
                map.insert(name.clone(), Tensor::new(node.shape.clone(), g)?);
            }
        }
        Ok(map)
    }

    fn add_into(grads: &mut Vec<Option<Vec<f64>>>, nodes: &[Node], id: NodeId, contrib: &[f64]) {
        if !nodes[id.0].requires_grad {
            return;
        }
        let slot = grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].data.len()]);
        for (s, c) in slot.iter_mut().zip(contrib) {
            *s += c;
        }
    }

    fn accumulate_inputs(&self, i: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let nodes = &self.nodes;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = rows_cols_of(&nodes[a.0].shape);
                let n = nodes[b.0].shape[1];
                if nodes[a.0].requires_grad {
                    // dA = G . B^T
                    let bd = &nodes[b.0].data;
                    let mut bt = vec![0.0; n * k];
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = bd[p * n + j];
                        }
                    }
                    let da = matmul_raw(g, &bt, m, n, k);
                    Self::add_into(grads, nodes, *a, &da);
                }
                if nodes[b.0].requires_grad {
                    // dB = A^T . G
                    let ad = &nodes[a.0].data;
                    let mut at = vec![0.0; k * m];
                    for r in 0..m {
                        for p in 0..k {
                            at[p * m + r] = ad[r * k + p];
                        }
                    }
                    let db = matmul_raw(&at, g, k, m, n);
                    Self::add_into(grads, nodes, *b, &db);
                }
            }
            Op::Transpose { a } => {
                let (m, n) = rows_cols_of(&nodes[a.0].shape);
                let mut da = vec![0.0; m * n];
                for i2 in 0..m {
                    for j in 0..n {
                        da[i2 * n + j] = g[j * m + i2];
                    }
                }
                Self::add_into(grads, nodes, *a, &da);
            }
            Op::Add { a, b, bias_row } => {
                Self::add_into(grads, nodes, *a, g);
                if *bias_row {
                    let n = nodes[b.0].data.len();
                    let mut db = vec![0.0; n];
                    for (idx, &gv) in g.iter().enumerate() {
                        db[idx % n] += gv;
                    }
                    Self::add_into(grads, nodes, *b, &db);
                } else {
                    Self::add_into(grads, nodes, *b, g);
                }
            }
            Op::Scale { a, c } => {
                let da: Vec<f64> = g.iter().map(|&gv| gv * c).collect();
                Self::add_into(grads, nodes, *a, &da);
            }
            Op::ConcatRows { parts } => {
                let n = nodes[i].shape[1];
                let mut row = 0;
                for &p in parts {
                    let rows = nodes[p.0].shape[0];
                    let slice = &g[row * n..(row + rows) * n];
                    Self::add_into(grads, nodes, p, slice);
                    row += rows;
                }
            }
            Op::SliceRows { a, lo, hi } => {
                let (m, n) = rows_cols_of(&nodes[a.0].shape);
                let mut da = vec![0.0; m * n];
                da[lo * n..hi * n].copy_from_slice(g);
                Self::add_into(grads, nodes, *a, &da);
            }
            Op::Embed { table, tokens } => {
                let (v, e) = rows_cols_of(&nodes[table.0].shape);
                let mut dt = vec![0.0; v * e];
                for (pos, &tok) in tokens.iter().enumerate() {
                    for j in 0..e {
                        dt[tok * e + j] += g[pos * e + j];
                    }
                }
                Self::add_into(grads, nodes, *table, &dt);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let (m, n) = rows_cols_of(&nodes[x.0].shape);
                let xd = &nodes[x.0].data;
                let gd = &nodes[gamma.0].data;
                let mut dx = vec![0.0; m * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for r in 0..m {
                    let xrow = &xd[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let mu = mean[r];
                    let rs = rstd[r];
                    // xhat and the two per-row means the backward needs
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..n {
                        let xhat = (xrow[j] - mu) * rs;
                        let dxhat = grow[j] * gd[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgamma[j] += grow[j] * xhat;
                        dbeta[j] += grow[j];
                    }
                    let inv_n = 1.0 / n as f64;
                    for j in 0..n {
                        let xhat = (xrow[j] - mu) * rs;
                        let dxhat = grow[j] * gd[j];
                        dx[r * n + j] =
                            rs * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                    }
                }
                Self::add_into(grads, nodes, *x, &dx);
                Self::add_into(grads, nodes, *gamma, &dgamma);
                Self::add_into(grads, nodes, *beta, &dbeta);
            }
            Op::Softmax { a } => {
                let (m, n) = rows_cols_of(&nodes[i].shape);
                let p = &nodes[i].data;
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    let prow = &p[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let dot: f64 = prow.iter().zip(grow).map(|(&pv, &gv)| pv * gv).sum();
                    for j in 0..n {
                        da[r * n + j] = prow[j] * (grow[j] - dot);
                    }
                }
                Self::add_into(grads, nodes, *a, &da);
            }
            Op::Gelu { a } => {
                let xd = &nodes[a.0].data;
                let da: Vec<f64> = g
                    .iter()
                    .zip(xd)
                    .map(|(&gv, &x)| {
                        let inner = GELU_C * (x + GELU_A * x * x * x);
                        let t = inner.tanh();
                        let sech2 = 1.0 - t * t;
                        let dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * sech2 * dinner)
                    })
                    .collect();
                Self::add_into(grads, nodes, *a, &da);
            }
            Op::CausalMask { a } => {
                Self::add_into(grads, nodes, *a, g);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (m, v) = rows_cols_of(&nodes[logits.0].shape);
                let scale = g[0] / targets.len() as f64;
                let mut dl = vec![0.0; m * v];
                for (t_idx, &(row, class)) in targets.iter().enumerate() {
                    let prow = &probs[t_idx * v..(t_idx + 1) * v];
                    for j in 0..v {
                        let onehot = if j == class { 1.0 } else { 0.0 };
                        dl[row * v + j] += scale * (prow[j] - onehot);
                    }
                }
                Self::add_into(grads, nodes, *logits, &dl);
            }
            Op::Sum { a } => {
                let da = vec![g[0]; nodes[a.0].data.len()];
                Self::add_into(grads, nodes, *a, &da);
            }
        }
    }
}

fn rows_cols_of(shape: &[usize]) -> (usize, usize) {
    if shape.len() == 2 {
        (shape[0], shape[1])
    } else {
        (1, shape[0])
    }
}

/// (m,k) x (k,n) row-major multiply, ikj loop order.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}
