//! Minimal reverse-mode automatic differentiation over `f64` vectors.
//!
//! A [`Tape`] records operations as they execute; [`Tape::backward`] walks
//! the record in reverse and accumulates exact gradients for every
//! parameter leaf. Operations cover what the pose-regression network
//! needs: affine maps, ReLU, weighted sums with constant coefficients,
//! element-wise max pooling, concatenation, and the vector calculus
//! (dot, norm, cross, scalar division) behind the rotation decode.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss; node has length {0}")]
    NonScalarLoss(usize),
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Param,
    Constant,
    /// `W·x` with `W` stored row-major as a `rows×cols` parameter vector.
    MatVec {
        w: Var,
        x: Var,
        rows: usize,
        cols: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Relu(Var),
    ScaleConst(Var, f64),
    /// Vector times scalar node.
    ScaleVar { v: Var, s: Var },
    /// Vector divided by scalar node.
    DivVar { v: Var, s: Var },
    /// Σ cᵢ·xᵢ with constant coefficients.
    WeightedSum { terms: Vec<Var>, coeffs: Vec<f64> },
    /// Element-wise max over the inputs; gradient routes to the first
    /// input attaining the maximum.
    MaxPool(Vec<Var>),
    Concat(Vec<Var>),
    Slice { v: Var, start: usize },
    Dot(Var, Var),
    Norm(Var),
    Cross(Var, Var),
}

struct Node {
    op: Op,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Gradients per node, populated by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given node; zeros if the node never
    /// influenced the loss.
    pub fn get(&self, var: Var, len: usize) -> Vec<f64> {
        self.grads[var.0].clone().unwrap_or_else(|| vec![0.0; len])
    }

    pub fn get_ref(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Vec<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, values: &[f64]) -> Var {
        self.push(Op::Param, values.to_vec(), true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.push(Op::Constant, values.to_vec(), false)
    }

    pub fn matvec(&mut self, w: Var, rows: usize, cols: usize, x: Var) -> Result<Var, TapeError> {
        if self.nodes[w.0].value.len() != rows * cols || self.nodes[x.0].value.len() != cols {
            return Err(TapeError::DimensionMismatch {
                op: "matvec",
                detail: format!(
                    "W has {} entries for {rows}x{cols}, x has {}",
                    self.nodes[w.0].value.len(),
                    self.nodes[x.0].value.len()
                ),
            });
        }
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; rows];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wv[r * cols..(r + 1) * cols];
            *o = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        let needs = self.needs(w) || self.needs(x);
        Ok(self.push(Op::MatVec { w, x, rows, cols }, out, needs))
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TapeError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.len() != vb.len() {
            return Err(TapeError::DimensionMismatch {
                op: name,
                detail: format!("{} vs {}", va.len(), vb.len()),
            });
        }
        let out = va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(op, out, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        let needs = self.needs(a);
        self.push(Op::Relu(a), out, needs)
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        let needs = self.needs(a);
        self.push(Op::ScaleConst(a, c), out, needs)
    }

    pub fn scale_var(&mut self, v: Var, s: Var) -> Result<Var, TapeError> {
        if self.nodes[s.0].value.len() != 1 {
            return Err(TapeError::DimensionMismatch {
                op: "scale_var",
                detail: "scale factor must be scalar".into(),
            });
        }
        let sv = self.nodes[s.0].value[0];
        let out = self.nodes[v.0].value.iter().map(|x| x * sv).collect();
        let needs = self.needs(v) || self.needs(s);
        Ok(self.push(Op::ScaleVar { v, s }, out, needs))
    }

    pub fn div_var(&mut self, v: Var, s: Var) -> Result<Var, TapeError> {
        if self.nodes[s.0].value.len() != 1 {
            return Err(TapeError::DimensionMismatch {
                op: "div_var",
                detail: "divisor must be scalar".into(),
            });
        }
        let sv = self.nodes[s.0].value[0];
        let out = self.nodes[v.0].value.iter().map(|x| x / sv).collect();
        let needs = self.needs(v) || self.needs(s);
        Ok(self.push(Op::DivVar { v, s }, out, needs))
    }

    pub fn weighted_sum(&mut self, terms: &[Var], coeffs: &[f64]) -> Result<Var, TapeError> {
        if terms.is_empty() || terms.len() != coeffs.len() {
            return Err(TapeError::DimensionMismatch {
                op: "weighted_sum",
                detail: format!("{} terms, {} coefficients", terms.len(), coeffs.len()),
            });
        }
        let len = self.nodes[terms[0].0].value.len();
        let mut out = vec![0.0; len];
        for (&t, &c) in terms.iter().zip(coeffs) {
            let tv = &self.nodes[t.0].value;
            if tv.len() != len {
                return Err(TapeError::DimensionMismatch {
                    op: "weighted_sum",
                    detail: format!("term length {} vs {}", tv.len(), len),
                });
            }
            for (o, x) in out.iter_mut().zip(tv) {
                *o += c * x;
            }
        }
        let needs = terms.iter().any(|&t| self.needs(t));
        Ok(self.push(
            Op::WeightedSum {
                terms: terms.to_vec(),
                coeffs: coeffs.to_vec(),
            },
            out,
            needs,
        ))
    }

    pub fn max_pool(&mut self, inputs: &[Var]) -> Result<Var, TapeError> {
        if inputs.is_empty() {
            return Err(TapeError::DimensionMismatch {
                op: "max_pool",
                detail: "no inputs".into(),
            });
        }
        let len = self.nodes[inputs[0].0].value.len();
        let mut out = vec![f64::NEG_INFINITY; len];
        for &v in inputs {
            let tv = &self.nodes[v.0].value;
            if tv.len() != len {
                return Err(TapeError::DimensionMismatch {
                    op: "max_pool",
                    detail: format!("input length {} vs {}", tv.len(), len),
                });
            }
            for (o, x) in out.iter_mut().zip(tv) {
                if *x > *o {
                    *o = *x;
                }
            }
        }
        let needs = inputs.iter().any(|&t| self.needs(t));
        Ok(self.push(Op::MaxPool(inputs.to_vec()), out, needs))
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var, TapeError> {
        if inputs.is_empty() {
            return Err(TapeError::DimensionMismatch {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        let mut out = Vec::new();
        for &v in inputs {
            out.extend_from_slice(&self.nodes[v.0].value);
        }
        let needs = inputs.iter().any(|&t| self.needs(t));
        Ok(self.push(Op::Concat(inputs.to_vec()), out, needs))
    }

    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Result<Var, TapeError> {
        let tv = &self.nodes[v.0].value;
        if start + len > tv.len() {
            return Err(TapeError::DimensionMismatch {
                op: "slice",
                detail: format!("[{start}, {}) of length {}", start + len, tv.len()),
            });
        }
        let out = tv[start..start + len].to_vec();
        let needs = self.needs(v);
        Ok(self.push(Op::Slice { v, start }, out, needs))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.len() != vb.len() {
            return Err(TapeError::DimensionMismatch {
                op: "dot",
                detail: format!("{} vs {}", va.len(), vb.len()),
            });
        }
        let out = vec![va.iter().zip(vb).map(|(x, y)| x * y).sum()];
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Dot(a, b), out, needs))
    }

    pub fn norm(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0]
            .value
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let needs = self.needs(a);
        self.push(Op::Norm(a), vec![n], needs)
    }

    pub fn cross(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.len() != 3 || vb.len() != 3 {
            return Err(TapeError::DimensionMismatch {
                op: "cross",
                detail: format!("{} and {}", va.len(), vb.len()),
            });
        }
        let out = vec![
            va[1] * vb[2] - va[2] * vb[1],
            va[2] * vb[0] - va[0] * vb[2],
            va[0] * vb[1] - va[1] * vb[0],
        ];
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Cross(a, b), out, needs))
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradients;
    /// nodes that never influence the loss have none.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TapeError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TapeError::NonScalarLoss(self.nodes[loss.0].value.len()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Param | Op::Constant) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Param | Op::Constant => unreachable!(),
                Op::MatVec { w, x, rows, cols } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    if self.needs(*w) {
                        let slot = slot(&mut grads, *w, rows * cols);
                        for r in 0..*rows {
                            let gr = g[r];
                            for c in 0..*cols {
                                slot[r * cols + c] += gr * xv[c];
                            }
                        }
                    }
                    if self.needs(*x) {
                        let slot = slot(&mut grads, *x, *cols);
                        for r in 0..*rows {
                            let gr = g[r];
                            let row = &wv[r * cols..(r + 1) * cols];
                            for (s, w_rc) in slot.iter_mut().zip(row) {
                                *s += gr * w_rc;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &v in [a, b] {
                        if self.needs(v) {
                            let slot = slot(&mut grads, v, g.len());
                            for (s, gg) in slot.iter_mut().zip(&g) {
                                *s += gg;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        let slot = slot(&mut grads, *a, g.len());
                        for (s, gg) in slot.iter_mut().zip(&g) {
                            *s += gg;
                        }
                    }
                    if self.needs(*b) {
                        let slot = slot(&mut grads, *b, g.len());
                        for (s, gg) in slot.iter_mut().zip(&g) {
                            *s -= gg;
                        }
                    }
                }
                Op::Relu(a) => {
                    if self.needs(*a) {
                        let av = &self.nodes[a.0].value;
                        let slot = slot(&mut grads, *a, g.len());
                        for ((s, gg), x) in slot.iter_mut().zip(&g).zip(av) {
                            if *x > 0.0 {
                                *s += gg;
                            }
                        }
                    }
                }
                Op::ScaleConst(a, c) => {
                    if self.needs(*a) {
                        let slot = slot(&mut grads, *a, g.len());
                        for (s, gg) in slot.iter_mut().zip(&g) {
                            *s += c * gg;
                        }
                    }
                }
                Op::ScaleVar { v, s } => {
                    let sv = self.nodes[s.0].value[0];
                    if self.needs(*v) {
                        let slot = slot(&mut grads, *v, g.len());
                        for (sl, gg) in slot.iter_mut().zip(&g) {
                            *sl += sv * gg;
                        }
                    }
                    if self.needs(*s) {
                        let vv = &self.nodes[v.0].value;
                        let dot: f64 = vv.iter().zip(&g).map(|(x, gg)| x * gg).sum();
                        slot(&mut grads, *s, 1)[0] += dot;
                    }
                }
                Op::DivVar { v, s } => {
                    let sv = self.nodes[s.0].value[0];
                    if self.needs(*v) {
                        let slot = slot(&mut grads, *v, g.len());
                        for (sl, gg) in slot.iter_mut().zip(&g) {
                            *sl += gg / sv;
                        }
                    }
                    if self.needs(*s) {
                        let vv = &self.nodes[v.0].value;
                        let dot: f64 = vv.iter().zip(&g).map(|(x, gg)| x * gg).sum();
                        slot(&mut grads, *s, 1)[0] -= dot / (sv * sv);
                    }
                }
                Op::WeightedSum { terms, coeffs } => {
                    for (&t, &c) in terms.iter().zip(coeffs) {
                        if self.needs(t) {
                            let slot = slot(&mut grads, t, g.len());
                            for (s, gg) in slot.iter_mut().zip(&g) {
                                *s += c * gg;
                            }
                        }
                    }
                }
                Op::MaxPool(inputs) => {
                    for (j, gg) in g.iter().enumerate() {
                        if *gg == 0.0 {
                            continue;
                        }
                        let out_j = node.value[j];
                        for &cand in inputs {
                            if self.nodes[cand.0].value[j] == out_j {
                                if self.needs(cand) {
                                    slot(&mut grads, cand, node.value.len())[j] += gg;
                                }
                                break;
                            }
                        }
                    }
                }
                Op::Concat(inputs) => {
                    let mut offset = 0;
                    for &v in inputs {
                        let len = self.nodes[v.0].value.len();
                        if self.needs(v) {
                            let slot = slot(&mut grads, v, len);
                            for (s, gg) in slot.iter_mut().zip(&g[offset..offset + len]) {
                                *s += gg;
                            }
                        }
                        offset += len;
                    }
                }
                Op::Slice { v, start } => {
                    if self.needs(*v) {
                        let len = self.nodes[v.0].value.len();
                        let slot = slot(&mut grads, *v, len);
                        for (s, gg) in slot[*start..*start + g.len()].iter_mut().zip(&g) {
                            *s += gg;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let gg = g[0];
                    if self.needs(*a) {
                        let bv = self.nodes[b.0].value.clone();
                        let slot = slot(&mut grads, *a, bv.len());
                        for (s, y) in slot.iter_mut().zip(&bv) {
                            *s += gg * y;
                        }
                    }
                    if self.needs(*b) {
                        let av = self.nodes[a.0].value.clone();
                        let slot = slot(&mut grads, *b, av.len());
                        for (s, x) in slot.iter_mut().zip(&av) {
                            *s += gg * x;
                        }
                    }
                }
                Op::Norm(a) => {
                    if self.needs(*a) {
                        let av = &self.nodes[a.0].value;
                        // Guard the non-differentiable point at zero.
                        let n = node.value[0].max(1e-300);
                        let gg = g[0];
                        let slot = slot(&mut grads, *a, av.len());
                        for (s, x) in slot.iter_mut().zip(av) {
                            *s += gg * x / n;
                        }
                    }
                }
                Op::Cross(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    // ∂(a×b)/∂a ᵀ g = b×g and ∂(a×b)/∂b ᵀ g = g×a.
                    if self.needs(*a) {
                        let s = slot(&mut grads, *a, 3);
                        s[0] += bv[1] * g[2] - bv[2] * g[1];
                        s[1] += bv[2] * g[0] - bv[0] * g[2];
                        s[2] += bv[0] * g[1] - bv[1] * g[0];
                    }
                    if self.needs(*b) {
                        let s = slot(&mut grads, *b, 3);
                        s[0] += g[1] * av[2] - g[2] * av[1];
                        s[1] += g[2] * av[0] - g[0] * av[2];
                        s[2] += g[0] * av[1] - g[1] * av[0];
                    }
                }
            }
            // Leaf gradients stay in place for extraction.
        }
        Ok(Gradients { grads })
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}
