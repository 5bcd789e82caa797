//! Reverse-mode differentiation over matrices.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse and returns the gradient of a
//! `1×1` output with respect to every node that contributed to it.

use crate::error::{Error, Result};
use crate::numerics::ops::{self, gemm, MatRef};
use crate::numerics::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    RowSqNorm(Var),
    Mean(Var),
    SliceRows { src: Var, start: usize },
    SoftmaxXent { logits: Var, labels: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input or parameter. The gradient buffer is not carried over.
    pub fn leaf(&mut self, value: &Tensor) -> Var {
        self.push(value.detached(), Op::Leaf)
    }

    pub fn leaf_owned(&mut self, value: Tensor) -> Var {
        let value = if value.grad().is_some() {
            value.detached()
        } else {
            value
        };
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).values()[0]
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::affine(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::bounded_tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).same_shape(self.value(b)) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what} of shapes {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let va = self.value(a);
        let vals = va
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), vals)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let va = self.value(a);
        let vals = va
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), vals)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    /// `N×D → N×1` sums of squares along each row.
    pub fn row_sq_norm(&mut self, x: Var) -> Result<Var> {
        let (n, _) = self.dims(x)?;
        let vals = self
            .value(x)
            .iter_rows()
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        let out = Tensor::matrix(n, 1, vals)?;
        Ok(self.push(out, Op::RowSqNorm(x)))
    }

    /// Row-wise squared distances between two `N×D` matrices.
    pub fn row_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        self.row_sq_norm(d)
    }

    /// Mean over every element, producing a `1×1` node.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.values().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c) = self.dims(src)?;
        if len == 0 || start + len > n {
            return Err(Error::dim(format!(
                "slice rows {start}..{} of a {n}-row matrix",
                start + len
            )));
        }
        let vals = self.value(src).values()[start * c..(start + len) * c].to_vec();
        let out = Tensor::matrix(len, c, vals)?;
        Ok(self.push(out, Op::SliceRows { src, start }))
    }

    /// Mean softmax cross-entropy of `N×C` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.dims(logits)?;
        if labels.len() != n {
            return Err(Error::dim(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::dim(format!("label {bad} outside {c} classes")));
        }
        let mut total = 0.0;
        for (row, &l) in self.value(logits).iter_rows().zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[l];
        }
        let out = Tensor::scalar(total / n as f64);
        Ok(self.push(
            out,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Gradients of the `1×1` node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if out_shape != [1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a 1x1 output, got {out_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                // Leaves keep their gradient for the caller.
                Op::Leaf => grads[idx] = Some(g),
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, i) = (xv.rows(), xv.cols());
                    let u = wv.cols();
                    let gm = MatRef::new(&g, n, u);
                    let mut dx = vec![0.0; n * i];
                    gemm(gm, MatRef::new(wv.values(), i, u).t(), &mut dx, 0.0);
                    let mut dw = vec![0.0; i * u];
                    gemm(MatRef::new(xv.values(), n, i).t(), gm, &mut dw, 0.0);
                    let mut db = vec![0.0; u];
                    for row in g.chunks_exact(u) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::Tanh(x) => {
                    let d = node
                        .value
                        .values()
                        .iter()
                        .zip(&g)
                        .map(|(y, g)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let d = node
                        .value
                        .values()
                        .iter()
                        .zip(&g)
                        .map(|(y, g)| g * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *x, d);
                }
                Op::Relu(x) => {
                    let d = self
                        .value(*x)
                        .values()
                        .iter()
                        .zip(&g)
                        .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads, *x, g.iter().map(|v| v * c).collect());
                }
                Op::AddScalar(x) => accumulate(&mut grads, *x, g),
                Op::Square(x) => {
                    let d = self
                        .value(*x)
                        .values()
                        .iter()
                        .zip(&g)
                        .map(|(v, g)| 2.0 * v * g)
                        .collect();
                    accumulate(&mut grads, *x, d);
                }
                Op::RowSqNorm(x) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut d = Vec::with_capacity(xv.len());
                    for (row, gr) in xv.iter_rows().zip(&g) {
                        d.extend(row.iter().map(|v| 2.0 * v * gr));
                    }
                    debug_assert_eq!(d.len(), xv.rows() * c);
                    accumulate(&mut grads, *x, d);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0] / n as f64; n]);
                }
                Op::SliceRows { src, start } => {
                    let sv = self.value(*src);
                    let c = sv.cols();
                    let mut d = vec![0.0; sv.len()];
                    d[start * c..start * c + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *src, d);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let lv = self.value(*logits);
                    let n = lv.rows() as f64;
                    let p = ops::softmax_rows(lv)?;
                    let c = lv.cols();
                    let mut d = p.into_values();
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * c + l] -= 1.0;
                    }
                    d.iter_mut().for_each(|v| *v *= g[0] / n);
                    accumulate(&mut grads, *logits, d);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(&d).for_each(|(g, d)| *g += d),
        slot @ None => *slot = Some(d),
    }
}

/// Result of [`Tape::backward`]: gradients of the leaves.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a leaf, or `None` if it did not influence the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a leaf as a tensor of `shape`, zeros when absent.
    pub fn tensor(&self, v: Var, like: &Tensor) -> Tensor {
        let mut t = Tensor::zeros(like.shape());
        if let Some(g) = self.get(v) {
            t.values_mut().copy_from_slice(g);
        }
        t
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_backward_by_hand() {
        // y = sum(x W + b) for x=[1,2], W=[[1],[3]], b=[0.5]
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let w = t.leaf(&Tensor::from_rows(&[[1.0], [3.0]]).unwrap());
        let b = t.leaf(&Tensor::from_rows(&[[0.5]]).unwrap());
        let y = t.affine(x, w, b).unwrap();
        let s = t.mean(y);
        assert_eq!(t.scalar(s), 7.5);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 3.0]);
        assert_eq!(g.get(w).unwrap(), &[1.0, 2.0]);
        assert_eq!(g.get(b).unwrap(), &[1.0]);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::scalar(0.0));
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::scalar(3.0));
        let y = t.add(x, x).unwrap();
        let z = t.square(y);
        let g = t.backward(z).unwrap();
        // d/dx (2x)^2 = 8x
        assert_eq!(g.get(x).unwrap(), &[24.0]);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::scalar(1.0));
        let unused = t.leaf(&Tensor::scalar(2.0));
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::zeros(&[2, 2]));
        assert!(matches!(t.backward(x), Err(Error::Usage(_))));
    }
}
