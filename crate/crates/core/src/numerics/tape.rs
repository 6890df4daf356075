//! Matrix-granular reverse-mode tape.
//!
//! Every primitive appends a node holding its forward value and the parent
//! indices it needs; [`Tape::backward`] walks the nodes once in reverse
//! creation order, which is a valid topological order because parents are
//! always created before children.

use super::matrix::{self, Matrix};
use super::ops::{self, Ops};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Softmax(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    Row(usize, usize),
    Embed {
        tokens: usize,
        positions: usize,
        ids: Vec<usize>,
        mask: Vec<bool>,
    },
    CrossEntropy {
        p: usize,
        label: usize,
    },
    ExitWeights(usize),
    Hadamard(usize, usize),
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros of the primal shape if `v` did not
    /// influence the output.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn val(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// `−ln p[label]` of a `1×C` probability row, with the usual floor.
    pub fn cross_entropy(&mut self, p: Var, label: usize) -> Var {
        let value = matrix::cross_entropy(self.val(p).data(), label)
            .expect("label checked by caller");
        self.push(Matrix::row_vector(vec![value]), Op::CrossEntropy { p: p.0, label })
    }

    /// Maps `1×(d−1)` logits to `1×d` loss weights: sigmoid for the first
    /// `d−1`, and the remainder `d − Σσ` for the last.
    pub fn exit_weights(&mut self, t: Var) -> Var {
        let logits = self.val(t).data();
        let d = logits.len() + 1;
        let mut w: Vec<f64> = logits.iter().map(|&x| matrix::sigmoid(x)).collect();
        let head: f64 = w.iter().sum();
        w.push(d as f64 - head);
        self.push(Matrix::row_vector(w), Op::ExitWeights(t.0))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        assert_eq!(x.shape(), y.shape(), "hadamard shape");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Matrix::from_raw(x.rows(), x.cols(), data);
        self.push(value, Op::Hadamard(a.0, b.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).data().iter().sum();
        self.push(Matrix::row_vector(vec![s]), Op::Sum(a.0))
    }

    /// Reverse pass seeded with `d out / d out = 1`; `out` must be `1×1`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.val(out).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = matrix::mm_nt(&g, &self.nodes[*b].value);
                    let db = matrix::mm_tn(&self.nodes[*a].value, &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    // c = a·bᵀ: da = g·b, db = gᵀ·a
                    let da = matrix::mm(&g, &self.nodes[*b].value);
                    let db = matrix::mm_tn(&g, &self.nodes[*a].value);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, bias) => {
                    let mut db = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *bias, Matrix::row_vector(db));
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, matrix::scale(&g, *s)),
                Op::Gelu(a) => {
                    let x = &self.nodes[*a].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, &xv)| gv * matrix::gelu_grad(xv))
                        .collect();
                    accumulate(&mut grads, *a, Matrix::from_raw(g.rows(), g.cols(), data));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.nodes[*gain].value.data();
                    let n = g.cols();
                    let mut dx = Matrix::zeros(g.rows(), n);
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    for r in 0..g.rows() {
                        let dy = g.row(r);
                        let xh = xhat.row(r);
                        let dxhat: Vec<f64> = dy.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx =
                            dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                            dgain[j] += dy[j] * xh[j];
                            dbias[j] += dy[j];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, Matrix::row_vector(dgain));
                    accumulate(&mut grads, *bias, Matrix::row_vector(dbias));
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let mut dz = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for (j, o) in dz.row_mut(r).iter_mut().enumerate() {
                            *o = pr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, dz);
                }
                Op::SliceCols(a, start) => {
                    let src = &self.nodes[*a].value;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        accumulate(&mut grads, p, ops::slice_cols(&g, offset, w));
                        offset += w;
                    }
                }
                Op::Row(a, r) => {
                    let src = &self.nodes[*a].value;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    da.row_mut(*r).copy_from_slice(g.data());
                    accumulate(&mut grads, *a, da);
                }
                Op::Embed {
                    tokens,
                    positions,
                    ids,
                    mask,
                } => {
                    let tv = &self.nodes[*tokens].value;
                    let pv = &self.nodes[*positions].value;
                    let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                    let mut dp = Matrix::zeros(pv.rows(), pv.cols());
                    for (i, (&id, &live)) in ids.iter().zip(mask).enumerate() {
                        if live {
                            for (d, v) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                                *d += v;
                            }
                            for (d, v) in dp.row_mut(i).iter_mut().zip(g.row(i)) {
                                *d += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *tokens, dt);
                    accumulate(&mut grads, *positions, dp);
                }
                Op::CrossEntropy { p, label } => {
                    let pv = &self.nodes[*p].value;
                    let mut dp = Matrix::zeros(pv.rows(), pv.cols());
                    let q = pv.data()[*label];
                    if q > matrix::PROB_FLOOR {
                        dp.data_mut()[*label] = -g.data()[0] / q;
                    }
                    accumulate(&mut grads, *p, dp);
                }
                Op::ExitWeights(t) => {
                    let tv = self.nodes[*t].value.data();
                    let gw = g.data();
                    let last = gw[gw.len() - 1];
                    let dt = tv
                        .iter()
                        .zip(gw)
                        .map(|(&x, &gi)| {
                            let s = matrix::sigmoid(x);
                            s * (1.0 - s) * (gi - last)
                        })
                        .collect();
                    accumulate(&mut grads, *t, Matrix::row_vector(dt));
                }
                Op::Hadamard(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, Matrix::from_raw(g.rows(), g.cols(), da));
                    accumulate(&mut grads, *b, Matrix::from_raw(g.rows(), g.cols(), db));
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.data()[0]));
                }
            }
            // interior gradients are not retained
        }

        let shapes = self.nodes[..=out.0].iter().map(|n| n.value.shape()).collect();
        Gradients { grads, shapes }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl Ops for Tape {
    type M = Var;

    fn value<'a>(&'a self, x: &'a Var) -> &'a Matrix {
        self.val(*x)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let v = matrix::mm(self.val(*a), self.val(*b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    fn matmul_nt(&mut self, a: &Var, b: &Var) -> Var {
        let v = matrix::mm_nt(self.val(*a), self.val(*b));
        self.push(v, Op::MatMulNt(a.0, b.0))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = matrix::add(self.val(*a), self.val(*b));
        self.push(v, Op::Add(a.0, b.0))
    }

    fn add_row(&mut self, a: &Var, bias: &Var) -> Var {
        let v = matrix::add_row(self.val(*a), self.val(*bias));
        self.push(v, Op::AddRow(a.0, bias.0))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = matrix::scale(self.val(*a), s);
        self.push(v, Op::Scale(a.0, s))
    }

    fn gelu(&mut self, a: &Var) -> Var {
        let v = ops::Eval.gelu(self.val(*a));
        self.push(v, Op::Gelu(a.0))
    }

    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Var {
        let xv = self.val(*x);
        let (g, b) = (self.val(*gain), self.val(*bias));
        let mut out = Vec::with_capacity(xv.len());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let (xh, is) = matrix::normalize(xv.row(r), eps);
            out.extend(
                xh.iter()
                    .zip(g.data())
                    .zip(b.data())
                    .map(|((v, gg), bb)| v * gg + bb),
            );
            xhat.extend(xh);
            inv_std.push(is);
        }
        let (rows, cols) = xv.shape();
        let value = Matrix::from_raw(rows, cols, out);
        self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat: Matrix::from_raw(rows, cols, xhat),
                inv_std,
            },
        )
    }

    fn masked_softmax(&mut self, a: &Var, mask: &[bool]) -> Var {
        let v = matrix::masked_softmax_rows(self.val(*a), mask);
        self.push(v, Op::Softmax(a.0))
    }

    fn slice_cols(&mut self, a: &Var, start: usize, len: usize) -> Var {
        let v = ops::slice_cols(self.val(*a), start, len);
        self.push(v, Op::SliceCols(a.0, start))
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let v = ops::concat_cols(&parts.iter().map(|p| self.val(*p)).collect::<Vec<_>>());
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    fn row(&mut self, a: &Var, r: usize) -> Var {
        let v = Matrix::row_vector(self.val(*a).row(r).to_vec());
        self.push(v, Op::Row(a.0, r))
    }

    fn embed(&mut self, tokens: &Var, positions: &Var, ids: &[usize], mask: &[bool]) -> Var {
        let v = ops::embed(self.val(*tokens), self.val(*positions), ids, mask);
        self.push(
            v,
            Op::Embed {
                tokens: tokens.0,
                positions: positions.0,
                ids: ids.to_vec(),
                mask: mask.to_vec(),
            },
        )
    }
}
