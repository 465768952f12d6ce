//! Tape-based reverse mode. Values are computed eagerly as nodes are
//! recorded; [`Graph::grad`] records the backward pass as ordinary nodes, so
//! gradients are themselves differentiable (needed by gradient-matching
//! penalties).

use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Tanh(Var),
    Relu(Var),
    LogSoftmax(Var),
    Sum(Var),
    Broadcast(Var),
    RowSum(Var),
    BroadcastCols(Var),
    ColSum(Var),
    BroadcastRows(Var),
    AppendOnes(Var),
    TakeCols(Var, usize),
    PadCols(Var, usize),
    GradReverse(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded computation. Also exported as `Tape`.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
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

    /// Records an input, parameter or constant.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.data[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    /// Rowwise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for r in 0..m.rows {
            let row = &mut out.data[r * m.cols..(r + 1) * m.cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Broadcasts a 1×1 node to `rows × cols`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = Matrix::filled(rows, cols, self.scalar(a));
        self.push(value, Op::Broadcast(a))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows).map(|r| m.row(r).iter().sum()).collect();
        let value = Matrix::from_vec(m.rows, 1, data);
        self.push(value, Op::RowSum(a))
    }

    /// Repeats an `r × 1` column `cols` times.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let m = self.value(a);
        assert_eq!(m.cols, 1, "broadcast_cols needs a column");
        let data = m.data.iter().flat_map(|&v| core::iter::repeat_n(v, cols)).collect();
        let value = Matrix::from_vec(m.rows, cols, data);
        self.push(value, Op::BroadcastCols(a))
    }

    pub fn col_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut data = vec![0.0; m.cols];
        for r in 0..m.rows {
            for (d, &v) in data.iter_mut().zip(m.row(r)) {
                *d += v;
            }
        }
        let value = Matrix::from_vec(1, m.cols, data);
        self.push(value, Op::ColSum(a))
    }

    /// Repeats a `1 × c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let m = self.value(a);
        assert_eq!(m.rows, 1, "broadcast_rows needs a row");
        let mut data = Vec::with_capacity(rows * m.cols);
        for _ in 0..rows {
            data.extend_from_slice(&m.data);
        }
        let value = Matrix::from_vec(rows, m.cols, data);
        self.push(value, Op::BroadcastRows(a))
    }

    /// Appends a constant-one column (the bias unit).
    pub fn append_ones(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut data = Vec::with_capacity(m.rows * (m.cols + 1));
        for r in 0..m.rows {
            data.extend_from_slice(m.row(r));
            data.push(1.0);
        }
        let value = Matrix::from_vec(m.rows, m.cols + 1, data);
        self.push(value, Op::AppendOnes(a))
    }

    /// Columns `start..start + len`.
    pub fn take_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.cols, "take_cols out of range");
        let mut data = Vec::with_capacity(m.rows * len);
        for r in 0..m.rows {
            data.extend_from_slice(&m.row(r)[start..start + len]);
        }
        let value = Matrix::from_vec(m.rows, len, data);
        self.push(value, Op::TakeCols(a, start))
    }

    /// Embeds `a` into `total` columns starting at `start`, zeros elsewhere.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Var {
        let m = self.value(a);
        assert!(start + m.cols <= total, "pad_cols out of range");
        let mut value = Matrix::zeros(m.rows, total);
        for r in 0..m.rows {
            value.data[r * total + start..r * total + start + m.cols].copy_from_slice(m.row(r));
        }
        self.push(value, Op::PadCols(a, start))
    }

    /// Identity on the forward pass; multiplies the incoming gradient by
    /// `-scale` on the backward pass.
    pub fn gradient_reversal(&mut self, a: Var, scale: f64) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::GradReverse(a, scale))
    }

    // Composite helpers.

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let k = self.constant(s);
        let b = self.broadcast(k, r, c);
        self.add(a, b)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// `Σ a ⊙ b` as a 1×1 node.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    /// `Σ_i terms_i`, or a zero scalar for an empty slice.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut iter = terms.iter();
        let Some(&first) = iter.next() else {
            return self.constant(0.0);
        };
        iter.fold(first, |acc, &t| self.add(acc, t))
    }

    /// Multiplies each row of `a` by the matching entry of `weights`.
    pub fn scale_rows(&mut self, a: Var, weights: &[f64]) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(weights.len(), r, "row weights");
        let data = weights.iter().flat_map(|&w| core::iter::repeat_n(w, c)).collect();
        let w = self.leaf(Matrix::from_vec(r, c, data));
        self.mul(a, w)
    }

    /// Reverse-mode gradient of the scalar node `loss` with respect to each
    /// node in `wrt`. The backward computation is recorded on the graph, so
    /// the returned nodes can be differentiated again. Nodes not connected to
    /// `loss` receive a zero gradient.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(loss), (1, 1), "loss must be scalar");
        let end = loss.0 + 1;
        let mut needs = vec![false; end];
        for w in wrt {
            if w.0 < end {
                needs[w.0] = true;
            }
        }
        for i in 0..end {
            if !needs[i] {
                needs[i] = parents(self.nodes[i].op).iter().flatten().any(|p| needs[p.0]);
            }
        }
        let mut adjoint: Vec<Option<Var>> = vec![None; end];
        if needs[loss.0] {
            adjoint[loss.0] = Some(self.constant(1.0));
        }
        for i in (0..end).rev() {
            let Some(g) = adjoint[i] else { continue };
            let node = Var(i);
            let op = self.nodes[i].op;
            let mut send = |graph: &mut Graph, to: Var, contrib: &dyn Fn(&mut Graph) -> Var| {
                if !needs[to.0] {
                    return;
                }
                let c = contrib(graph);
                adjoint[to.0] = Some(match adjoint[to.0] {
                    Some(prev) => graph.add(prev, c),
                    None => c,
                });
            };
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    send(self, a, &|gr| {
                        let bt = gr.transpose(b);
                        gr.matmul(g, bt)
                    });
                    send(self, b, &|gr| {
                        let at = gr.transpose(a);
                        gr.matmul(at, g)
                    });
                }
                Op::Transpose(a) => send(self, a, &|gr| gr.transpose(g)),
                Op::Add(a, b) => {
                    send(self, a, &|_| g);
                    send(self, b, &|_| g);
                }
                Op::Sub(a, b) => {
                    send(self, a, &|_| g);
                    send(self, b, &|gr| gr.scale(g, -1.0));
                }
                Op::Mul(a, b) => {
                    send(self, a, &|gr| gr.mul(g, b));
                    send(self, b, &|gr| gr.mul(g, a));
                }
                Op::Scale(a, s) => send(self, a, &|gr| gr.scale(g, s)),
                Op::Exp(a) => send(self, a, &|gr| gr.mul(g, node)),
                Op::Tanh(a) => send(self, a, &|gr| {
                    let y2 = gr.mul(node, node);
                    let gy2 = gr.mul(g, y2);
                    gr.sub(g, gy2)
                }),
                Op::Relu(a) => send(self, a, &|gr| {
                    let mask = gr.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let m = gr.leaf(mask);
                    gr.mul(g, m)
                }),
                Op::LogSoftmax(a) => send(self, a, &|gr| {
                    let cols = gr.shape(node).1;
                    let p = gr.exp(node);
                    let rs = gr.row_sum(g);
                    let b = gr.broadcast_cols(rs, cols);
                    let pb = gr.mul(p, b);
                    gr.sub(g, pb)
                }),
                Op::Sum(a) => send(self, a, &|gr| {
                    let (r, c) = gr.shape(a);
                    gr.broadcast(g, r, c)
                }),
                Op::Broadcast(a) => send(self, a, &|gr| gr.sum(g)),
                Op::RowSum(a) => send(self, a, &|gr| {
                    let c = gr.shape(a).1;
                    gr.broadcast_cols(g, c)
                }),
                Op::BroadcastCols(a) => send(self, a, &|gr| gr.row_sum(g)),
                Op::ColSum(a) => send(self, a, &|gr| {
                    let r = gr.shape(a).0;
                    gr.broadcast_rows(g, r)
                }),
                Op::BroadcastRows(a) => send(self, a, &|gr| gr.col_sum(g)),
                Op::AppendOnes(a) => send(self, a, &|gr| {
                    let c = gr.shape(a).1;
                    gr.take_cols(g, 0, c)
                }),
                Op::TakeCols(a, start) => send(self, a, &|gr| {
                    let total = gr.shape(a).1;
                    gr.pad_cols(g, start, total)
                }),
                Op::PadCols(a, start) => send(self, a, &|gr| {
                    let len = gr.shape(a).1;
                    gr.take_cols(g, start, len)
                }),
                Op::GradReverse(a, s) => send(self, a, &|gr| gr.scale(g, -s)),
            }
        }
        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.shape(w);
                    self.leaf(Matrix::zeros(r, c))
                }
            })
            .collect()
    }
}

fn parents(op: Op) -> [Option<Var>; 2] {
    match op {
        Op::Leaf => [None, None],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => [Some(a), Some(b)],
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::Exp(a)
        | Op::Tanh(a)
        | Op::Relu(a)
        | Op::LogSoftmax(a)
        | Op::Sum(a)
        | Op::Broadcast(a)
        | Op::RowSum(a)
        | Op::BroadcastCols(a)
        | Op::ColSum(a)
        | Op::BroadcastRows(a)
        | Op::AppendOnes(a)
        | Op::TakeCols(a, _)
        | Op::PadCols(a, _)
        | Op::GradReverse(a, _) => [Some(a), None],
    }
}
