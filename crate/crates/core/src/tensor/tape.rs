//! Wengert tape: records primitive ops during the forward pass, replays them
//! in exact reverse order to accumulate gradients.
//!
//! Shapes are validated eagerly and violations panic with both shapes in the
//! message. All tensors on a tape are immutable once created; a tape and its
//! nodes are confined to one worker.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::params::ParamHandle;

/// Floor below which a probability is clamped before taking its log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Norm below which the sqrt backward is treated as zero (singularity guard).
const SQRT_GRAD_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    ScaleRows { scale: usize, x: usize },
    Affine { x: usize, mul: f64 },
    Tanh { x: usize },
    Sigmoid { x: usize },
    Sqrt { x: usize },
    MaskedSoftmax { x: usize, mask: Rc<Vec<f64>> },
    ConcatCols { parts: Vec<usize> },
    SliceCols { x: usize, start: usize, len: usize },
    Lookup { table: usize, ids: Rc<Vec<usize>> },
    ScatterAddCols { src: usize, ids: Rc<Vec<usize>>, width: usize },
    GatherCols { x: usize, ids: Rc<Vec<usize>> },
    LogClamped { x: usize },
    Sum { x: usize },
}

struct Node {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    op: Op,
    sink: Option<ParamHandle>,
}

/// Ordered record of executed primitives. Replaying it backward visits ops in
/// exact reverse execution order; afterwards every tensor reachable from the
/// loss has a populated grad.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
    clamp_hits: Cell<usize>,
}

/// Handle to one tensor on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            clamp_hits: Cell::new(0),
        }
    }

    /// A tape that records values only; backward is unavailable. Used for
    /// decoding and validation passes.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
            clamp_hits: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Times a probability hit the log floor during this tape's lifetime.
    pub fn clamp_hits(&self) -> usize {
        self.clamp_hits.get()
    }

    fn push(
        &self,
        values: Vec<f64>,
        rows: usize,
        cols: usize,
        shape: Vec<usize>,
        op: Op,
        requires_grad: bool,
        sink: Option<ParamHandle>,
    ) -> Var<'_> {
        debug_assert_eq!(values.len(), rows * cols);
        let grad = if requires_grad && self.grad_enabled {
            Some(vec![0.0; values.len()])
        } else {
            None
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            values,
            rows,
            cols,
            shape,
            grad,
            op,
            sink,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Stages a constant; it never receives gradients.
    pub fn constant(&self, shape: &[usize], values: Vec<f64>) -> Var<'_> {
        let (rows, cols) = view2d(shape);
        assert!(
            values.len() == rows * cols,
            "constant shape {:?} implies {} values, got {}",
            shape,
            rows * cols,
            values.len()
        );
        self.push(values, rows, cols, shape.to_vec(), Op::Leaf, false, None)
    }

    pub fn zeros(&self, shape: &[usize]) -> Var<'_> {
        let n = shape.iter().product();
        self.constant(shape, vec![0.0; n])
    }

    /// Stages a leaf that receives gradients but is not tied to a parameter.
    pub fn leaf(&self, shape: &[usize], values: Vec<f64>) -> Var<'_> {
        let (rows, cols) = view2d(shape);
        assert_eq!(values.len(), rows * cols, "leaf shape/value mismatch");
        self.push(values, rows, cols, shape.to_vec(), Op::Leaf, true, None)
    }

    /// Stages a parameter: the values are copied onto the tape, and
    /// [`Tape::flush_grads`] later accumulates the node's gradient back into
    /// the parameter's grad buffer.
    pub fn param(&self, handle: &ParamHandle) -> Var<'_> {
        let p = handle.borrow();
        let t = &p.tensor;
        let (rows, cols) = view2d(t.shape());
        let requires = t.has_grad();
        let shape = t.shape().to_vec();
        let values = t.values().to_vec();
        drop(p);
        self.push(
            values,
            rows,
            cols,
            shape,
            Op::Leaf,
            requires,
            Some(handle.clone()),
        )
    }

    /// Adds every staged parameter's accumulated gradient into its backing
    /// tensor. Call once after backward.
    pub fn flush_grads(&self) {
        let nodes = self.nodes.borrow();
        for node in nodes.iter() {
            let (Some(sink), Some(grad)) = (&node.sink, &node.grad) else {
                continue;
            };
            let mut p = sink.borrow_mut();
            if let Some(dst) = p.tensor.grad_mut() {
                for (d, g) in dst.iter_mut().zip(grad.iter()) {
                    *d += g;
                }
            }
        }
    }

    /// Zeroes every gradient buffer on the tape so backward can be rerun from
    /// scratch.
    pub fn reset_grads(&self) {
        let mut nodes = self.nodes.borrow_mut();
        for node in nodes.iter_mut() {
            if let Some(g) = &mut node.grad {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Reverse pass from a scalar loss. Gradients accumulate, so repeated
    /// calls without [`Tape::reset_grads`] sum their contributions.
    pub fn backward(&self, loss: Var<'_>) {
        assert!(
            std::ptr::eq(loss.tape, self),
            "loss belongs to a different tape"
        );
        assert!(
            self.grad_enabled,
            "backward called on an inference tape (gradients disabled)"
        );
        let mut nodes = self.nodes.borrow_mut();
        let loss_node = &nodes[loss.id];
        assert!(
            loss_node.values.len() == 1,
            "backward requires a scalar loss, got shape {:?}",
            loss_node.shape
        );
        if loss_node.grad.is_none() {
            return; // loss does not depend on any differentiable leaf
        }
        // Leaf grads accumulate across calls; intermediate grads are scratch
        // space for this pass and must start clean.
        for node in nodes.iter_mut() {
            if !matches!(node.op, Op::Leaf) {
                if let Some(g) = &mut node.grad {
                    g.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        if let Some(g) = &mut nodes[loss.id].grad {
            g[0] += 1.0;
        }

        for i in (0..=loss.id).rev() {
            let (head, tail) = nodes.split_at_mut(i);
            let node = &tail[0];
            let Some(out_grad) = node.grad.as_ref() else {
                continue;
            };
            backprop(node, out_grad, head);
        }
    }

    fn with_values<R>(&self, id: usize, f: impl FnOnce(&Node) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[id])
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].id].rows;
        let mut total_cols = 0usize;
        for v in parts {
            let n = &nodes[v.id];
            assert!(
                n.rows == rows,
                "concat row mismatch: {:?} vs {:?}",
                nodes[parts[0].id].shape,
                n.shape
            );
            total_cols += n.cols;
        }
        let mut values = vec![0.0; rows * total_cols];
        let mut offset = 0usize;
        for v in parts {
            let n = &nodes[v.id];
            for r in 0..rows {
                let src = &n.values[r * n.cols..(r + 1) * n.cols];
                values[r * total_cols + offset..r * total_cols + offset + n.cols]
                    .copy_from_slice(src);
            }
            offset += n.cols;
        }
        let requires = parts.iter().any(|v| nodes[v.id].grad.is_some());
        drop(nodes);
        self.push(
            values,
            rows,
            total_cols,
            vec![rows, total_cols],
            Op::ConcatCols {
                parts: parts.iter().map(|v| v.id).collect(),
            },
            requires,
            None,
        )
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn view2d(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_values(self.id, |n| n.shape.clone())
    }

    pub fn rows(&self) -> usize {
        self.tape.with_values(self.id, |n| n.rows)
    }

    pub fn cols(&self) -> usize {
        self.tape.with_values(self.id, |n| n.cols)
    }

    pub fn numel(&self) -> usize {
        self.tape.with_values(self.id, |n| n.values.len())
    }

    pub fn values(&self) -> Vec<f64> {
        self.tape.with_values(self.id, |n| n.values.clone())
    }

    pub fn value_at(&self, idx: usize) -> f64 {
        self.tape.with_values(self.id, |n| n.values[idx])
    }

    pub fn scalar(&self) -> f64 {
        self.tape.with_values(self.id, |n| {
            assert!(n.values.len() == 1, "scalar() on shape {:?}", n.shape);
            n.values[0]
        })
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.with_values(self.id, |n| n.grad.clone())
    }

    fn same_tape(&self, other: Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id];
        let b = &nodes[rhs.id];
        assert!(
            a.cols == b.rows,
            "matmul shape mismatch: {:?} x {:?}",
            a.shape,
            b.shape
        );
        let (m, k, n) = (a.rows, a.cols, b.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.values[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b.values[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let requires = a.grad.is_some() || b.grad.is_some();
        drop(nodes);
        self.tape.push(
            out,
            m,
            n,
            vec![m, n],
            Op::MatMul {
                a: self.id,
                b: rhs.id,
            },
            requires,
            None,
        )
    }

    fn zip_ew(self, rhs: Var<'t>, name: &str, f: impl Fn(f64, f64) -> f64) -> (Vec<f64>, usize, usize, bool) {
        self.same_tape(rhs);
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id];
        let b = &nodes[rhs.id];
        assert!(
            a.rows == b.rows && a.cols == b.cols,
            "{name} shape mismatch: {:?} vs {:?}",
            a.shape,
            b.shape
        );
        let out = a
            .values
            .iter()
            .zip(b.values.iter())
            .map(|(x, y)| f(*x, *y))
            .collect();
        (out, a.rows, a.cols, a.grad.is_some() || b.grad.is_some())
    }

    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        let (out, r, c, req) = self.zip_ew(rhs, "add", |x, y| x + y);
        self.tape.push(
            out,
            r,
            c,
            vec![r, c],
            Op::Add {
                a: self.id,
                b: rhs.id,
            },
            req,
            None,
        )
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let (out, r, c, req) = self.zip_ew(rhs, "sub", |x, y| x - y);
        self.tape.push(
            out,
            r,
            c,
            vec![r, c],
            Op::Sub {
                a: self.id,
                b: rhs.id,
            },
            req,
            None,
        )
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (out, r, c, req) = self.zip_ew(rhs, "mul", |x, y| x * y);
        self.tape.push(
            out,
            r,
            c,
            vec![r, c],
            Op::Mul {
                a: self.id,
                b: rhs.id,
            },
            req,
            None,
        )
    }

    /// Adds a 1-D bias of length `cols` to every row.
    pub fn add_bias(self, bias: Var<'t>) -> Var<'t> {
        self.same_tape(bias);
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        let b = &nodes[bias.id];
        assert!(
            b.values.len() == x.cols,
            "bias shape mismatch: {:?} onto {:?}",
            b.shape,
            x.shape
        );
        let mut out = x.values.clone();
        for r in 0..x.rows {
            for c in 0..x.cols {
                out[r * x.cols + c] += b.values[c];
            }
        }
        let (rows, cols) = (x.rows, x.cols);
        let req = x.grad.is_some() || b.grad.is_some();
        drop(nodes);
        self.tape.push(
            out,
            rows,
            cols,
            vec![rows, cols],
            Op::AddBias {
                x: self.id,
                bias: bias.id,
            },
            req,
            None,
        )
    }

    /// Multiplies row `i` of `self` by `scale[i]`; `scale` must have one
    /// entry per row.
    pub fn scale_rows(self, scale: Var<'t>) -> Var<'t> {
        self.same_tape(scale);
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        let s = &nodes[scale.id];
        assert!(
            s.values.len() == x.rows,
            "scale_rows: scale {:?} does not match rows of {:?}",
            s.shape,
            x.shape
        );
        let mut out = vec![0.0; x.values.len()];
        for r in 0..x.rows {
            let sv = s.values[r];
            for c in 0..x.cols {
                out[r * x.cols + c] = sv * x.values[r * x.cols + c];
            }
        }
        let (rows, cols) = (x.rows, x.cols);
        let req = x.grad.is_some() || s.grad.is_some();
        drop(nodes);
        self.tape.push(
            out,
            rows,
            cols,
            vec![rows, cols],
            Op::ScaleRows {
                scale: scale.id,
                x: self.id,
            },
            req,
            None,
        )
    }

    /// `mul * x + add` with scalar constants.
    pub fn affine(self, mul: f64, add: f64) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        let out = x.values.iter().map(|v| mul * v + add).collect();
        let (rows, cols, shape) = (x.rows, x.cols, x.shape.clone());
        let req = x.grad.is_some();
        drop(nodes);
        self.tape.push(
            out,
            rows,
            cols,
            shape,
            Op::Affine { x: self.id, mul },
            req,
            None,
        )
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        let out = x.values.iter().map(|v| f(*v)).collect();
        let (rows, cols, shape) = (x.rows, x.cols, x.shape.clone());
        let req = x.grad.is_some();
        drop(nodes);
        self.tape.push(out, rows, cols, shape, op, req, None)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh { x: self.id }, f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid { x: self.id }, |v| 1.0 / (1.0 + (-v).exp()))
    }

    /// Elementwise square root. The backward pass treats outputs below 1e-12
    /// as having zero gradient, which is what the soft-sharing penalty needs
    /// at the point where both parameter sets coincide.
    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt { x: self.id }, f64::sqrt)
    }

    /// Row-wise softmax over unmasked entries; masked entries (mask 0.0) get
    /// probability exactly 0 and contribute no gradient. Computed with
    /// max-subtraction and renormalized so each row sums to 1 within 1e-12.
    pub fn masked_softmax(self, mask: Rc<Vec<f64>>) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        assert!(x.values.len() >= 1, "softmax of empty tensor");
        assert!(
            mask.len() == x.values.len(),
            "softmax mask length {} does not match tensor shape {:?}",
            mask.len(),
            x.shape
        );
        let (rows, cols) = (x.rows, x.cols);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &x.values[r * cols..(r + 1) * cols];
            let mrow = &mask[r * cols..(r + 1) * cols];
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if mrow[c] != 0.0 && row[c] > max {
                    max = row[c];
                }
            }
            assert!(
                max.is_finite(),
                "softmax row {r} is fully masked or non-finite"
            );
            let orow = &mut out[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for c in 0..cols {
                if mrow[c] != 0.0 {
                    let e = (row[c] - max).exp();
                    orow[c] = e;
                    sum += e;
                }
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
            // second normalization pass squeezes the row sum to 1 +- 1e-12
            let s2: f64 = orow.iter().sum();
            for v in orow.iter_mut() {
                *v /= s2;
            }
        }
        let shape = x.shape.clone();
        let req = x.grad.is_some();
        drop(nodes);
        self.tape.push(
            out,
            rows,
            cols,
            shape,
            Op::MaskedSoftmax { x: self.id, mask },
            req,
            None,
        )
    }

    pub fn softmax(self) -> Var<'t> {
        let n = self.numel();
        self.masked_softmax(Rc::new(vec![1.0; n]))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        assert!(
            start + len <= x.cols,
            "slice [{start}, {start}+{len}) out of range for shape {:?}",
            x.shape
        );
        let mut out = vec![0.0; x.rows * len];
        for r in 0..x.rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&x.values[r * x.cols + start..r * x.cols + start + len]);
        }
        let rows = x.rows;
        let req = x.grad.is_some();
        drop(nodes);
        self.tape.push(
            out,
            rows,
            len,
            vec![rows, len],
            Op::SliceCols {
                x: self.id,
                start,
                len,
            },
            req,
            None,
        )
    }

    /// Embedding lookup: row `r` of the output is `table[ids[r]]`. Repeated
    /// ids accumulate their gradients into the same table row.
    pub fn lookup(self, ids: Rc<Vec<usize>>) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let t = &nodes[self.id];
        let rows = ids.len();
        assert!(rows > 0, "lookup with empty id list");
        let mut out = vec![0.0; rows * t.cols];
        for (r, &id) in ids.iter().enumerate() {
            assert!(
                id < t.rows,
                "lookup id {id} out of range for table shape {:?}",
                t.shape
            );
            out[r * t.cols..(r + 1) * t.cols]
                .copy_from_slice(&t.values[id * t.cols..(id + 1) * t.cols]);
        }
        let cols = t.cols;
        let req = t.grad.is_some();
        drop(nodes);
        self.tape.push(
            out,
            rows,
            cols,
            vec![rows, cols],
            Op::Lookup { table: self.id, ids },
            req,
            None,
        )
    }

    /// Scatter-add along columns: `out[r][ids[r*cols + c]] += self[r][c]`.
    /// Multiple source columns carrying the same id accumulate.
    pub fn scatter_add_cols(self, ids: Rc<Vec<usize>>, width: usize) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        assert!(
            ids.len() == x.values.len(),
            "scatter ids length {} does not match tensor shape {:?}",
            ids.len(),
            x.shape
        );
        let mut out = vec![0.0; x.rows * width];
        for r in 0..x.rows {
            for c in 0..x.cols {
                let id = ids[r * x.cols + c];
                assert!(
                    id < width,
                    "scatter id {id} out of range for width {width}"
                );
                out[r * width + id] += x.values[r * x.cols + c];
            }
        }
        let rows = x.rows;
        let req = x.grad.is_some();
        drop(nodes);
        self.tape.push(
            out,
            rows,
            width,
            vec![rows, width],
            Op::ScatterAddCols {
                src: self.id,
                ids,
                width,
            },
            req,
            None,
        )
    }

    /// Picks one column per row: `out[r] = self[r][ids[r]]`. Output is
    /// `[rows, 1]`.
    pub fn gather_cols(self, ids: Rc<Vec<usize>>) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        assert!(
            ids.len() == x.rows,
            "gather ids length {} does not match rows of {:?}",
            ids.len(),
            x.shape
        );
        let mut out = vec![0.0; x.rows];
        for r in 0..x.rows {
            assert!(
                ids[r] < x.cols,
                "gather id {} out of range for shape {:?}",
                ids[r],
                x.shape
            );
            out[r] = x.values[r * x.cols + ids[r]];
        }
        let rows = x.rows;
        let req = x.grad.is_some();
        drop(nodes);
        self.tape.push(
            out,
            rows,
            1,
            vec![rows, 1],
            Op::GatherCols { x: self.id, ids },
            req,
            None,
        )
    }

    /// `ln(max(x, 1e-12))`. Every clamped element bumps the tape's warning
    /// counter; clamped elements get zero gradient.
    pub fn log_clamped(self) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        let mut hits = 0usize;
        let out = x
            .values
            .iter()
            .map(|v| {
                if *v < LOG_FLOOR {
                    hits += 1;
                    LOG_FLOOR.ln()
                } else {
                    v.ln()
                }
            })
            .collect();
        let (rows, cols, shape) = (x.rows, x.cols, x.shape.clone());
        let req = x.grad.is_some();
        drop(nodes);
        self.tape.clamp_hits.set(self.tape.clamp_hits.get() + hits);
        self.tape.push(
            out,
            rows,
            cols,
            shape,
            Op::LogClamped { x: self.id },
            req,
            None,
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id];
        let total: f64 = x.values.iter().sum();
        let req = x.grad.is_some();
        drop(nodes);
        self.tape.push(
            vec![total],
            1,
            1,
            vec![1],
            Op::Sum { x: self.id },
            req,
            None,
        )
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, f: impl FnOnce(&mut [f64])) {
    if let Some(g) = dst {
        f(g);
    }
}

fn backprop(node: &Node, out_grad: &[f64], head: &mut [Node]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, n) = (node.rows, node.cols);
            let k = head[*a].cols;
            // dA = dC * B^T
            if head[*a].grad.is_some() {
                let bv = head[*b].values.clone();
                add_into(&mut head[*a].grad, |da| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += out_grad[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                });
            }
            // dB = A^T * dC
            if head[*b].grad.is_some() {
                let av = head[*a].values.clone();
                add_into(&mut head[*b].grad, |db| {
                    for p in 0..k {
                        for i in 0..m {
                            let apv = av[i * k + p];
                            if apv == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += apv * out_grad[i * n + j];
                            }
                        }
                    }
                });
            }
        }
        Op::Add { a, b } => {
            add_into(&mut head[*a].grad, |g| {
                g.iter_mut().zip(out_grad).for_each(|(d, o)| *d += o)
            });
            add_into(&mut head[*b].grad, |g| {
                g.iter_mut().zip(out_grad).for_each(|(d, o)| *d += o)
            });
        }
        Op::Sub { a, b } => {
            add_into(&mut head[*a].grad, |g| {
                g.iter_mut().zip(out_grad).for_each(|(d, o)| *d += o)
            });
            add_into(&mut head[*b].grad, |g| {
                g.iter_mut().zip(out_grad).for_each(|(d, o)| *d -= o)
            });
        }
        Op::Mul { a, b } => {
            if head[*a].grad.is_some() {
                let bv = head[*b].values.clone();
                add_into(&mut head[*a].grad, |g| {
                    for (i, d) in g.iter_mut().enumerate() {
                        *d += out_grad[i] * bv[i];
                    }
                });
            }
            if head[*b].grad.is_some() {
                let av = head[*a].values.clone();
                add_into(&mut head[*b].grad, |g| {
                    for (i, d) in g.iter_mut().enumerate() {
                        *d += out_grad[i] * av[i];
                    }
                });
            }
        }
        Op::AddBias { x, bias } => {
            add_into(&mut head[*x].grad, |g| {
                g.iter_mut().zip(out_grad).for_each(|(d, o)| *d += o)
            });
            let cols = node.cols;
            add_into(&mut head[*bias].grad, |g| {
                for r in 0..node.rows {
                    for c in 0..cols {
                        g[c] += out_grad[r * cols + c];
                    }
                }
            });
        }
        Op::ScaleRows { scale, x } => {
            let cols = node.cols;
            if head[*x].grad.is_some() {
                let sv = head[*scale].values.clone();
                add_into(&mut head[*x].grad, |g| {
                    for r in 0..node.rows {
                        for c in 0..cols {
                            g[r * cols + c] += out_grad[r * cols + c] * sv[r];
                        }
                    }
                });
            }
            if head[*scale].grad.is_some() {
                let xv = head[*x].values.clone();
                add_into(&mut head[*scale].grad, |g| {
                    for r in 0..node.rows {
                        let mut s = 0.0;
                        for c in 0..cols {
                            s += out_grad[r * cols + c] * xv[r * cols + c];
                        }
                        g[r] += s;
                    }
                });
            }
        }
        Op::Affine { x, mul } => {
            let m = *mul;
            add_into(&mut head[*x].grad, |g| {
                for (i, d) in g.iter_mut().enumerate() {
                    *d += out_grad[i] * m;
                }
            });
        }
        Op::Tanh { x } => {
            let y = &node.values;
            add_into(&mut head[*x].grad, |g| {
                for (i, d) in g.iter_mut().enumerate() {
                    *d += out_grad[i] * (1.0 - y[i] * y[i]);
                }
            });
        }
        Op::Sigmoid { x } => {
            let y = &node.values;
            add_into(&mut head[*x].grad, |g| {
                for (i, d) in g.iter_mut().enumerate() {
                    *d += out_grad[i] * y[i] * (1.0 - y[i]);
                }
            });
        }
        Op::Sqrt { x } => {
            let y = &node.values;
            add_into(&mut head[*x].grad, |g| {
                for (i, d) in g.iter_mut().enumerate() {
                    if y[i] >= SQRT_GRAD_FLOOR {
                        *d += out_grad[i] / (2.0 * y[i]);
                    }
                }
            });
        }
        Op::MaskedSoftmax { x, mask } => {
            let y = &node.values;
            let cols = node.cols;
            add_into(&mut head[*x].grad, |g| {
                for r in 0..node.rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let or = &out_grad[r * cols..(r + 1) * cols];
                    let mr = &mask[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(or).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        if mr[c] != 0.0 {
                            g[r * cols + c] += yr[c] * (or[c] - dot);
                        }
                    }
                }
            });
        }
        Op::ConcatCols { parts } => {
            let total_cols = node.cols;
            let mut offset = 0usize;
            for &pid in parts {
                let pcols = head[pid].cols;
                let prows = head[pid].rows;
                add_into(&mut head[pid].grad, |g| {
                    for r in 0..prows {
                        for c in 0..pcols {
                            g[r * pcols + c] += out_grad[r * total_cols + offset + c];
                        }
                    }
                });
                offset += pcols;
            }
        }
        Op::SliceCols { x, start, len } => {
            let xcols = head[*x].cols;
            add_into(&mut head[*x].grad, |g| {
                for r in 0..node.rows {
                    for c in 0..*len {
                        g[r * xcols + start + c] += out_grad[r * len + c];
                    }
                }
            });
        }
        Op::Lookup { table, ids } => {
            let cols = node.cols;
            add_into(&mut head[*table].grad, |g| {
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        g[id * cols + c] += out_grad[r * cols + c];
                    }
                }
            });
        }
        Op::ScatterAddCols { src, ids, width } => {
            let scols = head[*src].cols;
            add_into(&mut head[*src].grad, |g| {
                for r in 0..node.rows {
                    for c in 0..scols {
                        let id = ids[r * scols + c];
                        g[r * scols + c] += out_grad[r * width + id];
                    }
                }
            });
        }
        Op::GatherCols { x, ids } => {
            let xcols = head[*x].cols;
            add_into(&mut head[*x].grad, |g| {
                for r in 0..node.rows {
                    g[r * xcols + ids[r]] += out_grad[r];
                }
            });
        }
        Op::LogClamped { x } => {
            let xv = head[*x].values.clone();
            add_into(&mut head[*x].grad, |g| {
                for (i, d) in g.iter_mut().enumerate() {
                    if xv[i] >= LOG_FLOOR {
                        *d += out_grad[i] / xv[i];
                    }
                }
            });
        }
        Op::Sum { x } => {
            add_into(&mut head[*x].grad, |g| {
                for d in g.iter_mut() {
                    *d += out_grad[0];
                }
            });
        }
    }
}
