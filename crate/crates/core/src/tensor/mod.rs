//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable once created; an op returns a fresh tensor holding
//! a reference to its parents and a backward closure. Calling
//! [`Tensor::backward`] on a scalar walks the graph once in reverse creation
//! order (creation ids are monotone, so descending id order is a topological
//! order) and accumulates gradients into each node that requires them.
//!
//! All arithmetic is f64. Kernels are single-threaded by default; matmul
//! splits rows across threads when [`set_max_threads`] raises the cap
//! (std builds only). Row partitioning is deterministic, so results are
//! bit-identical regardless of the thread count.

mod kernels;
pub mod optim;

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);
static MAX_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Cap kernel parallelism. 1 disables threading entirely.
pub fn set_max_threads(n: usize) {
    MAX_THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn max_threads() -> usize {
    MAX_THREADS.load(Ordering::Relaxed)
}

type BackwardFn = Box<dyn Fn(&Node)>;

pub(crate) struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A dense multi-dimensional array, cheaply clonable (shared node).
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl core::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward,
            }),
        }
    }

    /// Constant leaf (no gradient tracking).
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(
            numel(shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor::make(shape.to_vec(), data, false, Vec::new(), None)
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(numel(shape), data.len());
        Tensor::make(shape.to_vec(), data, true, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::constant(shape, vec![0.0; numel(shape)])
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn len(&self) -> usize {
        self.node.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.node.data[0]
    }

    /// Accumulated gradient, if backward has reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    fn accumulate(&self, f: impl FnOnce(&mut [f64])) {
        if !self.node.requires_grad {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![0.0; self.node.data.len()]);
        f(buf);
    }

    /// Reverse-mode sweep from a scalar output. Visits each reachable node
    /// exactly once, in descending creation order.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() requires a scalar output");
        *self.node.grad.borrow_mut() = Some(vec![1.0]);

        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: BTreeSet<u64> = BTreeSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if seen.insert(t.node.id) {
                for p in &t.node.parents {
                    if p.node.requires_grad {
                        stack.push(p.clone());
                    }
                }
                order.push(t);
            }
        }
        order.sort_by(|a, b| b.node.id.cmp(&a.node.id));
        for t in &order {
            if let Some(back) = &t.node.backward {
                if t.node.grad.borrow().is_some() {
                    back(&t.node);
                }
            }
        }
    }

    fn binary_shape_check(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_shape_check(other, "add")?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a + b)
            .collect();
        let rg = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(
            self.shape().to_vec(),
            data,
            rg,
            vec![self.clone(), other.clone()],
            rg.then(|| -> BackwardFn {
                Box::new(|node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    for p in &node.parents {
                        p.accumulate(|buf| {
                            for (b, gi) in buf.iter_mut().zip(g) {
                                *b += gi;
                            }
                        });
                    }
                })
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_shape_check(other, "mul")?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a * b)
            .collect();
        let rg = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(
            self.shape().to_vec(),
            data,
            rg,
            vec![self.clone(), other.clone()],
            rg.then(|| -> BackwardFn {
                Box::new(|node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    let (a, b) = (&node.parents[0], &node.parents[1]);
                    a.accumulate(|buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * b.data()[i];
                        }
                    });
                    b.accumulate(|buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * a.data()[i];
                        }
                    });
                })
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a * c).collect();
        let rg = self.requires_grad();
        Tensor::make(
            self.shape().to_vec(),
            data,
            rg,
            vec![self.clone()],
            rg.then(|| -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    node.parents[0].accumulate(|buf| {
                        for (b, gi) in buf.iter_mut().zip(g) {
                            *b += gi * c;
                        }
                    });
                })
            }),
        )
    }

    /// Add a `[d]` bias to every row of a `[.., d]` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let d = *self.shape().last().unwrap_or(&0);
        if bias.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let mut data = self.data().to_vec();
        for row in data.chunks_mut(d) {
            for (x, b) in row.iter_mut().zip(bias.data()) {
                *x += b;
            }
        }
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(Tensor::make(
            self.shape().to_vec(),
            data,
            rg,
            vec![self.clone(), bias.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    node.parents[0].accumulate(|buf| {
                        for (b, gi) in buf.iter_mut().zip(g) {
                            *b += gi;
                        }
                    });
                    node.parents[1].accumulate(|buf| {
                        for row in g.chunks(d) {
                            for (b, gi) in buf.iter_mut().zip(row) {
                                *b += gi;
                            }
                        }
                    });
                })
            }),
        ))
    }

    // ---- matmul ----

    fn as_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: Vec::new(),
            }),
        }
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_2d("matmul")?;
        let (k2, n) = other.as_2d("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::mm(self.data(), other.data(), &mut out, m, k, n);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(
            vec![m, n],
            out,
            rg,
            vec![self.clone(), other.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    let (a, b) = (&node.parents[0], &node.parents[1]);
                    // dA = dC . B^T
                    a.accumulate(|buf| kernels::mm_nt_acc(g, b.data(), buf, m, n, k));
                    // dB = A^T . dC
                    b.accumulate(|buf| kernels::mm_tn_acc(a.data(), g, buf, m, k, n));
                })
            }),
        ))
    }

    /// `[m,k] x [n,k]^T -> [m,n]` (B stored row-major, used transposed).
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_2d("matmul_nt")?;
        let (n, k2) = other.as_2d("matmul_nt")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::mm_nt(self.data(), other.data(), &mut out, m, k, n);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(
            vec![m, n],
            out,
            rg,
            vec![self.clone(), other.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    let (a, b) = (&node.parents[0], &node.parents[1]);
                    // C = A B^T: dA = dC . B, dB = dC^T . A
                    a.accumulate(|buf| kernels::mm_acc(g, b.data(), buf, m, n, k));
                    b.accumulate(|buf| kernels::mm_tn_acc(g, a.data(), buf, m, n, k));
                })
            }),
        ))
    }

    // ---- nonlinearities ----

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&self) -> Tensor {
        let d = *self.shape().last().expect("softmax on 0-d tensor");
        let mut data = self.data().to_vec();
        for row in data.chunks_mut(d) {
            softmax_row(row);
        }
        let rg = self.requires_grad();
        Tensor::make(
            self.shape().to_vec(),
            data,
            rg,
            vec![self.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    let y = &node.data;
                    node.parents[0].accumulate(|buf| {
                        for r in 0..y.len() / d {
                            let (ys, gs) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                            let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                            for j in 0..d {
                                buf[r * d + j] += ys[j] * (gs[j] - dot);
                            }
                        }
                    });
                })
            }),
        )
    }

    /// Layer normalization over the last axis, followed by a gamma/beta affine.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().unwrap_or(&0);
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = self.len() / d;
        let mut data = vec![0.0; self.len()];
        // Normalized values (pre-affine) are needed for backward.
        let mut xhat = vec![0.0; self.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let x = &self.data()[r * d..(r + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / math::sqrt(var + eps);
            inv_std[r] = is;
            for j in 0..d {
                let h = (x[j] - mean) * is;
                xhat[r * d + j] = h;
                data[r * d + j] = h * gamma.data()[j] + beta.data()[j];
            }
        }
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(Tensor::make(
            self.shape().to_vec(),
            data,
            rg,
            vec![self.clone(), gamma.clone(), beta.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    let (x, gam, bet) = (&node.parents[0], &node.parents[1], &node.parents[2]);
                    gam.accumulate(|buf| {
                        for r in 0..rows {
                            for j in 0..d {
                                buf[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                    });
                    bet.accumulate(|buf| {
                        for r in 0..rows {
                            for j in 0..d {
                                buf[j] += g[r * d + j];
                            }
                        }
                    });
                    x.accumulate(|buf| {
                        for r in 0..rows {
                            let gs = &g[r * d..(r + 1) * d];
                            let hs = &xhat[r * d..(r + 1) * d];
                            // dL/dxhat_j = g_j * gamma_j
                            let mut sum_dh = 0.0;
                            let mut sum_dh_h = 0.0;
                            for j in 0..d {
                                let dh = gs[j] * gam.data()[j];
                                sum_dh += dh;
                                sum_dh_h += dh * hs[j];
                            }
                            let n = d as f64;
                            for j in 0..d {
                                let dh = gs[j] * gam.data()[j];
                                buf[r * d + j] +=
                                    inv_std[r] * (dh - sum_dh / n - hs[j] * sum_dh_h / n);
                            }
                        }
                    });
                })
            }),
        ))
    }

    /// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
    pub fn gelu(&self) -> Tensor {
        const K: f64 = 0.7978845608028654; // sqrt(2/pi)
        const C3: f64 = 0.044715;
        let data: Vec<f64> = self.data().iter().map(|&x| gelu_scalar(x)).collect();
        let rg = self.requires_grad();
        Tensor::make(
            self.shape().to_vec(),
            data,
            rg,
            vec![self.clone()],
            rg.then(|| -> BackwardFn {
                Box::new(|node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    let x = &node.parents[0];
                    x.accumulate(|buf| {
                        for i in 0..buf.len() {
                            let xi = x.data()[i];
                            let u = K * (xi + C3 * xi * xi * xi);
                            let t = math::tanh(u);
                            let du = K * (1.0 + 3.0 * C3 * xi * xi);
                            let dy = 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * du;
                            buf[i] += g[i] * dy;
                        }
                    });
                })
            }),
        )
    }

    /// Inverted dropout: kept units scaled by 1/(1-p). Identity when not
    /// training or p == 0.
    pub fn dropout(&self, p: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param {
                what: "dropout p",
                detail: alloc::format!("{p} not in [0, 1)"),
            });
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 - p;
        let inv = 1.0 / keep;
        let mask: Vec<f64> = (0..self.len())
            .map(|_| if rng.flip(keep) { inv } else { 0.0 })
            .collect();
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let rg = self.requires_grad();
        Ok(Tensor::make(
            self.shape().to_vec(),
            data,
            rg,
            vec![self.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    node.parents[0].accumulate(|buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * mask[i];
                        }
                    });
                })
            }),
        ))
    }

    // ---- indexing / reshaping ----

    /// Gather rows of a `[n, d]` tensor by index (used for embedding lookup
    /// and for picking target positions out of a logits matrix).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (n, d) = self.as_2d("gather_rows")?;
        for &i in indices {
            if i >= n {
                return Err(Error::Index {
                    what: "gather_rows",
                    got: i,
                    len: n,
                });
            }
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * d..(i + 1) * d]);
        }
        let rg = self.requires_grad();
        let idx = indices.to_vec();
        Ok(Tensor::make(
            vec![indices.len(), d],
            data,
            rg,
            vec![self.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    node.parents[0].accumulate(|buf| {
                        for (r, &i) in idx.iter().enumerate() {
                            for j in 0..d {
                                buf[i * d + j] += g[r * d + j];
                            }
                        }
                    });
                })
            }),
        ))
    }

    /// Contiguous row slice of a 2-d tensor.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (n, d) = self.as_2d("slice_rows")?;
        if start + len > n {
            return Err(Error::Index {
                what: "slice_rows",
                got: start + len,
                len: n,
            });
        }
        let data = self.data()[start * d..(start + len) * d].to_vec();
        let rg = self.requires_grad();
        Ok(Tensor::make(
            vec![len, d],
            data,
            rg,
            vec![self.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    node.parents[0].accumulate(|buf| {
                        for (gi, bi) in g.iter().zip(&mut buf[start * d..(start + len) * d]) {
                            *bi += gi;
                        }
                    });
                })
            }),
        ))
    }

    /// Stack 2-d tensors with equal column counts on top of each other.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("concat_rows parts"))?;
        let (_, d) = first.as_2d("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (m, d2) = p.as_2d("concat_rows")?;
            if d2 != d {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += m;
            data.extend_from_slice(p.data());
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(Tensor::make(
            vec![rows, d],
            data,
            rg,
            parts.to_vec(),
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    let mut offset = 0;
                    for p in &node.parents {
                        let len = p.len();
                        p.accumulate(|buf| {
                            for (bi, gi) in buf.iter_mut().zip(&g[offset..offset + len]) {
                                *bi += gi;
                            }
                        });
                        offset += len;
                    }
                })
            }),
        ))
    }

    /// Column slice of a 2-d tensor (head split).
    pub fn narrow_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (n, d) = self.as_2d("narrow_cols")?;
        if start + len > d {
            return Err(Error::Index {
                what: "narrow_cols",
                got: start + len,
                len: d,
            });
        }
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&self.data()[r * d + start..r * d + start + len]);
        }
        let rg = self.requires_grad();
        Ok(Tensor::make(
            vec![n, len],
            data,
            rg,
            vec![self.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    node.parents[0].accumulate(|buf| {
                        for r in 0..n {
                            for j in 0..len {
                                buf[r * d + start + j] += g[r * len + j];
                            }
                        }
                    });
                })
            }),
        ))
    }

    /// Concatenate 2-d tensors with equal row counts side by side (head merge).
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("concat_cols parts"))?;
        let (n, _) = first.as_2d("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut d_total = 0;
        for p in parts {
            let (n2, w) = p.as_2d("concat_cols")?;
            if n2 != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            widths.push(w);
            d_total += w;
        }
        let mut data = vec![0.0; n * d_total];
        let mut col = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            for r in 0..n {
                data[r * d_total + col..r * d_total + col + w]
                    .copy_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(Tensor::make(
            vec![n, d_total],
            data,
            rg,
            parts.to_vec(),
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    let mut col = 0;
                    for (p, &w) in node.parents.iter().zip(&widths) {
                        p.accumulate(|buf| {
                            for r in 0..n {
                                for j in 0..w {
                                    buf[r * w + j] += g[r * d_total + col + j];
                                }
                            }
                        });
                        col += w;
                    }
                })
            }),
        ))
    }

    // ---- reductions / losses ----

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let rg = self.requires_grad();
        Tensor::make(
            vec![1],
            vec![total],
            rg,
            vec![self.clone()],
            rg.then(|| -> BackwardFn {
                Box::new(|node: &Node| {
                    let g = node.grad.borrow().as_ref().unwrap()[0];
                    node.parents[0].accumulate(|buf| {
                        for b in buf.iter_mut() {
                            *b += g;
                        }
                    });
                })
            }),
        )
    }

    /// Mean of the selected rows of a `[n, d]` tensor, yielding `[1, d]`.
    pub fn mean_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (n, d) = self.as_2d("mean_rows")?;
        if rows.is_empty() {
            return Err(Error::Empty("mean_rows selection"));
        }
        for &r in rows {
            if r >= n {
                return Err(Error::Index {
                    what: "mean_rows",
                    got: r,
                    len: n,
                });
            }
        }
        let inv = 1.0 / rows.len() as f64;
        let mut data = vec![0.0; d];
        for &r in rows {
            for j in 0..d {
                data[j] += self.data()[r * d + j] * inv;
            }
        }
        let rg = self.requires_grad();
        let rows = rows.to_vec();
        Ok(Tensor::make(
            vec![1, d],
            data,
            rg,
            vec![self.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow();
                    let g = g.as_ref().unwrap();
                    node.parents[0].accumulate(|buf| {
                        for &r in &rows {
                            for j in 0..d {
                                buf[r * d + j] += g[j] * inv;
                            }
                        }
                    });
                })
            }),
        ))
    }

    /// Mean of -log softmax(logits)[target] over rows whose target is not
    /// `ignore_index`. Targets must lie in [0, vocab) otherwise.
    pub fn cross_entropy(&self, targets: &[u32], ignore_index: u32) -> Result<Tensor> {
        let (n, v) = self.as_2d("cross_entropy")?;
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: vec![n, v],
                rhs: vec![targets.len()],
            });
        }
        let mut active: Vec<usize> = Vec::new();
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore_index {
                continue;
            }
            if t as usize >= v {
                return Err(Error::Index {
                    what: "cross_entropy target",
                    got: t as usize,
                    len: v,
                });
            }
            active.push(r);
        }
        if active.is_empty() {
            return Err(Error::Empty("cross_entropy active targets"));
        }
        // Per-active-row softmax probabilities, kept for backward.
        let mut probs = vec![0.0; active.len() * v];
        let mut loss = 0.0;
        for (a, &r) in active.iter().enumerate() {
            let row = &self.data()[r * v..(r + 1) * v];
            let p = &mut probs[a * v..(a + 1) * v];
            p.copy_from_slice(row);
            softmax_row(p);
            loss -= math::ln(p[targets[r] as usize].max(f64::MIN_POSITIVE));
        }
        loss /= active.len() as f64;
        let rg = self.requires_grad();
        let targets = targets.to_vec();
        Ok(Tensor::make(
            vec![1],
            vec![loss],
            rg,
            vec![self.clone()],
            rg.then(move || -> BackwardFn {
                Box::new(move |node: &Node| {
                    let g = node.grad.borrow().as_ref().unwrap()[0];
                    let inv = g / active.len() as f64;
                    node.parents[0].accumulate(|buf| {
                        for (a, &r) in active.iter().enumerate() {
                            let p = &probs[a * v..(a + 1) * v];
                            let t = targets[r] as usize;
                            for j in 0..v {
                                let indicator = if j == t { 1.0 } else { 0.0 };
                                buf[r * v + j] += inv * (p[j] - indicator);
                            }
                        }
                    });
                })
            }),
        ))
    }
}

/// In-place stable softmax of one row.
pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = math::exp(*x - max);
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    const K: f64 = 0.7978845608028654;
    const C3: f64 = 0.044715;
    0.5 * x * (1.0 + math::tanh(K * (x + C3 * x * x * x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_zero() {
        let a = Tensor::constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::zeros(&[2, 2]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 5]);
        let err = a.matmul(&b).unwrap_err();
        match err {
            Error::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 5]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let t = Tensor::constant(&[1, 3], vec![0.0, 0.0, 0.0]).softmax_last();
        for &v in t.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let t = Tensor::constant(&[1, 2], vec![1000.0, 0.0]).softmax_last();
        assert!(t.data()[0] > 0.999999);
        assert!(t.data().iter().all(|v| v.is_finite()));
        assert!((t.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_is_zeroed() {
        let x = Tensor::constant(&[1, 4], vec![3.0; 4]);
        let gamma = Tensor::constant(&[4], vec![1.0; 4]);
        let beta = Tensor::zeros(&[4]);
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_zero_gamma_broadcasts_beta() {
        let x = Tensor::constant(&[1, 3], vec![1.0, 2.0, 3.0]);
        let gamma = Tensor::zeros(&[3]);
        let beta = Tensor::constant(&[3], vec![5.0, 6.0, 7.0]);
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_v() {
        let logits = Tensor::constant(&[2, 4], vec![0.5; 8]);
        let loss = logits.cross_entropy(&[1, 3], u32::MAX).unwrap();
        assert!((loss.item() - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_large_margin_goes_to_zero() {
        let logits = Tensor::constant(&[1, 3], vec![50.0, 0.0, 0.0]);
        let loss = logits.cross_entropy(&[0], u32::MAX).unwrap();
        assert!(loss.item() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(logits.cross_entropy(&[3], u32::MAX).is_err());
    }

    #[test]
    fn cross_entropy_ignores_ignore_index() {
        let logits = Tensor::constant(&[2, 2], vec![10.0, 0.0, 0.0, 10.0]);
        let full = logits.cross_entropy(&[0, 0], u32::MAX).unwrap().item();
        let masked = logits.cross_entropy(&[0, 99], 99).unwrap().item();
        assert!(masked < full);
        assert!(masked < 1e-4);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let mut rng = Rng::new(0);
        let y = x.dropout(0.0, true, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        let y = x.dropout(0.5, false, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(x.dropout(1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_keep_rate_matches_p() {
        let n = 100_000;
        let x = Tensor::constant(&[n, 1], vec![1.0; n]);
        let mut rng = Rng::new(11);
        let p = 0.3;
        let y = x.dropout(p, true, &mut rng).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        let rate = kept as f64 / n as f64;
        assert!((rate - (1.0 - p)).abs() < 0.01, "keep rate {rate}");
        // Kept units are scaled by 1/(1-p).
        let v = y.data().iter().find(|&&v| v != 0.0).unwrap();
        assert!((v - 1.0 / (1.0 - p)).abs() < 1e-12);
    }

    #[test]
    fn backward_accumulates_through_shared_subexpression() {
        // y = (x + x) . x computed two ways must give the same gradient.
        let run = |order_swap: bool| {
            let x = Tensor::param(&[1, 2], vec![2.0, 3.0]);
            let s = x.add(&x).unwrap();
            let y = if order_swap {
                s.mul(&x).unwrap().sum()
            } else {
                x.mul(&s).unwrap().sum()
            };
            y.backward();
            x.grad().unwrap()
        };
        let a = run(false);
        let b = run(true);
        assert_eq!(a, b);
        // d/dx (2x^2) = 4x
        assert!((a[0] - 8.0).abs() < 1e-12);
        assert!((a[1] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn gather_and_concat_round_trip() {
        let t = Tensor::constant(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = t.gather_rows(&[2, 0]).unwrap();
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0]);
        let a = t.slice_rows(0, 1).unwrap();
        let b = t.slice_rows(1, 2).unwrap();
        let c = Tensor::concat_rows(&[a, b]).unwrap();
        assert_eq!(c.data(), t.data());
    }

    #[test]
    fn narrow_concat_cols_round_trip() {
        let t = Tensor::constant(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let a = t.narrow_cols(0, 2).unwrap();
        let b = t.narrow_cols(2, 2).unwrap();
        assert_eq!(a.data(), &[1.0, 2.0, 5.0, 6.0]);
        let c = Tensor::concat_cols(&[a, b]).unwrap();
        assert_eq!(c.data(), t.data());
    }
}
