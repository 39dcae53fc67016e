//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive as a node with parent links and a
//! backward closure. [`Tensor`] is a cheap handle (tape + node id).
//! Calling [`Tensor::backward`] on a scalar walks the nodes once in
//! reverse order and returns per-node gradient accumulators.
//!
//! Broadcasting is restricted to suffix (leading-batch) form: a binary op
//! accepts equal shapes, or one operand whose element count divides the
//! other's and whose shape is a suffix of it (e.g. bias `[n]` against
//! activations `[b, n]`).

use std::cell::RefCell;
use std::rc::Rc;

use super::Array;

type BackFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    parents: Vec<usize>,
    back: Option<BackFn>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Records primitive operations for one forward/backward pass.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
    shape: Vec<usize>,
}

/// Per-node gradient accumulators produced by [`Tensor::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }

    /// Gradient of a leaf, zero-filled when the loss does not depend on it.
    pub fn get_or_zero(&self, t: &Tensor) -> Vec<f64> {
        match self.get(t) {
            Some(g) => g.to_vec(),
            None => vec![0.0; t.len()],
        }
    }
}

fn assert_finite(op: &'static str, data: &[f64]) {
    if !data.iter().all(|v| v.is_finite()) {
        panic!("non-finite value produced by `{op}`");
    }
}

/// Resolves suffix broadcasting: returns (out_shape, lhs_is_big).
fn broadcast_shapes(op: &str, a: &[usize], b: &[usize]) -> (Vec<usize>, bool) {
    if a == b {
        return (a.to_vec(), true);
    }
    let an: usize = a.iter().product();
    let bn: usize = b.iter().product();
    if bn <= an && a.ends_with(b) {
        (a.to_vec(), true)
    } else if an < bn && b.ends_with(a) {
        (b.to_vec(), false)
    } else {
        panic!("shape mismatch in `{op}`: {a:?} vs {b:?}");
    }
}

/// Sums a gradient of `big` elements down to `small` elements (suffix layout).
fn reduce_to(grad: &[f64], small: usize) -> Vec<f64> {
    let mut out = vec![0.0; small];
    for (i, g) in grad.iter().enumerate() {
        out[i % small] += g;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, parents: Vec<usize>, back: Option<BackFn>) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { shape: shape.clone(), data: Rc::new(data), parents, back });
        Tensor { tape: self.clone(), id, shape }
    }

    /// Creates a leaf node. Leaves receive gradients; whether a leaf is a
    /// trainable parameter is the caller's bookkeeping.
    pub fn leaf(&self, value: &Array) -> Tensor {
        assert_finite("leaf", &value.data);
        self.push(value.shape.clone(), value.data.clone(), vec![], None)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.leaf(&Array::scalar(v))
    }

    fn data(&self, id: usize) -> Rc<Vec<f64>> {
        Rc::clone(&self.inner.borrow().nodes[id].data)
    }
}

macro_rules! unary_op {
    ($name:ident, $fwd:expr, $bwd:expr) => {
        pub fn $name(&self) -> Tensor {
            let x = self.data();
            let f: fn(f64) -> f64 = $fwd;
            let out: Vec<f64> = x.iter().map(|&v| f(v)).collect();
            assert_finite(stringify!($name), &out);
            let xin = Rc::clone(&x);
            self.tape.push(
                self.shape.clone(),
                out,
                vec![self.id],
                Some(Box::new(move |g| {
                    let d: fn(f64) -> f64 = $bwd;
                    vec![g.iter().zip(xin.iter()).map(|(gi, &v)| gi * d(v)).collect()]
                })),
            )
        }
    };
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    fn data(&self) -> Rc<Vec<f64>> {
        self.tape.data(self.id)
    }

    pub fn value(&self) -> Array {
        Array::new(self.shape.clone(), self.data().as_ref().clone())
    }

    pub fn scalar_value(&self) -> f64 {
        assert_eq!(self.len(), 1, "scalar_value on shape {:?}", self.shape);
        self.data()[0]
    }

    fn binary(&self, rhs: &Tensor, op: &'static str, f: fn(f64, f64) -> f64, dl: fn(f64, f64) -> f64, dr: fn(f64, f64) -> f64) -> Tensor {
        let (out_shape, lhs_big) = broadcast_shapes(op, &self.shape, &rhs.shape);
        let a = self.data();
        let b = rhs.data();
        let (big, small) = if lhs_big { (&a, &b) } else { (&b, &a) };
        let sn = small.len();
        let out: Vec<f64> = if lhs_big {
            big.iter().enumerate().map(|(i, &x)| f(x, small[i % sn])).collect()
        } else {
            big.iter().enumerate().map(|(i, &y)| f(small[i % sn], y)).collect()
        };
        assert_finite(op, &out);
        let (ai, bi) = (Rc::clone(&a), Rc::clone(&b));
        let an = a.len();
        let bn = b.len();
        self.tape.push(
            out_shape,
            out,
            vec![self.id, rhs.id],
            Some(Box::new(move |g| {
                let n = g.len();
                let mut ga = vec![0.0; n.max(an)];
                let mut gb = vec![0.0; n.max(bn)];
                for i in 0..n {
                    let x = ai[i % an];
                    let y = bi[i % bn];
                    if an == n {
                        ga[i] = g[i] * dl(x, y);
                    } else {
                        ga[i % an] += g[i] * dl(x, y);
                    }
                    if bn == n {
                        gb[i] = g[i] * dr(x, y);
                    } else {
                        gb[i % bn] += g[i] * dr(x, y);
                    }
                }
                ga.truncate(an);
                gb.truncate(bn);
                vec![ga, gb]
            })),
        )
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        self.binary(rhs, "add", |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        self.binary(rhs, "sub", |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        self.binary(rhs, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, rhs: &Tensor) -> Tensor {
        self.binary(rhs, "div", |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    /// Elementwise minimum; the subgradient follows the selected branch
    /// (ties go to the left operand).
    pub fn minimum(&self, rhs: &Tensor) -> Tensor {
        self.binary(
            rhs,
            "minimum",
            f64::min,
            |x, y| if x <= y { 1.0 } else { 0.0 },
            |x, y| if x <= y { 0.0 } else { 1.0 },
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let x = self.data();
        let out: Vec<f64> = x.iter().map(|&v| v + c).collect();
        assert_finite("add_scalar", &out);
        self.tape.push(self.shape.clone(), out, vec![self.id], Some(Box::new(|g| vec![g.to_vec()])))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let x = self.data();
        let out: Vec<f64> = x.iter().map(|&v| v * c).collect();
        assert_finite("scale", &out);
        self.tape.push(
            self.shape.clone(),
            out,
            vec![self.id],
            Some(Box::new(move |g| vec![g.iter().map(|gi| gi * c).collect()])),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Elementwise max against a constant (used by free-bits clamping).
    pub fn max_scalar(&self, c: f64) -> Tensor {
        let x = self.data();
        let out: Vec<f64> = x.iter().map(|&v| v.max(c)).collect();
        let xin = Rc::clone(&x);
        self.tape.push(
            self.shape.clone(),
            out,
            vec![self.id],
            Some(Box::new(move |g| {
                vec![g.iter().zip(xin.iter()).map(|(gi, &v)| if v > c { *gi } else { 0.0 }).collect()]
            })),
        )
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let x = self.data();
        let out: Vec<f64> = x.iter().map(|&v| v.clamp(lo, hi)).collect();
        let xin = Rc::clone(&x);
        self.tape.push(
            self.shape.clone(),
            out,
            vec![self.id],
            Some(Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(xin.iter())
                    .map(|(gi, &v)| if v > lo && v < hi { *gi } else { 0.0 })
                    .collect()]
            })),
        )
    }

    unary_op!(exp, |v| v.exp(), |v| v.exp());
    unary_op!(ln, |v| v.ln(), |v| 1.0 / v);
    unary_op!(sqrt, |v| v.sqrt(), |v| 0.5 / v.sqrt());
    unary_op!(square, |v| v * v, |v| 2.0 * v);
    unary_op!(tanh, |v| v.tanh(), |v| 1.0 - v.tanh() * v.tanh());
    unary_op!(sigmoid, |v| 1.0 / (1.0 + (-v).exp()), |v| {
        let s = 1.0 / (1.0 + (-v).exp());
        s * (1.0 - s)
    });
    unary_op!(silu, |v| v / (1.0 + (-v).exp()), |v| {
        let s = 1.0 / (1.0 + (-v).exp());
        s + v * s * (1.0 - s)
    });
    unary_op!(elu, |v| if v > 0.0 { v } else { v.exp_m1() }, |v| if v > 0.0 { 1.0 } else { v.exp() });
    // tanh-approximation GELU; the derivative matches the same approximation.
    unary_op!(gelu, |v| {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
    }, |v| {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let u = c * (v + 0.044715 * v * v * v);
        let t = u.tanh();
        let du = c * (1.0 + 3.0 * 0.044715 * v * v);
        0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
    });

    /// Matrix product `[m, k] x [k, n] -> [m, n]`. A leading batch axis on
    /// the left operand is folded into `m`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        let k = *self.shape.last().expect("matmul lhs rank");
        assert_eq!(rhs.shape.len(), 2, "matmul rhs must be 2-D, got {:?}", rhs.shape);
        assert_eq!(rhs.shape[0], k, "matmul inner dims: {:?} x {:?}", self.shape, rhs.shape);
        let m = self.len() / k;
        let n = rhs.shape[1];
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![0.0; m * n];
        matmul_ikj(&a, &b, &mut out, m, k, n);
        assert_finite("matmul", &out);
        let mut out_shape = self.shape.clone();
        *out_shape.last_mut().unwrap() = n;
        let (ai, bi) = (Rc::clone(&a), Rc::clone(&b));
        self.tape.push(
            out_shape,
            out,
            vec![self.id, rhs.id],
            Some(Box::new(move |g| {
                // dA = g . B^T ; dB = A^T . g
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                matmul_nt_acc(g, &bi, &mut ga, m, n, k);
                matmul_tn_acc(&ai, g, &mut gb, m, k, n);
                vec![ga, gb]
            })),
        )
    }

    /// `A . B^T` for `A: [m, k]`, `B: [n, k]` -> `[m, n]`.
    pub fn matmul_nt(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.shape.len(), 2, "matmul_nt lhs 2-D");
        assert_eq!(rhs.shape.len(), 2, "matmul_nt rhs 2-D");
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = rhs.shape[0];
        assert_eq!(rhs.shape[1], k, "matmul_nt inner dims: {:?} x {:?}", self.shape, rhs.shape);
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(&a, &b, &mut out, m, k, n);
        assert_finite("matmul_nt", &out);
        let (ai, bi) = (Rc::clone(&a), Rc::clone(&b));
        self.tape.push(
            vec![m, n],
            out,
            vec![self.id, rhs.id],
            Some(Box::new(move |g| {
                // dA = g . B ; dB = g^T . A
                let mut ga = vec![0.0; m * k];
                matmul_ikj(g, &bi, &mut ga, m, n, k);
                let mut gb = vec![0.0; n * k];
                matmul_tn_acc(g, &ai, &mut gb, m, n, k);
                vec![ga, gb]
            })),
        )
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        let n = *self.shape.last().expect("softmax rank");
        let rows = self.len() / n;
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mx).exp();
                s += *o;
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o /= s;
            }
        }
        assert_finite("softmax", &out);
        let y = Rc::new(out.clone());
        self.tape.push(
            self.shape.clone(),
            out,
            vec![self.id],
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((gxi, &yi), &gi) in gx[r * n..(r + 1) * n].iter_mut().zip(yr).zip(gr) {
                        *gxi = yi * (gi - dot);
                    }
                }
                vec![gx]
            })),
        )
    }

    /// Row-wise layer normalization over the last axis (no affine; apply
    /// modulation separately).
    pub fn layer_norm(&self, eps: f64) -> Tensor {
        let n = *self.shape.last().expect("layer_norm rank");
        let rows = self.len() / n;
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        assert_finite("layer_norm", &out);
        let y = Rc::new(out.clone());
        self.tape.push(
            self.shape.clone(),
            out,
            vec![self.id],
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mg = gr.iter().sum::<f64>() / n as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for ((gxi, &yi), &gi) in gx[r * n..(r + 1) * n].iter_mut().zip(yr).zip(gr) {
                        *gxi = inv_std[r] * (gi - mg - yi * mgy);
                    }
                }
                vec![gx]
            })),
        )
    }

    pub fn sum(&self) -> Tensor {
        let x = self.data();
        let s = x.iter().sum::<f64>();
        assert_finite("sum", &[s]);
        let n = x.len();
        self.tape.push(vec![1], vec![s], vec![self.id], Some(Box::new(move |g| vec![vec![g[0]; n]])))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over the last axis: `[.., n] -> [..]` (scalar stays `[1]`).
    pub fn sum_last(&self) -> Tensor {
        let n = *self.shape.last().expect("sum_last rank");
        let rows = self.len() / n;
        let x = self.data();
        let out: Vec<f64> = (0..rows).map(|r| x[r * n..(r + 1) * n].iter().sum()).collect();
        assert_finite("sum_last", &out);
        let mut shape: Vec<usize> = self.shape[..self.shape.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        self.tape.push(
            shape,
            out,
            vec![self.id],
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; rows * n];
                for r in 0..rows {
                    for gxi in &mut gx[r * n..(r + 1) * n] {
                        *gxi = g[r];
                    }
                }
                vec![gx]
            })),
        )
    }

    /// Concatenation along the last axis; all other extents must agree.
    pub fn concat_last(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let tape = parts[0].tape.clone();
        let rows = parts[0].len() / parts[0].shape.last().unwrap();
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape.last().unwrap()).collect();
        for p in parts {
            assert_eq!(p.len() / p.shape.last().unwrap(), rows, "concat_last row mismatch");
        }
        let total: usize = widths.iter().sum();
        let datas: Vec<Rc<Vec<f64>>> = parts.iter().map(|p| p.data()).collect();
        let mut out = vec![0.0; rows * total];
        for r in 0..rows {
            let mut off = 0;
            for (d, &w) in datas.iter().zip(&widths) {
                out[r * total + off..r * total + off + w].copy_from_slice(&d[r * w..(r + 1) * w]);
                off += w;
            }
        }
        let mut shape = parts[0].shape.clone();
        *shape.last_mut().unwrap() = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let widths_b = widths.clone();
        tape.push(
            shape,
            out,
            ids,
            Some(Box::new(move |g| {
                let mut grads: Vec<Vec<f64>> = widths_b.iter().map(|&w| vec![0.0; rows * w]).collect();
                for r in 0..rows {
                    let mut off = 0;
                    for (gp, &w) in grads.iter_mut().zip(&widths_b) {
                        gp[r * w..(r + 1) * w].copy_from_slice(&g[r * total + off..r * total + off + w]);
                        off += w;
                    }
                }
                grads
            })),
        )
    }

    /// Stack along the first axis; parts must share shape.
    pub fn concat_rows(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let tape = parts[0].tape.clone();
        let cols = *parts[0].shape.last().unwrap();
        let mut out = Vec::new();
        let mut lens = Vec::new();
        for p in parts {
            assert_eq!(*p.shape.last().unwrap(), cols, "concat_rows col mismatch");
            let d = p.data();
            lens.push(d.len());
            out.extend_from_slice(&d);
        }
        let rows = out.len() / cols;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.push(
            vec![rows, cols],
            out,
            ids,
            Some(Box::new(move |g| {
                let mut grads = Vec::with_capacity(lens.len());
                let mut off = 0;
                for &l in &lens {
                    grads.push(g[off..off + l].to_vec());
                    off += l;
                }
                grads
            })),
        )
    }

    /// Slice columns `[start, end)` of the last axis.
    pub fn slice_last(&self, start: usize, end: usize) -> Tensor {
        let n = *self.shape.last().expect("slice_last rank");
        assert!(start < end && end <= n, "slice_last {start}..{end} of width {n}");
        let rows = self.len() / n;
        let w = end - start;
        let x = self.data();
        let mut out = vec![0.0; rows * w];
        for r in 0..rows {
            out[r * w..(r + 1) * w].copy_from_slice(&x[r * n + start..r * n + end]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = w;
        self.tape.push(
            shape,
            out,
            vec![self.id],
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; rows * n];
                for r in 0..rows {
                    gx[r * n + start..r * n + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                vec![gx]
            })),
        )
    }

    /// Slice rows `[start, end)` of the first axis (2-D only).
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        assert_eq!(self.shape.len(), 2, "slice_rows needs 2-D, got {:?}", self.shape);
        let (rows, cols) = (self.shape[0], self.shape[1]);
        assert!(start < end && end <= rows, "slice_rows {start}..{end} of {rows}");
        let x = self.data();
        let out = x[start * cols..end * cols].to_vec();
        self.tape.push(
            vec![end - start, cols],
            out,
            vec![self.id],
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; rows * cols];
                gx[start * cols..end * cols].copy_from_slice(g);
                vec![gx]
            })),
        )
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.len(), "reshape {:?} -> {shape:?}", self.shape);
        let x = self.data();
        self.tape.push(shape, x.as_ref().clone(), vec![self.id], Some(Box::new(|g| vec![g.to_vec()])))
    }

    /// Cuts the tape: the result is a constant leaf with the same value.
    pub fn detach(&self) -> Tensor {
        self.tape.leaf(&self.value())
    }

    /// Reverse pass from a scalar loss. Visits each node once in reverse
    /// topological (construction) order. Panics on non-finite gradients.
    pub fn backward(&self) -> Gradients {
        assert_eq!(self.len(), 1, "backward requires a scalar loss, got shape {:?}", self.shape);
        let inner = self.tape.inner.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; inner.nodes.len()];
        grads[self.id] = Some(vec![1.0]);
        for id in (0..=self.id).rev() {
            let node = &inner.nodes[id];
            let Some(back) = &node.back else { continue };
            let Some(g) = grads[id].take() else { continue };
            assert_finite("backward", &g);
            let pgrads = back(&g);
            grads[id] = Some(g);
            for (pid, pg) in node.parents.iter().zip(pgrads) {
                match &mut grads[*pid] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&pg) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

fn matmul_ikj(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += A . B^T` for `A: [m, k]`, `B: [n, k]`.
fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += A^T . B` for `A: [m, k]`, `B: [m, n]` -> `[k, n]`.
fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(&Array::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let x = tape.leaf(&Array::new(vec![3, 1], vec![0.5, -1.0, 2.0]));
        let loss = w.matmul(&x).sum();
        let grads = loss.backward();
        // d(sum(Wx))/dW replicates x^T per row.
        assert_eq!(grads.get(&w).unwrap(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn stationary_point_gradient_is_zero() {
        let tape = Tape::new();
        let p = tape.leaf(&Array::vector(vec![0.0, 0.0, 0.0]));
        let loss = p.square().sum();
        let grads = loss.backward();
        assert_eq!(grads.get(&p).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn broadcast_bias_gradient_sums_rows() {
        let tape = Tape::new();
        let x = tape.leaf(&Array::new(vec![2, 2], vec![1., 2., 3., 4.]));
        let b = tape.leaf(&Array::vector(vec![10., 20.]));
        let loss = x.add(&b).sum();
        let grads = loss.backward();
        assert_eq!(grads.get(&b).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn nan_is_a_hard_error() {
        let tape = Tape::new();
        let x = tape.leaf(&Array::vector(vec![-1.0]));
        let _ = x.ln();
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(&Array::vector(vec![1.0, 2.0]));
        let _ = x.backward();
    }
}
