//! Wengert-list reverse-mode differentiation.
//!
//! Ops evaluate eagerly and append one node per result, so node ids are
//! already in topological order; [`Tape::backward`] walks them once in
//! reverse, accumulating gradients into per-node slots. Nodes that cannot
//! reach a parameter carry no backward closure and cost nothing on the
//! reverse pass.

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Per-node gradient slots produced by [`Tape::backward`]. Interior slots
/// are drained during the traversal; leaf gradients stay put so callers can
/// read them afterwards.
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    fn new(n: usize) -> Self {
        Self { slots: (0..n).map(|_| None).collect() }
    }

    fn add(&mut self, id: usize, contribution: Tensor) {
        match &mut self.slots[id] {
            Some(g) => g
                .axpy(1.0, &contribution)
                .expect("gradient contribution shape mismatch"),
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Gradient accumulated for `id`, if the loss reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.slots[id.0].take()
    }
}

struct Values<'a>(&'a [Node]);

impl Values<'_> {
    fn val(&self, id: usize) -> &Tensor {
        &self.0[id].value
    }
}

type BackFn = Box<dyn Fn(&Values, &Tensor, &mut Grads)>;

struct Node {
    value: Tensor,
    needs_grad: bool,
    back: Option<BackFn>,
}

/// Eagerly evaluated computation graph. Build one per forward pass.
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

    /// Leaf that never receives a gradient (inputs, frozen weights).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, None)
    }

    /// Leaf whose gradient is retained by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, true, None)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, back: Option<BackFn>) -> NodeId {
        self.nodes.push(Node { value, needs_grad, back });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// `a . b` for rank-2 operands.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let (m, k) = (self.value(a).rows(), self.value(a).cols());
        let n = self.value(b).cols();
        let (na, nb) = (self.needs(a), self.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |vals, g, out| {
                if na {
                    // dA = g . B^T
                    let mut da = vec![0.0; m * k];
                    tensor::mm_nt(g.data(), vals.val(b.0).data(), m, n, k, &mut da);
                    out.add(a.0, Tensor::from_vec(&[m, k], da));
                }
                if nb {
                    // dB = A^T . g
                    let mut db = vec![0.0; k * n];
                    tensor::mm_tn(vals.val(a.0).data(), g.data(), m, k, n, &mut db);
                    out.add(b.0, Tensor::from_vec(&[k, n], db));
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, na || nb, back))
    }

    /// `a . b^T` for rank-2 operands with matching column counts; used for
    /// attention scores.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols() {
            return Err(Error::Shape(format!(
                "matmul_nt {:?} . {:?}^T",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; m * n];
        tensor::mm_nt(av.data(), bv.data(), m, k, n, &mut out);
        let value = Tensor::from_vec(&[m, n], out);
        let (na, nb) = (self.needs(a), self.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |vals, g, out| {
                if na {
                    // dA = g . B
                    let mut da = vec![0.0; m * k];
                    tensor::mm(g.data(), vals.val(b.0).data(), m, n, k, &mut da);
                    out.add(a.0, Tensor::from_vec(&[m, k], da));
                }
                if nb {
                    // dB = g^T . A
                    let mut db = vec![0.0; n * k];
                    tensor::mm_tn(g.data(), vals.val(a.0).data(), m, n, k, &mut db);
                    out.add(b.0, Tensor::from_vec(&[n, k], db));
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, na || nb, back))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let (na, nb) = (self.needs(a), self.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |_, g, out| {
                if na {
                    out.add(a.0, g.clone());
                }
                if nb {
                    out.add(b.0, g.clone());
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, na || nb, back))
    }

    /// Adds a rank-1 bias of length d to every row of a T x d tensor.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.rank() != 2 || bv.rank() != 1 || xv.cols() != bv.len() {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let (t, d) = (xv.rows(), xv.cols());
        let mut out = xv.data().to_vec();
        for row in out.chunks_exact_mut(d) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::from_vec(&[t, d], out);
        let (nx, nb) = (self.needs(x), self.needs(bias));
        let back: Option<BackFn> = if nx || nb {
            Some(Box::new(move |_, g, out| {
                if nx {
                    out.add(x.0, g.clone());
                }
                if nb {
                    let mut db = vec![0.0; d];
                    for row in g.data().chunks_exact(d) {
                        for (s, &gv) in db.iter_mut().zip(row) {
                            *s += gv;
                        }
                    }
                    out.add(bias.0, Tensor::from_vec(&[d], db));
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, nx || nb, back))
    }

    /// Multiplies every entry by a compile-time-known constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| v * c);
        let nx = self.needs(x);
        let back: Option<BackFn> = if nx {
            Some(Box::new(move |_, g, out| {
                out.add(x.0, g.map(|v| v * c));
            }))
        } else {
            None
        };
        self.push(value, nx, back)
    }

    /// Row-wise softmax of a rank-2 tensor, stabilized by per-row max
    /// subtraction.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::Shape(format!("softmax_rows on {:?}", xv.shape())));
        }
        let (t, d) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; t * d];
        for (orow, xrow) in out.chunks_exact_mut(d).zip(xv.data().chunks_exact(d)) {
            softmax_row(xrow, orow);
        }
        let value = Tensor::from_vec(&[t, d], out);
        let nx = self.needs(x);
        let out_id = self.nodes.len();
        let back: Option<BackFn> = if nx {
            Some(Box::new(move |vals, g, out| {
                let y = vals.val(out_id);
                let mut dx = vec![0.0; t * d];
                for ((dxr, yr), gr) in dx
                    .chunks_exact_mut(d)
                    .zip(y.data().chunks_exact(d))
                    .zip(g.data().chunks_exact(d))
                {
                    let s: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for ((o, &yv), &gv) in dxr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - s);
                    }
                }
                out.add(x.0, Tensor::from_vec(&[t, d], dx));
            }))
        } else {
            None
        };
        Ok(self.push(value, nx, back))
    }

    /// Per-row layer normalization with learnable gain and shift:
    /// `y = gamma * (x - mean) / sqrt(var + eps) + beta`, population
    /// variance over the row.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        if xv.rank() != 2 || gv.rank() != 1 || bv.rank() != 1 {
            return Err(Error::Shape("layer_norm expects (T x d, [d], [d])".into()));
        }
        let (t, d) = (xv.rows(), xv.cols());
        if gv.len() != d || bv.len() != d {
            return Err(Error::Shape(format!(
                "layer_norm width {d} vs gamma {} / beta {}",
                gv.len(),
                bv.len()
            )));
        }
        let mut out = vec![0.0; t * d];
        for (orow, xrow) in out.chunks_exact_mut(d).zip(xv.data().chunks_exact(d)) {
            let (mean, inv) = row_norm_stats(xrow, eps);
            for ((o, &xval), (&g, &b)) in orow
                .iter_mut()
                .zip(xrow)
                .zip(gv.data().iter().zip(bv.data()))
            {
                *o = g * ((xval - mean) * inv) + b;
            }
        }
        let value = Tensor::from_vec(&[t, d], out);
        let (nx, ng, nb) = (self.needs(x), self.needs(gamma), self.needs(beta));
        let any = nx || ng || nb;
        let back: Option<BackFn> = if any {
            Some(Box::new(move |vals, g, out| {
                let xval = vals.val(x.0);
                let gam = vals.val(gamma.0);
                let mut dx = if nx { vec![0.0; t * d] } else { Vec::new() };
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..t {
                    let xrow = &xval.data()[r * d..(r + 1) * d];
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let (mean, inv) = row_norm_stats(xrow, eps);
                    // xhat and the two row means the input gradient needs.
                    let mut mean_h = 0.0;
                    let mut mean_hx = 0.0;
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * inv;
                        dbeta[j] += grow[j];
                        dgamma[j] += grow[j] * xhat;
                        let h = grow[j] * gam.data()[j];
                        mean_h += h;
                        mean_hx += h * xhat;
                    }
                    mean_h /= d as f64;
                    mean_hx /= d as f64;
                    if nx {
                        let dxrow = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            let xhat = (xrow[j] - mean) * inv;
                            let h = grow[j] * gam.data()[j];
                            dxrow[j] = inv * (h - mean_h - xhat * mean_hx);
                        }
                    }
                }
                if nx {
                    out.add(x.0, Tensor::from_vec(&[t, d], dx));
                }
                if ng {
                    out.add(gamma.0, Tensor::from_vec(&[d], dgamma));
                }
                if nb {
                    out.add(beta.0, Tensor::from_vec(&[d], dbeta));
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, any, back))
    }

    /// GELU with the tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(gelu_scalar);
        let nx = self.needs(x);
        let back: Option<BackFn> = if nx {
            Some(Box::new(move |vals, g, out| {
                let dx = vals
                    .val(x.0)
                    .zip_map(g, |xv, gv| gv * gelu_grad_scalar(xv))
                    .expect("gelu gradient shape mismatch");
                out.add(x.0, dx);
            }))
        } else {
            None
        };
        self.push(value, nx, back)
    }

    /// Categorical cross-entropy of a single logit row against an integer
    /// label: `-log softmax(logits)[label]`, computed via a stable
    /// log-sum-exp. Accepts shape `[C]` or `[1, C]`.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        let c = match lv.shape() {
            [c] => *c,
            [1, c] => *c,
            other => {
                return Err(Error::Shape(format!(
                    "cross_entropy expects [C] or [1, C] logits, got {other:?}"
                )))
            }
        };
        if label >= c {
            return Err(Error::Label(format!("label {label} >= {c} classes")));
        }
        let z = lv.data();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let loss = lse - z[label];
        let shape = lv.shape().to_vec();
        let value = Tensor::scalar(loss);
        let nx = self.needs(logits);
        let back: Option<BackFn> = if nx {
            Some(Box::new(move |vals, g, out| {
                let z = vals.val(logits.0).data();
                let g0 = g.data()[0];
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = z.iter().map(|&v| (v - max).exp()).sum();
                let mut dz: Vec<f64> = z
                    .iter()
                    .map(|&v| g0 * (v - max).exp() / sum_exp)
                    .collect();
                dz[label] -= g0;
                out.add(logits.0, Tensor::from_vec(&shape, dz));
            }))
        } else {
            None
        };
        Ok(self.push(value, nx, back))
    }

    /// Mean over the rows of a T x d tensor, yielding a 1 x d row.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::Shape(format!("mean_rows on {:?}", xv.shape())));
        }
        let (t, d) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; d];
        for row in xv.data().chunks_exact(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / t as f64;
        for o in &mut out {
            *o *= inv;
        }
        let value = Tensor::from_vec(&[1, d], out);
        let nx = self.needs(x);
        let back: Option<BackFn> = if nx {
            Some(Box::new(move |_, g, out| {
                let mut dx = vec![0.0; t * d];
                for row in dx.chunks_exact_mut(d) {
                    for (o, &gv) in row.iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                out.add(x.0, Tensor::from_vec(&[t, d], dx));
            }))
        } else {
            None
        };
        Ok(self.push(value, nx, back))
    }

    /// Columns `[start, start + len)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::Shape(format!("slice_cols on {:?}", xv.shape())));
        }
        let (t, d) = (xv.rows(), xv.cols());
        if len == 0 || start + len > d {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) of width {d}",
                start + len
            )));
        }
        let mut out = vec![0.0; t * len];
        for (orow, xrow) in out.chunks_exact_mut(len).zip(xv.data().chunks_exact(d)) {
            orow.copy_from_slice(&xrow[start..start + len]);
        }
        let value = Tensor::from_vec(&[t, len], out);
        let nx = self.needs(x);
        let back: Option<BackFn> = if nx {
            Some(Box::new(move |_, g, out| {
                let mut dx = vec![0.0; t * d];
                for (dxrow, grow) in dx.chunks_exact_mut(d).zip(g.data().chunks_exact(len)) {
                    dxrow[start..start + len].copy_from_slice(grow);
                }
                out.add(x.0, Tensor::from_vec(&[t, d], dx));
            }))
        } else {
            None
        };
        Ok(self.push(value, nx, back))
    }

    /// Horizontal concatenation of rank-2 tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of zero parts".into()));
        }
        let t = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                if v.rank() != 2 || v.rows() != t {
                    Err(Error::Shape(format!(
                        "concat_cols needs {t} rows, got {:?}",
                        v.shape()
                    )))
                } else {
                    Ok(v.cols())
                }
            })
            .collect::<Result<_>>()?;
        let d: usize = widths.iter().sum();
        let mut out = vec![0.0; t * d];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            for (orow, prow) in out.chunks_exact_mut(d).zip(pv.data().chunks_exact(w)) {
                orow[offset..offset + w].copy_from_slice(prow);
            }
            offset += w;
        }
        let value = Tensor::from_vec(&[t, d], out);
        let needs: Vec<(usize, bool)> = parts.iter().map(|&p| (p.0, self.needs(p))).collect();
        let any = needs.iter().any(|&(_, n)| n);
        let widths_back = widths.clone();
        let back: Option<BackFn> = if any {
            Some(Box::new(move |_, g, out| {
                let mut offset = 0;
                for (&(pid, need), &w) in needs.iter().zip(&widths_back) {
                    if need {
                        let mut dp = vec![0.0; t * w];
                        for (dprow, grow) in
                            dp.chunks_exact_mut(w).zip(g.data().chunks_exact(d))
                        {
                            dprow.copy_from_slice(&grow[offset..offset + w]);
                        }
                        out.add(pid, Tensor::from_vec(&[t, w], dp));
                    }
                    offset += w;
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, any, back))
    }

    /// Euclidean norm of each column of a d x k tensor, as a length-k
    /// vector. Zero columns get a zero subgradient.
    pub fn col_norms(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::Shape(format!("col_norms on {:?}", xv.shape())));
        }
        let (d, k) = (xv.rows(), xv.cols());
        let mut norms = vec![0.0; k];
        for row in xv.data().chunks_exact(k) {
            for (n, &v) in norms.iter_mut().zip(row) {
                *n += v * v;
            }
        }
        for n in &mut norms {
            *n = n.sqrt();
        }
        let value = Tensor::from_vec(&[k], norms);
        let nx = self.needs(x);
        let out_id = self.nodes.len();
        let back: Option<BackFn> = if nx {
            Some(Box::new(move |vals, g, out| {
                let xval = vals.val(x.0);
                let norms = vals.val(out_id).data();
                let mut dx = vec![0.0; d * k];
                for (dxrow, xrow) in dx
                    .chunks_exact_mut(k)
                    .zip(xval.data().chunks_exact(k))
                {
                    for j in 0..k {
                        if norms[j] > 0.0 {
                            dxrow[j] = g.data()[j] * xrow[j] / norms[j];
                        }
                    }
                }
                out.add(x.0, Tensor::from_vec(&[d, k], dx));
            }))
        } else {
            None
        };
        Ok(self.push(value, nx, back))
    }

    /// Elementwise quotient of two rank-1 tensors.
    pub fn elem_div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 1 || bv.rank() != 1 || av.len() != bv.len() {
            return Err(Error::Shape(format!(
                "elem_div {:?} / {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let value = av.zip_map(bv, |x, y| x / y)?;
        if !value.is_finite() {
            return Err(Error::Numeric(
                "elementwise division produced a non-finite value".into(),
            ));
        }
        let (na, nb) = (self.needs(a), self.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |vals, g, out| {
                let (av, bv) = (vals.val(a.0), vals.val(b.0));
                if na {
                    out.add(a.0, g.zip_map(bv, |gv, y| gv / y).unwrap());
                }
                if nb {
                    let db = Tensor::from_fn(&[bv.len()], |i| {
                        let y = bv.data()[i];
                        -g.data()[i] * av.data()[i] / (y * y)
                    });
                    out.add(b.0, db);
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, na || nb, back))
    }

    /// Scales column j of a d x k tensor by the j-th entry of a length-k
    /// vector.
    pub fn scale_cols(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (xv, sv) = (self.value(x), self.value(s));
        if xv.rank() != 2 || sv.rank() != 1 || xv.cols() != sv.len() {
            return Err(Error::Shape(format!(
                "scale_cols {:?} by {:?}",
                xv.shape(),
                sv.shape()
            )));
        }
        let (d, k) = (xv.rows(), xv.cols());
        let mut out = xv.data().to_vec();
        for row in out.chunks_exact_mut(k) {
            for (o, &sc) in row.iter_mut().zip(sv.data()) {
                *o *= sc;
            }
        }
        let value = Tensor::from_vec(&[d, k], out);
        let (nx, ns) = (self.needs(x), self.needs(s));
        let back: Option<BackFn> = if nx || ns {
            Some(Box::new(move |vals, g, out| {
                if nx {
                    let sv = vals.val(s.0);
                    let mut dx = g.data().to_vec();
                    for row in dx.chunks_exact_mut(k) {
                        for (o, &sc) in row.iter_mut().zip(sv.data()) {
                            *o *= sc;
                        }
                    }
                    out.add(x.0, Tensor::from_vec(&[d, k], dx));
                }
                if ns {
                    let xv = vals.val(x.0);
                    let mut ds = vec![0.0; k];
                    for (grow, xrow) in g
                        .data()
                        .chunks_exact(k)
                        .zip(xv.data().chunks_exact(k))
                    {
                        for j in 0..k {
                            ds[j] += grow[j] * xrow[j];
                        }
                    }
                    out.add(s.0, Tensor::from_vec(&[k], ds));
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, nx || ns, back))
    }

    /// Runs the reverse pass from a single-element loss node. Each interior
    /// node is visited exactly once, in reverse topological (= reverse
    /// insertion) order; gradients accumulate where a node feeds several
    /// consumers. Leaf gradients stay in the returned [`Grads`].
    pub fn backward(&self, loss: NodeId) -> Result<Grads> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a 1-element loss, got {:?}",
                node.value.shape()
            )));
        }
        let mut grads = Grads::new(self.nodes.len());
        if !node.needs_grad {
            return Ok(grads);
        }
        grads.add(loss.0, Tensor::filled(node.value.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let n = &self.nodes[id];
            let Some(back) = &n.back else { continue };
            let Some(g) = grads.slots[id].take() else { continue };
            back(&Values(&self.nodes), &g, &mut grads);
        }
        Ok(grads)
    }
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Row mean and 1/sqrt(var + eps), population variance.
fn row_norm_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

const GELU_COEFF: f64 = 0.044715;

fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEFF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEFF * x * x)
}
