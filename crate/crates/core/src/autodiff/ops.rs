use std::rc::Rc;

use super::kernels::{axis_split, gemm_nn, gemm_nt, gemm_tn, strided_offsets, strides};
use super::{numel, Result, Tensor, TensorError};

const LN_EPS: f64 = 1e-5;
const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Strides of `src` expressed in `out` coordinates, right-aligned, zero on
/// broadcast dimensions.
fn broadcast_strides(op: &'static str, out: &[usize], src: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: out.to_vec(),
        rhs: src.to_vec(),
    };
    if src.len() > out.len() {
        return Err(mismatch());
    }
    let pad = out.len() - src.len();
    let src_strides = strides(src);
    let mut result = vec![0; out.len()];
    for d in 0..out.len() {
        if d < pad {
            continue;
        }
        let sd = src[d - pad];
        if sd == out[d] {
            result[d] = src_strides[d - pad];
        } else if sd != 1 {
            return Err(mismatch());
        }
    }
    Ok(result)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidAxis {
            op,
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

fn same_tape(a: &Tensor<'_>, b: &Tensor<'_>) {
    assert!(
        std::ptr::eq(a.tape, b.tape),
        "tensors recorded on different tapes"
    );
}

/// Where element `i` of a broadcast result reads the smaller operand.
enum BroadcastIndex {
    Same,
    /// The operand is a trailing block repeated `n`-periodically.
    Cycle(usize),
    Table(Vec<usize>),
}

impl BroadcastIndex {
    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            Self::Same => i,
            Self::Cycle(n) => i % n,
            Self::Table(t) => t[i],
        }
    }
}

impl<'t> Tensor<'t> {
    fn binary(&self, other: &Tensor<'t>, kind: Binary, op: &'static str) -> Result<Tensor<'t>> {
        same_tape(self, other);
        let shape = self.shape();
        let other_shape = other.shape();
        let a = self.value();
        let b = other.value();
        let index = if shape == other_shape {
            BroadcastIndex::Same
        } else {
            let st = broadcast_strides(op, &shape, &other_shape)?;
            let core: &[usize] = {
                let lead = other_shape.iter().take_while(|&&d| d == 1).count();
                &other_shape[lead..]
            };
            if shape.ends_with(core) {
                BroadcastIndex::Cycle(core.iter().product())
            } else {
                BroadcastIndex::Table(strided_offsets(&shape, &st))
            }
        };
        let offsets = Rc::new(index);
        let bi = |i: usize, offs: &Rc<BroadcastIndex>| offs.at(i);
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let out: Vec<f64> = match offsets.as_ref() {
            BroadcastIndex::Cycle(n) => a
                .chunks_exact(*n)
                .flat_map(|chunk| chunk.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)))
                .collect(),
            _ => (0..a.len()).map(|i| f(a[i], b[bi(i, &offsets)])).collect(),
        };
        let (ia, ib) = (self.id, other.id);
        Ok(self.tape.push_op(shape, Rc::new(out), &[self, other], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                match kind {
                    Binary::Add | Binary::Sub => {
                        for (d, gi) in da.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                    Binary::Mul => {
                        for (i, d) in da.iter_mut().enumerate() {
                            *d += g[i] * b[bi(i, &offsets)];
                        }
                    }
                    Binary::Div => {
                        for (i, d) in da.iter_mut().enumerate() {
                            *d += g[i] / b[bi(i, &offsets)];
                        }
                    }
                }
            }
            if let Some(db) = sink.slot(ib) {
                if let (BroadcastIndex::Cycle(n), Binary::Add | Binary::Sub) = (offsets.as_ref(), kind) {
                    let sign = if matches!(kind, Binary::Add) { 1.0 } else { -1.0 };
                    for chunk in g.chunks_exact(*n) {
                        for (d, gi) in db.iter_mut().zip(chunk) {
                            *d += sign * gi;
                        }
                    }
                    return;
                }
                for (i, gi) in g.iter().enumerate() {
                    let j = bi(i, &offsets);
                    db[j] += match kind {
                        Binary::Add => *gi,
                        Binary::Sub => -gi,
                        Binary::Mul => gi * a[i],
                        Binary::Div => -gi * a[i] / (b[j] * b[j]),
                    };
                }
            }
        }))
    }

    /// Elementwise sum; `other` may broadcast (right-aligned, dims equal or 1).
    pub fn add(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Binary::Add, "add")
    }

    pub fn sub(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Binary::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Binary::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Binary::Div, "div")
    }

    pub fn scale(&self, s: f64) -> Tensor<'t> {
        let out: Vec<f64> = self.value().iter().map(|x| x * s).collect();
        let ia = self.id;
        self.tape.push_op(self.shape(), Rc::new(out), &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += gi * s;
                }
            }
        })
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<'t> {
        let out: Vec<f64> = self.value().iter().map(|x| x + s).collect();
        let ia = self.id;
        self.tape.push_op(self.shape(), Rc::new(out), &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        })
    }

    /// `[.., m, k] × [k, n] → [.., m, n]`; leading dims of `self` are
    /// flattened into rows.
    pub fn matmul(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        same_tape(self, other);
        let sa = self.shape();
        let sb = other.shape();
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k;
        let a = self.value();
        let b = other.value();
        let mut c = vec![0.0; m * n];
        gemm_nn(&a, &b, &mut c, m, k, n);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let (ia, ib) = (self.id, other.id);
        Ok(self.tape.push_op(shape, Rc::new(c), &[self, other], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                gemm_nt(g, &b, da, m, n, k);
            }
            if let Some(db) = sink.slot(ib) {
                gemm_tn(&a, g, db, k, m, n);
            }
        }))
    }

    /// `[m, k] × [n, k]ᵀ → [m, n]`.
    pub fn matmul_t(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        same_tape(self, other);
        let sa = self.shape();
        let sb = other.shape();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_t",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let a = self.value();
        let b = other.value();
        let mut c = vec![0.0; m * n];
        gemm_nt(&a, &b, &mut c, m, k, n);
        let (ia, ib) = (self.id, other.id);
        Ok(self.tape.push_op(vec![m, n], Rc::new(c), &[self, other], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                gemm_nn(g, &b, da, m, n, k);
            }
            if let Some(db) = sink.slot(ib) {
                gemm_tn(g, &a, db, n, m, k);
            }
        }))
    }

    /// Batched product `[b, m, k] × [b, k, n]`, or `[b, m, k] × [b, n, k]ᵀ`
    /// when `transpose_other` is set.
    pub fn batch_matmul(&self, other: &Tensor<'t>, transpose_other: bool) -> Result<Tensor<'t>> {
        same_tape(self, other);
        let sa = self.shape();
        let sb = other.shape();
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_other {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            };
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "batch_matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_other { sb[1] } else { sb[2] };
        let a = self.value();
        let b = other.value();
        let mut c = vec![0.0; bt * m * n];
        for s in 0..bt {
            let (aa, bb) = (&a[s * m * k..(s + 1) * m * k], &b[s * k * n..(s + 1) * k * n]);
            let cc = &mut c[s * m * n..(s + 1) * m * n];
            if transpose_other {
                gemm_nt(aa, bb, cc, m, k, n);
            } else {
                gemm_nn(aa, bb, cc, m, k, n);
            }
        }
        let (ia, ib) = (self.id, other.id);
        Ok(self
            .tape
            .push_op(vec![bt, m, n], Rc::new(c), &[self, other], move |g, sink| {
                if let Some(da) = sink.slot(ia) {
                    for s in 0..bt {
                        let gg = &g[s * m * n..(s + 1) * m * n];
                        let bb = &b[s * k * n..(s + 1) * k * n];
                        let dd = &mut da[s * m * k..(s + 1) * m * k];
                        if transpose_other {
                            gemm_nn(gg, bb, dd, m, n, k);
                        } else {
                            gemm_nt(gg, bb, dd, m, n, k);
                        }
                    }
                }
                if let Some(db) = sink.slot(ib) {
                    for s in 0..bt {
                        let gg = &g[s * m * n..(s + 1) * m * n];
                        let aa = &a[s * m * k..(s + 1) * m * k];
                        let dd = &mut db[s * k * n..(s + 1) * k * n];
                        if transpose_other {
                            gemm_tn(gg, aa, dd, n, m, k);
                        } else {
                            gemm_tn(aa, gg, dd, k, m, n);
                        }
                    }
                }
            }))
    }

    /// Same data, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<'t>> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(),
                rhs: shape.to_vec(),
            });
        }
        let ia = self.id;
        Ok(self
            .tape
            .push_op(shape.to_vec(), self.value(), &[self], move |g, sink| {
                if let Some(da) = sink.slot(ia) {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<'t>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of the axes of {shape:?}"),
            });
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let offsets = Rc::new(strided_offsets(&out_shape, &src_strides));
        let x = self.value();
        let out: Vec<f64> = offsets.iter().map(|&o| x[o]).collect();
        let ia = self.id;
        Ok(self.tape.push_op(out_shape, Rc::new(out), &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for (gi, &o) in g.iter().zip(offsets.iter()) {
                    da[o] += gi;
                }
            }
        }))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor<'t>> {
        if self.shape().len() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("expected a matrix, got {:?}", self.shape()),
            });
        }
        self.permute(&[1, 0])
    }

    /// Repeats `self` to `shape` (right-aligned, dims equal or 1).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<'t>> {
        let st = broadcast_strides("broadcast_to", shape, &self.shape())?;
        let offsets = Rc::new(strided_offsets(shape, &st));
        let x = self.value();
        let out: Vec<f64> = offsets.iter().map(|&o| x[o]).collect();
        let ia = self.id;
        Ok(self
            .tape
            .push_op(shape.to_vec(), Rc::new(out), &[self], move |g, sink| {
                if let Some(da) = sink.slot(ia) {
                    for (gi, &o) in g.iter().zip(offsets.iter()) {
                        da[o] += gi;
                    }
                }
            }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<'t>> {
        let shape = self.shape();
        check_axis("softmax", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for l in 0..len {
                    max = max.max(x[base + l * inner]);
                }
                let mut sum = 0.0;
                for l in 0..len {
                    let e = (x[base + l * inner] - max).exp();
                    y[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..len {
                    y[base + l * inner] /= sum;
                }
            }
        }
        let y = Rc::new(y);
        let yc = Rc::clone(&y);
        let ia = self.id;
        Ok(self.tape.push_op(shape, y, &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for l in 0..len {
                            dot += g[base + l * inner] * yc[base + l * inner];
                        }
                        for l in 0..len {
                            let j = base + l * inner;
                            da[j] += yc[j] * (g[j] - dot);
                        }
                    }
                }
            }
        }))
    }

    /// Normalizes the last dimension to zero mean and unit population
    /// variance, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor<'t>, bias: &Tensor<'t>) -> Result<Tensor<'t>> {
        same_tape(self, gain);
        same_tape(self, bias);
        let shape = self.shape();
        let n = *shape.last().unwrap_or(&0);
        if n == 0 {
            return Err(TensorError::Invalid {
                op: "layer_norm",
                msg: "zero-length last dimension".into(),
            });
        }
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: gain.shape(),
            });
        }
        let x = self.value();
        let gv = gain.value();
        let bv = bias.value();
        let rows = x.len() / n;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                y[r * n + c] = h * gv[c] + bv[c];
            }
        }
        let (ix, ig, ib) = (self.id, gain.id, bias.id);
        Ok(self
            .tape
            .push_op(shape, Rc::new(y), &[self, gain, bias], move |g, sink| {
                if let Some(dg) = sink.slot(ig) {
                    for r in 0..rows {
                        for c in 0..n {
                            dg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                if let Some(db) = sink.slot(ib) {
                    for r in 0..rows {
                        for c in 0..n {
                            db[c] += g[r * n + c];
                        }
                    }
                }
                if let Some(dx) = sink.slot(ix) {
                    let mut dh = vec![0.0; n];
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..n {
                            dh[c] = g[r * n + c] * gv[c];
                            mean_dh += dh[c];
                            mean_dh_h += dh[c] * xhat[r * n + c];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        for c in 0..n {
                            dx[r * n + c] +=
                                inv_std[r] * (dh[c] - mean_dh - xhat[r * n + c] * mean_dh_h);
                        }
                    }
                }
            }))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<'t> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        let x = self.value();
        let t: Vec<f64> = x.iter().map(|&v| (C * (v + A * v * v * v)).tanh()).collect();
        let out: Vec<f64> = x.iter().zip(&t).map(|(&v, &t)| 0.5 * v * (1.0 + t)).collect();
        let ia = self.id;
        self.tape.push_op(self.shape(), Rc::new(out), &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for (i, d) in da.iter_mut().enumerate() {
                    let (v, t) = (x[i], t[i]);
                    let dt = (1.0 - t * t) * C * (1.0 + 3.0 * A * v * v);
                    *d += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
                }
            }
        })
    }

    /// Gathers rows of a `[v, d]` table; gradient scatter-adds back.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor<'t>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("table must be 2-D, got {shape:?}"),
            });
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("row {bad} out of range for table with {v} rows"),
            });
        }
        let table = self.value();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&table[i * d..(i + 1) * d]);
        }
        let ids = ids.to_vec();
        let ia = self.id;
        Ok(self
            .tape
            .push_op(vec![ids.len(), d], Rc::new(out), &[self], move |g, sink| {
                if let Some(dt) = sink.slot(ia) {
                    for (r, &i) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[i * d + c] += g[r * d + c];
                        }
                    }
                }
            }))
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(parts: &[Tensor<'t>], axis: usize) -> Result<Tensor<'t>> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = first.shape();
        check_axis("concat", &base, axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            same_tape(first, p);
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s,
                });
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let values: Vec<Rc<Vec<f64>>> = parts.iter().map(|p| p.value()).collect();
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let refs: Vec<&Tensor<'t>> = parts.iter().collect();
        Ok(first.tape.push_op(shape, Rc::new(out), &refs, move |g, sink| {
            let mut start = 0;
            for (&id, &l) in ids.iter().zip(&lens) {
                if let Some(d) = sink.slot(id) {
                    for o in 0..outer {
                        let src = &g[o * total * inner + start * inner..][..l * inner];
                        for (x, y) in d[o * l * inner..(o + 1) * l * inner].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
                start += l;
            }
        }))
    }

    /// Sub-range `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<'t>> {
        let shape = self.shape();
        check_axis("slice", &shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {start}..{} outside axis of length {}", start + len, shape[axis]),
            });
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let x = self.value();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let ia = self.id;
        Ok(self.tape.push_op(out_shape, Rc::new(out), &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for o in 0..outer {
                    let dst = &mut da[(o * full + start) * inner..(o * full + start + len) * inner];
                    for (d, gi) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                        *d += gi;
                    }
                }
            }
        }))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Tensor<'t> {
        let s: f64 = self.value().iter().sum();
        let ia = self.id;
        self.tape.push_op(vec![1], Rc::new(vec![s]), &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
        })
    }

    pub fn mean(&self) -> Tensor<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum along `axis`, keeping it with length 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<'t>> {
        let shape = self.shape();
        check_axis("sum_axis", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let ia = self.id;
        Ok(self.tape.push_op(out_shape, Rc::new(out), &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut da[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, gi) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d += gi;
                        }
                    }
                }
            }
        }))
    }

    /// Mean along `axis`, removing it.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<'t>> {
        let mut shape = self.shape();
        check_axis("mean_axis", &shape, axis)?;
        let len = shape[axis] as f64;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.sum_axis(axis)?.scale(1.0 / len).reshape(&shape)
    }

    /// Identity forward, no gradient backward.
    pub fn stop_gradient(&self) -> Tensor<'t> {
        self.tape
            .push_op(self.shape(), self.value(), &[], |_, _| {})
    }

    /// Forward value `hard`, gradient routed to `self` unchanged. Equal to
    /// `hard - stop_gradient(self) + self` but bit-exact in the forward.
    pub fn straight_through(&self, hard: Vec<f64>) -> Result<Tensor<'t>> {
        if hard.len() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "straight_through",
                lhs: self.shape(),
                rhs: vec![hard.len()],
            });
        }
        let ia = self.id;
        Ok(self
            .tape
            .push_op(self.shape(), Rc::new(hard), &[self], move |g, sink| {
                if let Some(da) = sink.slot(ia) {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }))
    }

    /// Clamp with pass-through gradient inside `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<'t> {
        let x = self.value();
        let out: Vec<f64> = x.iter().map(|v| v.clamp(lo, hi)).collect();
        let ia = self.id;
        self.tape.push_op(self.shape(), Rc::new(out), &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for (i, d) in da.iter_mut().enumerate() {
                    if x[i] >= lo && x[i] <= hi {
                        *d += g[i];
                    }
                }
            }
        })
    }

    /// Divides each row of the last dimension by `max(‖row‖, 1e-12)`.
    pub fn l2_normalize(&self) -> Result<Tensor<'t>> {
        let shape = self.shape();
        let n = *shape.last().unwrap();
        let x = self.value();
        let rows = x.len() / n;
        let mut norms = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[r] = norm;
            let denom = norm.max(NORM_FLOOR);
            for c in 0..n {
                y[r * n + c] = row[c] / denom;
            }
        }
        let y = Rc::new(y);
        let yc = Rc::clone(&y);
        let ia = self.id;
        Ok(self.tape.push_op(shape, y, &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for r in 0..rows {
                    let gr = &g[r * n..(r + 1) * n];
                    if norms[r] > NORM_FLOOR {
                        let yr = &yc[r * n..(r + 1) * n];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            da[r * n + c] += (gr[c] - yr[c] * dot) / norms[r];
                        }
                    } else {
                        for c in 0..n {
                            da[r * n + c] += gr[c] / NORM_FLOOR;
                        }
                    }
                }
            }
        }))
    }

    /// `Σ_i w_i · (−log softmax(row_i)[target_i])` over `[n, v]` logits.
    /// Rows with zero weight contribute nothing.
    pub fn weighted_nll(&self, targets: &[usize], weights: &[f64]) -> Result<Tensor<'t>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != targets.len() || targets.len() != weights.len() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_nll",
                lhs: shape,
                rhs: vec![targets.len(), weights.len()],
            });
        }
        let (n, v) = (shape[0], shape[1]);
        let x = self.value();
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        for r in 0..n {
            if weights[r] == 0.0 {
                continue;
            }
            let t = targets[r];
            if t >= v {
                return Err(TensorError::Invalid {
                    op: "weighted_nll",
                    msg: format!("target {t} outside vocabulary of {v}"),
                });
            }
            let row = &x[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            loss += weights[r] * (lse - row[t]);
            for c in 0..v {
                probs[r * v + c] = (row[c] - lse).exp();
            }
        }
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        let ia = self.id;
        Ok(self.tape.push_op(vec![1], Rc::new(vec![loss]), &[self], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for r in 0..n {
                    let w = weights[r] * g[0];
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..v {
                        da[r * v + c] += w * probs[r * v + c];
                    }
                    da[r * v + targets[r]] -= w;
                }
            }
        }))
    }

    /// Mean negative log-likelihood over rows whose target is not
    /// `ignore_index`. All rows ignored gives 0 with zero gradient.
    pub fn cross_entropy(&self, targets: &[usize], ignore_index: usize) -> Result<Tensor<'t>> {
        let count = targets.iter().filter(|&&t| t != ignore_index).count();
        let weights: Vec<f64> = targets
            .iter()
            .map(|&t| {
                if t == ignore_index {
                    0.0
                } else {
                    1.0 / count as f64
                }
            })
            .collect();
        let safe: Vec<usize> = targets
            .iter()
            .map(|&t| if t == ignore_index { 0 } else { t })
            .collect();
        self.weighted_nll(&safe, &weights)
    }

    /// Index of the maximum along `axis` (lowest index on ties). Not
    /// differentiable.
    pub fn argmax(&self, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        check_axis("argmax", &shape, axis)?;
        Ok(argmax_axis(&self.value(), &shape, axis))
    }
}

/// Argmax along `axis` of a raw row-major buffer; ties go to the lowest index.
pub fn argmax_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<usize> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut best = 0;
            for l in 1..len {
                if x[base + l * inner] > x[base + best * inner] {
                    best = l;
                }
            }
            out[o * inner + i] = best;
        }
    }
    out
}

/// Cosine similarity of two vectors, clamped to `[-1, 1]`. Norms are
/// floored at 1e-12.
pub fn cosine_similarity<'t>(a: &Tensor<'t>, b: &Tensor<'t>) -> Result<Tensor<'t>> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "cosine_similarity",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let na = a.l2_normalize()?;
    let nb = b.l2_normalize()?;
    Ok(na.mul(&nb)?.sum().clamp(-1.0, 1.0))
}

/// Pairwise cosine similarities `[n, d] × [m, d] → [n, m]`.
pub fn cosine_matrix<'t>(a: &Tensor<'t>, b: &Tensor<'t>) -> Result<Tensor<'t>> {
    let na = a.l2_normalize()?;
    let nb = b.l2_normalize()?;
    Ok(na.matmul_t(&nb)?.clamp(-1.0, 1.0))
}
