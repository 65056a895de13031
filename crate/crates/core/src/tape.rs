//! Wengert tape: reverse-mode AD via operation recording.
//!
//! A forward pass appends nodes to the tape; [`Tape::backward`] replays
//! them in strict reverse creation order, accumulating vector-Jacobian
//! products. Accumulation order is fixed, so two backward passes over
//! identical tapes produce bitwise-identical gradients.
//!
//! Every op validates shapes up front and checks its output for
//! NaN/Inf; a non-finite value is reported as an error rather than
//! propagated silently.

use crate::error::{CoreError, Result};
use crate::tensor::{self, Real, Tensor};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// GELU tanh-approximation constant sqrt(2/pi).
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op<F> {
    Input,
    Matmul { a: VarId, b: VarId },
    /// a · bᵀ, with b stored row-major (n×k).
    MatmulNt { a: VarId, b: VarId },
    SoftmaxRows { x: VarId },
    /// Row-wise layer norm over the last axis; aux caches per-row
    /// (mean, rstd) pairs.
    LayerNorm { x: VarId, gain: VarId, bias: VarId },
    Relu { x: VarId },
    Gelu { x: VarId },
    Add { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    ScaleConst { x: VarId, c: F },
    /// Elementwise scale by a single tape scalar (a mask variable).
    ScaleVar { x: VarId, s: VarId },
    /// Matrix plus a broadcast bias row.
    AddBias { x: VarId, bias: VarId },
    /// Row lookup into an embedding table; backward scatter-adds.
    GatherRows { table: VarId, ids: Vec<u32> },
    MeanRows { x: VarId },
    ConcatRows { parts: Vec<VarId> },
    /// Inverted dropout; the kept-element mask is cached on the node.
    Dropout { x: VarId, kept: Vec<bool>, scale: F },
    /// Mean cross-entropy over rows; aux caches the softmax probs.
    CrossEntropy { logits: VarId, labels: Vec<u32> },
    /// Mean squared error against a constant target.
    Mse { pred: VarId, target: Tensor<F> },
}

#[derive(Debug, Clone)]
struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    /// Cached values needed by the backward rule (op-specific layout).
    aux: Vec<F>,
}

/// Append-only record of one forward pass.
#[derive(Debug)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by tape node, produced by [`Tape::backward`].
/// Nodes the root does not reach hold zero.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: VarId) -> Option<&Tensor<F>> {
        self.grads[id.index()].as_ref()
    }

    /// Gradient for `id`, zeros of the node's shape when unreached.
    pub fn of(&self, tape: &Tape<F>, id: VarId) -> Tensor<F> {
        match &self.grads[id.index()] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(id).dims().to_vec()),
        }
    }

    /// Like [`Gradients::of`] but moves the stored tensor out.
    pub fn take(&mut self, tape: &Tape<F>, id: VarId) -> Tensor<F> {
        match self.grads[id.index()].take() {
            Some(g) => g,
            None => Tensor::zeros(tape.value(id).dims().to_vec()),
        }
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<F> {
        &self.nodes[id.index()].value
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>, aux: Vec<F>) -> Result<VarId> {
        if !value.is_finite() {
            return Err(CoreError::NonFinite(format!("{:?}", op_name(&op))));
        }
        let id = VarId(self.nodes.len() as u32);
        self.nodes.push(Node { op, value, aux });
        Ok(id)
    }

    /// Register a leaf tensor (input or parameter).
    pub fn input(&mut self, value: Tensor<F>) -> Result<VarId> {
        self.push(Op::Input, value, Vec::new())
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        self.push(Op::Matmul { a, b }, value, Vec::new())
    }

    /// a (m×k) · b (n×k)ᵀ → (m×n).
    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (n, k2) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(CoreError::Shape(format!(
                "matmul_nt inner dims: {:?} vs {:?}",
                ta.dims(),
                tb.dims()
            )));
        }
        let mut out = vec![F::zero(); m * n];
        tensor::matmul_nt_into(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatmulNt { a, b }, value, Vec::new())
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: VarId) -> Result<VarId> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if cols == 0 {
            return Err(CoreError::Shape("softmax over empty rows".into()));
        }
        let mut out = vec![F::zero(); rows * cols];
        for r in 0..rows {
            let row = t.row(r);
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut sum = F::zero();
            for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                let e = (v - max).exp();
                *o = e;
                sum += e;
            }
            for o in &mut out[r * cols..(r + 1) * cols] {
                *o /= sum;
            }
        }
        let value = Tensor::new(t.dims().to_vec(), out)?;
        self.push(Op::SoftmaxRows { x }, value, Vec::new())
    }

    /// Normalize each row to mean 0 / variance 1, then apply gain and bias.
    pub fn layer_norm(&mut self, x: VarId, gain: VarId, bias: VarId, eps: F) -> Result<VarId> {
        let (t, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, cols) = (t.rows(), t.cols());
        if g.numel() != cols || b.numel() != cols {
            return Err(CoreError::Shape(format!(
                "layer_norm gain/bias {} vs width {}",
                g.numel(),
                cols
            )));
        }
        if eps <= F::zero() {
            return Err(CoreError::Input("layer_norm eps must be > 0".into()));
        }
        let inv_n = F::one() / F::from_f64(cols as f64);
        let mut out = vec![F::zero(); rows * cols];
        let mut aux = Vec::with_capacity(rows * 2);
        for r in 0..rows {
            let row = t.row(r);
            let mut mean = F::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_n;
            let mut var = F::zero();
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let rstd = F::one() / (var + eps).sqrt();
            aux.push(mean);
            aux.push(rstd);
            for (j, (o, &v)) in out[r * cols..(r + 1) * cols].iter_mut().zip(row).enumerate() {
                *o = (v - mean) * rstd * g.data()[j] + b.data()[j];
            }
        }
        let value = Tensor::new(t.dims().to_vec(), out)?;
        self.push(Op::LayerNorm { x, gain, bias }, value, aux)
    }

    pub fn relu(&mut self, x: VarId) -> Result<VarId> {
        let value = self.value(x).map(|v| if v > F::zero() { v } else { F::zero() });
        self.push(Op::Relu { x }, value, Vec::new())
    }

    pub fn gelu(&mut self, x: VarId) -> Result<VarId> {
        let value = self.value(x).map(|v| gelu_fwd(v));
        self.push(Op::Gelu { x }, value, Vec::new())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims() != tb.dims() {
            return Err(CoreError::Shape(format!("add {:?} vs {:?}", ta.dims(), tb.dims())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.dims().to_vec(), data)?;
        self.push(Op::Add { a, b }, value, Vec::new())
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims() != tb.dims() {
            return Err(CoreError::Shape(format!("mul {:?} vs {:?}", ta.dims(), tb.dims())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.dims().to_vec(), data)?;
        self.push(Op::Mul { a, b }, value, Vec::new())
    }

    pub fn scale_const(&mut self, x: VarId, c: F) -> Result<VarId> {
        let value = self.value(x).map(|v| v * c);
        self.push(Op::ScaleConst { x, c }, value, Vec::new())
    }

    /// Scale every element of `x` by the tape scalar `s`.
    pub fn scale_var(&mut self, x: VarId, s: VarId) -> Result<VarId> {
        let sv = self.value(s);
        if !sv.is_scalar() {
            return Err(CoreError::Shape(format!("scale_var: scaler has dims {:?}", sv.dims())));
        }
        let c = sv.item();
        let value = self.value(x).map(|v| v * c);
        self.push(Op::ScaleVar { x, s }, value, Vec::new())
    }

    pub fn add_bias(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let (t, b) = (self.value(x), self.value(bias));
        let (rows, cols) = (t.rows(), t.cols());
        if b.numel() != cols {
            return Err(CoreError::Shape(format!("add_bias {} vs width {}", b.numel(), cols)));
        }
        let mut data = t.data().to_vec();
        for r in 0..rows {
            for (o, &bv) in data[r * cols..(r + 1) * cols].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(t.dims().to_vec(), data)?;
        self.push(Op::AddBias { x, bias }, value, Vec::new())
    }

    pub fn gather_rows(&mut self, table: VarId, ids: &[u32]) -> Result<VarId> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id as usize >= rows {
                return Err(CoreError::Input(format!("row id {} out of range {}", id, rows)));
            }
            data.extend_from_slice(t.row(id as usize));
        }
        let value = Tensor::new(vec![ids.len(), cols], data)?;
        self.push(Op::GatherRows { table, ids: ids.to_vec() }, value, Vec::new())
    }

    /// Mean over rows: (m×n) → (1×n).
    pub fn mean_rows(&mut self, x: VarId) -> Result<VarId> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if rows == 0 {
            return Err(CoreError::Shape("mean_rows over zero rows".into()));
        }
        let inv = F::one() / F::from_f64(rows as f64);
        let mut data = vec![F::zero(); cols];
        for r in 0..rows {
            for (o, &v) in data.iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        for o in &mut data {
            *o *= inv;
        }
        let value = Tensor::new(vec![1, cols], data)?;
        self.push(Op::MeanRows { x }, value, Vec::new())
    }

    /// Stack equal-width parts by rows.
    pub fn concat_rows(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(CoreError::Input("concat_rows of nothing".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(CoreError::Shape("concat_rows width mismatch".into()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        self.push(Op::ConcatRows { parts: parts.to_vec() }, value, Vec::new())
    }

    /// Inverted dropout: kept elements are scaled by 1/(1-rate). The
    /// kept mask is drawn from `draw` (one call per element, in order).
    pub fn dropout(&mut self, x: VarId, rate: f64, mut draw: impl FnMut() -> f64) -> Result<VarId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(CoreError::Input(format!("dropout rate {rate} outside [0,1)")));
        }
        let t = self.value(x);
        let kept: Vec<bool> = (0..t.numel()).map(|_| draw() >= rate).collect();
        let scale = F::from_f64(1.0 / (1.0 - rate));
        let data = t
            .data()
            .iter()
            .zip(&kept)
            .map(|(&v, &k)| if k { v * scale } else { F::zero() })
            .collect();
        let value = Tensor::new(t.dims().to_vec(), data)?;
        self.push(Op::Dropout { x, kept, scale }, value, Vec::new())
    }

    /// Mean cross-entropy over rows, stabilized with log-sum-exp.
    pub fn cross_entropy(&mut self, logits: VarId, labels: &[u32]) -> Result<VarId> {
        let t = self.value(logits);
        let (rows, cols) = (t.rows(), t.cols());
        if labels.len() != rows {
            return Err(CoreError::Input(format!(
                "cross_entropy: {} labels for {} rows",
                labels.len(),
                rows
            )));
        }
        let mut probs = vec![F::zero(); rows * cols];
        let mut loss = F::zero();
        for r in 0..rows {
            let label = labels[r] as usize;
            if label >= cols {
                return Err(CoreError::Input(format!("label {} out of range {}", label, cols)));
            }
            let row = t.row(r);
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut sum = F::zero();
            for (o, &v) in probs[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                let e = (v - max).exp();
                *o = e;
                sum += e;
            }
            for o in &mut probs[r * cols..(r + 1) * cols] {
                *o /= sum;
            }
            // lse - x_label, computed from the stabilized pieces
            loss += sum.ln() + max - row[label];
        }
        loss /= F::from_f64(rows as f64);
        let value = Tensor::scalar(loss);
        self.push(Op::CrossEntropy { logits, labels: labels.to_vec() }, value, probs)
    }

    /// Mean squared error over all elements against a constant target.
    pub fn mse(&mut self, pred: VarId, target: Tensor<F>) -> Result<VarId> {
        let p = self.value(pred);
        if p.dims() != target.dims() {
            return Err(CoreError::Shape(format!(
                "mse {:?} vs {:?}",
                p.dims(),
                target.dims()
            )));
        }
        let inv = F::one() / F::from_f64(p.numel() as f64);
        let mut loss = F::zero();
        for (&a, &b) in p.data().iter().zip(target.data()) {
            let d = a - b;
            loss += d * d;
        }
        loss *= inv;
        let value = Tensor::scalar(loss);
        self.push(Op::Mse { pred, target }, value, Vec::new())
    }

    /// Mean of scalar nodes.
    pub fn mean_scalars(&mut self, parts: &[VarId]) -> Result<VarId> {
        let col = self.concat_rows(parts)?;
        let m = self.mean_rows(col)?;
        // (1×1) mean; fold to scalar via scale_const(1) keeps dims — accept (1×1).
        Ok(m)
    }

    /// Reverse pass from a scalar root. Returns a gradient for every
    /// node the root reaches; unreached nodes read back as zeros.
    pub fn backward(&self, root: VarId) -> Result<Gradients<F>> {
        if self.value(root).numel() != 1 {
            return Err(CoreError::Input(format!(
                "backward root must be scalar, got dims {:?}",
                self.value(root).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[root.index()] = Some(Tensor::new(
            self.value(root).dims().to_vec(),
            vec![F::one()],
        )?);

        for idx in (0..self.nodes.len()).rev() {
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.backward_node(idx, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], id: VarId, delta: &[F]) {
        let slot = &mut grads[id.index()];
        match slot {
            Some(t) => {
                for (o, &d) in t.data_mut().iter_mut().zip(delta) {
                    *o += d;
                }
            }
            None => {
                let dims = self.value(id).dims().to_vec();
                *slot = Some(Tensor::new(dims, delta.to_vec()).expect("gradient shape"));
            }
        }
    }

    fn backward_node(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input => {}
            Op::Matmul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                let mut da = vec![F::zero(); m * k];
                tensor::matmul_nt_into(g.data(), tb.data(), &mut da, m, n, k);
                self.accumulate(grads, *a, &da);
                let mut db = vec![F::zero(); k * n];
                tensor::matmul_tn_into(ta.data(), g.data(), &mut db, k, m, n);
                self.accumulate(grads, *b, &db);
            }
            Op::MatmulNt { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.rows();
                let mut da = vec![F::zero(); m * k];
                tensor::matmul_into(g.data(), tb.data(), &mut da, m, n, k);
                self.accumulate(grads, *a, &da);
                let mut db = vec![F::zero(); n * k];
                tensor::matmul_tn_into(g.data(), ta.data(), &mut db, n, m, k);
                self.accumulate(grads, *b, &db);
            }
            Op::SoftmaxRows { x } => {
                let y = &node.value;
                let (rows, cols) = (y.rows(), y.cols());
                let mut dx = vec![F::zero(); rows * cols];
                for r in 0..rows {
                    let yr = y.row(r);
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let mut dot = F::zero();
                    for (&yv, &gv) in yr.iter().zip(gr) {
                        dot += yv * gv;
                    }
                    for (j, o) in dx[r * cols..(r + 1) * cols].iter_mut().enumerate() {
                        *o = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::LayerNorm { x, gain, bias } => {
                let t = self.value(*x);
                let gv = self.value(*gain);
                let (rows, cols) = (t.rows(), t.cols());
                let inv_n = F::one() / F::from_f64(cols as f64);
                let mut dx = vec![F::zero(); rows * cols];
                let mut dgain = vec![F::zero(); cols];
                let mut dbias = vec![F::zero(); cols];
                for r in 0..rows {
                    let mean = node.aux[2 * r];
                    let rstd = node.aux[2 * r + 1];
                    let xr = t.row(r);
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    // dxhat = g * gain; need mean(dxhat) and mean(dxhat * xhat)
                    let mut m1 = F::zero();
                    let mut m2 = F::zero();
                    for j in 0..cols {
                        let xhat = (xr[j] - mean) * rstd;
                        let dxh = gr[j] * gv.data()[j];
                        m1 += dxh;
                        m2 += dxh * xhat;
                        dgain[j] += gr[j] * xhat;
                        dbias[j] += gr[j];
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    for j in 0..cols {
                        let xhat = (xr[j] - mean) * rstd;
                        let dxh = gr[j] * gv.data()[j];
                        dx[r * cols + j] = rstd * (dxh - m1 - xhat * m2);
                    }
                }
                self.accumulate(grads, *x, &dx);
                self.accumulate(grads, *gain, &dgain);
                self.accumulate(grads, *bias, &dbias);
            }
            Op::Relu { x } => {
                let t = self.value(*x);
                let dx: Vec<F> = t
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > F::zero() { gv } else { F::zero() })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Gelu { x } => {
                let t = self.value(*x);
                let dx: Vec<F> = t
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| gv * gelu_bwd(v))
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.data());
                self.accumulate(grads, *b, g.data());
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da: Vec<F> = g.data().iter().zip(tb.data()).map(|(&gv, &bv)| gv * bv).collect();
                self.accumulate(grads, *a, &da);
                let db: Vec<F> = g.data().iter().zip(ta.data()).map(|(&gv, &av)| gv * av).collect();
                self.accumulate(grads, *b, &db);
            }
            Op::ScaleConst { x, c } => {
                let dx: Vec<F> = g.data().iter().map(|&gv| gv * *c).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::ScaleVar { x, s } => {
                let t = self.value(*x);
                let c = self.value(*s).item();
                let dx: Vec<F> = g.data().iter().map(|&gv| gv * c).collect();
                self.accumulate(grads, *x, &dx);
                let mut ds = F::zero();
                for (&gv, &xv) in g.data().iter().zip(t.data()) {
                    ds += gv * xv;
                }
                self.accumulate(grads, *s, &[ds]);
            }
            Op::AddBias { x, bias } => {
                self.accumulate(grads, *x, g.data());
                let cols = self.value(*bias).numel();
                let rows = g.numel() / cols;
                let mut db = vec![F::zero(); cols];
                for r in 0..rows {
                    for (o, &gv) in db.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                        *o += gv;
                    }
                }
                self.accumulate(grads, *bias, &db);
            }
            Op::GatherRows { table, ids } => {
                let t = self.value(*table);
                let cols = t.cols();
                let mut dt = vec![F::zero(); t.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut dt[id as usize * cols..(id as usize + 1) * cols];
                    for (o, &gv) in dst.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                        *o += gv;
                    }
                }
                self.accumulate(grads, *table, &dt);
            }
            Op::MeanRows { x } => {
                let t = self.value(*x);
                let (rows, cols) = (t.rows(), t.cols());
                let inv = F::one() / F::from_f64(rows as f64);
                let mut dx = vec![F::zero(); rows * cols];
                for r in 0..rows {
                    for (o, &gv) in dx[r * cols..(r + 1) * cols].iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.accumulate(grads, p, &g.data()[offset..offset + n]);
                    offset += n;
                }
            }
            Op::Dropout { x, kept, scale } => {
                let dx: Vec<F> = g
                    .data()
                    .iter()
                    .zip(kept)
                    .map(|(&gv, &k)| if k { gv * *scale } else { F::zero() })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::CrossEntropy { logits, labels } => {
                let t = self.value(*logits);
                let (rows, cols) = (t.rows(), t.cols());
                let gs = g.item();
                let inv = F::one() / F::from_f64(rows as f64);
                let mut dl = vec![F::zero(); rows * cols];
                for r in 0..rows {
                    let probs = &node.aux[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        let indicator = if j == labels[r] as usize { F::one() } else { F::zero() };
                        dl[r * cols + j] = gs * inv * (probs[j] - indicator);
                    }
                }
                self.accumulate(grads, *logits, &dl);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let gs = g.item();
                let inv = F::from_f64(2.0 / p.numel() as f64);
                let dp: Vec<F> = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &b)| gs * inv * (a - b))
                    .collect();
                self.accumulate(grads, *pred, &dp);
            }
        }
    }
}

fn gelu_fwd<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_bwd<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + three * a * x * x)
}

fn op_name<F>(op: &Op<F>) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Matmul { .. } => "matmul",
        Op::MatmulNt { .. } => "matmul_nt",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Relu { .. } => "relu",
        Op::Gelu { .. } => "gelu",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::ScaleConst { .. } => "scale_const",
        Op::ScaleVar { .. } => "scale_var",
        Op::AddBias { .. } => "add_bias",
        Op::GatherRows { .. } => "gather_rows",
        Op::MeanRows { .. } => "mean_rows",
        Op::ConcatRows { .. } => "concat_rows",
        Op::Dropout { .. } => "dropout",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::Mse { .. } => "mse",
    }
}
