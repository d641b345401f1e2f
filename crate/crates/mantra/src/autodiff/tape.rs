//! Eager Wengert-list reverse-mode autodiff.
//!
//! Forward values are computed as ops are recorded; `backward` replays the
//! tape in reverse. Parameter leaves remember which [`ParamVec`] slot they
//! came from so gradients can be accumulated into a [`Grads`] buffer.

use std::collections::BTreeMap;

use crate::autodiff::tensor::{Grads, ParamVec};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Sum(Var),
    MatVec {
        w: Var,
        x: Var,
        rows: usize,
        cols: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        channels: usize,
        // Statistics used for normalization (batch stats in train mode,
        // running stats in eval mode). Eval mode stops gradients through them.
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
        train: bool,
    },
    PoolBilinear {
        grid: Var,
        h: usize,
        w: usize,
        // fractional grid coordinates (col, row); no gradient to coordinates
        gx: f64,
        gy: f64,
    },
    Rigid {
        points: Var,
        cos: f64,
        sin: f64,
    },
}

struct Node {
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Per-channel running statistics for batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // param slot -> (leaf var, whether grads should be collected)
    param_leaves: BTreeMap<(u64, usize), Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Constant leaf: participates in forward only, gradient is discarded.
    pub fn constant(&mut self, data: &[f64]) -> Var {
        self.push(data.to_vec(), Op::Leaf)
    }

    /// Leaf bound to a parameter slot; created once per tape and reused.
    pub fn param(&mut self, params: &ParamVec, idx: usize) -> Var {
        if let Some(&v) = self.param_leaves.get(&(params.id(), idx)) {
            return v;
        }
        let v = self.push(params.get(idx).data().to_vec(), Op::Leaf);
        self.param_leaves.insert((params.id(), idx), v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_len(a, b, "add")?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_len(a, b, "sub")?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_len(a, b, "mul")?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(value, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        self.push(value, Op::Relu(a))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| 1.0 - x).collect();
        self.push(value, Op::OneMinus(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    /// `w` is a row-major (rows, cols) matrix, `x` a cols-vector.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let cols = self.nodes[x.0].value.len();
        let wn = self.nodes[w.0].value.len();
        if cols == 0 || wn % cols != 0 {
            return Err(Error::Shape(format!(
                "matvec: matrix of {wn} elements incompatible with vector of length {cols}"
            )));
        }
        let rows = wn / cols;
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; rows];
        for r in 0..rows {
            let row = &wv[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for c in 0..cols {
                acc += row[c] * xv[c];
            }
            value[r] = acc;
        }
        Ok(self.push(value, Op::MatVec { w, x, rows, cols }))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        if self.len(pred) != target.len() {
            return Err(Error::Shape(format!(
                "mse: prediction length {} vs target length {}",
                self.len(pred),
                target.len()
            )));
        }
        let t = self.constant(target);
        let d = self.sub(pred, t)?;
        let sq = self.mul(d, d)?;
        let s = self.sum(sq);
        Ok(self.scale(s, 1.0 / target.len() as f64))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let ConvSpec {
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel: k,
            stride,
            pad,
        } = spec;
        if self.len(input) != in_channels * in_h * in_w {
            return Err(Error::Shape(format!(
                "conv2d: input length {} != {}x{}x{}",
                self.len(input),
                in_channels,
                in_h,
                in_w
            )));
        }
        if self.len(kernel) != out_channels * in_channels * k * k {
            return Err(Error::Shape("conv2d: kernel size mismatch".into()));
        }
        if self.len(bias) != out_channels {
            return Err(Error::Shape("conv2d: bias size mismatch".into()));
        }
        if in_h + 2 * pad < k || in_w + 2 * pad < k {
            return Err(Error::Shape(format!(
                "conv2d: non-positive output size for input {in_h}x{in_w}, kernel {k}, pad {pad}"
            )));
        }
        let (oh, ow) = (spec.out_h(), spec.out_w());
        let xv = &self.nodes[input.0].value;
        let kv = &self.nodes[kernel.0].value;
        let bv = &self.nodes[bias.0].value;
        let mut value = vec![0.0; out_channels * oh * ow];
        for oc in 0..out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv[oc];
                    for ic in 0..in_channels {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                acc += kv[((oc * in_channels + ic) * k + ky) * k + kx]
                                    * xv[(ic * in_h + iy as usize) * in_w + ix as usize];
                            }
                        }
                    }
                    value[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                spec,
            },
        ))
    }

    /// Batch normalization over the spatial extent of a (C, H, W) grid.
    ///
    /// Train mode normalizes by batch statistics and updates `running` with
    /// momentum 0.1; eval mode normalizes by the provided running statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        channels: usize,
        running: &mut RunningStats,
        train: bool,
    ) -> Result<Var> {
        const EPS: f64 = 1e-5;
        const MOMENTUM: f64 = 0.1;
        let n = self.len(x);
        if channels == 0 || n % channels != 0 {
            return Err(Error::Shape(format!(
                "batchnorm: input length {n} not divisible by {channels} channels"
            )));
        }
        if self.len(gamma) != channels || self.len(beta) != channels {
            return Err(Error::Shape(
                "batchnorm: scale/shift length must equal channel count".into(),
            ));
        }
        if running.mean.len() != channels {
            return Err(Error::Shape("batchnorm: running stats channel mismatch".into()));
        }
        let per = n / channels;
        let (mean, var) = if train {
            let xv = &self.nodes[x.0].value;
            let mut mean = vec![0.0; channels];
            let mut var = vec![0.0; channels];
            for c in 0..channels {
                let s: f64 = xv[c * per..(c + 1) * per].iter().sum();
                mean[c] = s / per as f64;
                let v: f64 = xv[c * per..(c + 1) * per]
                    .iter()
                    .map(|x| (x - mean[c]).powi(2))
                    .sum();
                var[c] = v / per as f64;
            }
            for c in 0..channels {
                running.mean[c] = (1.0 - MOMENTUM) * running.mean[c] + MOMENTUM * mean[c];
                running.var[c] = (1.0 - MOMENTUM) * running.var[c] + MOMENTUM * var[c];
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut value = vec![0.0; n];
        for c in 0..channels {
            let inv = 1.0 / (var[c] + EPS).sqrt();
            for i in 0..per {
                value[c * per + i] = (xv[c * per + i] - mean[c]) * inv * gv[c] + bv[c];
            }
        }
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                channels,
                mean,
                var,
                eps: EPS,
                train,
            },
        ))
    }

    /// Bilinear sample of a (C, H, W) grid at fractional coordinates
    /// (gx = column, gy = row). Out-of-grid coordinates yield a zero vector.
    /// Coordinates are treated as constants (no gradient path).
    pub fn pool_bilinear(
        &mut self,
        grid: Var,
        channels: usize,
        h: usize,
        w: usize,
        gx: f64,
        gy: f64,
    ) -> Result<Var> {
        if self.len(grid) != channels * h * w {
            return Err(Error::Shape(format!(
                "pool_bilinear: grid length {} != {}x{}x{}",
                self.len(grid),
                channels,
                h,
                w
            )));
        }
        let mut value = vec![0.0; channels];
        if in_grid(gx, gy, h, w) {
            let gv = &self.nodes[grid.0].value;
            for (c, out) in value.iter_mut().enumerate() {
                for (idx, wt) in bilinear_taps(gx, gy, h, w) {
                    *out += wt * gv[c * h * w + idx];
                }
            }
        }
        Ok(self.push(
            value,
            Op::PoolBilinear { grid, h, w, gx, gy },
        ))
    }

    /// Rigid transform applied to a flat [x0,y0,x1,y1,...] point vector:
    /// p' = R(angle) p + t.
    pub fn rigid(&mut self, points: Var, angle: f64, tx: f64, ty: f64) -> Result<Var> {
        let n = self.len(points);
        if n % 2 != 0 {
            return Err(Error::Shape("rigid: point vector length must be even".into()));
        }
        let (sin, cos) = angle.sin_cos();
        let pv = &self.nodes[points.0].value;
        let mut value = vec![0.0; n];
        for i in 0..n / 2 {
            let (x, y) = (pv[2 * i], pv[2 * i + 1]);
            value[2 * i] = cos * x - sin * y + tx;
            value[2 * i + 1] = sin * x + cos * y + ty;
        }
        Ok(self.push(value, Op::Rigid { points, cos, sin }))
    }

    /// Reverse sweep from a scalar loss. Repeated calls without a fresh tape
    /// accumulate gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.len(loss) != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got length {}",
                self.len(loss)
            )));
        }
        self.nodes[loss.0].grad[0] += 1.0;
        for i in (0..=loss.0).rev() {
            // Detach this node's grad to satisfy the borrow checker; ops never
            // reference their own output.
            let grad = std::mem::take(&mut self.nodes[i].grad);
            let op = self.nodes[i].op.clone();
            let leaf = matches!(op, Op::Leaf);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    add_assign(&mut self.nodes[a.0].grad, &grad, 1.0);
                    add_assign(&mut self.nodes[b.0].grad, &grad, 1.0);
                }
                Op::Sub(a, b) => {
                    add_assign(&mut self.nodes[a.0].grad, &grad, 1.0);
                    add_assign(&mut self.nodes[b.0].grad, &grad, -1.0);
                }
                Op::Mul(a, b) => {
                    let bv = self.nodes[b.0].value.clone();
                    let av = self.nodes[a.0].value.clone();
                    for (g, (d, v)) in self.nodes[a.0].grad.iter_mut().zip(grad.iter().zip(&bv)) {
                        *g += d * v;
                    }
                    for (g, (d, v)) in self.nodes[b.0].grad.iter_mut().zip(grad.iter().zip(&av)) {
                        *g += d * v;
                    }
                }
                Op::Scale(a, c) => add_assign(&mut self.nodes[a.0].grad, &grad, c),
                Op::Sigmoid(a) => {
                    let yv = self.nodes[i].value.clone();
                    for (g, (d, y)) in self.nodes[a.0].grad.iter_mut().zip(grad.iter().zip(&yv)) {
                        *g += d * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    let yv = self.nodes[i].value.clone();
                    for (g, (d, y)) in self.nodes[a.0].grad.iter_mut().zip(grad.iter().zip(&yv)) {
                        *g += d * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    let xv = self.nodes[a.0].value.clone();
                    for (g, (d, x)) in self.nodes[a.0].grad.iter_mut().zip(grad.iter().zip(&xv)) {
                        *g += if *x > 0.0 { *d } else { 0.0 };
                    }
                }
                Op::OneMinus(a) => add_assign(&mut self.nodes[a.0].grad, &grad, -1.0),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        add_assign(&mut self.nodes[p.0].grad, &grad[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Sum(a) => add_assign_scalar(&mut self.nodes[a.0].grad, grad[0]),
                Op::MatVec { w, x, rows, cols } => {
                    let xv = self.nodes[x.0].value.clone();
                    let wv = self.nodes[w.0].value.clone();
                    for r in 0..rows {
                        let d = grad[r];
                        if d == 0.0 {
                            continue;
                        }
                        let wg = &mut self.nodes[w.0].grad[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            wg[c] += d * xv[c];
                        }
                    }
                    let xg = &mut self.nodes[x.0].grad;
                    for r in 0..rows {
                        let d = grad[r];
                        if d == 0.0 {
                            continue;
                        }
                        let row = &wv[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            xg[c] += d * row[c];
                        }
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    spec,
                } => self.conv2d_backward(&grad, input, kernel, bias, spec),
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    channels,
                    mean,
                    var,
                    eps,
                    train,
                } => self.batchnorm_backward(&grad, x, gamma, beta, channels, &mean, &var, eps, train),
                Op::PoolBilinear { grid, h, w, gx, gy } => {
                    if in_grid(gx, gy, h, w) {
                        let gg = &mut self.nodes[grid.0].grad;
                        for (c, d) in grad.iter().enumerate() {
                            for (idx, wt) in bilinear_taps(gx, gy, h, w) {
                                gg[c * h * w + idx] += wt * d;
                            }
                        }
                    }
                }
                Op::Rigid { points, cos, sin } => {
                    let pg = &mut self.nodes[points.0].grad;
                    for i in 0..grad.len() / 2 {
                        let (dx, dy) = (grad[2 * i], grad[2 * i + 1]);
                        // transpose (= inverse) rotation
                        pg[2 * i] += cos * dx + sin * dy;
                        pg[2 * i + 1] += -sin * dx + cos * dy;
                    }
                }
            }
            // Leaf gradients accumulate across sweeps; interior gradients are
            // consumed so a repeated backward re-propagates only the new seed.
            if leaf {
                self.nodes[i].grad = grad;
            } else {
                self.nodes[i].grad = vec![0.0; grad.len()];
            }
        }
        Ok(())
    }

    /// Accumulate parameter-leaf gradients into `grads`.
    /// Accumulates gradients for the leaves belonging to `params` only.
    pub fn collect_param_grads(&self, params: &ParamVec, grads: &mut Grads) {
        for (&(vec_id, idx), &var) in &self.param_leaves {
            if vec_id != params.id() {
                continue;
            }
            let g = grads.get_mut(idx);
            for (acc, d) in g.iter_mut().zip(&self.nodes[var.0].grad) {
                *acc += d;
            }
        }
    }

    fn conv2d_backward(&mut self, grad: &[f64], input: Var, kernel: Var, bias: Var, spec: ConvSpec) {
        let ConvSpec {
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel: k,
            stride,
            pad,
        } = spec;
        let (oh, ow) = (spec.out_h(), spec.out_w());
        let xv = self.nodes[input.0].value.clone();
        let kv = self.nodes[kernel.0].value.clone();
        for oc in 0..out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let d = grad[(oc * oh + oy) * ow + ox];
                    if d == 0.0 {
                        continue;
                    }
                    self.nodes[bias.0].grad[oc] += d;
                    for ic in 0..in_channels {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                let xi = (ic * in_h + iy as usize) * in_w + ix as usize;
                                let ki = ((oc * in_channels + ic) * k + ky) * k + kx;
                                self.nodes[kernel.0].grad[ki] += d * xv[xi];
                                self.nodes[input.0].grad[xi] += d * kv[ki];
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm_backward(
        &mut self,
        grad: &[f64],
        x: Var,
        gamma: Var,
        beta: Var,
        channels: usize,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        train: bool,
    ) {
        let per = grad.len() / channels;
        let xv = self.nodes[x.0].value.clone();
        let gv = self.nodes[gamma.0].value.clone();
        for c in 0..channels {
            let inv = 1.0 / (var[c] + eps).sqrt();
            let xs = &xv[c * per..(c + 1) * per];
            let ds = &grad[c * per..(c + 1) * per];
            let mut dbeta = 0.0;
            let mut dgamma = 0.0;
            for i in 0..per {
                let xhat = (xs[i] - mean[c]) * inv;
                dbeta += ds[i];
                dgamma += ds[i] * xhat;
            }
            self.nodes[beta.0].grad[c] += dbeta;
            self.nodes[gamma.0].grad[c] += dgamma;
            let xg = &mut self.nodes[x.0].grad[c * per..(c + 1) * per];
            if train {
                let m = per as f64;
                for i in 0..per {
                    let xhat = (xs[i] - mean[c]) * inv;
                    xg[i] += gv[c] * inv * (ds[i] - dbeta / m - xhat * dgamma / m);
                }
            } else {
                for i in 0..per {
                    xg[i] += gv[c] * inv * ds[i];
                }
            }
        }
    }

    fn check_same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.len(a) != self.len(b) {
            return Err(Error::Shape(format!(
                "{what}: operand lengths {} vs {}",
                self.len(a),
                self.len(b)
            )));
        }
        Ok(())
    }
}

fn add_assign(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn add_assign_scalar(dst: &mut [f64], v: f64) {
    for d in dst.iter_mut() {
        *d += v;
    }
}

fn in_grid(gx: f64, gy: f64, h: usize, w: usize) -> bool {
    gx >= 0.0 && gy >= 0.0 && gx <= (w - 1) as f64 && gy <= (h - 1) as f64
}

/// Up to four (flat index, weight) taps of a bilinear sample.
fn bilinear_taps(gx: f64, gy: f64, h: usize, w: usize) -> impl Iterator<Item = (usize, f64)> {
    let x0 = gx.floor().min((w - 1) as f64) as usize;
    let y0 = gy.floor().min((h - 1) as f64) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = gx - x0 as f64;
    let fy = gy - y0 as f64;
    [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ]
    .into_iter()
    .filter(|(_, wt)| *wt != 0.0)
}
