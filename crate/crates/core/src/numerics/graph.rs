//! Define-by-run Wengert tape.
//!
//! Recording an op validates shapes, computes the value eagerly and stores
//! the operation plus any extra activations needed for the backward pass.
//! [`Graph::backward`] walks nodes in exact reverse recording order and
//! accumulates gradients with fixed summation order, so repeated runs are
//! bit-identical.

use super::kernels as k;
use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use super::{NumericsError, Result};

/// Source of an op input: an earlier node or a named parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Src {
    Node(usize),
    Param(ParamId),
}

impl From<ParamId> for Src {
    fn from(id: ParamId) -> Self {
        Src::Param(id)
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Matmul { a: Src, b: Src },
    Conv1d { x: Src, w: Src, bias: Src, stride: usize, padding: usize },
    Conv2d { x: Src, w: Src, bias: Src, stride: usize, padding: usize },
    GroupNorm { x: Src, gamma: Src, beta: Src, groups: usize },
    Film { x: Src, scale: Src, shift: Src },
    Mish { x: Src },
    LeakyRelu { x: Src, slope: T },
    Add { a: Src, b: Src },
    Scale { x: Src, factor: T },
    Concat { parts: Vec<Src> },
    SliceRows { x: Src, start: usize, rows: usize, row_len: usize },
    Reshape { x: Src },
    Upsample2 { x: Src },
    Mse { pred: Src, target: Src },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    // extra activations for backward (group norm mean / rstd)
    aux: Vec<Tensor<T>>,
}

/// Topologically ordered record of operations, inputs and cached activations.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

const GROUP_NORM_EPS: f64 = 1e-5;

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, src: Src) -> &Tensor<T> {
        match src {
            Src::Node(i) => &self.nodes[i].value,
            Src::Param(id) => self.params.get(id),
        }
    }

    fn shape(&self, src: Src) -> &[usize] {
        self.value(src).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, aux: Vec<Tensor<T>>) -> Src {
        self.nodes.push(Node { value, op, aux });
        Src::Node(self.nodes.len() - 1)
    }

    /// Insert a leaf tensor (no gradient flows into it).
    pub fn input(&mut self, value: Tensor<T>) -> Src {
        self.push(value, Op::Input, vec![])
    }

    /// y (m,n) = a (m,k) · b (k,n)
    pub fn matmul(&mut self, a: Src, b: Src) -> Result<Src> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::DimMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, kk, n) = (sa[0], sa[1], sb[1]);
        let mut y = Tensor::zeros(vec![m, n]);
        k::matmul(self.value(a).data(), self.value(b).data(), y.data_mut(), m, kk, n);
        Ok(self.push(y, Op::Matmul { a, b }, vec![]))
    }

    /// x (ci,t,b) ⋆ w (co,ci,k) + bias (co) → (co,t',b)
    pub fn conv1d(&mut self, x: Src, w: Src, bias: Src, stride: usize, padding: usize) -> Result<Src> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[0] != sw[1] {
            return Err(NumericsError::DimMismatch {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        if self.shape(bias) != [sw[0]] {
            return Err(NumericsError::DimMismatch {
                op: "conv1d bias",
                lhs: self.shape(bias).to_vec(),
                rhs: vec![sw[0]],
            });
        }
        let t_out = k::conv_out_len(sx[1], sw[2], stride, padding).ok_or_else(|| {
            NumericsError::BadConvGeometry {
                input: sx.clone(),
                kernel: sw.clone(),
                stride,
                padding,
            }
        })?;
        let (ci, co, t_in, kk, b) = (sx[0], sw[0], sx[1], sw[2], sx[2]);
        let mut y = Tensor::zeros(vec![co, t_out, b]);
        k::conv1d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
            y.data_mut(),
            ci,
            co,
            t_in,
            t_out,
            kk,
            stride,
            padding,
            b,
        );
        Ok(self.push(y, Op::Conv1d { x, w, bias, stride, padding }, vec![]))
    }

    /// x (ci,h,w,b) ⋆ w (co,ci,kh,kw) + bias (co) → (co,h',w',b)
    pub fn conv2d(&mut self, x: Src, w: Src, bias: Src, stride: usize, padding: usize) -> Result<Src> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[0] != sw[1] {
            return Err(NumericsError::DimMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        if self.shape(bias) != [sw[0]] {
            return Err(NumericsError::DimMismatch {
                op: "conv2d bias",
                lhs: self.shape(bias).to_vec(),
                rhs: vec![sw[0]],
            });
        }
        let h_out = k::conv_out_len(sx[1], sw[2], stride, padding);
        let w_out = k::conv_out_len(sx[2], sw[3], stride, padding);
        let (h_out, w_out) = match (h_out, w_out) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(NumericsError::BadConvGeometry {
                    input: sx.clone(),
                    kernel: sw.clone(),
                    stride,
                    padding,
                })
            }
        };
        let (ci, co, b) = (sx[0], sw[0], sx[3]);
        let mut y = Tensor::zeros(vec![co, h_out, w_out, b]);
        k::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
            y.data_mut(),
            ci,
            co,
            (sx[1], sx[2]),
            (h_out, w_out),
            (sw[2], sw[3]),
            stride,
            padding,
            b,
        );
        Ok(self.push(y, Op::Conv2d { x, w, bias, stride, padding }, vec![]))
    }

    /// x (c,s,b) group-normalized over each group's c×s block, then per-channel
    /// gamma/beta.
    pub fn group_norm(&mut self, x: Src, gamma: Src, beta: Src, groups: usize) -> Result<Src> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || groups == 0 || sx[0] % groups != 0 {
            return Err(NumericsError::BadShape {
                op: "group_norm",
                shape: sx,
                reason: "expected (c,s,b) with c divisible by groups",
            });
        }
        if self.shape(gamma) != [sx[0]] || self.shape(beta) != [sx[0]] {
            return Err(NumericsError::DimMismatch {
                op: "group_norm affine",
                lhs: self.shape(gamma).to_vec(),
                rhs: vec![sx[0]],
            });
        }
        let (c, s, b) = (sx[0], sx[1], sx[2]);
        let mut y = Tensor::zeros(vec![c, s, b]);
        let mut mean = Tensor::zeros(vec![groups, b]);
        let mut rstd = Tensor::zeros(vec![groups, b]);
        k::group_norm(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            y.data_mut(),
            mean.data_mut(),
            rstd.data_mut(),
            c,
            s,
            groups,
            b,
            T::from_f64(GROUP_NORM_EPS),
        );
        Ok(self.push(y, Op::GroupNorm { x, gamma, beta, groups }, vec![mean, rstd]))
    }

    /// Per-channel affine modulation: scale (c,b) · x (c,t,b) + shift (c,b).
    pub fn film(&mut self, x: Src, scale: Src, shift: Src) -> Result<Src> {
        let sx = self.shape(x).to_vec();
        let ss = self.shape(scale).to_vec();
        if sx.len() != 3 || ss.len() != 2 || ss[0] != sx[0] || ss[1] != sx[2] {
            return Err(NumericsError::DimMismatch {
                op: "film",
                lhs: sx,
                rhs: ss,
            });
        }
        if self.shape(shift) != &ss[..] {
            return Err(NumericsError::DimMismatch {
                op: "film shift",
                lhs: self.shape(shift).to_vec(),
                rhs: ss,
            });
        }
        let (c, t, b) = (sx[0], sx[1], sx[2]);
        let mut y = Tensor::zeros(vec![c, t, b]);
        k::film(
            self.value(x).data(),
            self.value(scale).data(),
            self.value(shift).data(),
            y.data_mut(),
            c,
            t,
            b,
        );
        Ok(self.push(y, Op::Film { x, scale, shift }, vec![]))
    }

    pub fn mish(&mut self, x: Src) -> Src {
        let xv = self.value(x);
        let mut y = Tensor::zeros(xv.shape().to_vec());
        k::mish(xv.data(), y.data_mut());
        self.push(y, Op::Mish { x }, vec![])
    }

    pub fn leaky_relu(&mut self, x: Src, slope: T) -> Src {
        let xv = self.value(x);
        let mut y = Tensor::zeros(xv.shape().to_vec());
        k::leaky_relu(xv.data(), y.data_mut(), slope);
        self.push(y, Op::LeakyRelu { x, slope }, vec![])
    }

    pub fn add(&mut self, a: Src, b: Src) -> Result<Src> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::DimMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut y = self.value(a).clone();
        k::axpy(y.data_mut(), self.value(b).data(), T::one());
        Ok(self.push(y, Op::Add { a, b }, vec![]))
    }

    pub fn scale(&mut self, x: Src, factor: T) -> Src {
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            *v = *v * factor;
        }
        self.push(y, Op::Scale { x, factor }, vec![])
    }

    /// Concatenate along dimension 0; all trailing dimensions must match.
    pub fn concat(&mut self, parts: &[Src]) -> Result<Src> {
        assert!(!parts.is_empty(), "concat of zero parts");
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut dim0 = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(NumericsError::DimMismatch {
                    op: "concat",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            dim0 += s[0];
        }
        let mut shape = vec![dim0];
        shape.extend_from_slice(&tail);
        let mut data = Vec::with_capacity(shape.iter().product());
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let y = Tensor::new(shape, data)?;
        Ok(self.push(y, Op::Concat { parts: parts.to_vec() }, vec![]))
    }

    /// View rows [start, start+rows) of a tensor interpreted as (R, row_len).
    pub fn slice_rows(&mut self, x: Src, start: usize, rows: usize) -> Result<Src> {
        let sx = self.shape(x).to_vec();
        let row_len: usize = sx[1..].iter().product();
        if start + rows > sx[0] {
            return Err(NumericsError::BadShape {
                op: "slice_rows",
                shape: sx,
                reason: "row range out of bounds",
            });
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&sx[1..]);
        let data = self.value(x).data()[start * row_len..(start + rows) * row_len].to_vec();
        let y = Tensor::new(shape, data)?;
        Ok(self.push(y, Op::SliceRows { x, start, rows, row_len }, vec![]))
    }

    pub fn reshape(&mut self, x: Src, shape: Vec<usize>) -> Result<Src> {
        let y = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(y, Op::Reshape { x }, vec![]))
    }

    /// Nearest-neighbor ×2 upsampling along the middle axis of (c,t,b).
    pub fn upsample2(&mut self, x: Src) -> Result<Src> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(NumericsError::BadShape {
                op: "upsample2",
                shape: sx,
                reason: "expected (c,t,b)",
            });
        }
        let (c, t, b) = (sx[0], sx[1], sx[2]);
        let mut y = Tensor::zeros(vec![c, 2 * t, b]);
        k::upsample2(self.value(x).data(), y.data_mut(), c, t, b);
        Ok(self.push(y, Op::Upsample2 { x }, vec![]))
    }

    /// Scalar mean-squared-error between equal-shaped tensors.
    pub fn mse(&mut self, pred: Src, target: Src) -> Result<Src> {
        if self.shape(pred) != self.shape(target) {
            return Err(NumericsError::DimMismatch {
                op: "mse",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let v = k::mse(self.value(pred).data(), self.value(target).data());
        Ok(self.push(Tensor::scalar(v), Op::Mse { pred, target }, vec![]))
    }

    /// Backpropagate from a scalar node, accumulating parameter gradients.
    pub fn backward(&self, loss: Src, grads: &mut Grads<T>) -> Result<()> {
        let loss_idx = match loss {
            Src::Node(i) if self.nodes[i].value.numel() == 1 => i,
            _ => {
                return Err(NumericsError::BadShape {
                    op: "backward",
                    shape: self.value(loss).shape().to_vec(),
                    reason: "loss must be a scalar graph node",
                })
            }
        };
        let mut node_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss_idx] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss_idx).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Matmul { a, b } => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (m, kk, n) = (sa[0], sa[1], sb[1]);
                    let mut da = Tensor::zeros(sa.to_vec());
                    let mut db = Tensor::zeros(sb.to_vec());
                    k::matmul_backward(
                        self.value(*a).data(),
                        self.value(*b).data(),
                        g.data(),
                        da.data_mut(),
                        db.data_mut(),
                        m,
                        kk,
                        n,
                    );
                    self.accumulate(*a, da, &mut node_grads, grads);
                    self.accumulate(*b, db, &mut node_grads, grads);
                }
                Op::Conv1d { x, w, bias, stride, padding } => {
                    let (sx, sw) = (self.shape(*x), self.shape(*w));
                    let t_out = node.value.shape()[1];
                    let mut dx = Tensor::zeros(sx.to_vec());
                    let mut dw = Tensor::zeros(sw.to_vec());
                    let mut db = Tensor::zeros(vec![sw[0]]);
                    k::conv1d_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        g.data(),
                        dx.data_mut(),
                        dw.data_mut(),
                        db.data_mut(),
                        sx[0],
                        sw[0],
                        sx[1],
                        t_out,
                        sw[2],
                        *stride,
                        *padding,
                        sx[2],
                    );
                    self.accumulate(*x, dx, &mut node_grads, grads);
                    self.accumulate(*w, dw, &mut node_grads, grads);
                    self.accumulate(*bias, db, &mut node_grads, grads);
                }
                Op::Conv2d { x, w, bias, stride, padding } => {
                    let (sx, sw) = (self.shape(*x), self.shape(*w));
                    let out_shape = node.value.shape();
                    let mut dx = Tensor::zeros(sx.to_vec());
                    let mut dw = Tensor::zeros(sw.to_vec());
                    let mut db = Tensor::zeros(vec![sw[0]]);
                    k::conv2d_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        g.data(),
                        dx.data_mut(),
                        dw.data_mut(),
                        db.data_mut(),
                        sx[0],
                        sw[0],
                        (sx[1], sx[2]),
                        (out_shape[1], out_shape[2]),
                        (sw[2], sw[3]),
                        *stride,
                        *padding,
                        sx[3],
                    );
                    self.accumulate(*x, dx, &mut node_grads, grads);
                    self.accumulate(*w, dw, &mut node_grads, grads);
                    self.accumulate(*bias, db, &mut node_grads, grads);
                }
                Op::GroupNorm { x, gamma, beta, groups } => {
                    let sx = self.shape(*x);
                    let (c, s, b) = (sx[0], sx[1], sx[2]);
                    let mut dx = Tensor::zeros(sx.to_vec());
                    let mut dgamma = Tensor::zeros(vec![c]);
                    let mut dbeta = Tensor::zeros(vec![c]);
                    k::group_norm_backward(
                        self.value(*x).data(),
                        self.value(*gamma).data(),
                        node.aux[0].data(),
                        node.aux[1].data(),
                        g.data(),
                        dx.data_mut(),
                        dgamma.data_mut(),
                        dbeta.data_mut(),
                        c,
                        s,
                        *groups,
                        b,
                    );
                    self.accumulate(*x, dx, &mut node_grads, grads);
                    self.accumulate(*gamma, dgamma, &mut node_grads, grads);
                    self.accumulate(*beta, dbeta, &mut node_grads, grads);
                }
                Op::Film { x, scale, shift } => {
                    let sx = self.shape(*x);
                    let (c, t, b) = (sx[0], sx[1], sx[2]);
                    let mut dx = Tensor::zeros(sx.to_vec());
                    let mut dscale = Tensor::zeros(vec![c, b]);
                    let mut dshift = Tensor::zeros(vec![c, b]);
                    k::film_backward(
                        self.value(*x).data(),
                        self.value(*scale).data(),
                        g.data(),
                        dx.data_mut(),
                        dscale.data_mut(),
                        dshift.data_mut(),
                        c,
                        t,
                        b,
                    );
                    self.accumulate(*x, dx, &mut node_grads, grads);
                    self.accumulate(*scale, dscale, &mut node_grads, grads);
                    self.accumulate(*shift, dshift, &mut node_grads, grads);
                }
                Op::Mish { x } => {
                    let mut dx = Tensor::zeros(self.shape(*x).to_vec());
                    k::mish_backward(self.value(*x).data(), g.data(), dx.data_mut());
                    self.accumulate(*x, dx, &mut node_grads, grads);
                }
                Op::LeakyRelu { x, slope } => {
                    let mut dx = Tensor::zeros(self.shape(*x).to_vec());
                    k::leaky_relu_backward(self.value(*x).data(), g.data(), dx.data_mut(), *slope);
                    self.accumulate(*x, dx, &mut node_grads, grads);
                }
                Op::Add { a, b } => {
                    self.accumulate(*a, g.clone(), &mut node_grads, grads);
                    self.accumulate(*b, g, &mut node_grads, grads);
                }
                Op::Scale { x, factor } => {
                    let mut dx = g;
                    for v in dx.data_mut() {
                        *v = *v * *factor;
                    }
                    let dx = dx.reshaped(self.shape(*x).to_vec())?;
                    self.accumulate(*x, dx, &mut node_grads, grads);
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let sp = self.shape(p).to_vec();
                        let n: usize = sp.iter().product();
                        let dp = Tensor::new(sp, g.data()[offset..offset + n].to_vec())?;
                        offset += n;
                        self.accumulate(p, dp, &mut node_grads, grads);
                    }
                }
                Op::SliceRows { x, start, rows, row_len } => {
                    let mut dx = Tensor::zeros(self.shape(*x).to_vec());
                    let dst = &mut dx.data_mut()[start * row_len..(start + rows) * row_len];
                    k::axpy(dst, g.data(), T::one());
                    self.accumulate(*x, dx, &mut node_grads, grads);
                }
                Op::Reshape { x } => {
                    let dx = g.reshaped(self.shape(*x).to_vec())?;
                    self.accumulate(*x, dx, &mut node_grads, grads);
                }
                Op::Upsample2 { x } => {
                    let sx = self.shape(*x);
                    let mut dx = Tensor::zeros(sx.to_vec());
                    k::upsample2_backward(g.data(), dx.data_mut(), sx[0], sx[1], sx[2]);
                    self.accumulate(*x, dx, &mut node_grads, grads);
                }
                Op::Mse { pred, target } => {
                    let mut dp = Tensor::zeros(self.shape(*pred).to_vec());
                    let mut dt = Tensor::zeros(self.shape(*target).to_vec());
                    k::mse_backward(
                        self.value(*pred).data(),
                        self.value(*target).data(),
                        g.item(),
                        dp.data_mut(),
                        dt.data_mut(),
                    );
                    self.accumulate(*pred, dp, &mut node_grads, grads);
                    self.accumulate(*target, dt, &mut node_grads, grads);
                }
            }
        }
        Ok(())
    }

    fn accumulate(
        &self,
        src: Src,
        contribution: Tensor<T>,
        node_grads: &mut [Option<Tensor<T>>],
        grads: &mut Grads<T>,
    ) {
        match src {
            Src::Node(j) => match &mut node_grads[j] {
                Some(existing) => k::axpy(existing.data_mut(), contribution.data(), T::one()),
                slot @ None => *slot = Some(contribution),
            },
            Src::Param(id) => {
                k::axpy(grads.get_mut(id).data_mut(), contribution.data(), T::one());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store_with(entries: &[(&str, Vec<usize>, Vec<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = entries
            .iter()
            .map(|(n, s, d)| store.register(n, Tensor::new(s.clone(), d.clone()).unwrap()).unwrap())
            .collect();
        (store, ids)
    }

    /// Central finite differences against the analytic gradient of a scalar
    /// loss built by `build` from the registered parameters.
    fn fd_check(store: &ParamStore<f64>, build: impl Fn(&mut Graph<'_, f64>) -> Src, tol: f64) {
        let mut grads = Grads::zeros_like(store);
        {
            let g = &mut Graph::new(store);
            let loss = build(g);
            g.backward(loss, &mut grads).unwrap();
        }
        let h = 1e-6;
        for i in 0..store.len() {
            for j in 0..store.values()[i].numel() {
                let eval = |delta: f64| {
                    let mut s = store.clone();
                    s.values_mut()[i].data_mut()[j] += delta;
                    let g = &mut Graph::new(&s);
                    let loss = build(g);
                    g.value(loss).item()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grads.values[i].data()[j];
                // the 1e-3 floor keeps fd roundoff noise from dominating
                // the comparison for near-zero gradients
                let denom = an.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (an - fd).abs() / denom < tol,
                    "param {i} elem {j}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (store, ids) = store_with(&[
            ("eye", vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]),
            ("b", vec![3, 4], randn(&mut rng, 12)),
            ("z", vec![4, 2], vec![0.0; 8]),
        ]);
        let g = &mut Graph::new(&store);
        let y = g.matmul(ids[0].into(), ids[1].into()).unwrap();
        assert_eq!(g.value(y).data(), store.get(ids[1]).data());
        let z = g.matmul(ids[1].into(), ids[2].into()).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let (store, ids) = store_with(&[
            ("a", vec![2, 3], vec![0.0; 6]),
            ("b", vec![4, 2], vec![0.0; 8]),
        ]);
        let g = &mut Graph::new(&store);
        let err = g.matmul(ids[0].into(), ids[1].into()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (store, ids) = store_with(&[
            ("a", vec![4, 5], randn(&mut rng, 20)),
            ("b", vec![5, 2], randn(&mut rng, 10)),
            ("t", vec![4, 2], randn(&mut rng, 8)),
        ]);
        fd_check(
            &store,
            |g| {
                let y = g.matmul(ids[0].into(), ids[1].into()).unwrap();
                g.mse(y, ids[2].into()).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn conv1d_unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, 2 * 7 * 3);
        let (store, ids) = store_with(&[
            ("x", vec![2, 7, 3], x.clone()),
            ("w", vec![2, 2, 1], vec![1., 0., 0., 1.]),
            ("b", vec![2], vec![0.0; 2]),
        ]);
        let g = &mut Graph::new(&store);
        let y = g.conv1d(ids[0].into(), ids[1].into(), ids[2].into(), 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &x[..]);
    }

    #[test]
    fn conv_zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (store, ids) = store_with(&[
            ("x", vec![3, 6, 2], vec![0.0; 36]),
            ("w", vec![4, 3, 3], randn(&mut rng, 36)),
            ("b", vec![4], vec![0.0; 4]),
        ]);
        let g = &mut Graph::new(&store);
        let y = g.conv1d(ids[0].into(), ids[1].into(), ids[2].into(), 1, 1).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_nonpositive_output_size() {
        let (store, ids) = store_with(&[
            ("x", vec![1, 2, 1], vec![0.0; 2]),
            ("w", vec![1, 1, 5], vec![0.0; 5]),
            ("b", vec![1], vec![0.0]),
        ]);
        let g = &mut Graph::new(&store);
        let err = g.conv1d(ids[0].into(), ids[1].into(), ids[2].into(), 1, 0).unwrap_err();
        assert!(matches!(err, NumericsError::BadConvGeometry { .. }));
    }

    #[test]
    fn conv1d_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (store, ids) = store_with(&[
            ("x", vec![2, 6, 2], randn(&mut rng, 24)),
            ("w", vec![3, 2, 3], randn(&mut rng, 18)),
            ("b", vec![3], randn(&mut rng, 3)),
            ("t", vec![3, 3, 2], randn(&mut rng, 18)),
        ]);
        fd_check(
            &store,
            |g| {
                let y = g.conv1d(ids[0].into(), ids[1].into(), ids[2].into(), 2, 1).unwrap();
                g.mse(y, ids[3].into()).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn film_identity_and_pure_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = randn(&mut rng, 3 * 5);
        let (store, ids) = store_with(&[
            ("x", vec![3, 5, 1], x.clone()),
            ("one", vec![3, 1], vec![1.0; 3]),
            ("zero", vec![3, 1], vec![0.0; 3]),
            ("shift", vec![3, 1], vec![0.5, -1.0, 2.0]),
        ]);
        let g = &mut Graph::new(&store);
        let y = g.film(ids[0].into(), ids[1].into(), ids[2].into()).unwrap();
        assert_eq!(g.value(y).data(), &x[..]);
        let y2 = g.film(ids[0].into(), ids[2].into(), ids[3].into()).unwrap();
        for c in 0..3 {
            for t in 0..5 {
                assert_eq!(g.value(y2).data()[c * 5 + t], store.get(ids[3]).data()[c]);
            }
        }
        let err = g.film(ids[0].into(), ids[1].into(), ids[1].into());
        assert!(err.is_ok());
        let (badstore, badids) = store_with(&[
            ("x", vec![3, 5, 1], vec![0.0; 15]),
            ("s", vec![2, 1], vec![0.0; 2]),
        ]);
        let g2 = &mut Graph::new(&badstore);
        assert!(g2.film(badids[0].into(), badids[1].into(), badids[1].into()).is_err());
    }

    #[test]
    fn film_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (store, ids) = store_with(&[
            ("x", vec![4, 3, 2], randn(&mut rng, 24)),
            ("scale", vec![4, 2], randn(&mut rng, 8)),
            ("shift", vec![4, 2], randn(&mut rng, 8)),
            ("t", vec![4, 3, 2], randn(&mut rng, 24)),
        ]);
        fd_check(
            &store,
            |g| {
                let y = g.film(ids[0].into(), ids[1].into(), ids[2].into()).unwrap();
                g.mse(y, ids[3].into()).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn mse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = randn(&mut rng, 12);
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.75).collect();
        let (store, ids) = store_with(&[
            ("x", vec![3, 4], x.clone()),
            ("y", vec![3, 4], shifted),
        ]);
        let g = &mut Graph::new(&store);
        let same = g.mse(ids[0].into(), ids[0].into()).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        let offs = g.mse(ids[0].into(), ids[1].into()).unwrap();
        assert!((g.value(offs).item() - 0.75_f64.powi(2)).abs() < 1e-12);
        // scalar loop oracle
        let other = randn(&mut rng, 12);
        let mut acc = 0.0;
        for i in 0..12 {
            acc += (x[i] - other[i]).powi(2);
        }
        let (s2, id2) = store_with(&[("a", vec![3, 4], x), ("b", vec![3, 4], other)]);
        let g2 = &mut Graph::new(&s2);
        let m = g2.mse(id2[0].into(), id2[1].into()).unwrap();
        assert_eq!(g2.value(m).item(), acc / 12.0);
    }

    #[test]
    fn group_norm_output_is_standardized_before_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (c, s, b, groups) = (16, 10, 4, 8);
        let (store, ids) = store_with(&[
            ("x", vec![c, s, b], randn(&mut rng, c * s * b)),
            ("gamma", vec![c], vec![1.0; c]),
            ("beta", vec![c], vec![0.0; c]),
        ]);
        let g = &mut Graph::new(&store);
        let y = g.group_norm(ids[0].into(), ids[1].into(), ids[2].into(), groups).unwrap();
        let yd = g.value(y).data();
        let cg = c / groups;
        for gi in 0..groups {
            for lane in 0..b {
                let mut mean = 0.0;
                let mut var = 0.0;
                let n = (cg * s) as f64;
                for ci in gi * cg..(gi + 1) * cg {
                    for si in 0..s {
                        mean += yd[(ci * s + si) * b + lane];
                    }
                }
                mean /= n;
                for ci in gi * cg..(gi + 1) * cg {
                    for si in 0..s {
                        var += (yd[(ci * s + si) * b + lane] - mean).powi(2);
                    }
                }
                var /= n;
                assert!(mean.abs() < 1e-5, "group {gi} lane {lane} mean {mean}");
                assert!((var - 1.0).abs() < 1e-4, "group {gi} lane {lane} var {var}");
            }
        }
    }

    #[test]
    fn group_norm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (store, ids) = store_with(&[
            ("x", vec![4, 3, 2], randn(&mut rng, 24)),
            ("gamma", vec![4], randn(&mut rng, 4)),
            ("beta", vec![4], randn(&mut rng, 4)),
            ("t", vec![4, 3, 2], randn(&mut rng, 24)),
        ]);
        fd_check(
            &store,
            |g| {
                let y = g.group_norm(ids[0].into(), ids[1].into(), ids[2].into(), 2).unwrap();
                g.mse(y, ids[3].into()).unwrap()
            },
            1e-5,
        );
    }

    #[test]
    fn composite_graph_gradient_matches_finite_differences() {
        // conv2d -> leaky -> reshape -> matmul -> mish -> concat/slice -> mse
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (store, ids) = store_with(&[
            ("img", vec![1, 6, 6, 2], randn(&mut rng, 72)),
            ("k", vec![2, 1, 3, 3], randn(&mut rng, 18)),
            ("kb", vec![2], randn(&mut rng, 2)),
            ("w", vec![3, 18], randn(&mut rng, 54)),
            ("extra", vec![2, 2], randn(&mut rng, 4)),
            ("t", vec![6, 2], randn(&mut rng, 12)),
        ]);
        fd_check(
            &store,
            |g| {
                let c = g.conv2d(ids[0].into(), ids[1].into(), ids[2].into(), 2, 1).unwrap();
                let a = g.leaky_relu(c, 0.1);
                let flat = g.reshape(a, vec![18, 2]).unwrap();
                let y = g.matmul(ids[3].into(), flat).unwrap();
                let m = g.mish(y);
                let wide = g.concat(&[m, ids[4].into(), m]).unwrap();
                let sl = g.slice_rows(wide, 1, 6).unwrap();
                g.mse(sl, ids[5].into()).unwrap()
            },
            1e-5,
        );
    }

    #[test]
    fn upsample_and_scale_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (store, ids) = store_with(&[
            ("x", vec![2, 3, 2], randn(&mut rng, 12)),
            ("t", vec![2, 6, 2], randn(&mut rng, 24)),
        ]);
        fd_check(
            &store,
            |g| {
                let u = g.upsample2(ids[0].into()).unwrap();
                let s = g.scale(u, 1.7);
                g.mse(s, ids[1].into()).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn forward_backward_bit_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let (store, ids) = store_with(&[
                ("x", vec![3, 8, 4], randn(&mut rng, 96)),
                ("w", vec![5, 3, 3], randn(&mut rng, 45)),
                ("b", vec![5], randn(&mut rng, 5)),
                ("t", vec![5, 8, 4], randn(&mut rng, 160)),
            ]);
            let mut grads = Grads::zeros_like(&store);
            let g = &mut Graph::new(&store);
            let y = g.conv1d(ids[0].into(), ids[1].into(), ids[2].into(), 1, 1).unwrap();
            let m = g.mish(y);
            let loss = g.mse(m, ids[3].into()).unwrap();
            g.backward(loss, &mut grads).unwrap();
            let mut bits: Vec<u64> = vec![g.value(loss).item().to_bits()];
            for t in &grads.values {
                bits.extend(t.data().iter().map(|v| v.to_bits()));
            }
            bits
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_matmul_gradients(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(1..4usize);
            let k = rng.random_range(1..5usize);
            let n = rng.random_range(1..4usize);
            let (store, ids) = store_with(&[
                ("a", vec![m, k], randn(&mut rng, m * k)),
                ("b", vec![k, n], randn(&mut rng, k * n)),
                ("t", vec![m, n], randn(&mut rng, m * n)),
            ]);
            fd_check(&store, |g| {
                let y = g.matmul(ids[0].into(), ids[1].into()).unwrap();
                g.mse(y, ids[2].into()).unwrap()
            }, 1e-5);
        }

        #[test]
        fn prop_conv1d_gradients(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ci = rng.random_range(1..3usize);
            let co = rng.random_range(1..3usize);
            let t = rng.random_range(3..7usize);
            let k = rng.random_range(1..4usize);
            let stride = rng.random_range(1..3usize);
            let pad = rng.random_range(0..2usize);
            let b = rng.random_range(1..3usize);
            prop_assume!(super::super::kernels::conv_out_len(t, k, stride, pad).is_some());
            let t_out = super::super::kernels::conv_out_len(t, k, stride, pad).unwrap();
            let (store, ids) = store_with(&[
                ("x", vec![ci, t, b], randn(&mut rng, ci * t * b)),
                ("w", vec![co, ci, k], randn(&mut rng, co * ci * k)),
                ("bias", vec![co], randn(&mut rng, co)),
                ("t", vec![co, t_out, b], randn(&mut rng, co * t_out * b)),
            ]);
            fd_check(&store, |g| {
                let y = g.conv1d(ids[0].into(), ids[1].into(), ids[2].into(), stride, pad).unwrap();
                g.mse(y, ids[3].into()).unwrap()
            }, 1e-5);
        }

        #[test]
        fn prop_conv2d_gradients(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = rng.random_range(3..6usize);
            let w = rng.random_range(3..6usize);
            let k = rng.random_range(1..4usize);
            let stride = rng.random_range(1..3usize);
            let pad = rng.random_range(0..2usize);
            let b = rng.random_range(1..3usize);
            let (ho, wo) = match (
                super::super::kernels::conv_out_len(h, k, stride, pad),
                super::super::kernels::conv_out_len(w, k, stride, pad),
            ) {
                (Some(a), Some(bb)) => (a, bb),
                _ => return Ok(()),
            };
            let (store, ids) = store_with(&[
                ("x", vec![2, h, w, b], randn(&mut rng, 2 * h * w * b)),
                ("w", vec![2, 2, k, k], randn(&mut rng, 4 * k * k)),
                ("bias", vec![2], randn(&mut rng, 2)),
                ("t", vec![2, ho, wo, b], randn(&mut rng, 2 * ho * wo * b)),
            ]);
            fd_check(&store, |g| {
                let y = g.conv2d(ids[0].into(), ids[1].into(), ids[2].into(), stride, pad).unwrap();
                g.mse(y, ids[3].into()).unwrap()
            }, 1e-5);
        }

        #[test]
        fn prop_activation_and_norm_gradients(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = 4usize;
            let s = rng.random_range(2..5usize);
            let b = rng.random_range(1..3usize);
            // keep pre-activations away from the leaky-relu kink
            let x: Vec<f64> = (0..c * s * b)
                .map(|_| {
                    let v: f64 = rng.random_range(0.05..1.5);
                    if rng.random_bool(0.5) { v } else { -v }
                })
                .collect();
            let (store, ids) = store_with(&[
                ("x", vec![c, s, b], x),
                ("gamma", vec![c], randn(&mut rng, c)),
                ("beta", vec![c], randn(&mut rng, c)),
                ("scale", vec![c, b], randn(&mut rng, c * b)),
                ("shift", vec![c, b], randn(&mut rng, c * b)),
                ("t", vec![c, s, b], randn(&mut rng, c * s * b)),
            ]);
            fd_check(&store, |g| {
                let n = g.group_norm(ids[0].into(), ids[1].into(), ids[2].into(), 2).unwrap();
                let f = g.film(n, ids[3].into(), ids[4].into()).unwrap();
                let m = g.mish(f);
                let l = g.leaky_relu(m, 0.1);
                let a = g.add(l, ids[0].into()).unwrap();
                g.mse(a, ids[5].into()).unwrap()
            }, 1e-5);
        }
    }
}
