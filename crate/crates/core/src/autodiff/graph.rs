use std::borrow::Cow;
use std::cell::Cell;
use std::collections::BTreeMap;

use super::kernels as k;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A recorded primitive application. Opaque outside the crate.
pub struct Op(pub(crate) OpKind);

pub(crate) enum OpKind {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Square(Var),
    SumAll(Var),
    SumAxes(Var),
    Reshape(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var> },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, stats: Vec<(f64, f64)> },
    Dropout { x: Var, mask: Vec<f64> },
    Concat { parts: Vec<Var> },
    Rfft2(Var),
    Irfft2(Var),
    ComplexMul { a: Var, b: Var, conj_b: bool },
    ComplexAbs(Var),
    SpectralMix { x: Var, w: Var },
    EmbedModes(Var),
    AvgPool { x: Var, factor: usize },
    Upsample { x: Var, factor: usize },
}

/// Guard applied to `|z|` in the magnitude backward rule.
pub const ABS_EPS: f64 = 1e-12;

/// Operations available to model code. Implemented by [`Tape`], which
/// records for reverse-mode differentiation, and by [`Eval`], which only
/// computes values.
pub trait Graph<'a> {
    #[doc(hidden)]
    fn push(&mut self, value: Tensor, op: Op) -> Var;

    #[doc(hidden)]
    fn push_param(&mut self, name: &str, value: &'a Tensor) -> Var;

    fn value(&self, v: Var) -> &Tensor;

    fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    /// A leaf that receives no gradient.
    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op(OpKind::Leaf))
    }

    /// A named leaf whose gradient is reported by [`Tape::backward`].
    fn param(&mut self, name: &str, t: &'a Tensor) -> Var {
        self.push_param(name, t)
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op(OpKind::Add(a, b))))
    }

    fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op(OpKind::Sub(a, b))))
    }

    fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op(OpKind::Mul(a, b))))
    }

    fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = map(self.value(a), |x| x * s);
        self.push(out, Op(OpKind::Scale(a, s)))
    }

    fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = map(self.value(a), |x| x + s);
        self.push(out, Op(OpKind::AddScalar(a)))
    }

    fn relu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x.max(0.0));
        self.push(out, Op(OpKind::Relu(a)))
    }

    fn gelu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), k::gelu);
        self.push(out, Op(OpKind::Gelu(a)))
    }

    fn sigmoid(&mut self, a: Var) -> Var {
        let out = map(self.value(a), k::sigmoid);
        self.push(out, Op(OpKind::Sigmoid(a)))
    }

    fn square(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x * x);
        self.push(out, Op(OpKind::Square(a)))
    }

    fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op(OpKind::SumAll(a)))
    }

    /// Sums over the listed axes, keeping them with length 1.
    fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut shape = x.shape().to_vec();
        for &ax in axes {
            if ax >= shape.len() {
                return Err(Error::shape(format!("sum_axes: axis {ax} out of range")));
            }
            shape[ax] = 1;
        }
        let out = k::reduce_to(x, &shape);
        Ok(self.push(out, Op(OpKind::SumAxes(a))))
    }

    fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let count: usize = axes.iter().map(|&ax| self.value(a).shape()[ax]).product();
        let s = self.sum_axes(a, axes)?;
        Ok(self.scale(s, 1.0 / count as f64))
    }

    fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.numel() {
            return Err(Error::shape(format!("reshape {:?} -> {shape:?}", x.shape())));
        }
        let out = Tensor::from_parts(shape.to_vec(), x.data().to_vec());
        Ok(self.push(out, Op(OpKind::Reshape(a))))
    }

    /// Dense affine map `x · wᵀ + b` on `[N, in]` inputs.
    fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = k::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op(OpKind::Linear { x, w, b })))
    }

    /// Same-padded convolution with an odd square kernel.
    fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = k::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op(OpKind::Conv2d { x, w, b })))
    }

    fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (out, stats) = k::group_norm(self.value(x), self.value(gamma), self.value(beta), groups)?;
        Ok(self.push(out, Op(OpKind::GroupNorm { x, gamma, beta, groups, stats })))
    }

    /// Multiplies by a recorded mask whose entries are `0` or `1/(1-p)`.
    fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let v = self.value(x);
        if mask.len() != v.numel() {
            return Err(Error::shape("dropout mask length"));
        }
        let out = Tensor::from_parts(v.shape().to_vec(), v.data().iter().zip(&mask).map(|(a, m)| a * m).collect());
        Ok(self.push(out, Op(OpKind::Dropout { x, mask })))
    }

    /// Concatenates along axis 1.
    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::invalid("empty concat"))?);
        let lead = first.shape()[0];
        let rest = first.shape()[2..].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() < 2 || s[0] != lead || s[2..] != rest[..] {
                return Err(Error::shape(format!("concat: {:?} vs {:?}", s, first.shape())));
            }
            total += s[1];
        }
        let inner: usize = rest.iter().product();
        let mut data = Vec::with_capacity(lead * total * inner);
        for n in 0..lead {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape()[1];
                data.extend_from_slice(&v.data()[n * c * inner..(n + 1) * c * inner]);
            }
        }
        let mut shape = vec![lead, total];
        shape.extend(rest);
        Ok(self.push(Tensor::from_parts(shape, data), Op(OpKind::Concat { parts: parts.to_vec() })))
    }

    /// Real-input unnormalized 2-D DFT over the two trailing axes.
    fn rfft2(&mut self, x: Var) -> Result<Var> {
        let out = k::rfft2(self.value(x))?;
        Ok(self.push(out, Op(OpKind::Rfft2(x))))
    }

    /// Inverse of [`Graph::rfft2`].
    fn irfft2(&mut self, z: Var) -> Result<Var> {
        let out = k::irfft2(self.value(z))?;
        Ok(self.push(out, Op(OpKind::Irfft2(z))))
    }

    /// Elementwise complex product `a · b` (or `a · conj(b)`), broadcasting
    /// over every axis but the trailing `(re, im)` one.
    fn complex_mul(&mut self, a: Var, b: Var, conj_b: bool) -> Result<Var> {
        let out = complex_mul_forward(self.value(a), self.value(b), conj_b)?;
        Ok(self.push(out, Op(OpKind::ComplexMul { a, b, conj_b })))
    }

    /// `|z|` over the trailing `(re, im)` axis, kept with length 1.
    fn complex_abs(&mut self, z: Var) -> Result<Var> {
        let v = self.value(z);
        if v.shape().last() != Some(&2) {
            return Err(Error::shape("complex_abs expects a trailing axis of length 2"));
        }
        let data = v.data().chunks_exact(2).map(|p| p[0].hypot(p[1])).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        Ok(self.push(Tensor::from_parts(shape, data), Op(OpKind::ComplexAbs(z))))
    }

    /// Per-mode channel mixing on the retained modes of a half spectrum.
    fn spectral_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = k::spectral_mix(self.value(x), self.value(w))?;
        Ok(self.push(out, Op(OpKind::SpectralMix { x, w })))
    }

    /// Places per-retained-mode values `[2,m,m]` on an `[h, wh]` half-spectrum
    /// grid (same addressing as [`Graph::spectral_mix`]), zero elsewhere.
    fn embed_modes(&mut self, w: Var, h: usize, wh: usize) -> Result<Var> {
        let out = k::embed_modes(self.value(w), h, wh)?;
        Ok(self.push(out, Op(OpKind::EmbedModes(w))))
    }

    fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 1 {
            return Ok(x);
        }
        let out = k::avg_pool(self.value(x), factor)?;
        Ok(self.push(out, Op(OpKind::AvgPool { x, factor })))
    }

    fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 1 {
            return Ok(x);
        }
        let out = k::upsample_bilinear(self.value(x), factor)?;
        Ok(self.push(out, Op(OpKind::Upsample { x, factor })))
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = k::broadcast_shape(a.shape(), b.shape())?;
    let mut out = vec![0.0; shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    k::for_each_broadcast(&shape, a.shape(), b.shape(), |o, ia, ib| out[o] = f(ad[ia], bd[ib]));
    Ok(Tensor::from_parts(shape, out))
}

fn complex_shapes(a: &Tensor, b: &Tensor) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.last() != Some(&2) || sb.last() != Some(&2) {
        return Err(Error::shape("complex_mul expects trailing axes of length 2"));
    }
    let ea = sa[..sa.len() - 1].to_vec();
    let eb = sb[..sb.len() - 1].to_vec();
    let eo = k::broadcast_shape(&ea, &eb)?;
    Ok((ea, eb, eo))
}

fn complex_mul_forward(a: &Tensor, b: &Tensor, conj_b: bool) -> Result<Tensor> {
    let (ea, eb, eo) = complex_shapes(a, b)?;
    let mut out = vec![0.0; eo.iter().product::<usize>() * 2];
    let (ad, bd) = (a.data(), b.data());
    let sign = if conj_b { -1.0 } else { 1.0 };
    k::for_each_broadcast(&eo, &ea, &eb, |o, ia, ib| {
        let (ar, ai) = (ad[2 * ia], ad[2 * ia + 1]);
        let (br, bi) = (bd[2 * ib], sign * bd[2 * ib + 1]);
        out[2 * o] = ar * br - ai * bi;
        out[2 * o + 1] = ar * bi + ai * br;
    });
    let mut shape = eo;
    shape.push(2);
    Ok(Tensor::from_parts(shape, out))
}

// ---------------------------------------------------------------------------

thread_local! {
    static TAPES_CREATED: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`Tape`]s created on the current thread so far.
pub fn tapes_created_on_this_thread() -> usize {
    TAPES_CREATED.with(|c| c.get())
}

/// Records primitive applications in append order for reverse-mode
/// differentiation.
pub struct Tape<'a> {
    values: Vec<Cow<'a, Tensor>>,
    ops: Vec<OpKind>,
    params: Vec<(String, Var)>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        TAPES_CREATED.with(|c| c.set(c.get() + 1));
        Self { values: Vec::new(), ops: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Propagates `d loss / d node` backward in reverse append order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::full(self.values[loss.0].shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if matches!(self.ops[id], OpKind::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.backward_node(id, &g, &mut grads);
        }
        let params = self
            .params
            .iter()
            .map(|(name, v)| {
                let g = grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.values[v.0].shape()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { by_var: grads, params })
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    fn backward_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.values[id];
        match &self.ops[id] {
            OpKind::Leaf => {}
            OpKind::Add(a, b) => {
                accumulate(grads, *a, k::reduce_to(g, self.val(*a).shape()));
                accumulate(grads, *b, k::reduce_to(g, self.val(*b).shape()));
            }
            OpKind::Sub(a, b) => {
                accumulate(grads, *a, k::reduce_to(g, self.val(*a).shape()));
                let gb = k::reduce_to(g, self.val(*b).shape());
                accumulate(grads, *b, map(&gb, |v| -v));
            }
            OpKind::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                {
                    let (gad, gbd) = (ga.data_mut(), gb.data_mut());
                    let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                    k::for_each_broadcast(g.shape(), av.shape(), bv.shape(), |o, ia, ib| {
                        gad[ia] += gd[o] * bd[ib];
                        gbd[ib] += gd[o] * ad[ia];
                    });
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            OpKind::Scale(a, s) => accumulate(grads, *a, map(g, |v| v * s)),
            OpKind::AddScalar(a) | OpKind::Reshape(a) => {
                let shape = self.val(*a).shape().to_vec();
                accumulate(grads, *a, Tensor::from_parts(shape, g.data().to_vec()));
            }
            OpKind::Relu(a) => {
                let x = self.val(*a);
                accumulate(grads, *a, zip(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            OpKind::Gelu(a) => {
                let x = self.val(*a);
                accumulate(grads, *a, zip(g, x, |gv, xv| gv * k::gelu_grad(xv)));
            }
            OpKind::Sigmoid(a) => {
                accumulate(grads, *a, zip(g, out, |gv, s| gv * s * (1.0 - s)));
            }
            OpKind::Square(a) => {
                let x = self.val(*a);
                accumulate(grads, *a, zip(g, x, |gv, xv| 2.0 * gv * xv));
            }
            OpKind::SumAll(a) => {
                accumulate(grads, *a, Tensor::full(self.val(*a).shape(), g.item()));
            }
            OpKind::SumAxes(a) => {
                let shape = self.val(*a).shape().to_vec();
                let mut ga = Tensor::zeros(&shape);
                {
                    let (dst, gd) = (ga.data_mut(), g.data());
                    k::for_each_broadcast(&shape, &shape, g.shape(), |o, _, ig| dst[o] = gd[ig]);
                }
                accumulate(grads, *a, ga);
            }
            OpKind::Linear { x, w, b } => {
                let (dx, dw, db) = k::linear_backward(self.val(*x), self.val(*w), g, b.is_some());
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                if let (Some(b), Some(db)) = (b, db) {
                    accumulate(grads, *b, db);
                }
            }
            OpKind::Conv2d { x, w, b } => {
                let (dx, dw, db) = k::conv2d_backward(self.val(*x), self.val(*w), g, b.is_some());
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                if let (Some(b), Some(db)) = (b, db) {
                    accumulate(grads, *b, db);
                }
            }
            OpKind::GroupNorm { x, gamma, beta, groups, stats } => {
                let (dx, dg, db) = k::group_norm_backward(self.val(*x), self.val(*gamma), *groups, stats, g);
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, dg);
                accumulate(grads, *beta, db);
            }
            OpKind::Dropout { x, mask } => {
                let shape = self.val(*x).shape().to_vec();
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate(grads, *x, Tensor::from_parts(shape, data));
            }
            OpKind::Concat { parts } => {
                let lead = g.shape()[0];
                let total = g.shape()[1];
                let inner: usize = g.shape()[2..].iter().product();
                let mut offset = 0;
                for &p in parts {
                    let shape = self.val(p).shape().to_vec();
                    let c = shape[1];
                    let mut data = Vec::with_capacity(lead * c * inner);
                    for n in 0..lead {
                        let start = (n * total + offset) * inner;
                        data.extend_from_slice(&g.data()[start..start + c * inner]);
                    }
                    offset += c;
                    accumulate(grads, p, Tensor::from_parts(shape, data));
                }
            }
            OpKind::Rfft2(x) => {
                let w = *self.val(*x).shape().last().unwrap();
                accumulate(grads, *x, k::rfft2_adjoint(g, w));
            }
            OpKind::Irfft2(z) => accumulate(grads, *z, k::irfft2_adjoint(g)),
            OpKind::ComplexMul { a, b, conj_b } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (ea, eb, eo) = complex_shapes(av, bv).expect("validated in forward");
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                let sign = if *conj_b { -1.0 } else { 1.0 };
                {
                    let (gad, gbd) = (ga.data_mut(), gb.data_mut());
                    let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                    k::for_each_broadcast(&eo, &ea, &eb, |o, ia, ib| {
                        let (gr, gi) = (gd[2 * o], gd[2 * o + 1]);
                        let (ar, ai) = (ad[2 * ia], ad[2 * ia + 1]);
                        let (br, bi) = (bd[2 * ib], sign * bd[2 * ib + 1]);
                        // d/da = g · conj(b'),  d/db' = g · conj(a)
                        gad[2 * ia] += gr * br + gi * bi;
                        gad[2 * ia + 1] += gi * br - gr * bi;
                        let (dbr, dbi) = (gr * ar + gi * ai, gi * ar - gr * ai);
                        gbd[2 * ib] += dbr;
                        gbd[2 * ib + 1] += sign * dbi;
                    });
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            OpKind::ComplexAbs(z) => {
                let zv = self.val(*z);
                let mut gz = Tensor::zeros(zv.shape());
                for ((dst, src), (&gv, &mag)) in gz
                    .data_mut()
                    .chunks_exact_mut(2)
                    .zip(zv.data().chunks_exact(2))
                    .zip(g.data().iter().zip(out.data()))
                {
                    let denom = mag.max(ABS_EPS);
                    dst[0] = gv * src[0] / denom;
                    dst[1] = gv * src[1] / denom;
                }
                accumulate(grads, *z, gz);
            }
            OpKind::SpectralMix { x, w } => {
                let (dx, dw) = k::spectral_mix_backward(self.val(*x), self.val(*w), g);
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
            }
            OpKind::EmbedModes(w) => {
                accumulate(grads, *w, k::embed_modes_backward(self.val(*w).shape(), g));
            }
            OpKind::AvgPool { x, factor } => {
                accumulate(grads, *x, k::avg_pool_backward(self.val(*x).shape(), *factor, g));
            }
            OpKind::Upsample { x, factor } => {
                accumulate(grads, *x, k::upsample_bilinear_backward(self.val(*x).shape(), *factor, g));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl<'a> Graph<'a> for Tape<'a> {
    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(Cow::Owned(value));
        self.ops.push(op.0);
        Var(self.values.len() - 1)
    }

    fn push_param(&mut self, name: &str, value: &'a Tensor) -> Var {
        self.values.push(Cow::Borrowed(value));
        self.ops.push(OpKind::Leaf);
        let v = Var(self.values.len() - 1);
        self.params.push((name.to_string(), v));
        v
    }

    fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    by_var: Vec<Option<Tensor>>,
    params: Vec<(String, Tensor)>,
}

impl Gradients {
    /// Gradient of a node, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a named parameter; zero-filled when unreachable.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    /// Named parameter gradients. A parameter bound more than once has its
    /// contributions summed.
    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, g) in self.params {
            match out.get_mut(&name) {
                Some(existing) => existing.add_assign(&g),
                None => {
                    out.insert(name, g);
                }
            }
        }
        out
    }
}

/// Evaluates operations without recording anything for differentiation.
#[derive(Default)]
pub struct Eval<'a> {
    values: Vec<Cow<'a, Tensor>>,
}

impl Eval<'_> {
    pub fn new() -> Self {
        Self { values: Vec::new() }
    }
}

impl<'a> Graph<'a> for Eval<'a> {
    fn push(&mut self, value: Tensor, _op: Op) -> Var {
        self.values.push(Cow::Owned(value));
        Var(self.values.len() - 1)
    }

    fn push_param(&mut self, _name: &str, value: &'a Tensor) -> Var {
        self.values.push(Cow::Borrowed(value));
        Var(self.values.len() - 1)
    }

    fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }
}
