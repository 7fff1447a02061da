//! Forward and adjoint kernels shared by the recording and non-recording
//! graphs.

use num_complex::Complex64;

use super::Tensor;
use crate::error::{Error, Result};
use crate::field::fft;

/// Row-major GEMM: `c = op(a) · op(b) + beta · c` with `op(a)` of shape
/// `m × k` and `op(b)` of shape `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the strided extents asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}: rank differs")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            (x, y) if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let nd = out.len();
    let total: usize = out.iter().product();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    // fast path: identical shapes
    if a == out && b == out {
        for i in 0..total {
            f(i, i, i);
        }
        return;
    }
    let inner = out[nd - 1];
    let (ia_step, ib_step) = (sa[nd - 1], sb[nd - 1]);
    let mut idx = vec![0usize; nd];
    let mut o = 0;
    while o < total {
        let mut ia = 0;
        let mut ib = 0;
        for d in 0..nd - 1 {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        for _ in 0..inner {
            f(o, ia, ib);
            o += 1;
            ia += ia_step;
            ib += ib_step;
        }
        // advance the outer odometer
        let mut d = nd - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Sums `grad` (shaped like `out`) down to `shape`.
pub(crate) fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut acc = Tensor::zeros(shape);
    let g = grad.data();
    let dst = acc.data_mut();
    for_each_broadcast(grad.shape(), shape, grad.shape(), |o, ia, _| dst[ia] += g[o]);
    acc
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// convolution

/// Gathers `k × k` neighbourhoods (zero padded) into a
/// `(ci·k·k) × (h·w)` matrix.
fn im2col(x: &[f64], ci: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..ci {
        let plane = &x[c * hw..(c + 1) * hw];
        for dy in 0..k {
            for dx in 0..k {
                let row = &mut cols[((c * k + dy) * k + dx) * hw..((c * k + dy) * k + dx + 1) * hw];
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + oy;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, v) in out.iter_mut().enumerate() {
                        let sx = xx as isize + ox;
                        *v = if sx < 0 || sx >= w as isize { 0.0 } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], ci: usize, h: usize, w: usize, k: usize, x: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..ci {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for dy in 0..k {
            for dx in 0..k {
                let row = &cols[((c * k + dy) * k + dx) * hw..((c * k + dy) * k + dx + 1) * hw];
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, v) in row[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = xx as isize + ox;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Same-padding 2-D convolution (cross-correlation), `x: [B,Ci,H,W]`,
/// `w: [Co,Ci,k,k]`, optional bias `[Co]`.
pub(crate) fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (&[bs, ci, h, wd], &[co, wci, k, k2]) = (x.shape(), w.shape()) else {
        return Err(Error::shape(format!("conv2d: bad ranks {:?} / {:?}", x.shape(), w.shape())));
    };
    if wci != ci || k != k2 || k % 2 == 0 {
        return Err(Error::shape(format!("conv2d: weight {:?} incompatible with input {:?}", w.shape(), x.shape())));
    }
    if let Some(b) = b {
        if b.shape() != [co] {
            return Err(Error::shape("conv2d: bias shape"));
        }
    }
    let hw = h * wd;
    let kk = ci * k * k;
    let mut out = vec![0.0; bs * co * hw];
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    for n in 0..bs {
        let xin = &x.data()[n * ci * hw..(n + 1) * ci * hw];
        let y = &mut out[n * co * hw..(n + 1) * co * hw];
        if let Some(b) = b {
            for (o, &bias) in b.data().iter().enumerate() {
                y[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = bias);
            }
        }
        let src: &[f64] = if k == 1 {
            xin
        } else {
            im2col(xin, ci, h, wd, k, &mut cols);
            &cols
        };
        gemm(co, kk, hw, w.data(), false, src, false, if b.is_some() { 1.0 } else { 0.0 }, y);
    }
    Ok(Tensor::from_parts(vec![bs, co, h, wd], out))
}

/// Returns `(dx, dw, db)`.
pub(crate) fn conv2d_backward(x: &Tensor, w: &Tensor, g: &Tensor, with_bias: bool) -> (Tensor, Tensor, Option<Tensor>) {
    let &[bs, ci, h, wd] = x.shape() else { unreachable!() };
    let &[co, _, k, _] = w.shape() else { unreachable!() };
    let hw = h * wd;
    let kk = ci * k * k;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = with_bias.then(|| Tensor::zeros(&[co]));
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    let mut dcols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    for n in 0..bs {
        let xin = &x.data()[n * ci * hw..(n + 1) * ci * hw];
        let gy = &g.data()[n * co * hw..(n + 1) * co * hw];
        if let Some(db) = db.as_mut() {
            for (o, d) in db.data_mut().iter_mut().enumerate() {
                *d += gy[o * hw..(o + 1) * hw].iter().sum::<f64>();
            }
        }
        let src: &[f64] = if k == 1 {
            xin
        } else {
            im2col(xin, ci, h, wd, k, &mut cols);
            &cols
        };
        // dW += gY · colsᵀ
        gemm(co, hw, kk, gy, false, src, true, 1.0, dw.data_mut());
        // dcols = Wᵀ · gY
        let dxn = &mut dx.data_mut()[n * ci * hw..(n + 1) * ci * hw];
        if k == 1 {
            gemm(kk, co, hw, w.data(), true, gy, false, 1.0, dxn);
        } else {
            gemm(kk, co, hw, w.data(), true, gy, false, 0.0, &mut dcols);
            col2im(&dcols, ci, h, wd, k, dxn);
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// dense layer

/// `x: [N, in]`, `w: [out, in]`, `b: [out]` → `[N, out]`.
pub(crate) fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (&[n, fin], &[fout, win]) = (x.shape(), w.shape()) else {
        return Err(Error::shape(format!("linear: bad ranks {:?} / {:?}", x.shape(), w.shape())));
    };
    if fin != win {
        return Err(Error::shape(format!("linear: input width {fin} vs weight {win}")));
    }
    let mut out = vec![0.0; n * fout];
    if let Some(b) = b {
        if b.shape() != [fout] {
            return Err(Error::shape("linear: bias shape"));
        }
        for row in out.chunks_mut(fout) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(n, fin, fout, x.data(), false, w.data(), true, if b.is_some() { 1.0 } else { 0.0 }, &mut out);
    Ok(Tensor::from_parts(vec![n, fout], out))
}

pub(crate) fn linear_backward(x: &Tensor, w: &Tensor, g: &Tensor, with_bias: bool) -> (Tensor, Tensor, Option<Tensor>) {
    let &[n, fin] = x.shape() else { unreachable!() };
    let fout = w.shape()[0];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    gemm(n, fout, fin, g.data(), false, w.data(), false, 0.0, dx.data_mut());
    gemm(fout, n, fin, g.data(), true, x.data(), false, 0.0, dw.data_mut());
    let db = with_bias.then(|| {
        let mut db = Tensor::zeros(&[fout]);
        for row in g.data().chunks(fout) {
            db.data_mut().iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        db
    });
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// group normalization

pub(crate) const GROUP_NORM_EPS: f64 = 1e-5;

/// Returns the output and the per-(sample, group) `(mean, rstd)` pairs.
pub(crate) fn group_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: usize,
) -> Result<(Tensor, Vec<(f64, f64)>)> {
    let &[bs, c, h, w] = x.shape() else {
        return Err(Error::shape("group_norm expects [B,C,H,W]"));
    };
    if groups == 0 || c % groups != 0 || gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!("group_norm: {c} channels, {groups} groups")));
    }
    let cg = c / groups;
    let span = cg * h * w;
    let hw = h * w;
    let mut out = vec![0.0; x.numel()];
    let mut stats = Vec::with_capacity(bs * groups);
    for (gi, chunk) in x.data().chunks(span).enumerate() {
        let mean = chunk.iter().sum::<f64>() / span as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / span as f64;
        let rstd = 1.0 / (var + GROUP_NORM_EPS).sqrt();
        stats.push((mean, rstd));
        let g = gi % groups;
        let dst = &mut out[gi * span..(gi + 1) * span];
        for (i, (o, v)) in dst.iter_mut().zip(chunk).enumerate() {
            let ch = g * cg + i / hw;
            *o = (v - mean) * rstd * gamma.data()[ch] + beta.data()[ch];
        }
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), out), stats))
}

pub(crate) fn group_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    groups: usize,
    stats: &[(f64, f64)],
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let &[_, c, h, w] = x.shape() else { unreachable!() };
    let cg = c / groups;
    let hw = h * w;
    let span = cg * hw;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for (gi, (&(mean, rstd), (xs, gs))) in
        stats.iter().zip(x.data().chunks(span).zip(g.data().chunks(span))).enumerate()
    {
        let grp = gi % groups;
        // dxhat = g * gamma
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for (i, (&xv, &gv)) in xs.iter().zip(gs).enumerate() {
            let ch = grp * cg + i / hw;
            let xhat = (xv - mean) * rstd;
            let dxhat = gv * gamma.data()[ch];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgamma.data_mut()[ch] += gv * xhat;
            dbeta.data_mut()[ch] += gv;
        }
        let inv_n = 1.0 / span as f64;
        let dst = &mut dx.data_mut()[gi * span..(gi + 1) * span];
        for (i, (d, (&xv, &gv))) in dst.iter_mut().zip(xs.iter().zip(gs)).enumerate() {
            let ch = grp * cg + i / hw;
            let xhat = (xv - mean) * rstd;
            let dxhat = gv * gamma.data()[ch];
            *d = rstd * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// spectral transforms on interleaved complex tensors

fn split_spatial(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape("fft needs at least two trailing spatial axes"));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    let outer = shape[..shape.len() - 2].iter().product();
    Ok((outer, h, w))
}

fn to_complex(data: &[f64]) -> Vec<Complex64> {
    data.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

fn from_complex(data: &[Complex64]) -> Vec<f64> {
    data.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// `[..., H, W]` → `[..., H, W/2+1, 2]`.
pub(crate) fn rfft2(x: &Tensor) -> Result<Tensor> {
    let (outer, h, w) = split_spatial(x.shape())?;
    let wh = fft::half_width(w);
    let mut out = vec![Complex64::new(0.0, 0.0); outer * h * wh];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(h * wh)) {
        fft::rfft2_plane(src, h, w, dst);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = wh;
    shape.push(2);
    Ok(Tensor::from_parts(shape, from_complex(&out)))
}

/// Adjoint of [`rfft2`]: unit-weight unnormalized synthesis.
pub(crate) fn rfft2_adjoint(g: &Tensor, w: usize) -> Tensor {
    let shape = g.shape();
    let h = shape[shape.len() - 3];
    let wh = shape[shape.len() - 2];
    let outer: usize = shape[..shape.len() - 3].iter().product();
    let gz = to_complex(g.data());
    let mut out = vec![0.0; outer * h * w];
    for (src, dst) in gz.chunks(h * wh).zip(out.chunks_mut(h * w)) {
        fft::synthesize_plane(src, h, w, fft::Synthesis::Unit, 1.0, dst);
    }
    let mut oshape = shape[..shape.len() - 1].to_vec();
    *oshape.last_mut().unwrap() = w;
    Tensor::from_parts(oshape, out)
}

/// `[..., H, W/2+1, 2]` → `[..., H, W]` with `W = 2·(W/2)`.
pub(crate) fn irfft2(z: &Tensor) -> Result<Tensor> {
    let shape = z.shape();
    if shape.len() < 3 || shape[shape.len() - 1] != 2 {
        return Err(Error::shape(format!("irfft2 expects [..., H, W/2+1, 2], got {shape:?}")));
    }
    let h = shape[shape.len() - 3];
    let wh = shape[shape.len() - 2];
    let w = 2 * (wh - 1);
    let outer: usize = shape[..shape.len() - 3].iter().product();
    let zc = to_complex(z.data());
    let mut out = vec![0.0; outer * h * w];
    for (src, dst) in zc.chunks(h * wh).zip(out.chunks_mut(h * w)) {
        fft::irfft2_plane(src, h, w, dst);
    }
    let mut oshape = shape[..shape.len() - 1].to_vec();
    *oshape.last_mut().unwrap() = w;
    Ok(Tensor::from_parts(oshape, out))
}

/// Adjoint of [`irfft2`]: `(c_j / HW) · rfft2(g)`.
pub(crate) fn irfft2_adjoint(g: &Tensor) -> Tensor {
    let mut out = rfft2(g).expect("gradient has spatial axes");
    let shape = out.shape().to_vec();
    let h = shape[shape.len() - 3];
    let wh = shape[shape.len() - 2];
    let w = 2 * (wh - 1);
    let inv = 1.0 / (h * w) as f64;
    for (idx, pair) in out.data_mut().chunks_exact_mut(2).enumerate() {
        let j = idx % wh;
        let c = if j == 0 || j == wh - 1 { 1.0 } else { 2.0 };
        pair[0] *= c * inv;
        pair[1] *= c * inv;
    }
    out
}

/// Retained-mode channel mixing. `x: [B,Ci,H,Wh,2]`,
/// `w: [2,Ci,Co,m,m,2]`; block 0 addresses rows `0..m`, block 1 rows
/// `H-m..H`, both over columns `0..m`. Other modes of the output are zero.
pub(crate) fn spectral_mix(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (&[bs, ci, h, wh, 2], &[2, wci, co, m, m2, 2]) = (x.shape(), w.shape()) else {
        return Err(Error::shape(format!("spectral_mix: bad shapes {:?} / {:?}", x.shape(), w.shape())));
    };
    if wci != ci || m != m2 || m > wh || 2 * m > h {
        return Err(Error::shape(format!(
            "spectral_mix: {m} modes do not fit a {h}x{wh} half spectrum with {ci} channels"
        )));
    }
    let mut out = vec![0.0; bs * co * h * wh * 2];
    let xd = x.data();
    let wd = w.data();
    for blk in 0..2 {
        for r in 0..m {
            let row = if blk == 0 { r } else { h - m + r };
            for j in 0..m {
                for n in 0..bs {
                    for i in 0..ci {
                        let xi = (((n * ci + i) * h + row) * wh + j) * 2;
                        let (xr, xim) = (xd[xi], xd[xi + 1]);
                        if xr == 0.0 && xim == 0.0 {
                            continue;
                        }
                        for o in 0..co {
                            let wi = ((((blk * ci + i) * co + o) * m + r) * m + j) * 2;
                            let (wr, wim) = (wd[wi], wd[wi + 1]);
                            let oi = (((n * co + o) * h + row) * wh + j) * 2;
                            out[oi] += xr * wr - xim * wim;
                            out[oi + 1] += xr * wim + xim * wr;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![bs, co, h, wh, 2], out))
}

pub(crate) fn spectral_mix_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let &[bs, ci, h, wh, 2] = x.shape() else { unreachable!() };
    let &[2, _, co, m, _, 2] = w.shape() else { unreachable!() };
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let xd = x.data();
    let wd = w.data();
    let gd = g.data();
    for blk in 0..2 {
        for r in 0..m {
            let row = if blk == 0 { r } else { h - m + r };
            for j in 0..m {
                for n in 0..bs {
                    for i in 0..ci {
                        let xi = (((n * ci + i) * h + row) * wh + j) * 2;
                        let (xr, xim) = (xd[xi], xd[xi + 1]);
                        let mut acc_r = 0.0;
                        let mut acc_i = 0.0;
                        for o in 0..co {
                            let wi = ((((blk * ci + i) * co + o) * m + r) * m + j) * 2;
                            let oi = (((n * co + o) * h + row) * wh + j) * 2;
                            let (gr, gim) = (gd[oi], gd[oi + 1]);
                            let (wr, wim) = (wd[wi], wd[wi + 1]);
                            // dx += g · conj(w)
                            acc_r += gr * wr + gim * wim;
                            acc_i += gim * wr - gr * wim;
                            // dw += g · conj(x)
                            let dwd = dw.data_mut();
                            dwd[wi] += gr * xr + gim * xim;
                            dwd[wi + 1] += gim * xr - gr * xim;
                        }
                        let dxd = dx.data_mut();
                        dxd[xi] += acc_r;
                        dxd[xi + 1] += acc_i;
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Row of the half spectrum addressed by retained-mode block `blk`, row `r`.
#[inline]
pub(crate) fn retained_row(blk: usize, r: usize, h: usize, m: usize) -> usize {
    if blk == 0 {
        r
    } else {
        h - m + r
    }
}

/// Scatters per-retained-mode values `w: [2,m,m]` into an `[h, wh]` grid,
/// zero elsewhere.
pub(crate) fn embed_modes(w: &Tensor, h: usize, wh: usize) -> Result<Tensor> {
    let &[2, m, m2] = w.shape() else {
        return Err(Error::shape(format!("embed_modes: expected [2,m,m], got {:?}", w.shape())));
    };
    if m != m2 || m > wh || 2 * m > h {
        return Err(Error::shape(format!("embed_modes: {m} modes do not fit {h}x{wh}")));
    }
    let mut out = vec![0.0; h * wh];
    for blk in 0..2 {
        for r in 0..m {
            let row = retained_row(blk, r, h, m);
            for j in 0..m {
                out[row * wh + j] = w.data()[(blk * m + r) * m + j];
            }
        }
    }
    Ok(Tensor::from_parts(vec![h, wh], out))
}

pub(crate) fn embed_modes_backward(w_shape: &[usize], g: &Tensor) -> Tensor {
    let m = w_shape[1];
    let (h, wh) = (g.shape()[0], g.shape()[1]);
    let mut dw = Tensor::zeros(w_shape);
    for blk in 0..2 {
        for r in 0..m {
            let row = retained_row(blk, r, h, m);
            for j in 0..m {
                dw.data_mut()[(blk * m + r) * m + j] = g.data()[row * wh + j];
            }
        }
    }
    dw
}

// ---------------------------------------------------------------------------
// resampling

pub(crate) fn avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    let &[bs, c, h, w] = x.shape() else {
        return Err(Error::shape("avg_pool expects [B,C,H,W]"));
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 || h != w {
        return Err(Error::invalid(format!("avg_pool factor {factor} does not divide {h}x{w}")));
    }
    let m = h / factor;
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; bs * c * m * m];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(m * m)) {
        crate::field::pool_plane_into(src, h, factor, inv, dst);
    }
    Ok(Tensor::from_parts(vec![bs, c, m, m], out))
}

pub(crate) fn avg_pool_backward(x_shape: &[usize], factor: usize, g: &Tensor) -> Tensor {
    let &[_, _, h, w] = x_shape else { unreachable!() };
    let m = h / factor;
    let inv = 1.0 / (factor * factor) as f64;
    let mut dx = Tensor::zeros(x_shape);
    for (gd, dst) in g.data().chunks(m * m).zip(dx.data_mut().chunks_mut(h * w)) {
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = gd[(i / factor) * m + j / factor] * inv;
            }
        }
    }
    dx
}

pub(crate) fn upsample_bilinear(x: &Tensor, factor: usize) -> Result<Tensor> {
    let f = x.to_field()?;
    Ok(Tensor::from_field(&f.upsample(factor)?))
}

pub(crate) fn upsample_bilinear_backward(x_shape: &[usize], factor: usize, g: &Tensor) -> Tensor {
    let &[_, _, n, _] = x_shape else { unreachable!() };
    let m = n * factor;
    let taps = crate::field::bilinear_taps_of(n, factor);
    let mut dx = Tensor::zeros(x_shape);
    for (gd, dst) in g.data().chunks(m * m).zip(dx.data_mut().chunks_mut(n * n)) {
        for (i, &(i0, i1, wi)) in taps.iter().enumerate() {
            for (j, &(j0, j1, wj)) in taps.iter().enumerate() {
                let v = gd[i * m + j];
                dst[i0 * n + j0] += v * (1.0 - wi) * (1.0 - wj);
                dst[i0 * n + j1] += v * (1.0 - wi) * wj;
                dst[i1 * n + j0] += v * wi * (1.0 - wj);
                dst[i1 * n + j1] += v * wi * wj;
            }
        }
    }
    dx
}
