//! Pure computational kernels shared by the tape's forward and backward
//! passes. Convolution is cross-correlation (no kernel flip), zero padding
//! only, output size floor((H + 2p - K)/s) + 1.

use super::{Elem, Tensor};
use crate::{Error, Result};

/// Output extent of a windowed op; geometry error when the window never fits.
pub fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::Geometry("kernel and stride must be positive".into()));
    }
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::Geometry(format!(
            "window {k} does not fit input {input} with padding {pad}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// C = A(m×k) · B(k×n), all row-major.
pub fn matmul_nn<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// C = A(m×k) · B(n×k)ᵀ.
pub fn matmul_nt<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = E::ZERO;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// C = A(k×m)ᵀ · B(k×n).
pub fn matmul_tn<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

pub fn conv_geom(
    x_shape: &[usize],
    w_shape: &[usize],
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<ConvGeom> {
    if x_shape.len() != 4 || w_shape.len() != 4 {
        return Err(Error::Dim(format!(
            "conv2d wants 4-d input and weight, got {x_shape:?} / {w_shape:?}"
        )));
    }
    let (n, cin, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (cout, cpg, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    if kh != kw {
        return Err(Error::Dim("only square kernels are supported".into()));
    }
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(Error::Dim(format!(
            "channels ({cin} in, {cout} out) not divisible by groups {groups}"
        )));
    }
    if cpg != cin / groups {
        return Err(Error::Dim(format!(
            "weight expects {cpg} channels/group, input supplies {}",
            cin / groups
        )));
    }
    let ho = out_extent(h, kh, stride, pad)?;
    let wo = out_extent(w, kw, stride, pad)?;
    Ok(ConvGeom { n, cin, h, w, cout, k: kh, stride, pad, groups, ho, wo })
}

/// Unfold one group of one sample into a (Cpg·K·K) × (Ho·Wo) matrix.
fn im2col<E: Elem>(
    x: &[E],
    cpg: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [E],
) {
    let l = ho * wo;
    for c in 0..cpg {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[(c * k * k + ki * k + kj) * l..][..l];
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        for v in &mut row[oi * wo..(oi + 1) * wo] {
                            *v = E::ZERO;
                        }
                        continue;
                    }
                    let xr = &xc[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        row[oi * wo + oj] = if jj < 0 || jj >= w as isize {
                            E::ZERO
                        } else {
                            xr[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column matrix back, accumulating into the input-shaped buffer.
fn col2im<E: Elem>(
    col: &[E],
    cpg: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [E],
) {
    let l = ho * wo;
    for c in 0..cpg {
        let xc = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[(c * k * k + ki * k + kj) * l..][..l];
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        xc[ii as usize * w + jj as usize] += row[oi * wo + oj];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: Option<&Tensor<E>>,
    g: &ConvGeom,
) -> Tensor<E> {
    let (cpg, cog) = (g.cin / g.groups, g.cout / g.groups);
    let l = g.ho * g.wo;
    let mut out = vec![E::ZERO; g.n * g.cout * l];
    let mut col = vec![E::ZERO; cpg * g.k * g.k * l];
    for ni in 0..g.n {
        for gi in 0..g.groups {
            let xg = &x.data()[(ni * g.cin + gi * cpg) * g.h * g.w..][..cpg * g.h * g.w];
            im2col(xg, cpg, g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo, &mut col);
            let wg = &w.data()[gi * cog * cpg * g.k * g.k..][..cog * cpg * g.k * g.k];
            let y = matmul_nn(wg, &col, cog, cpg * g.k * g.k, l);
            out[(ni * g.cout + gi * cog) * l..][..cog * l].copy_from_slice(&y);
        }
    }
    if let Some(b) = b {
        for ni in 0..g.n {
            for co in 0..g.cout {
                let bv = b.data()[co];
                for v in &mut out[(ni * g.cout + co) * l..][..l] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out).unwrap()
}

pub struct ConvGrads<E: Elem> {
    pub dx: Tensor<E>,
    pub dw: Tensor<E>,
    pub db: Option<Tensor<E>>,
}

pub fn conv2d_backward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    has_bias: bool,
    g: &ConvGeom,
    dy: &Tensor<E>,
) -> ConvGrads<E> {
    let (cpg, cog) = (g.cin / g.groups, g.cout / g.groups);
    let kk = g.k * g.k;
    let l = g.ho * g.wo;
    let mut dx = vec![E::ZERO; g.n * g.cin * g.h * g.w];
    let mut dw = vec![E::ZERO; g.cout * cpg * kk];
    let mut col = vec![E::ZERO; cpg * kk * l];
    for ni in 0..g.n {
        for gi in 0..g.groups {
            let xg = &x.data()[(ni * g.cin + gi * cpg) * g.h * g.w..][..cpg * g.h * g.w];
            im2col(xg, cpg, g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo, &mut col);
            let dyg = &dy.data()[(ni * g.cout + gi * cog) * l..][..cog * l];
            // dW_g += dY_g (cog×l) · colᵀ (l×cpg·kk)
            let dwg = matmul_nt(dyg, &col, cog, l, cpg * kk);
            for (acc, v) in dw[gi * cog * cpg * kk..][..cog * cpg * kk].iter_mut().zip(dwg) {
                *acc += v;
            }
            // dcol = W_gᵀ (cpg·kk×cog) · dY_g (cog×l)
            let wg = &w.data()[gi * cog * cpg * kk..][..cog * cpg * kk];
            let dcol = matmul_tn(wg, dyg, cpg * kk, cog, l);
            let dxg = &mut dx[(ni * g.cin + gi * cpg) * g.h * g.w..][..cpg * g.h * g.w];
            col2im(&dcol, cpg, g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo, dxg);
        }
    }
    let db = has_bias.then(|| {
        let mut db = vec![E::ZERO; g.cout];
        for ni in 0..g.n {
            for co in 0..g.cout {
                let mut acc = E::ZERO;
                for &v in &dy.data()[(ni * g.cout + co) * l..][..l] {
                    acc += v;
                }
                db[co] += acc;
            }
        }
        Tensor::new(vec![g.cout], db).unwrap()
    });
    ConvGrads {
        dx: Tensor::new(x.shape().to_vec(), dx).unwrap(),
        dw: Tensor::new(w.shape().to_vec(), dw).unwrap(),
        db,
    }
}

/// y = x·Wᵀ + b, x: [N,F], w: [O,F].
pub fn linear_forward<E: Elem>(x: &Tensor<E>, w: &Tensor<E>, b: Option<&Tensor<E>>) -> Tensor<E> {
    let (n, f) = (x.dim(0), x.dim(1));
    let o = w.dim(0);
    let mut out = matmul_nt(x.data(), w.data(), n, f, o);
    if let Some(b) = b {
        for i in 0..n {
            for j in 0..o {
                out[i * o + j] += b.data()[j];
            }
        }
    }
    Tensor::new(vec![n, o], out).unwrap()
}

pub fn linear_backward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    has_bias: bool,
    dy: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Option<Tensor<E>>) {
    let (n, f) = (x.dim(0), x.dim(1));
    let o = w.dim(0);
    let dx = matmul_nn(dy.data(), w.data(), n, o, f);
    let dw = matmul_tn(dy.data(), x.data(), o, n, f);
    let db = has_bias.then(|| {
        let mut db = vec![E::ZERO; o];
        for i in 0..n {
            for j in 0..o {
                db[j] += dy.data()[i * o + j];
            }
        }
        Tensor::new(vec![o], db).unwrap()
    });
    (
        Tensor::new(vec![n, f], dx).unwrap(),
        Tensor::new(vec![o, f], dw).unwrap(),
        db,
    )
}

pub struct BnCache<E: Elem> {
    pub mean: Vec<E>,
    pub invstd: Vec<E>,
    pub training: bool,
}

/// Train-mode batchnorm over [N,C,H,W]; returns output, the backward cache and
/// the batch statistics (mean, biased var) for the running-stat update.
pub fn batchnorm_train_forward<E: Elem>(
    x: &Tensor<E>,
    gamma: &[E],
    beta: &[E],
    eps: f64,
) -> Result<(Tensor<E>, BnCache<E>, Vec<E>, Vec<E>)> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let count = n * h * w;
    if count < 2 {
        return Err(Error::Stats(
            "batchnorm train mode needs at least 2 values per channel".into(),
        ));
    }
    let inv_count = E::from_f64(1.0 / count as f64);
    let mut mean = vec![E::ZERO; c];
    let mut var = vec![E::ZERO; c];
    for ci in 0..c {
        let mut acc = E::ZERO;
        for ni in 0..n {
            for &v in &x.data()[(ni * c + ci) * h * w..][..h * w] {
                acc += v;
            }
        }
        mean[ci] = acc * inv_count;
        let mut vacc = E::ZERO;
        for ni in 0..n {
            for &v in &x.data()[(ni * c + ci) * h * w..][..h * w] {
                let d = v - mean[ci];
                vacc += d * d;
            }
        }
        var[ci] = vacc * inv_count;
    }
    let invstd: Vec<E> =
        var.iter().map(|&v| E::ONE / (v + E::from_f64(eps)).sqrt()).collect();
    let mut out = vec![E::ZERO; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let (m, is, g, b) = (mean[ci], invstd[ci], gamma[ci], beta[ci]);
            let src = &x.data()[(ni * c + ci) * h * w..][..h * w];
            let dst = &mut out[(ni * c + ci) * h * w..][..h * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - m) * is * g + b;
            }
        }
    }
    let cache = BnCache { mean: mean.clone(), invstd, training: true };
    Ok((Tensor::new(x.shape().to_vec(), out).unwrap(), cache, mean, var))
}

pub fn batchnorm_eval_forward<E: Elem>(
    x: &Tensor<E>,
    gamma: &[E],
    beta: &[E],
    running_mean: &[E],
    running_var: &[E],
    eps: f64,
) -> (Tensor<E>, BnCache<E>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let invstd: Vec<E> = running_var
        .iter()
        .map(|&v| E::ONE / (v + E::from_f64(eps)).sqrt())
        .collect();
    let mut out = vec![E::ZERO; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let (m, is, g, b) = (running_mean[ci], invstd[ci], gamma[ci], beta[ci]);
            let src = &x.data()[(ni * c + ci) * h * w..][..h * w];
            let dst = &mut out[(ni * c + ci) * h * w..][..h * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - m) * is * g + b;
            }
        }
    }
    let cache = BnCache { mean: running_mean.to_vec(), invstd, training: false };
    (Tensor::new(x.shape().to_vec(), out).unwrap(), cache)
}

/// Returns (dx, dgamma, dbeta).
pub fn batchnorm_backward<E: Elem>(
    x: &Tensor<E>,
    gamma: &[E],
    cache: &BnCache<E>,
    dy: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let count = n * h * w;
    let mut dgamma = vec![E::ZERO; c];
    let mut dbeta = vec![E::ZERO; c];
    let mut sum_dy = vec![E::ZERO; c];
    let mut sum_dy_xhat = vec![E::ZERO; c];
    for ni in 0..n {
        for ci in 0..c {
            let (m, is) = (cache.mean[ci], cache.invstd[ci]);
            let xs = &x.data()[(ni * c + ci) * h * w..][..h * w];
            let dys = &dy.data()[(ni * c + ci) * h * w..][..h * w];
            for (&xv, &dv) in xs.iter().zip(dys) {
                let xhat = (xv - m) * is;
                sum_dy[ci] += dv;
                sum_dy_xhat[ci] += dv * xhat;
            }
        }
    }
    for ci in 0..c {
        dgamma[ci] = sum_dy_xhat[ci];
        dbeta[ci] = sum_dy[ci];
    }
    let mut dx = vec![E::ZERO; x.len()];
    let inv_count = E::from_f64(1.0 / count as f64);
    for ni in 0..n {
        for ci in 0..c {
            let (m, is, g) = (cache.mean[ci], cache.invstd[ci], gamma[ci]);
            let xs = &x.data()[(ni * c + ci) * h * w..][..h * w];
            let dys = &dy.data()[(ni * c + ci) * h * w..][..h * w];
            let dst = &mut dx[(ni * c + ci) * h * w..][..h * w];
            if cache.training {
                let k = g * is * inv_count;
                let cnt = E::from_f64(count as f64);
                for ((d, &xv), &dv) in dst.iter_mut().zip(xs).zip(dys) {
                    let xhat = (xv - m) * is;
                    *d = k * (cnt * dv - sum_dy[ci] - xhat * sum_dy_xhat[ci]);
                }
            } else {
                // Eval mode treats the statistics as constants.
                let k = g * is;
                for (d, &dv) in dst.iter_mut().zip(dys) {
                    *d = k * dv;
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
        Tensor::new(vec![c], dgamma).unwrap(),
        Tensor::new(vec![c], dbeta).unwrap(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActKind {
    Relu,
    Relu6,
    Sigmoid,
    HardSigmoid,
    HardSwish,
}

pub fn act_forward<E: Elem>(kind: ActKind, x: E) -> E {
    let six = E::from_f64(6.0);
    let three = E::from_f64(3.0);
    match kind {
        ActKind::Relu => x.maxv(E::ZERO),
        ActKind::Relu6 => x.maxv(E::ZERO).minv(six),
        ActKind::Sigmoid => E::ONE / (E::ONE + (-x).exp()),
        ActKind::HardSigmoid => (x + three).maxv(E::ZERO).minv(six) / six,
        ActKind::HardSwish => x * ((x + three).maxv(E::ZERO).minv(six) / six),
    }
}

/// Derivative dy/dx expressed from the input value.
pub fn act_backward<E: Elem>(kind: ActKind, x: E) -> E {
    let f64v = x.to_f64();
    let d = match kind {
        ActKind::Relu => {
            if f64v > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActKind::Relu6 => {
            if f64v > 0.0 && f64v < 6.0 {
                1.0
            } else {
                0.0
            }
        }
        ActKind::Sigmoid => {
            let s = 1.0 / (1.0 + (-f64v).exp());
            s * (1.0 - s)
        }
        ActKind::HardSigmoid => {
            if f64v > -3.0 && f64v < 3.0 {
                1.0 / 6.0
            } else {
                0.0
            }
        }
        ActKind::HardSwish => {
            if f64v <= -3.0 {
                0.0
            } else if f64v >= 3.0 {
                1.0
            } else {
                (2.0 * f64v + 3.0) / 6.0
            }
        }
    };
    E::from_f64(d)
}

pub struct PoolOut<E: Elem> {
    pub y: Tensor<E>,
    /// For max pooling: per output element, the linear index of the chosen
    /// input element (first maximum in scan order).
    pub argmax: Option<Vec<usize>>,
}

pub fn maxpool_forward<E: Elem>(
    x: &Tensor<E>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<PoolOut<E>> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let ho = out_extent(h, k, stride, pad)?;
    let wo = out_extent(w, k, stride, pad)?;
    let mut y = vec![E::ZERO; n * c * ho * wo];
    let mut argmax = vec![0usize; n * c * ho * wo];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let xc = &x.data()[base..base + h * w];
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best: Option<(E, usize)> = None;
                    for ki in 0..k {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let idx = ii as usize * w + jj as usize;
                            let v = xc[idx];
                            if best.map_or(true, |(bv, _)| v > bv) {
                                best = Some((v, idx));
                            }
                        }
                    }
                    let (bv, bidx) = best.ok_or_else(|| {
                        Error::Geometry("max pool window fully outside input".into())
                    })?;
                    let o = ((ni * c + ci) * ho + oi) * wo + oj;
                    y[o] = bv;
                    argmax[o] = base + bidx;
                }
            }
        }
    }
    Ok(PoolOut {
        y: Tensor::new(vec![n, c, ho, wo], y).unwrap(),
        argmax: Some(argmax),
    })
}

pub fn maxpool_backward<E: Elem>(
    x_len: usize,
    x_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<E>,
) -> Tensor<E> {
    let mut dx = vec![E::ZERO; x_len];
    for (o, &src) in argmax.iter().enumerate() {
        dx[src] += dy.data()[o];
    }
    Tensor::new(x_shape.to_vec(), dx).unwrap()
}

/// Average pooling; the divisor counts only in-bounds cells, so a constant
/// input stays constant under any padding.
pub fn avgpool_forward<E: Elem>(
    x: &Tensor<E>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let ho = out_extent(h, k, stride, pad)?;
    let wo = out_extent(w, k, stride, pad)?;
    let mut y = vec![E::ZERO; n * c * ho * wo];
    for ni in 0..n {
        for ci in 0..c {
            let xc = &x.data()[(ni * c + ci) * h * w..][..h * w];
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = E::ZERO;
                    let mut cnt = 0usize;
                    for ki in 0..k {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            acc += xc[ii as usize * w + jj as usize];
                            cnt += 1;
                        }
                    }
                    y[((ni * c + ci) * ho + oi) * wo + oj] =
                        acc * E::from_f64(1.0 / cnt as f64);
                }
            }
        }
    }
    Ok(Tensor::new(vec![n, c, ho, wo], y).unwrap())
}

pub fn avgpool_backward<E: Elem>(
    x_shape: &[usize],
    k: usize,
    stride: usize,
    pad: usize,
    dy: &Tensor<E>,
) -> Tensor<E> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (ho, wo) = (dy.dim(2), dy.dim(3));
    let mut dx = vec![E::ZERO; n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            let dxc = &mut dx[(ni * c + ci) * h * w..][..h * w];
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut cnt = 0usize;
                    for ki in 0..k {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj >= 0 && jj < w as isize {
                                cnt += 1;
                            }
                        }
                    }
                    let share = dy.data()[((ni * c + ci) * ho + oi) * wo + oj]
                        * E::from_f64(1.0 / cnt as f64);
                    for ki in 0..k {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            dxc[ii as usize * w + jj as usize] += share;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x_shape.to_vec(), dx).unwrap()
}

/// Global average pool [N,C,H,W] -> [N,C,1,1].
pub fn global_avgpool_forward<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let inv = E::from_f64(1.0 / (h * w) as f64);
    let mut y = vec![E::ZERO; n * c];
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = E::ZERO;
            for &v in &x.data()[(ni * c + ci) * h * w..][..h * w] {
                acc += v;
            }
            y[ni * c + ci] = acc * inv;
        }
    }
    Tensor::new(vec![n, c, 1, 1], y).unwrap()
}

pub fn global_avgpool_backward<E: Elem>(x_shape: &[usize], dy: &Tensor<E>) -> Tensor<E> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let inv = E::from_f64(1.0 / (h * w) as f64);
    let mut dx = vec![E::ZERO; n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            let share = dy.data()[ni * c + ci] * inv;
            for v in &mut dx[(ni * c + ci) * h * w..][..h * w] {
                *v = share;
            }
        }
    }
    Tensor::new(x_shape.to_vec(), dx).unwrap()
}

/// Output channel j takes input channel (j mod groups)·(C/groups) + (j div groups).
pub fn shuffle_source(c: usize, groups: usize, j: usize) -> usize {
    (j % groups) * (c / groups) + j / groups
}

pub fn channel_shuffle_forward<E: Elem>(x: &Tensor<E>, groups: usize) -> Result<Tensor<E>> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if groups == 0 || c % groups != 0 {
        return Err(Error::Dim(format!("{c} channels not divisible by {groups} groups")));
    }
    let hw = h * w;
    let mut y = vec![E::ZERO; x.len()];
    for ni in 0..n {
        for j in 0..c {
            let src = shuffle_source(c, groups, j);
            y[(ni * c + j) * hw..][..hw]
                .copy_from_slice(&x.data()[(ni * c + src) * hw..][..hw]);
        }
    }
    Tensor::new(x.shape().to_vec(), y)
}

pub fn channel_shuffle_backward<E: Elem>(dy: &Tensor<E>, groups: usize) -> Tensor<E> {
    let (n, c, h, w) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
    let hw = h * w;
    let mut dx = vec![E::ZERO; dy.len()];
    for ni in 0..n {
        for j in 0..c {
            let src = shuffle_source(c, groups, j);
            dx[(ni * c + src) * hw..][..hw]
                .copy_from_slice(&dy.data()[(ni * c + j) * hw..][..hw]);
        }
    }
    Tensor::new(dy.shape().to_vec(), dx).unwrap()
}

/// Mean negative log softmax; returns (loss, probabilities [N,C]).
pub fn softmax_ce_forward<E: Elem>(
    logits: &Tensor<E>,
    labels: &[usize],
) -> Result<(E, Tensor<E>)> {
    let (n, c) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::Dim(format!("{n} logit rows vs {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Dim(format!("label {bad} out of range for {c} classes")));
    }
    let mut probs = vec![E::ZERO; n * c];
    let mut loss = E::ZERO;
    for i in 0..n {
        let row = &logits.data()[i * c..(i + 1) * c];
        let mut m = row[0];
        for &v in row {
            m = m.maxv(v);
        }
        let mut z = E::ZERO;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            probs[i * c + j] = e;
            z += e;
        }
        let invz = E::ONE / z;
        for p in &mut probs[i * c..(i + 1) * c] {
            *p *= invz;
        }
        loss += -(probs[i * c + labels[i]].ln());
    }
    if n > 0 {
        loss = loss * E::from_f64(1.0 / n as f64);
    }
    Ok((loss, Tensor::new(vec![n, c], probs)?))
}

/// dlogits = (probs − onehot(labels)) / N.
pub fn softmax_ce_backward<E: Elem>(
    probs: &Tensor<E>,
    labels: &[usize],
    dloss: E,
) -> Tensor<E> {
    let (n, c) = (probs.dim(0), probs.dim(1));
    let invn = E::from_f64(1.0 / n.max(1) as f64);
    let mut d = vec![E::ZERO; n * c];
    for i in 0..n {
        for j in 0..c {
            let onehot = if labels[i] == j { E::ONE } else { E::ZERO };
            d[i * c + j] = (probs.data()[i * c + j] - onehot) * invn * dloss;
        }
    }
    Tensor::new(vec![n, c], d).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_flavors_agree_with_naive() {
        let a = vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = vec![7.0f32, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let nn = matmul_nn(&a, &b, 2, 3, 2);
        assert_eq!(nn, vec![58.0, 64.0, 139.0, 154.0]);
        // A(2x3) · B(2x3)ᵀ where B rows are [7,8,9],[10,11,12]
        let nt = matmul_nt(&a, &b, 2, 3, 2);
        assert_eq!(nt, vec![50.0, 68.0, 122.0, 167.0]);
        // A(2x3)ᵀ(3x2) · B(2x2) with b4 = [[7,8],[9,10]]
        let tn = matmul_tn(&a, &b[..4], 3, 2, 2);
        assert_eq!(tn, vec![43.0, 48.0, 59.0, 66.0, 75.0, 84.0]);
    }

    #[test]
    fn conv_ones_sums_window() {
        let x = t(&[1, 1, 3, 3], &[1.0; 9]);
        let w = t(&[1, 1, 2, 2], &[1.0; 4]);
        let g = conv_geom(x.shape(), w.shape(), 1, 0, 1).unwrap();
        let y = conv2d_forward(&x, &w, None, &g);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let g = conv_geom(x.shape(), w.shape(), 1, 0, 1).unwrap();
        let y = conv2d_forward(&x, &w, None, &g);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_depthwise_scales_channels() {
        let x = t(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let w = t(&[2, 1, 1, 1], &[2.0, 0.5]);
        let g = conv_geom(x.shape(), w.shape(), 1, 0, 2).unwrap();
        let y = conv2d_forward(&x, &w, None, &g);
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0, 2.5, 3.0, 3.5, 4.0]);
    }

    #[test]
    fn conv_floor_geometry() {
        // 4 + 2·1 − 3 = 3, /2 floors to 1, +1 → 2
        assert_eq!(out_extent(4, 3, 2, 1).unwrap(), 2);
        assert!(out_extent(2, 5, 1, 0).is_err());
    }

    #[test]
    fn conv_grouped_equals_per_group_stack() {
        // groups=1 conv equals sum over input channels of depthwise slices
        let mut r = crate::rng::CounterRng::new(42, &["convcheck"]);
        let x = Tensor::from_fn(&[1, 3, 4, 4], |_| r.uniform(-1.0, 1.0) as f32);
        let w = Tensor::from_fn(&[2, 3, 3, 3], |_| r.uniform(-1.0, 1.0) as f32);
        let g = conv_geom(x.shape(), w.shape(), 1, 1, 1).unwrap();
        let y = conv2d_forward(&x, &w, None, &g);
        let mut acc = vec![0.0f32; y.len()];
        for ci in 0..3 {
            let xs = Tensor::new(
                vec![1, 1, 4, 4],
                x.data()[ci * 16..(ci + 1) * 16].to_vec(),
            )
            .unwrap();
            for co in 0..2 {
                let ws = Tensor::new(
                    vec![1, 1, 3, 3],
                    w.data()[(co * 3 + ci) * 9..(co * 3 + ci + 1) * 9].to_vec(),
                )
                .unwrap();
                let gg = conv_geom(xs.shape(), ws.shape(), 1, 1, 1).unwrap();
                let ys = conv2d_forward(&xs, &ws, None, &gg);
                for (i, &v) in ys.data().iter().enumerate() {
                    acc[co * 16 + i] += v;
                }
            }
        }
        for (a, b) in acc.iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_examples() {
        let y = linear_forward(
            &t(&[1, 2], &[1.0, 2.0]),
            &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            Some(&t(&[2], &[0.0, 0.0])),
        );
        assert_eq!(y.data(), &[1.0, 2.0]);
        let y = linear_forward(
            &t(&[1, 2], &[1.0, 1.0]),
            &t(&[1, 2], &[2.0, 3.0]),
            Some(&t(&[1], &[1.0])),
        );
        assert_eq!(y.data(), &[6.0]);
        let y = linear_forward(
            &t(&[2, 3], &[9.0; 6]),
            &t(&[2, 3], &[0.0; 6]),
            Some(&t(&[2], &[4.0, 5.0])),
        );
        assert_eq!(y.data(), &[4.0, 5.0, 4.0, 5.0]);
    }

    #[test]
    fn batchnorm_symmetric_input_is_identity() {
        let x = t(&[2, 1, 1, 1], &[-1.0, 1.0]);
        let (y, ..) = batchnorm_train_forward(&x, &[1.0], &[0.0], 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-4);
        assert!((y.data()[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn batchnorm_standardizes() {
        // values {0, 2}: mean 1, var 1 → {-1, +1}
        let x = t(&[2, 1, 1, 1], &[0.0, 2.0]);
        let (y, ..) = batchnorm_train_forward(&x, &[1.0], &[0.0], 0.0).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-6);
        assert!((y.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn batchnorm_eval_identity_stats() {
        let x = t(&[1, 1, 2, 2], &[0.5, -0.5, 2.0, 3.0]);
        let (y, _) = batchnorm_eval_forward(&x, &[1.0], &[0.0], &[0.0], &[1.0], 0.0);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_single_element_errors() {
        let x = t(&[1, 1, 1, 1], &[1.0]);
        assert!(batchnorm_train_forward(&x, &[1.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn activation_boundaries() {
        assert_eq!(act_forward(ActKind::HardSwish, 0.0f32), 0.0);
        assert_eq!(act_forward(ActKind::HardSwish, -3.0f32), 0.0);
        assert_eq!(act_forward(ActKind::HardSwish, 3.0f32), 3.0);
        assert_eq!(act_forward(ActKind::Relu6, 7.0f32), 6.0);
        assert_eq!(act_forward(ActKind::Relu6, -1.0f32), 0.0);
        assert!((act_forward(ActKind::HardSigmoid, 0.0f32) - 0.5).abs() < 1e-7);
        assert!((act_forward(ActKind::Sigmoid, 0.0f32) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn pools_match_hand_values() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let p = maxpool_forward(&x, 2, 2, 0).unwrap();
        assert_eq!(p.y.data(), &[4.0]);
        let g = global_avgpool_forward(&x);
        assert_eq!(g.shape(), &[1, 1, 1, 1]);
        assert!((g.data()[0] - 2.5).abs() < 1e-6);
        let c = Tensor::full(&[1, 1, 4, 4], 3.25f32);
        let a = avgpool_forward(&c, 2, 2, 0).unwrap();
        assert!(a.data().iter().all(|&v| (v - 3.25).abs() < 1e-6));
    }

    #[test]
    fn shuffle_order_and_inverse() {
        let x = Tensor::from_fn(&[1, 6, 1, 1], |i| i as f32);
        let y = channel_shuffle_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(channel_shuffle_forward(&x, 1).unwrap().data(), x.data());
        assert_eq!(channel_shuffle_forward(&x, 6).unwrap().data(), x.data());
        // shuffle(g) then shuffle(C/g) is the identity
        let z = channel_shuffle_forward(&y, 3).unwrap();
        assert_eq!(z.data(), x.data());
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let logits = Tensor::full(&[1, 4], 0.7f32);
        let (loss, probs) = softmax_ce_forward(&logits, &[2]).unwrap();
        assert!((loss - (4.0f32).ln()).abs() < 1e-5);
        for &p in probs.data() {
            assert!((p - 0.25).abs() < 1e-6);
        }
        let s: f32 = probs.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_ce_confident_correct() {
        let logits = t(&[1, 3], &[40.0, 0.0, 0.0]);
        let (loss, _) = softmax_ce_forward(&logits, &[0]).unwrap();
        assert!(loss < 1e-6 && loss >= 0.0);
    }

    #[test]
    fn softmax_ce_mean_over_rows() {
        let a = t(&[1, 3], &[1.0, 2.0, 0.5]);
        let b = t(&[1, 3], &[0.2, -1.0, 0.8]);
        let (la, _) = softmax_ce_forward(&a, &[1]).unwrap();
        let (lb, _) = softmax_ce_forward(&b, &[2]).unwrap();
        let both = t(&[2, 3], &[1.0, 2.0, 0.5, 0.2, -1.0, 0.8]);
        let (l, _) = softmax_ce_forward(&both, &[1, 2]).unwrap();
        assert!((l - (la + lb) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_ce_label_out_of_range() {
        let logits = Tensor::<f32>::zeros(&[1, 3]);
        assert!(softmax_ce_forward(&logits, &[3]).is_err());
    }
}
