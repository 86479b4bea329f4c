//! Forward and backward kernels for the layer types used by the models.
//! All image tensors are `[batch, channels, height, width]`.

use super::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Row-major `c = op(a) · op(b) + beta · c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
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
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides describe
    // row-major (or transposed row-major) views that stay inside them.
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

pub fn conv_out_side(side: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (side + 2 * pad - kernel) / stride + 1
}

/// Output columns `oj` whose input column `oj·stride + kj − pad` lies in
/// `0..w`.
fn valid_cols(w: usize, wo: usize, kj: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if kj >= pad { 0 } else { (pad - kj).div_ceil(stride) };
    let hi = if w + pad > kj {
        ((w - 1 + pad - kj) / stride + 1).min(wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [f64],
) {
    let plane = ho * wo;
    for c in 0..channels {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(w, wo, kj, stride, pad);
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    let drow = &mut dst[oi * wo..(oi + 1) * wo];
                    if ii < 0 || ii >= h as isize || lo >= hi {
                        drow.fill(0.0);
                        continue;
                    }
                    drow[..lo].fill(0.0);
                    drow[hi..].fill(0.0);
                    let src = &xc[ii as usize * w..(ii as usize + 1) * w];
                    let start = lo * stride + kj - pad;
                    if stride == 1 {
                        drow[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (d, s) in drow[lo..hi].iter_mut().zip(src[start..].iter().step_by(stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dx: &mut [f64],
) {
    let plane = ho * wo;
    for c in 0..channels {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(w, wo, kj, stride, pad);
                if lo >= hi {
                    continue;
                }
                let start = lo * stride + kj - pad;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let drow = &mut dxc[ii as usize * w..(ii as usize + 1) * w];
                    let srow = &src[oi * wo + lo..oi * wo + hi];
                    if stride == 1 {
                        for (d, s) in drow[start..start + srow.len()].iter_mut().zip(srow) {
                            *d += *s;
                        }
                    } else {
                        for (d, s) in drow[start..].iter_mut().step_by(stride).zip(srow) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_forward_gemm(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, ci, h, wd) = x.dims4();
    let (co, wci, k, _) = w.dims4();
    assert_eq!(ci, wci, "conv2d channel mismatch");
    let ho = conv_out_side(h, k, stride, pad);
    let wo = conv_out_side(wd, k, stride, pad);
    let plane = ho * wo;
    let kk = ci * k * k;
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    let mut col = vec![0.0; kk * plane];
    for b in 0..n {
        let xb = &x.data()[b * ci * h * wd..(b + 1) * ci * h * wd];
        let ob = &mut out.data_mut()[b * co * plane..(b + 1) * co * plane];
        if k == 1 && stride == 1 && pad == 0 {
            gemm(co, kk, plane, w.data(), false, xb, false, 0.0, ob);
        } else {
            im2col(xb, ci, h, wd, k, stride, pad, ho, wo, &mut col);
            gemm(co, kk, plane, w.data(), false, &col, false, 0.0, ob);
        }
    }
    out
}

fn conv2d_backward_gemm(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor>, Tensor) {
    let (n, ci, h, wd) = x.dims4();
    let (co, _, k, _) = w.dims4();
    let (_, _, ho, wo) = dy.dims4();
    let plane = ho * wo;
    let kk = ci * k * k;
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut col = vec![0.0; kk * plane];
    let mut dcol = vec![0.0; kk * plane];
    let pointwise = k == 1 && stride == 1 && pad == 0;
    for b in 0..n {
        let xb = &x.data()[b * ci * h * wd..(b + 1) * ci * h * wd];
        let dyb = &dy.data()[b * co * plane..(b + 1) * co * plane];
        let colref: &[f64] = if pointwise {
            xb
        } else {
            im2col(xb, ci, h, wd, k, stride, pad, ho, wo, &mut col);
            &col
        };
        // dw[co, kk] += dy[co, plane] · col[kk, plane]^T
        gemm(co, plane, kk, dyb, false, colref, true, 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[b * ci * h * wd..(b + 1) * ci * h * wd];
            if pointwise {
                gemm(kk, co, plane, w.data(), true, dyb, false, 0.0, dxb);
            } else {
                gemm(kk, co, plane, w.data(), true, dyb, false, 0.0, &mut dcol);
                col2im(&dcol, ci, h, wd, k, stride, pad, ho, wo, dxb);
            }
        }
    }
    (dx, dw)
}

/// Planes of at least 32x32 use the direct 3x3 kernels, which avoid the
/// im2col buffer; smaller planes go through matrix multiplication.
const DIRECT_MIN_PLANE: usize = 32 * 32;

fn use_direct(plane: usize, k: usize, stride: usize, pad: usize) -> bool {
    k == 3 && stride == 1 && pad == 1 && plane >= DIRECT_MIN_PLANE
}

/// Square-kernel convolution without bias. `w` is `[out, in, k, k]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (_, _, h, wd) = x.dims4();
    let k = w.dims4().2;
    if use_direct(h * wd, k, stride, pad) {
        conv3x3_forward_direct(x, w)
    } else {
        conv2d_forward_gemm(x, w, stride, pad)
    }
}

/// Returns `(dx, dw)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor>, Tensor) {
    let (_, _, h, wd) = x.dims4();
    let k = w.dims4().2;
    if use_direct(h * wd, k, stride, pad) {
        conv3x3_backward_direct(x, w, dy, need_dx)
    } else {
        conv2d_backward_gemm(x, w, dy, stride, pad, need_dx)
    }
}

/// Copies `planes` planes of `h × wd` into zero-bordered `(h+2) × (wd+2)`
/// planes.
fn pad_planes(x: &[f64], planes: usize, h: usize, wd: usize) -> Vec<f64> {
    let pw = wd + 2;
    let pplane = (h + 2) * pw;
    let mut out = vec![0.0; planes * pplane];
    for p in 0..planes {
        for i in 0..h {
            let dst = p * pplane + (i + 1) * pw + 1;
            out[dst..dst + wd].copy_from_slice(&x[(p * h + i) * wd..(p * h + i + 1) * wd]);
        }
    }
    out
}

/// Whether the AVX2/FMA kernels can run on this CPU.
fn simd_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn conv3x3_forward_direct(x: &Tensor, w: &Tensor) -> Tensor {
    let (n, _, h, wd) = x.dims4();
    let (co, _, _, _) = w.dims4();
    let mut out = Tensor::zeros(&[n, co, h, wd]);
    same_conv3x3(x, w.data(), co, &mut out);
    out
}

/// `out[b, o] += Σ_c x[b, c] ⋆ wt[o, c]` with stride 1 and zero padding 1.
/// `wt` is `[co, ci, 3, 3]`.
fn same_conv3x3(x: &Tensor, wt: &[f64], co: usize, out: &mut Tensor) {
    let (n, ci, h, wd) = x.dims4();
    let plane = h * wd;
    let pplane = (h + 2) * (wd + 2);
    let simd = simd_available();
    for b in 0..n {
        let xp = pad_planes(&x.data()[b * ci * plane..(b + 1) * ci * plane], ci, h, wd);
        for o in 0..co {
            let ob = &mut out.data_mut()[(b * co + o) * plane..(b * co + o + 1) * plane];
            for c in 0..ci {
                let k: &[f64; 9] = wt[(o * ci + c) * 9..(o * ci + c + 1) * 9].try_into().expect("3x3 kernel");
                let xc = &xp[c * pplane..(c + 1) * pplane];
                if simd {
                    #[cfg(target_arch = "x86_64")]
                    // SAFETY: the required CPU features were detected at runtime.
                    unsafe {
                        plane_conv9_avx2(xc, k, ob, h, wd)
                    };
                } else {
                    plane_conv9(xc, k, ob, h, wd);
                }
            }
        }
    }
}

/// `o[i, j] += Σ k[ki, kj] · xp[i+ki, j+kj]` over a padded plane.
fn plane_conv9(xp: &[f64], k: &[f64; 9], o: &mut [f64], h: usize, wd: usize) {
    let pw = wd + 2;
    for i in 0..h {
        let orow = &mut o[i * wd..(i + 1) * wd];
        for ki in 0..3 {
            let r = &xp[(i + ki) * pw..(i + ki + 1) * pw];
            let (a, bb, c) = (&r[0..wd], &r[1..wd + 1], &r[2..wd + 2]);
            let (k0, k1, k2) = (k[ki * 3], k[ki * 3 + 1], k[ki * 3 + 2]);
            for (j, oj) in orow.iter_mut().enumerate() {
                *oj += k0 * a[j] + k1 * bb[j] + k2 * c[j];
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn plane_conv9_avx2(xp: &[f64], k: &[f64; 9], o: &mut [f64], h: usize, wd: usize) {
    use std::arch::x86_64::*;
    let pw = wd + 2;
    assert!(xp.len() >= (h + 2) * pw && o.len() >= h * wd);
    let kv: [__m256d; 9] = std::array::from_fn(|t| _mm256_set1_pd(k[t]));
    let full = wd / LANES * LANES;
    let wide = wd / (4 * LANES) * (4 * LANES);
    for i in 0..h {
        let op = o.as_mut_ptr().add(i * wd);
        let rows = [xp.as_ptr().add(i * pw), xp.as_ptr().add((i + 1) * pw), xp.as_ptr().add((i + 2) * pw)];
        let mut j = 0;
        // Four independent accumulators hide the multiply-add latency.
        while j < wide {
            let mut acc: [__m256d; 4] = std::array::from_fn(|u| _mm256_loadu_pd(op.add(j + u * LANES)));
            for (ki, r) in rows.iter().enumerate() {
                for kj in 0..3 {
                    let p = r.add(j + kj);
                    for (u, a) in acc.iter_mut().enumerate() {
                        *a = _mm256_fmadd_pd(kv[ki * 3 + kj], _mm256_loadu_pd(p.add(u * LANES)), *a);
                    }
                }
            }
            for (u, a) in acc.iter().enumerate() {
                _mm256_storeu_pd(op.add(j + u * LANES), *a);
            }
            j += 4 * LANES;
        }
        while j < full {
            let mut acc = _mm256_loadu_pd(op.add(j));
            for (ki, r) in rows.iter().enumerate() {
                let p = r.add(j);
                acc = _mm256_fmadd_pd(kv[ki * 3], _mm256_loadu_pd(p), acc);
                acc = _mm256_fmadd_pd(kv[ki * 3 + 1], _mm256_loadu_pd(p.add(1)), acc);
                acc = _mm256_fmadd_pd(kv[ki * 3 + 2], _mm256_loadu_pd(p.add(2)), acc);
            }
            _mm256_storeu_pd(op.add(j), acc);
            j += LANES;
        }
        for j in full..wd {
            let mut v = *op.add(j);
            for (ki, r) in rows.iter().enumerate() {
                for kj in 0..3 {
                    v += k[ki * 3 + kj] * *r.add(j + kj);
                }
            }
            *op.add(j) = v;
        }
    }
}

fn conv3x3_backward_direct(x: &Tensor, w: &Tensor, dy: &Tensor, need_dx: bool) -> (Option<Tensor>, Tensor) {
    let (n, ci, h, wd) = x.dims4();
    let (co, _, _, _) = w.dims4();
    let dx = need_dx.then(|| {
        // The input gradient is a same-padded convolution of dy with the
        // spatially flipped, channel-transposed kernel.
        let mut flipped = vec![0.0; w.len()];
        for o in 0..co {
            for c in 0..ci {
                for t in 0..9 {
                    flipped[(c * co + o) * 9 + 8 - t] = w.data()[(o * ci + c) * 9 + t];
                }
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        same_conv3x3(dy, &flipped, ci, &mut dx);
        dx
    });
    // dw[o, c, ki, kj] = Σ_{b,i,j} dy[b, o, i, j] · xp[b, c, i+ki, j+kj]
    let mut dw = Tensor::zeros(w.shape());
    let plane = h * wd;
    let pplane = (h + 2) * (wd + 2);
    let simd = simd_available();
    for b in 0..n {
        let xp = pad_planes(&x.data()[b * ci * plane..(b + 1) * ci * plane], ci, h, wd);
        for o in 0..co {
            let g = &dy.data()[(b * co + o) * plane..(b * co + o + 1) * plane];
            for c in 0..ci {
                let xc = &xp[c * pplane..(c + 1) * pplane];
                #[cfg(target_arch = "x86_64")]
                // SAFETY: the required CPU features were detected at runtime.
                let sums = if simd {
                    unsafe { plane_dot9_avx2(g, xc, h, wd) }
                } else {
                    plane_dot9(g, xc, h, wd)
                };
                #[cfg(not(target_arch = "x86_64"))]
                let sums = plane_dot9(g, xc, h, wd);
                let base = (o * ci + c) * 9;
                for (d, s) in dw.data_mut()[base..base + 9].iter_mut().zip(sums) {
                    *d += s;
                }
            }
        }
    }
    (dx, dw)
}

const LANES: usize = 4;

/// The nine shifted dot products `Σ g[i, j] · xp[i+ki, j+kj]`.
fn plane_dot9(g: &[f64], xp: &[f64], h: usize, wd: usize) -> [f64; 9] {
    let pw = wd + 2;
    let mut sums = [0.0; 9];
    for i in 0..h {
        let gr = &g[i * wd..(i + 1) * wd];
        for ki in 0..3 {
            let r = &xp[(i + ki) * pw..(i + ki + 1) * pw];
            for kj in 0..3 {
                sums[ki * 3 + kj] += gr.iter().zip(&r[kj..kj + wd]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    sums
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn plane_dot9_avx2(g: &[f64], xp: &[f64], h: usize, wd: usize) -> [f64; 9] {
    use std::arch::x86_64::*;
    let pw = wd + 2;
    assert!(xp.len() >= (h + 2) * pw && g.len() >= h * wd);
    let full = wd / LANES * LANES;
    let mut acc = [_mm256_setzero_pd(); 9];
    let mut tail = [0.0f64; 9];
    for i in 0..h {
        let gp = g.as_ptr().add(i * wd);
        let rows = [xp.as_ptr().add(i * pw), xp.as_ptr().add((i + 1) * pw), xp.as_ptr().add((i + 2) * pw)];
        let mut j = 0;
        while j < full {
            let gv = _mm256_loadu_pd(gp.add(j));
            for (ki, r) in rows.iter().enumerate() {
                let p = r.add(j);
                acc[ki * 3] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(p), acc[ki * 3]);
                acc[ki * 3 + 1] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(p.add(1)), acc[ki * 3 + 1]);
                acc[ki * 3 + 2] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(p.add(2)), acc[ki * 3 + 2]);
            }
            j += LANES;
        }
        for j in full..wd {
            let gj = *gp.add(j);
            for (ki, r) in rows.iter().enumerate() {
                for kj in 0..3 {
                    tail[ki * 3 + kj] += gj * *r.add(j + kj);
                }
            }
        }
    }
    let mut out = [0.0; 9];
    for t in 0..9 {
        let mut lanes = [0.0f64; LANES];
        _mm256_storeu_pd(lanes.as_mut_ptr(), acc[t]);
        out[t] = lanes.iter().sum::<f64>() + tail[t];
    }
    out
}

/// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
/// `w` is `[in, out, 2, 2]`, `bias` is `[out]`.
pub fn conv_transpose2_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Tensor {
    let (n, ci, h, wd) = x.dims4();
    let (wci, co, _, _) = w.dims4();
    assert_eq!(ci, wci, "conv-transpose channel mismatch");
    let plane = h * wd;
    let mut out = Tensor::zeros(&[n, co, 2 * h, 2 * wd]);
    let mut tmp = vec![0.0; co * 4 * plane];
    let ow = 2 * wd;
    for b in 0..n {
        let xb = &x.data()[b * ci * plane..(b + 1) * ci * plane];
        // tmp[(co,a,c), p] = sum_ci w[ci, (co,a,c)] x[ci, p]
        gemm(co * 4, ci, plane, w.data(), true, xb, false, 0.0, &mut tmp);
        let ob = &mut out.data_mut()[b * co * 4 * plane..(b + 1) * co * 4 * plane];
        for o in 0..co {
            let bo = bias.data()[o];
            for a in 0..2 {
                for c in 0..2 {
                    let row = &tmp[((o * 2 + a) * 2 + c) * plane..((o * 2 + a) * 2 + c + 1) * plane];
                    for i in 0..h {
                        for j in 0..wd {
                            ob[o * 4 * plane + (2 * i + a) * ow + 2 * j + c] = row[i * wd + j] + bo;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, dbias)`.
pub fn conv_transpose2_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (n, ci, h, wd) = x.dims4();
    let (_, co, _, _) = w.dims4();
    let plane = h * wd;
    let ow = 2 * wd;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut gathered = vec![0.0; co * 4 * plane];
    for b in 0..n {
        let dyb = &dy.data()[b * co * 4 * plane..(b + 1) * co * 4 * plane];
        for o in 0..co {
            for a in 0..2 {
                for c in 0..2 {
                    let r = (o * 2 + a) * 2 + c;
                    let row = &mut gathered[r * plane..(r + 1) * plane];
                    for i in 0..h {
                        for j in 0..wd {
                            let g = dyb[o * 4 * plane + (2 * i + a) * ow + 2 * j + c];
                            row[i * wd + j] = g;
                        }
                    }
                }
            }
            db.data_mut()[o] += dyb[o * 4 * plane..(o + 1) * 4 * plane].iter().sum::<f64>();
        }
        let xb = &x.data()[b * ci * plane..(b + 1) * ci * plane];
        // dw[ci, co*4] += x[ci, plane] · gathered[co*4, plane]^T
        gemm(ci, plane, co * 4, xb, false, &gathered, true, 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[b * ci * plane..(b + 1) * ci * plane];
            gemm(ci, co * 4, plane, w.data(), false, &gathered, false, 0.0, dxb);
        }
    }
    (dx, dw, db)
}

/// Per-sample, per-channel normalization with affine scale and offset.
/// Returns `(y, x_hat, inv_std)`.
pub fn instance_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let xs = &x.data()[off..off + plane];
            let mean = xs.iter().sum::<f64>() / plane as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let istd = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[b * c + ch] = istd;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            let ys = &mut y.data_mut()[off..off + plane];
            for i in 0..plane {
                let xh = (xs[i] - mean) * istd;
                xhat[off + i] = xh;
                ys[i] = g * xh + bt;
            }
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn instance_norm_backward(
    dy: &Tensor,
    gamma: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, w) = dy.dims4();
    let plane = h * w;
    let m = plane as f64;
    let mut dx = Tensor::zeros(dy.shape());
    let mut dg = Tensor::zeros(&[c]);
    let mut db = Tensor::zeros(&[c]);
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let dys = &dy.data()[off..off + plane];
            let xh = &xhat[off..off + plane];
            let g = gamma.data()[ch];
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for i in 0..plane {
                sum_dy += dys[i];
                sum_dy_xh += dys[i] * xh[i];
            }
            dg.data_mut()[ch] += sum_dy_xh;
            db.data_mut()[ch] += sum_dy;
            let k = g * inv_std[b * c + ch] / m;
            let dxs = &mut dx.data_mut()[off..off + plane];
            for i in 0..plane {
                dxs[i] = k * (m * dys[i] - sum_dy - xh[i] * sum_dy_xh);
            }
        }
    }
    (dx, dg, db)
}

pub fn leaky_relu_forward(x: &Tensor, slope: f64) -> Tensor {
    let mut y = x.clone();
    // Branch-free so the sign pattern of the data does not matter.
    y.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.max(0.0) + slope * v.min(0.0));
    y
}

/// Uses the forward output: positive outputs come from positive inputs.
pub fn leaky_relu_backward(y: &Tensor, dy: &Tensor, slope: f64) -> Tensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= if v > 0.0 { 1.0 } else { slope };
    }
    dx
}

/// 2x2 max pooling with stride 2. Returns the output and the flat argmax
/// index of each pooled element.
pub fn max_pool2_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0usize; n * c * ho * wo];
    let xd = x.data();
    for nc in 0..n * c {
        let base = nc * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                let o = (nc * ho + i) * wo + j;
                y.data_mut()[o] = xd[best];
                arg[o] = best;
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward(x_shape: &[usize], dy: &Tensor, arg: &[usize]) -> Tensor {
    let mut dx = Tensor::zeros(x_shape);
    for (g, &i) in dy.data().iter().zip(arg) {
        dx.data_mut()[i] += g;
    }
    dx
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, h, w) = a.dims4();
    let (nb, cb, hb, wb) = b.dims4();
    assert_eq!((n, h, w), (nb, hb, wb), "concat shape mismatch");
    let plane = h * w;
    let mut out = Vec::with_capacity(n * (ca + cb) * plane);
    for s in 0..n {
        out.extend_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], out).expect("concat length")
}

pub fn split_channels(dy: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let (n, c, h, w) = dy.dims4();
    let cb = c - ca;
    let plane = h * w;
    let mut da = Vec::with_capacity(n * ca * plane);
    let mut db = Vec::with_capacity(n * cb * plane);
    for s in 0..n {
        let base = s * c * plane;
        da.extend_from_slice(&dy.data()[base..base + ca * plane]);
        db.extend_from_slice(&dy.data()[base + ca * plane..base + c * plane]);
    }
    (
        Tensor::from_vec(&[n, ca, h, w], da).expect("split length"),
        Tensor::from_vec(&[n, cb, h, w], db).expect("split length"),
    )
}

/// Softmax across the channel axis at every pixel.
pub fn softmax_channels_forward(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let yd = y.data_mut();
    for s in 0..n {
        let base = s * c * plane;
        for p in 0..plane {
            let mut mx = f64::NEG_INFINITY;
            for k in 0..c {
                mx = mx.max(xd[base + k * plane + p]);
            }
            let mut z = 0.0;
            for k in 0..c {
                let e = (xd[base + k * plane + p] - mx).exp();
                yd[base + k * plane + p] = e;
                z += e;
            }
            for k in 0..c {
                yd[base + k * plane + p] /= z;
            }
        }
    }
    y
}

pub fn softmax_channels_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let (n, c, h, w) = y.dims4();
    let plane = h * w;
    let mut dx = Tensor::zeros(y.shape());
    let (yd, gd) = (y.data(), dy.data());
    let dxd = dx.data_mut();
    for s in 0..n {
        let base = s * c * plane;
        for p in 0..plane {
            let mut dot = 0.0;
            for k in 0..c {
                dot += yd[base + k * plane + p] * gd[base + k * plane + p];
            }
            for k in 0..c {
                let i = base + k * plane + p;
                dxd[i] = yd[i] * (gd[i] - dot);
            }
        }
    }
    dx
}

pub fn global_avg_pool_forward(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let data = x
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::from_vec(&[n, c], data).expect("pool length")
}

pub fn global_avg_pool_backward(x_shape: &[usize], dy: &Tensor) -> Tensor {
    let plane = x_shape[2] * x_shape[3];
    let mut dx = Vec::with_capacity(x_shape.iter().product());
    for &g in dy.data() {
        let v = g / plane as f64;
        dx.extend(std::iter::repeat(v).take(plane));
    }
    Tensor::from_vec(x_shape, dx).expect("pool length")
}

/// `y = x · w^T + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, fin) = x.dims2();
    let (fout, win) = w.dims2();
    assert_eq!(fin, win, "linear feature mismatch");
    let mut y = Tensor::zeros(&[n, fout]);
    for s in 0..n {
        y.data_mut()[s * fout..(s + 1) * fout].copy_from_slice(b.data());
    }
    gemm(n, fin, fout, x.data(), false, w.data(), true, 1.0, y.data_mut());
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, fin) = x.dims2();
    let (fout, _) = w.dims2();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[fout]);
    gemm(n, fout, fin, dy.data(), false, w.data(), false, 0.0, dx.data_mut());
    gemm(fout, n, fin, dy.data(), true, x.data(), false, 0.0, dw.data_mut());
    for s in 0..n {
        for (d, g) in db.data_mut().iter_mut().zip(&dy.data()[s * fout..(s + 1) * fout]) {
            *d += g;
        }
    }
    (dx, dw, db)
}
