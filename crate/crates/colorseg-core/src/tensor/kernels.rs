//! Raw compute kernels shared by forward ops and their adjoints.
//!
//! Every kernel accumulates (`+=`) into its destination so gradient buffers
//! can be reused across multiple consumers of a node. Accumulation order for
//! any single output element is fixed: input channel, then kernel row, then
//! kernel column; reductions over spatial positions run row-major. The
//! stride-1 paths work on contiguous row slices so the compiler can
//! vectorize the independent-element loops without reordering any reduction.

/// Geometry of one convolution: `[ci,h,w] ⊛ [co,ci,kh,kw] -> [co,oh,ow]`.
/// `oh`/`ow` are validated by the tape before kernels run.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

/// out[co,oy,ox] += sum over (ci,ky,kx) of x[ci, oy*s+ky-p, ox*s+kx-p] * k.
pub(crate) fn conv_forward(x: &[f64], k: &[f64], out: &mut [f64], g: &ConvGeom) {
    for co in 0..g.co {
        for ci in 0..g.ci {
            let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wgt = k[((co * g.ci + ci) * g.kh + ky) * g.kw + kx];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let xrow = &xc[iy as usize * g.w..iy as usize * g.w + g.w];
                        let orow = &mut out[(co * g.oh + oy) * g.ow..(co * g.oh + oy + 1) * g.ow];
                        if g.stride == 1 {
                            // ox + kx - p must lie in [0, w)
                            let lo = g.padding.saturating_sub(kx);
                            let hi = g.ow.min((g.w + g.padding).saturating_sub(kx));
                            if lo >= hi {
                                continue;
                            }
                            let xoff = lo + kx - g.padding;
                            let n = hi - lo;
                            for (o, xv) in orow[lo..lo + n].iter_mut().zip(&xrow[xoff..xoff + n]) {
                                *o += wgt * xv;
                            }
                        } else {
                            for ox in 0..g.ow {
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    orow[ox] += wgt * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv_forward`] in its input: scatters `src` (shaped like the
/// conv output, `[co,oh,ow]`) back through the kernel into `dst` (shaped like
/// the conv input, `[ci,h,w]`). Used both as the forward pass of transposed
/// convolution and as conv2d's input gradient.
pub(crate) fn conv_transpose_forward(src: &[f64], k: &[f64], dst: &mut [f64], g: &ConvGeom) {
    for co in 0..g.co {
        for ci in 0..g.ci {
            let dc_base = ci * g.h * g.w;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wgt = k[((co * g.ci + ci) * g.kh + ky) * g.kw + kx];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let srow = &src[(co * g.oh + oy) * g.ow..(co * g.oh + oy + 1) * g.ow];
                        let drow =
                            &mut dst[dc_base + iy as usize * g.w..dc_base + (iy as usize + 1) * g.w];
                        if g.stride == 1 {
                            let lo = g.padding.saturating_sub(kx);
                            let hi = g.ow.min((g.w + g.padding).saturating_sub(kx));
                            if lo >= hi {
                                continue;
                            }
                            let doff = lo + kx - g.padding;
                            let n = hi - lo;
                            for (d, sv) in drow[doff..doff + n].iter_mut().zip(&srow[lo..lo + n]) {
                                *d += wgt * sv;
                            }
                        } else {
                            for ox in 0..g.ow {
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    drow[ix as usize] += wgt * srow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Kernel gradient shared by conv2d and conv_transpose2d:
/// dk[co,ci,ky,kx] += sum over (oy,ox) of big[ci, oy*s+ky-p, ox*s+kx-p] * small[co,oy,ox]
/// where `big` is shaped like the conv input and `small` like the conv output.
/// For conv2d, big = input values and small = output gradient; for the
/// transpose, big = output gradient and small = input values.
pub(crate) fn conv_kernel_grad(big: &[f64], small: &[f64], dk: &mut [f64], g: &ConvGeom) {
    for co in 0..g.co {
        for ci in 0..g.ci {
            let bc = &big[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let mut acc = 0.0;
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let brow = &bc[iy as usize * g.w..iy as usize * g.w + g.w];
                        let srow = &small[(co * g.oh + oy) * g.ow..(co * g.oh + oy + 1) * g.ow];
                        if g.stride == 1 {
                            let lo = g.padding.saturating_sub(kx);
                            let hi = g.ow.min((g.w + g.padding).saturating_sub(kx));
                            if lo >= hi {
                                continue;
                            }
                            let boff = lo + kx - g.padding;
                            // Sequential left-to-right sum: reductions must
                            // keep one fixed association order.
                            for (sv, bv) in srow[lo..hi].iter().zip(&brow[boff..boff + (hi - lo)]) {
                                acc += sv * bv;
                            }
                        } else {
                            for ox in 0..g.ow {
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    acc += srow[ox] * brow[ix as usize];
                                }
                            }
                        }
                    }
                    dk[((co * g.ci + ci) * g.kh + ky) * g.kw + kx] += acc;
                }
            }
        }
    }
}

/// Per-pixel softmax across channels with max subtraction.
/// `x` and `out` are `[c, h*w]`; `out` is overwritten.
pub(crate) fn channel_softmax_forward(x: &[f64], out: &mut [f64], c: usize, hw: usize) {
    for p in 0..hw {
        let mut m = f64::NEG_INFINITY;
        for ch in 0..c {
            m = m.max(x[ch * hw + p]);
        }
        let mut denom = 0.0;
        for ch in 0..c {
            let e = crate::fmath::exp(x[ch * hw + p] - m);
            out[ch * hw + p] = e;
            denom += e;
        }
        for ch in 0..c {
            out[ch * hw + p] /= denom;
        }
    }
}

/// dx[i,p] += y[i,p] * (g[i,p] - sum_j g[j,p] * y[j,p])
pub(crate) fn channel_softmax_backward(
    y: &[f64],
    gout: &[f64],
    dx: &mut [f64],
    c: usize,
    hw: usize,
) {
    for p in 0..hw {
        let mut dot = 0.0;
        for ch in 0..c {
            dot += gout[ch * hw + p] * y[ch * hw + p];
        }
        for ch in 0..c {
            dx[ch * hw + p] += y[ch * hw + p] * (gout[ch * hw + p] - dot);
        }
    }
}

/// Per-channel spatial normalization (the batch-of-one analog of batch
/// norm): each channel is standardized over its own H*W extent, then scaled
/// and shifted by learned per-channel parameters.
pub(crate) const NORM_EPS: f64 = 1e-5;

pub(crate) fn channel_norm_forward(
    x: &[f64],
    gain: &[f64],
    shift: &[f64],
    out: &mut [f64],
    c: usize,
    hw: usize,
) {
    for ch in 0..c {
        let xs = &x[ch * hw..(ch + 1) * hw];
        let mut mean = 0.0;
        for v in xs {
            mean += v;
        }
        mean /= hw as f64;
        let mut var = 0.0;
        for v in xs {
            let d = v - mean;
            var += d * d;
        }
        var /= hw as f64;
        let inv = 1.0 / crate::fmath::sqrt(var + NORM_EPS);
        let (g, b) = (gain[ch], shift[ch]);
        for (o, v) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(xs) {
            *o = g * (v - mean) * inv + b;
        }
    }
}

/// Standard normalization backward, per channel over its spatial extent:
/// with xhat = (x-mean)*inv, dx = gain*inv*(g - mean(g) - xhat*mean(g*xhat)).
#[allow(clippy::too_many_arguments)]
pub(crate) fn channel_norm_backward(
    x: &[f64],
    gain: &[f64],
    gout: &[f64],
    dx: &mut [f64],
    dgain: &mut [f64],
    dshift: &mut [f64],
    c: usize,
    hw: usize,
) {
    let n = hw as f64;
    for ch in 0..c {
        let xs = &x[ch * hw..(ch + 1) * hw];
        let gs = &gout[ch * hw..(ch + 1) * hw];
        let mut mean = 0.0;
        for v in xs {
            mean += v;
        }
        mean /= n;
        let mut var = 0.0;
        for v in xs {
            let d = v - mean;
            var += d * d;
        }
        var /= n;
        let inv = 1.0 / crate::fmath::sqrt(var + NORM_EPS);

        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for (gv, xv) in gs.iter().zip(xs) {
            sum_g += gv;
            sum_gx += gv * (xv - mean) * inv;
        }
        dgain[ch] += sum_gx;
        dshift[ch] += sum_g;

        let gn = gain[ch];
        let mg = sum_g / n;
        let mgx = sum_gx / n;
        for ((d, gv), xv) in dx[ch * hw..(ch + 1) * hw].iter_mut().zip(gs).zip(xs) {
            let xhat = (xv - mean) * inv;
            *d += gn * inv * (gv - mg - xhat * mgx);
        }
    }
}
