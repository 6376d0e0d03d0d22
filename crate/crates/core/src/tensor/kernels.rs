// Raw numeric kernels shared by the forward and backward passes of graph ops.
// All buffers are row-major and sized by the caller.

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `aᵀ·b` for a: [k×m], b: [k×n] without materializing the transpose.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    out
}

/// `a·bᵀ` for a: [m×k], b: [n×k].
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output columns `ox` for which `ox + kx - pw` lands inside the input row.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pw.saturating_sub(kx);
        let hi = (self.w + self.pw).saturating_sub(kx).min(self.ow);
        (lo, hi.max(lo))
    }

    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = oy + ky;
        if iy < self.ph || iy - self.ph >= self.h {
            None
        } else {
            Some(iy - self.ph)
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], k: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let mut out = vec![0.0; g.batch * g.c_out * out_plane];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let o = &mut out[(b * g.c_out + co) * out_plane..][..out_plane];
            if let Some(bias) = bias {
                o.fill(bias[co]);
            }
            for ci in 0..g.c_in {
                let xin = &x[(b * g.c_in + ci) * in_plane..][..in_plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = k[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                        let (lo, hi) = g.col_range(kx);
                        for oy in 0..g.oh {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let orow = &mut o[oy * g.ow + lo..oy * g.ow + hi];
                            let irow = &xin[iy * g.w + lo + kx - g.pw..][..hi - lo];
                            for (ov, &iv) in orow.iter_mut().zip(irow) {
                                *ov += wv * iv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (dx, dkernels, dbias).
pub(crate) fn conv2d_backward(
    x: &[f64],
    k: &[f64],
    dout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; g.c_out];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let d = &dout[(b * g.c_out + co) * out_plane..][..out_plane];
            db[co] += d.iter().sum::<f64>();
            for ci in 0..g.c_in {
                let xoff = (b * g.c_in + ci) * in_plane;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let widx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                        let wv = k[widx];
                        let (lo, hi) = g.col_range(kx);
                        let mut acc = 0.0;
                        for oy in 0..g.oh {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let drow = &d[oy * g.ow + lo..oy * g.ow + hi];
                            let start = xoff + iy * g.w + lo + kx - g.pw;
                            let irow = &x[start..start + (hi - lo)];
                            let dxrow = &mut dx[start..start + (hi - lo)];
                            for ((dv, &iv), dxv) in drow.iter().zip(irow).zip(dxrow.iter_mut()) {
                                acc += dv * iv;
                                *dxv += wv * dv;
                            }
                        }
                        dk[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// Bin `i` of `n_out` over an axis of length `n_in`: `[floor(i·n_in/n_out), floor((i+1)·n_in/n_out))`.
#[inline]
pub(crate) fn pool_bin(i: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    (i * n_in / n_out, (i + 1) * n_in / n_out)
}

pub(crate) fn avg_pool_forward(x: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let xin = &x[p * h * w..][..h * w];
        for i in 0..oh {
            let (y0, y1) = pool_bin(i, h, oh);
            for j in 0..ow {
                let (x0, x1) = pool_bin(j, w, ow);
                let mut s = 0.0;
                for y in y0..y1 {
                    s += xin[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                out[(p * oh + i) * ow + j] = s / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(dout: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let dplane = &mut dx[p * h * w..][..h * w];
        for i in 0..oh {
            let (y0, y1) = pool_bin(i, h, oh);
            for j in 0..ow {
                let (x0, x1) = pool_bin(j, w, ow);
                let share = dout[(p * oh + i) * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for v in &mut dplane[y * w + x0..y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    dx
}
