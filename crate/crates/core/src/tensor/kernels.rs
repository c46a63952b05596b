//! Raw forward/backward kernels over row-major slices.

/// Geometry of a "same"-padded 2-D convolution over an `[H, W, C]` map.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h.div_ceil(self.stride)
    }

    pub fn out_w(&self) -> usize {
        self.w.div_ceil(self.stride)
    }

    fn pad(&self) -> isize {
        (self.dilation * (self.k - 1) / 2) as isize
    }

    /// Visit every (output pixel, kernel tap, input pixel) triple that falls
    /// inside the input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let pad = self.pad();
        let (oh, ow) = (self.out_h(), self.out_w());
        for oy in 0..oh {
            for ky in 0..self.k {
                let iy = (oy * self.stride) as isize + (ky * self.dilation) as isize - pad;
                if iy < 0 || iy >= self.h as isize {
                    continue;
                }
                for ox in 0..ow {
                    for kx in 0..self.k {
                        let ix = (ox * self.stride) as isize + (kx * self.dilation) as isize - pad;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let o = oy * ow + ox;
                        let t = ky * self.k + kx;
                        let i = iy as usize * self.w + ix as usize;
                        f(o, t, i);
                    }
                }
            }
        }
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Returns `(dA, dB)` for `C = A·B` given `dC`.
pub(crate) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    dc: &[f64],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut da = vec![0.0; m * k];
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            da[i * k + p] = dcrow.iter().zip(brow).map(|(x, y)| x * y).sum();
            let av = a[i * k + p];
            for (dbv, dcv) in db[p * n..(p + 1) * n].iter_mut().zip(dcrow) {
                *dbv += av * dcv;
            }
        }
    }
    (da, db)
}

pub(crate) fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Dense convolution: `x` is `[H, W, Cin]`, `w` is `[k, k, Cin, Cout]`.
pub(crate) fn conv2d(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    g: ConvGeom,
    cin: usize,
    cout: usize,
) -> Vec<f64> {
    let npix = g.out_h() * g.out_w();
    let mut out = vec![0.0; npix * cout];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(b);
        }
    }
    g.for_each_tap(|o, t, i| {
        let xrow = &x[i * cin..(i + 1) * cin];
        let orow = &mut out[o * cout..(o + 1) * cout];
        let wblock = &w[t * cin * cout..(t + 1) * cin * cout];
        for (ci, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &wblock[ci * cout..(ci + 1) * cout];
            for (ov, wv) in orow.iter_mut().zip(wrow) {
                *ov += xv * wv;
            }
        }
    });
    out
}

/// Returns `(dx, dw, dbias)`.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    g: ConvGeom,
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for row in dout.chunks_exact(cout) {
        for (b, d) in db.iter_mut().zip(row) {
            *b += d;
        }
    }
    g.for_each_tap(|o, t, i| {
        let drow = &dout[o * cout..(o + 1) * cout];
        let xrow = &x[i * cin..(i + 1) * cin];
        let wblock = &w[t * cin * cout..(t + 1) * cin * cout];
        let dwblock = &mut dw[t * cin * cout..(t + 1) * cin * cout];
        let dxrow = &mut dx[i * cin..(i + 1) * cin];
        for ci in 0..cin {
            let wrow = &wblock[ci * cout..(ci + 1) * cout];
            dxrow[ci] += drow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            let xv = xrow[ci];
            for (dwv, dv) in dwblock[ci * cout..(ci + 1) * cout].iter_mut().zip(drow) {
                *dwv += xv * dv;
            }
        }
    });
    (dx, dw, db)
}

/// Per-channel convolution: `w` is `[k, k, C]`.
pub(crate) fn depthwise(x: &[f64], w: &[f64], g: ConvGeom, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; g.out_h() * g.out_w() * c];
    g.for_each_tap(|o, t, i| {
        let xrow = &x[i * c..(i + 1) * c];
        let wrow = &w[t * c..(t + 1) * c];
        for ((ov, xv), wv) in out[o * c..(o + 1) * c].iter_mut().zip(xrow).zip(wrow) {
            *ov += xv * wv;
        }
    });
    out
}

pub(crate) fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    g: ConvGeom,
    c: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    g.for_each_tap(|o, t, i| {
        for ch in 0..c {
            let d = dout[o * c + ch];
            dx[i * c + ch] += d * w[t * c + ch];
            dw[t * c + ch] += d * x[i * c + ch];
        }
    });
    (dx, dw)
}

/// Source taps for one output coordinate of a bilinear resize.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

/// Half-pixel-centre sampling (`align_corners = false`): output pixel `o`
/// samples source coordinate `(o + 0.5) * in / out - 0.5`, clamped at the
/// borders.
pub(crate) fn resize_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            let frac = if i0 == i1 { 0.0 } else { frac };
            Tap {
                i0,
                i1,
                w0: 1.0 - frac,
                w1: frac,
            }
        })
        .collect()
}

pub(crate) fn resize_bilinear(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let ty = resize_taps(h, oh);
    let tx = resize_taps(w, ow);
    let mut out = vec![0.0; oh * ow * c];
    for (oy, a) in ty.iter().enumerate() {
        for (ox, b) in tx.iter().enumerate() {
            let orow = &mut out[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for (iy, wy) in [(a.i0, a.w0), (a.i1, a.w1)] {
                for (ix, wx) in [(b.i0, b.w0), (b.i1, b.w1)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 {
                        continue;
                    }
                    let xrow = &x[(iy * w + ix) * c..(iy * w + ix + 1) * c];
                    for (ov, xv) in orow.iter_mut().zip(xrow) {
                        *ov += wgt * xv;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn resize_bilinear_backward(
    dout: &[f64],
    (h, w, c): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let ty = resize_taps(h, oh);
    let tx = resize_taps(w, ow);
    let mut dx = vec![0.0; h * w * c];
    for (oy, a) in ty.iter().enumerate() {
        for (ox, b) in tx.iter().enumerate() {
            let drow = &dout[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for (iy, wy) in [(a.i0, a.w0), (a.i1, a.w1)] {
                for (ix, wx) in [(b.i0, b.w0), (b.i1, b.w1)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 {
                        continue;
                    }
                    let dxrow = &mut dx[(iy * w + ix) * c..(iy * w + ix + 1) * c];
                    for (dv, g) in dxrow.iter_mut().zip(drow) {
                        *dv += wgt * g;
                    }
                }
            }
        }
    }
    dx
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
