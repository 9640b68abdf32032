//! Raw HWC loops shared by the tape's forward and backward passes.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let ho = (self.h + 2 * self.pad - self.k) / self.stride + 1;
        let wo = (self.w + 2 * self.pad - self.k) / self.stride + 1;
        (ho, wo)
    }

    #[inline]
    fn src(&self, o: usize, kk: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn conv2d_forward(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let (cin, cout) = (g.cin, g.cout);
    let mut out = vec![0.0; ho * wo * cout];
    for oy in 0..ho {
        for ox in 0..wo {
            let orow = &mut out[(oy * wo + ox) * cout..][..cout];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let xrow = &x[(iy * g.w + ix) * cin..][..cin];
                    let kbase = (ky * g.k + kx) * cin;
                    for (ci, &xv) in xrow.iter().enumerate() {
                        if xv != 0.0 {
                            axpy(orow, xv, &k[(kbase + ci) * cout..][..cout]);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_kernel)`.
pub fn conv2d_backward(x: &[f64], k: &[f64], gout: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let (ho, wo) = g.out_hw();
    let (cin, cout) = (g.cin, g.cout);
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for oy in 0..ho {
        for ox in 0..wo {
            let grow = &gout[(oy * wo + ox) * cout..][..cout];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let xoff = (iy * g.w + ix) * cin;
                    let kbase = (ky * g.k + kx) * cin;
                    for ci in 0..cin {
                        let koff = (kbase + ci) * cout;
                        gx[xoff + ci] += dot(grow, &k[koff..koff + cout]);
                        let xv = x[xoff + ci];
                        if xv != 0.0 {
                            axpy(&mut gk[koff..koff + cout], xv, grow);
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

/// 2x2 kernel, stride 2: input `[h, w, cin]` to output `[2h, 2w, cout]`.
pub fn conv_transpose2x2_forward(x: &[f64], k: &[f64], h: usize, w: usize, cin: usize, cout: usize) -> Vec<f64> {
    let wo = 2 * w;
    let mut out = vec![0.0; 4 * h * w * cout];
    for y in 0..h {
        for xx in 0..w {
            let xrow = &x[(y * w + xx) * cin..][..cin];
            for ky in 0..2 {
                for kx in 0..2 {
                    let ooff = ((2 * y + ky) * wo + 2 * xx + kx) * cout;
                    let orow = &mut out[ooff..ooff + cout];
                    let kbase = (ky * 2 + kx) * cin;
                    for (ci, &xv) in xrow.iter().enumerate() {
                        axpy(orow, xv, &k[(kbase + ci) * cout..][..cout]);
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2x2_backward(
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>) {
    let wo = 2 * w;
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for y in 0..h {
        for xx in 0..w {
            let xoff = (y * w + xx) * cin;
            for ky in 0..2 {
                for kx in 0..2 {
                    let goff = ((2 * y + ky) * wo + 2 * xx + kx) * cout;
                    let grow = &gout[goff..goff + cout];
                    let kbase = (ky * 2 + kx) * cin;
                    for ci in 0..cin {
                        let koff = (kbase + ci) * cout;
                        gx[xoff + ci] += dot(grow, &k[koff..koff + cout]);
                        axpy(&mut gk[koff..koff + cout], x[xoff + ci], grow);
                    }
                }
            }
        }
    }
    (gx, gk)
}

/// Depthwise `l x l` convolution over `2c` channels with same padding, then
/// channel pairs `(2m, 2m + 1)` summed into output channel `m`.
pub fn depthwise_pair_forward(x: &[f64], k: &[f64], h: usize, w: usize, c2: usize, l: usize) -> Vec<f64> {
    let c = c2 / 2;
    let pad = (l / 2) as isize;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let orow = &mut out[(y * w + xx) * c..][..c];
            for ky in 0..l {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..l {
                    let ix = xx as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let xrow = &x[(iy as usize * w + ix as usize) * c2..][..c2];
                    let krow = &k[(ky * l + kx) * c2..][..c2];
                    for m in 0..c {
                        orow[m] += xrow[2 * m] * krow[2 * m] + xrow[2 * m + 1] * krow[2 * m + 1];
                    }
                }
            }
        }
    }
    out
}

pub fn depthwise_pair_backward(
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    h: usize,
    w: usize,
    c2: usize,
    l: usize,
) -> (Vec<f64>, Vec<f64>) {
    let c = c2 / 2;
    let pad = (l / 2) as isize;
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for y in 0..h {
        for xx in 0..w {
            let grow = &gout[(y * w + xx) * c..][..c];
            for ky in 0..l {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..l {
                    let ix = xx as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let xoff = (iy as usize * w + ix as usize) * c2;
                    let koff = (ky * l + kx) * c2;
                    for ch in 0..c2 {
                        let gv = grow[ch / 2];
                        gx[xoff + ch] += gv * k[koff + ch];
                        gk[koff + ch] += gv * x[xoff + ch];
                    }
                }
            }
        }
    }
    (gx, gk)
}
