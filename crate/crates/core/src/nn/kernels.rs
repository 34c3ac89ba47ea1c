//! Dense kernels: strided GEMM and the im2col / col2im pair behind
//! convolution and transposed convolution.

/// `C = alpha * A * B + beta * C` with arbitrary element strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    // Bounds the unsafe call below: the furthest element each operand touches.
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of a convolution that maps an image of `(img_h, img_w)` to
/// `(out_h, out_w)` positions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Patch {
    pub channels: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl Patch {
    pub fn k(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    /// Output rows per im2col chunk, keeping the column buffer near 2 MB.
    pub fn rows_per_chunk(&self) -> usize {
        (262_144 / (self.k() * self.out_w).max(1)).clamp(1, self.out_h.max(1))
    }

    /// Valid output-column range for kernel column `kj` (input index in bounds).
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let off = (kj * self.dilation.1) as isize - self.padding.1 as isize;
        let sw = self.stride.1 as isize;
        // need 0 <= ow*sw + off < img_w
        let lo = if off >= 0 { 0 } else { ((-off) + sw - 1) / sw };
        let hi_excl = if (self.img_w as isize) - off <= 0 {
            0
        } else {
            ((self.img_w as isize - off) + sw - 1) / sw
        };
        let lo = lo.max(0) as usize;
        let hi = (hi_excl.max(0) as usize).min(self.out_w);
        (lo.min(hi), hi)
    }

    /// Fill `cols` (`k x (rows * out_w)`, row-major) for output rows `r0..r1`.
    pub fn im2col(&self, img: &[f64], r0: usize, r1: usize, cols: &mut [f64]) {
        let np = (r1 - r0) * self.out_w;
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        for c in 0..self.channels {
            let plane = &img[c * self.img_h * self.img_w..(c + 1) * self.img_h * self.img_w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    let dst = &mut cols[row * np..(row + 1) * np];
                    let (lo, hi) = self.col_range(kj);
                    let col_off = (kj * self.dilation.1) as isize - self.padding.1 as isize;
                    for (p, oh) in (r0..r1).enumerate() {
                        let out_row = &mut dst[p * self.out_w..(p + 1) * self.out_w];
                        let ih = (oh * sh + ki * self.dilation.0) as isize - self.padding.0 as isize;
                        if ih < 0 || ih >= self.img_h as isize || lo >= hi {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[ih as usize * self.img_w..(ih as usize + 1) * self.img_w];
                        out_row[..lo].fill(0.0);
                        out_row[hi..].fill(0.0);
                        let start = (lo as isize * sw as isize + col_off) as usize;
                        if sw == 1 {
                            out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        } else {
                            for (i, o) in out_row[lo..hi].iter_mut().enumerate() {
                                *o = src[start + i * sw];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `cols` for output rows `r0..r1` back into `img`.
    pub fn col2im(&self, cols: &[f64], r0: usize, r1: usize, img: &mut [f64]) {
        let np = (r1 - r0) * self.out_w;
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        for c in 0..self.channels {
            let plane = &mut img[c * self.img_h * self.img_w..(c + 1) * self.img_h * self.img_w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    let src = &cols[row * np..(row + 1) * np];
                    let (lo, hi) = self.col_range(kj);
                    if lo >= hi {
                        continue;
                    }
                    let col_off = (kj * self.dilation.1) as isize - self.padding.1 as isize;
                    for (p, oh) in (r0..r1).enumerate() {
                        let ih = (oh * sh + ki * self.dilation.0) as isize - self.padding.0 as isize;
                        if ih < 0 || ih >= self.img_h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.img_w..(ih as usize + 1) * self.img_w];
                        let in_row = &src[p * self.out_w..(p + 1) * self.out_w];
                        let start = (lo as isize * sw as isize + col_off) as usize;
                        if sw == 1 {
                            for (d, s) in dst[start..start + (hi - lo)].iter_mut().zip(&in_row[lo..hi]) {
                                *d += s;
                            }
                        } else {
                            for (i, s) in in_row[lo..hi].iter().enumerate() {
                                dst[start + i * sw] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[O, P] (+)= W[O, K] * im2col(img)` for one batch item.
pub(crate) fn conv_forward_item(patch: &Patch, weight: &[f64], o: usize, img: &[f64], out: &mut [f64]) {
    let k = patch.k();
    let p_total = patch.out_h * patch.out_w;
    let rows = patch.rows_per_chunk();
    let mut cols = vec![0.0; k * rows * patch.out_w];
    let mut r0 = 0;
    while r0 < patch.out_h {
        let r1 = (r0 + rows).min(patch.out_h);
        let np = (r1 - r0) * patch.out_w;
        patch.im2col(img, r0, r1, &mut cols[..k * np]);
        let off = r0 * patch.out_w;
        gemm(o, k, np, weight, k, 1, &cols, np, 1, 0.0, &mut out[off..], p_total, 1);
        r0 = r1;
    }
}

/// Accumulate `dW += gout * im2col(img)^T` and, if requested,
/// `dimg += col2im(W^T * gout)` for one batch item.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward_item(
    patch: &Patch,
    weight: &[f64],
    o: usize,
    img: &[f64],
    gout: &[f64],
    dweight: Option<&mut [f64]>,
    dimg: Option<&mut [f64]>,
) {
    let k = patch.k();
    let p_total = patch.out_h * patch.out_w;
    let rows = patch.rows_per_chunk();
    let mut cols = vec![0.0; k * rows * patch.out_w];
    let mut dweight = dweight;
    let mut dimg = dimg;
    let mut r0 = 0;
    while r0 < patch.out_h {
        let r1 = (r0 + rows).min(patch.out_h);
        let np = (r1 - r0) * patch.out_w;
        let off = r0 * patch.out_w;
        if let Some(dw) = dweight.as_deref_mut() {
            patch.im2col(img, r0, r1, &mut cols[..k * np]);
            // dW[O,K] += gout[O,np] * cols^T[np,K]
            gemm(o, np, k, &gout[off..], p_total, 1, &cols, 1, np, 1.0, dw, k, 1);
        }
        if let Some(di) = dimg.as_deref_mut() {
            // dcols[K,np] = W^T[K,O] * gout[O,np]
            gemm(k, o, np, weight, 1, k, &gout[off..], p_total, 1, 0.0, &mut cols[..k * np], np, 1);
            patch.col2im(&cols[..k * np], r0, r1, di);
        }
        r0 = r1;
    }
}

/// Transposed convolution, one batch item: `out_img += col2im(W^T * x)`
/// where `W` is `[c_in, K]` and the patch describes the forward conv from the
/// output image back to the `c_in x (out_h, out_w)` input grid.
pub(crate) fn tconv_forward_item(patch: &Patch, weight: &[f64], c_in: usize, x: &[f64], out_img: &mut [f64]) {
    let k = patch.k();
    let p_total = patch.out_h * patch.out_w;
    let rows = patch.rows_per_chunk();
    let mut cols = vec![0.0; k * rows * patch.out_w];
    let mut r0 = 0;
    while r0 < patch.out_h {
        let r1 = (r0 + rows).min(patch.out_h);
        let np = (r1 - r0) * patch.out_w;
        let off = r0 * patch.out_w;
        gemm(k, c_in, np, weight, 1, k, &x[off..], p_total, 1, 0.0, &mut cols[..k * np], np, 1);
        patch.col2im(&cols[..k * np], r0, r1, out_img);
        r0 = r1;
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn tconv_backward_item(
    patch: &Patch,
    weight: &[f64],
    c_in: usize,
    x: &[f64],
    gout_img: &[f64],
    dweight: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    let k = patch.k();
    let p_total = patch.out_h * patch.out_w;
    let rows = patch.rows_per_chunk();
    let mut cols = vec![0.0; k * rows * patch.out_w];
    let mut dweight = dweight;
    let mut dx = dx;
    let mut r0 = 0;
    while r0 < patch.out_h {
        let r1 = (r0 + rows).min(patch.out_h);
        let np = (r1 - r0) * patch.out_w;
        let off = r0 * patch.out_w;
        patch.im2col(gout_img, r0, r1, &mut cols[..k * np]);
        if let Some(dw) = dweight.as_deref_mut() {
            // dW[c_in, K] += x[c_in, np] * cols^T[np, K]
            gemm(c_in, np, k, &x[off..], p_total, 1, &cols, 1, np, 1.0, dw, k, 1);
        }
        if let Some(d) = dx.as_deref_mut() {
            // dx[c_in, np] += W[c_in, K] * cols[K, np]
            gemm(c_in, k, np, weight, k, 1, &cols, np, 1, 1.0, &mut d[off..], p_total, 1);
        }
        r0 = r1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-loop convolution used as an oracle.
    fn naive_conv(p: &Patch, w: &[f64], o: usize, img: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; o * p.out_h * p.out_w];
        for oc in 0..o {
            for oh in 0..p.out_h {
                for ow in 0..p.out_w {
                    let mut acc = 0.0;
                    for c in 0..p.channels {
                        for ki in 0..p.kernel.0 {
                            for kj in 0..p.kernel.1 {
                                let ih = (oh * p.stride.0 + ki * p.dilation.0) as isize - p.padding.0 as isize;
                                let iw = (ow * p.stride.1 + kj * p.dilation.1) as isize - p.padding.1 as isize;
                                if ih < 0 || iw < 0 || ih >= p.img_h as isize || iw >= p.img_w as isize {
                                    continue;
                                }
                                let wi = ((oc * p.channels + c) * p.kernel.0 + ki) * p.kernel.1 + kj;
                                acc += w[wi] * img[(c * p.img_h + ih as usize) * p.img_w + iw as usize];
                            }
                        }
                    }
                    out[(oc * p.out_h + oh) * p.out_w + ow] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let cases = [
            ((3, 3), (1, 1), (1, 1), (1, 1)),
            ((1, 7), (1, 1), (1, 1), (0, 3)),
            ((5, 5), (1, 1), (4, 1), (8, 2)),
            ((5, 5), (2, 2), (1, 1), (2, 2)),
            ((3, 3), (2, 1), (2, 3), (2, 3)),
        ];
        let (c, h, w, o) = (3, 13, 11, 4);
        let img: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0).collect();
        for (kernel, stride, dilation, padding) in cases {
            let out_h = (h + 2 * padding.0 - dilation.0 * (kernel.0 - 1) - 1) / stride.0 + 1;
            let out_w = (w + 2 * padding.1 - dilation.1 * (kernel.1 - 1) - 1) / stride.1 + 1;
            let p = Patch { channels: c, img_h: h, img_w: w, out_h, out_w, kernel, stride, dilation, padding };
            let wt: Vec<f64> = (0..o * p.k()).map(|i| ((i * 13 % 11) as f64 - 5.0) / 5.0).collect();
            let mut out = vec![0.0; o * out_h * out_w];
            conv_forward_item(&p, &wt, o, &img, &mut out);
            let want = naive_conv(&p, &wt, o, &img);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{kernel:?} {stride:?} {dilation:?}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let p = Patch {
            channels: 2, img_h: 9, img_w: 10, out_h: 5, out_w: 5,
            kernel: (3, 3), stride: (2, 2), dilation: (1, 1), padding: (1, 1),
        };
        let img: Vec<f64> = (0..2 * 90).map(|i| (i as f64 * 0.37).sin()).collect();
        let np = 25;
        let mut cols = vec![0.0; p.k() * np];
        p.im2col(&img, 0, 5, &mut cols);
        let g: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = cols.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; img.len()];
        p.col2im(&g, 0, 5, &mut back);
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
