//! Same-padded 2-D convolution (cross-correlation) via im2col and GEMM.

/// `c = a * b + beta * c` where `a` is `m x k` and `b` is `k x n`, both
/// row-major, each optionally read transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe in-bounds row-major
    // (or transposed) views and `c` does not alias `a` or `b`.
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

pub(crate) fn im2col(x: &[f64], channels: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = vec![0.0; channels * k * k * hw];
    for c in 0..channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            dst[xx] = src[sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let hw = h * w;
    let mut x = vec![0.0; channels * hw];
    for c in 0..channels {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Geometry of one convolution: input `[c_in, h, w]`, weight
/// `[c_out, c_in, k, k]`, bias `[c_out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvShape {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

pub(crate) fn conv_forward(s: ConvShape, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let hw = s.h * s.w;
    let mut out = vec![0.0; s.c_out * hw];
    for (o, b) in bias.iter().enumerate() {
        out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *b);
    }
    if s.k == 1 {
        gemm(s.c_out, s.c_in, hw, weight, false, x, false, 1.0, &mut out);
    } else {
        let cols = im2col(x, s.c_in, s.h, s.w, s.k);
        gemm(s.c_out, s.patch(), hw, weight, false, &cols, false, 1.0, &mut out);
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)` for upstream gradient `g`.
pub(crate) fn conv_backward(
    s: ConvShape,
    x: &[f64],
    weight: &[f64],
    g: &[f64],
    need_input: bool,
    need_params: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let hw = s.h * s.w;
    let cols = if s.k == 1 { None } else { Some(im2col(x, s.c_in, s.h, s.w, s.k)) };
    let cols_ref = cols.as_deref().unwrap_or(x);
    let (dw, db) = if need_params {
        let mut dw = vec![0.0; s.c_out * s.patch()];
        gemm(s.c_out, hw, s.patch(), g, false, cols_ref, true, 0.0, &mut dw);
        let db = (0..s.c_out).map(|o| g[o * hw..(o + 1) * hw].iter().sum()).collect();
        (Some(dw), Some(db))
    } else {
        (None, None)
    };
    let dx = need_input.then(|| {
        let mut dcols = vec![0.0; s.patch() * hw];
        gemm(s.patch(), s.c_out, hw, weight, true, g, false, 0.0, &mut dcols);
        if s.k == 1 {
            dcols
        } else {
            col2im(&dcols, s.c_in, s.h, s.w, s.k)
        }
    });
    (dx, dw, db)
}
