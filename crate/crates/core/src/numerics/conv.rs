//! Channels-last convolution kernels.
//!
//! A 1D convolution is the `kh = 1` case of the 2D kernels. Weights are laid
//! out `[kh, kw, cin, cout]` so the innermost loops run over contiguous
//! channel slices. A transposed convolution is the adjoint of a convolution,
//! so it reuses `scatter` for its forward pass and `gather` for its input
//! gradient.

use crate::scalar::Scalar;

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [S::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = S::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl Geometry {
    #[inline]
    fn input_row(&self, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.sh + k) as isize - self.ph as isize;
        (i >= 0 && (i as usize) < self.in_h).then_some(i as usize)
    }

    #[inline]
    fn input_col(&self, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.sw + k) as isize - self.pw as isize;
        (i >= 0 && (i as usize) < self.in_w).then_some(i as usize)
    }

    /// Calls `f(out_pixel, in_pixel, kernel_tap)` for every valid tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for oy in 0..self.out_h {
            for ky in 0..self.kh {
                let Some(iy) = self.input_row(oy, ky) else {
                    continue;
                };
                for ox in 0..self.out_w {
                    for kx in 0..self.kw {
                        let Some(ix) = self.input_col(ox, kx) else {
                            continue;
                        };
                        f(oy * self.out_w + ox, iy * self.in_w + ix, ky * self.kw + kx);
                    }
                }
            }
        }
    }
}

/// Convolution forward: `y[o, :] += sum x[i, ic] * w[tap, ic, :]`.
pub(crate) fn gather<S: Scalar>(
    g: &Geometry,
    x: &[S],
    w: &[S],
    cin: usize,
    cout: usize,
    y: &mut [S],
) {
    g.for_each_tap(|o, i, tap| {
        let xs = &x[i * cin..(i + 1) * cin];
        let ys = &mut y[o * cout..(o + 1) * cout];
        let wt = &w[tap * cin * cout..(tap + 1) * cin * cout];
        for (ic, &xv) in xs.iter().enumerate() {
            if xv == S::zero() {
                continue;
            }
            let wr = &wt[ic * cout..(ic + 1) * cout];
            for (yv, &wv) in ys.iter_mut().zip(wr) {
                *yv = *yv + xv * wv;
            }
        }
    });
}

/// Adjoint of [`gather`] with respect to `x`: `dx[i, ic] += sum dy[o, :] . w[tap, ic, :]`.
pub(crate) fn scatter<S: Scalar>(
    g: &Geometry,
    dy: &[S],
    w: &[S],
    cin: usize,
    cout: usize,
    dx: &mut [S],
) {
    g.for_each_tap(|o, i, tap| {
        let dys = &dy[o * cout..(o + 1) * cout];
        let dxs = &mut dx[i * cin..(i + 1) * cin];
        let wt = &w[tap * cin * cout..(tap + 1) * cin * cout];
        for (ic, dxv) in dxs.iter_mut().enumerate() {
            *dxv = *dxv + dot(dys, &wt[ic * cout..(ic + 1) * cout]);
        }
    });
}

/// Weight gradient of [`gather`]: `dw[tap, ic, :] += x[i, ic] * dy[o, :]`.
pub(crate) fn weight_grad<S: Scalar>(
    g: &Geometry,
    x: &[S],
    dy: &[S],
    cin: usize,
    cout: usize,
    dw: &mut [S],
) {
    g.for_each_tap(|o, i, tap| {
        let xs = &x[i * cin..(i + 1) * cin];
        let dys = &dy[o * cout..(o + 1) * cout];
        let dwt = &mut dw[tap * cin * cout..(tap + 1) * cin * cout];
        for (ic, &xv) in xs.iter().enumerate() {
            if xv == S::zero() {
                continue;
            }
            let dwr = &mut dwt[ic * cout..(ic + 1) * cout];
            for (d, &gv) in dwr.iter_mut().zip(dys) {
                *d = *d + xv * gv;
            }
        }
    });
}
