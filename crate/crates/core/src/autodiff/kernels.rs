//! Dense loops behind the graph ops. All matrices are row-major slices.

/// `out[m x n] = a[m x k] * b[k x n]`, overwriting `out`.
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.fill(0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            axpy(av, &b[p * n..(p + 1) * n], row);
        }
    }
}

/// `out[k x n] += a^T * g` where `a` is `m x k` and `g` is `m x n`.
pub fn matmul_at_b_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            axpy(av, grow, &mut out[p * n..(p + 1) * n]);
        }
    }
}

/// `out[m x k] += g * b^T` where `g` is `m x n` and `b` is `k x n`.
pub fn matmul_a_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            *o += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    // four accumulators so the loop vectorises; summation order is fixed
    let mut acc = [0.0; 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += x[4 * c + l] * y[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..x.len() {
        tail += x[i] * y[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Geometry of a stride-1 2-D convolution over one sample.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_w(&self) -> usize {
        self.width + 2 * self.padding + 1 - self.kernel
    }

    /// Rows of the column matrix: `channels * kernel^2`.
    pub fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfolds one `[C, H, W]` sample into a `[C*K*K, Ho*Wo]` column matrix.
pub fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (oh, ow, k, pad) = (g.out_h(), g.out_w(), g.kernel, g.padding as isize);
    let p = oh * ow;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - pad;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - pad;
                        *d = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds a column-matrix gradient back onto a `[C, H, W]` sample gradient.
pub fn col2im_acc(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow, k, pad) = (g.out_h(), g.out_w(), g.kernel, g.padding as isize);
    let p = oh * ow;
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let src = &cols[r * p..(r + 1) * p];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = ox as isize + kx as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        matmul(&a, &b, &mut out, 2, 2, 2);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_products_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: alloc::vec::Vec<f64> = (0..m * k).map(|v| libm::sin(v as f64 * 0.37)).collect();
        let b: alloc::vec::Vec<f64> = (0..k * n).map(|v| libm::cos(v as f64 * 0.11)).collect();
        let g: alloc::vec::Vec<f64> = (0..m * n).map(|v| v as f64 * 0.01 - 0.2).collect();
        let mut atg = vec![0.0; k * n];
        matmul_at_b_acc(&a, &g, &mut atg, m, k, n);
        for p in 0..k {
            for j in 0..n {
                let naive: f64 = (0..m).map(|i| a[i * k + p] * g[i * n + j]).sum();
                assert!((atg[p * n + j] - naive).abs() < 1e-12);
            }
        }
        let mut gbt = vec![0.0; m * k];
        matmul_a_bt_acc(&g, &b, &mut gbt, m, k, n);
        for i in 0..m {
            for p in 0..k {
                let naive: f64 = (0..n).map(|j| g[i * n + j] * b[p * n + j]).sum();
                assert!((gbt[i * k + p] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn im2col_pads_with_zeros() {
        let g = ConvGeom {
            channels: 1,
            height: 2,
            width: 2,
            kernel: 3,
            padding: 1,
        };
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut cols = vec![0.0; g.patch() * g.positions()];
        im2col(&x, &g, &mut cols);
        // centre tap (ky = kx = 1) reproduces the input
        assert_eq!(&cols[4 * 4..5 * 4], &x);
        // top-left tap at output (0, 0) reads padding
        assert_eq!(cols[0], 0.0);
        assert_eq!(cols[3], 1.0);
    }
}
