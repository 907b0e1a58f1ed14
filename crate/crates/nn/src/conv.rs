//! Raw 3D convolution kernels (forward + gradients), shared by the graph ops.
//!
//! Both conv and transposed conv are lowered to im2col/col2im plus dense
//! matmuls so every stride hits the same contiguous inner loops. Layout is
//! NCDHW row-major; weights are [Co, Ci, k, k, k] for conv and
//! [Ci, Co, k, k, k] for transposed conv.

use crate::graph::{matmul_nn, matmul_nt, matmul_tn};
use crate::scalar::Scalar;

pub fn conv3d_out_shape(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> [usize; 5] {
    let (n, _ci, d, h, w) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (co, k) = (ws[0], ws[2]);
    let od = (d + 2 * pad - k) / stride + 1;
    let oh = (h + 2 * pad - ws[3]) / stride + 1;
    let ow = (w + 2 * pad - ws[4]) / stride + 1;
    [n, co, od, oh, ow]
}

pub fn conv_transpose3d_out_shape(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> [usize; 5] {
    let (n, _ci, d, h, w) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let co = ws[1];
    let od = (d - 1) * stride + ws[2] - 2 * pad;
    let oh = (h - 1) * stride + ws[3] - 2 * pad;
    let ow = (w - 1) * stride + ws[4] - 2 * pad;
    [n, co, od, oh, ow]
}

/// Patch geometry shared by im2col and col2im: `grid` are the (od, oh, ow)
/// output-grid dims, `src` the (d, h, w) dims being gathered from.
struct Patch {
    ci: usize,
    k: [usize; 3],
    grid: [usize; 3],
    src: [usize; 3],
    stride: usize,
    pad: usize,
}

impl Patch {
    fn rows(&self) -> usize {
        self.ci * self.k[0] * self.k[1] * self.k[2]
    }

    fn cols(&self) -> usize {
        self.grid.iter().product()
    }

    /// For a kernel offset `kk` along one axis, the range of grid indices
    /// whose source index `g*stride + kk - pad` stays inside `src_extent`.
    fn axis_range(&self, kk: usize, axis: usize) -> (usize, usize) {
        let lo = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(self.stride)
        };
        let top = self.src[axis] as isize - 1 + self.pad as isize - kk as isize;
        if top < 0 {
            return (0, 0);
        }
        let hi = ((top as usize / self.stride) + 1).min(self.grid[axis]);
        (lo, hi.max(lo))
    }
}

/// cols[r, p] = src[ci, g(p)*stride + k(r) - pad], zero outside. One sample.
fn im2col<S: Scalar>(src: &[S], p: &Patch, cols: &mut [S]) {
    let n_cols = p.cols();
    debug_assert_eq!(cols.len(), p.rows() * n_cols);
    for v in cols.iter_mut() {
        *v = S::ZERO;
    }
    let [_gd, gh, gw] = p.grid;
    let [sd, sh, sw] = p.src;
    let mut row = 0usize;
    for ci in 0..p.ci {
        let chan = &src[ci * sd * sh * sw..(ci + 1) * sd * sh * sw];
        for kd in 0..p.k[0] {
            let (dlo, dhi) = p.axis_range(kd, 0);
            for kh in 0..p.k[1] {
                let (hlo, hhi) = p.axis_range(kh, 1);
                for kw in 0..p.k[2] {
                    let (wlo, whi) = p.axis_range(kw, 2);
                    let dst_row = &mut cols[row * n_cols..(row + 1) * n_cols];
                    row += 1;
                    if wlo >= whi {
                        continue;
                    }
                    for od in dlo..dhi {
                        let id = od * p.stride + kd - p.pad;
                        for oh in hlo..hhi {
                            let ih = oh * p.stride + kh - p.pad;
                            let src_base = (id * sh + ih) * sw + (wlo * p.stride + kw - p.pad);
                            let dst_base = (od * gh + oh) * gw + wlo;
                            let len = whi - wlo;
                            if p.stride == 1 {
                                dst_row[dst_base..dst_base + len]
                                    .copy_from_slice(&chan[src_base..src_base + len]);
                            } else {
                                for i in 0..len {
                                    dst_row[dst_base + i] = chan[src_base + i * p.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: dst[ci, g(p)*stride + k(r) - pad] += cols[r, p].
fn col2im<S: Scalar>(cols: &[S], p: &Patch, dst: &mut [S]) {
    let n_cols = p.cols();
    let [_gd, gh, gw] = p.grid;
    let [sd, sh, sw] = p.src;
    let mut row = 0usize;
    for ci in 0..p.ci {
        let chan = &mut dst[ci * sd * sh * sw..(ci + 1) * sd * sh * sw];
        for kd in 0..p.k[0] {
            let (dlo, dhi) = p.axis_range(kd, 0);
            for kh in 0..p.k[1] {
                let (hlo, hhi) = p.axis_range(kh, 1);
                for kw in 0..p.k[2] {
                    let (wlo, whi) = p.axis_range(kw, 2);
                    let src_row = &cols[row * n_cols..(row + 1) * n_cols];
                    row += 1;
                    if wlo >= whi {
                        continue;
                    }
                    for od in dlo..dhi {
                        let id = od * p.stride + kd - p.pad;
                        for oh in hlo..hhi {
                            let ih = oh * p.stride + kh - p.pad;
                            let dst_base = (id * sh + ih) * sw + (wlo * p.stride + kw - p.pad);
                            let src_base = (od * gh + oh) * gw + wlo;
                            let len = whi - wlo;
                            if p.stride == 1 {
                                let d = &mut chan[dst_base..dst_base + len];
                                let s = &src_row[src_base..src_base + len];
                                for (dv, sv) in d.iter_mut().zip(s) {
                                    *dv += *sv;
                                }
                            } else {
                                for i in 0..len {
                                    chan[dst_base + i * p.stride] += src_row[src_base + i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_patch(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Patch {
    let out = conv3d_out_shape(xs, ws, stride, pad);
    Patch {
        ci: xs[1],
        k: [ws[2], ws[3], ws[4]],
        grid: [out[2], out[3], out[4]],
        src: [xs[2], xs[3], xs[4]],
        stride,
        pad,
    }
}

/// y[n,co,p] = sum_r w[co,r] * cols[r,p] (+ bias[co])
pub fn conv3d_forward<S: Scalar>(
    x: &[S],
    xs: &[usize],
    w: &[S],
    ws: &[usize],
    bias: Option<&[S]>,
    stride: usize,
    pad: usize,
) -> Vec<S> {
    let p = conv_patch(xs, ws, stride, pad);
    let (n, co) = (xs[0], ws[0]);
    let (rows, cols_n) = (p.rows(), p.cols());
    let sample = xs[1] * xs[2] * xs[3] * xs[4];
    let mut cols = vec![S::ZERO; rows * cols_n];
    let mut y = vec![S::ZERO; n * co * cols_n];
    for b in 0..n {
        im2col(&x[b * sample..(b + 1) * sample], &p, &mut cols);
        let out = matmul_nn(w, &cols, co, rows, cols_n);
        let dst = &mut y[b * co * cols_n..(b + 1) * co * cols_n];
        dst.copy_from_slice(&out);
        if let Some(bias) = bias {
            for c in 0..co {
                let bv = bias[c];
                for v in &mut dst[c * cols_n..(c + 1) * cols_n] {
                    *v += bv;
                }
            }
        }
    }
    y
}

/// Gradients of `conv3d_forward`. Any of the outputs may be skipped.
pub fn conv3d_backward<S: Scalar>(
    x: &[S],
    xs: &[usize],
    w: &[S],
    ws: &[usize],
    dy: &[S],
    stride: usize,
    pad: usize,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
    let p = conv_patch(xs, ws, stride, pad);
    let (n, co) = (xs[0], ws[0]);
    let (rows, cols_n) = (p.rows(), p.cols());
    let sample = xs[1] * xs[2] * xs[3] * xs[4];

    let mut dx = want_dx.then(|| vec![S::ZERO; x.len()]);
    let mut dw = want_dw.then(|| vec![S::ZERO; w.len()]);
    let mut db = want_db.then(|| vec![S::ZERO; co]);
    let mut cols = vec![S::ZERO; rows * cols_n];

    for b in 0..n {
        let dy_b = &dy[b * co * cols_n..(b + 1) * co * cols_n];
        if let Some(db) = db.as_mut() {
            for c in 0..co {
                let mut acc = S::ZERO;
                for v in &dy_b[c * cols_n..(c + 1) * cols_n] {
                    acc += *v;
                }
                db[c] += acc;
            }
        }
        if dw.is_some() {
            im2col(&x[b * sample..(b + 1) * sample], &p, &mut cols);
            let dwb = matmul_nt(dy_b, &cols, co, cols_n, rows);
            let dw = dw.as_mut().unwrap();
            for (acc, v) in dw.iter_mut().zip(&dwb) {
                *acc += *v;
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dcols = matmul_tn(w, dy_b, co, rows, cols_n);
            col2im(&dcols, &p, &mut dx[b * sample..(b + 1) * sample]);
        }
    }
    (dx, dw, db)
}

fn conv_transpose_patch(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Patch {
    let out = conv_transpose3d_out_shape(xs, ws, stride, pad);
    // grid is the INPUT lattice; source the OUTPUT volume being scattered to
    Patch {
        ci: ws[1],
        k: [ws[2], ws[3], ws[4]],
        grid: [xs[2], xs[3], xs[4]],
        src: [out[2], out[3], out[4]],
        stride,
        pad,
    }
}

/// y[n,co,i*s+k-p] += w[ci,co,k] * x[n,ci,i] (+ bias[co]).
pub fn conv_transpose3d_forward<S: Scalar>(
    x: &[S],
    xs: &[usize],
    w: &[S],
    ws: &[usize],
    bias: Option<&[S]>,
    stride: usize,
    pad: usize,
) -> Vec<S> {
    let p = conv_transpose_patch(xs, ws, stride, pad);
    let (n, ci, co) = (xs[0], ws[0], ws[1]);
    let in_pos = p.cols();
    let rows = p.rows(); // co * k^3
    let sample_in = ci * in_pos;
    let sample_out: usize = co * p.src.iter().product::<usize>();
    let mut y = vec![S::ZERO; n * sample_out];
    for b in 0..n {
        // G[(co,k), p_in] = sum_ci w[ci,(co,k)] * x[ci, p_in]
        let g = matmul_tn(w, &x[b * sample_in..(b + 1) * sample_in], ci, rows, in_pos);
        let dst = &mut y[b * sample_out..(b + 1) * sample_out];
        col2im(&g, &p, dst);
        if let Some(bias) = bias {
            let vol = p.src.iter().product::<usize>();
            for c in 0..co {
                let bv = bias[c];
                for v in &mut dst[c * vol..(c + 1) * vol] {
                    *v += bv;
                }
            }
        }
    }
    y
}

pub fn conv_transpose3d_backward<S: Scalar>(
    x: &[S],
    xs: &[usize],
    w: &[S],
    ws: &[usize],
    dy: &[S],
    stride: usize,
    pad: usize,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
    let p = conv_transpose_patch(xs, ws, stride, pad);
    let (n, ci, co) = (xs[0], ws[0], ws[1]);
    let in_pos = p.cols();
    let rows = p.rows();
    let sample_in = ci * in_pos;
    let out_vol: usize = p.src.iter().product();
    let sample_out = co * out_vol;

    let mut dx = want_dx.then(|| vec![S::ZERO; x.len()]);
    let mut dw = want_dw.then(|| vec![S::ZERO; w.len()]);
    let mut db = want_db.then(|| vec![S::ZERO; co]);
    let mut dg = vec![S::ZERO; rows * in_pos];

    for b in 0..n {
        let dy_b = &dy[b * sample_out..(b + 1) * sample_out];
        if let Some(db) = db.as_mut() {
            for c in 0..co {
                let mut acc = S::ZERO;
                for v in &dy_b[c * out_vol..(c + 1) * out_vol] {
                    acc += *v;
                }
                db[c] += acc;
            }
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        // dG = im2col(dy) over the input lattice
        im2col(dy_b, &p, &mut dg);
        if let Some(dx) = dx.as_mut() {
            // dX[ci, p_in] = sum_(co,k) w[ci,(co,k)] * dG[(co,k), p_in]
            let d = matmul_nn(w, &dg, ci, rows, in_pos);
            dx[b * sample_in..(b + 1) * sample_in].copy_from_slice(&d);
        }
        if let Some(dw) = dw.as_mut() {
            // dW[ci,(co,k)] = sum_p x[ci,p] * dG[(co,k),p]
            let d = matmul_nt(&x[b * sample_in..(b + 1) * sample_in], &dg, ci, in_pos, rows);
            for (acc, v) in dw.iter_mut().zip(&d) {
                *acc += *v;
            }
        }
    }
    (dx, dw, db)
}
