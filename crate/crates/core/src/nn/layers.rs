//! Per-layer forward and backward kernels. Activations are batched, row-major,
//! channels-first (`[B, C, H, W]`, `[B, F]`, `[B, T, F]`).

use super::tensor::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    /// Same-padding geometry: output extent is `ceil(n / stride)`.
    pub fn same(c: usize, h: usize, w: usize, filters: usize, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        let oh = h.div_ceil(sh);
        let ow = w.div_ceil(sw);
        let pad_h = ((oh - 1) * sh + kh).saturating_sub(h);
        let pad_w = ((ow - 1) * sw + kw).saturating_sub(w);
        Self {
            c,
            h,
            w,
            filters,
            kh,
            kw,
            sh,
            sw,
            oh,
            ow,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose input column `ox * sw + j - pad_left` lies inside the image.
    fn valid_cols(&self, j: usize) -> (usize, usize) {
        let lo = self.pad_left.saturating_sub(j).div_ceil(self.sw).min(self.ow);
        let end = self.w + self.pad_left;
        let hi = if end <= j {
            0
        } else {
            (end - j).div_ceil(self.sw).min(self.ow)
        };
        (lo, hi.max(lo))
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let n = self.out_pixels();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ci * self.kh + i) * self.kw + j;
                    let dst = &mut col[row * n..(row + 1) * n];
                    let (lo, hi) = self.valid_cols(j);
                    for (oy, out_row) in dst.chunks_exact_mut(self.ow).enumerate() {
                        let iy = (oy * self.sh + i) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        let first = lo * self.sw + j - self.pad_left;
                        if self.sw == 1 {
                            out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (k, v) in out_row[lo..hi].iter_mut().enumerate() {
                                *v = src[first + k * self.sw];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let n = self.out_pixels();
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ci * self.kh + i) * self.kw + j;
                    let src = &col[row * n..(row + 1) * n];
                    let (lo, hi) = self.valid_cols(j);
                    for (oy, src_row) in src.chunks_exact(self.ow).enumerate() {
                        let iy = (oy * self.sh + i) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let first = lo * self.sw + j - self.pad_left;
                        for (k, &v) in src_row[lo..hi].iter().enumerate() {
                            dst[first + k * self.sw] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output activations and the im2col buffers (kept for backward).
pub(crate) fn conv_forward<T: Real>(
    g: &ConvGeom,
    batch: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
    keep_cols: bool,
) -> (Vec<T>, Vec<T>) {
    let in_len = g.c * g.h * g.w;
    let patch = g.patch();
    let pixels = g.out_pixels();
    let out_len = g.filters * pixels;
    let mut out = vec![T::zero(); batch * out_len];
    let mut cols = if keep_cols {
        vec![T::zero(); batch * patch * pixels]
    } else {
        Vec::new()
    };
    let mut scratch = vec![T::zero(); patch * pixels];
    for b in 0..batch {
        let col: &mut [T] = if keep_cols {
            &mut cols[b * patch * pixels..(b + 1) * patch * pixels]
        } else {
            &mut scratch
        };
        g.im2col(&x[b * in_len..(b + 1) * in_len], col);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        for (f, chunk) in dst.chunks_mut(pixels).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[f]);
        }
        T::gemm(
            g.filters,
            patch,
            pixels,
            weight,
            patch as isize,
            1,
            col,
            pixels as isize,
            1,
            dst,
            pixels as isize,
            1,
            true,
        );
    }
    (out, cols)
}

pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    batch: usize,
    cols: &[T],
    weight: &[T],
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    input_grad: bool,
) -> Vec<T> {
    let in_len = g.c * g.h * g.w;
    let patch = g.patch();
    let pixels = g.out_pixels();
    let out_len = g.filters * pixels;
    let mut dx = vec![T::zero(); if input_grad { batch * in_len } else { 0 }];
    let mut dcol = vec![T::zero(); patch * pixels];
    for b in 0..batch {
        let col = &cols[b * patch * pixels..(b + 1) * patch * pixels];
        let dob = &dout[b * out_len..(b + 1) * out_len];
        for (f, chunk) in dob.chunks(pixels).enumerate() {
            dbias[f] += chunk.iter().copied().sum::<T>();
        }
        T::gemm(
            g.filters,
            pixels,
            patch,
            dob,
            pixels as isize,
            1,
            col,
            1,
            pixels as isize,
            dweight,
            patch as isize,
            1,
            true,
        );
        if !input_grad {
            continue;
        }
        T::gemm(
            patch,
            g.filters,
            pixels,
            weight,
            1,
            patch as isize,
            dob,
            pixels as isize,
            1,
            &mut dcol,
            pixels as isize,
            1,
            false,
        );
        g.col2im(&dcol, &mut dx[b * in_len..(b + 1) * in_len]);
    }
    dx
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolGeom {
    /// Unpadded pooling: `floor((n - k) / s) + 1`. `None` when the input is smaller than the kernel.
    pub fn valid(c: usize, h: usize, w: usize, kernel: (usize, usize), stride: (usize, usize)) -> Option<Self> {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        if h < kh || w < kw {
            return None;
        }
        Some(Self {
            c,
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            oh: (h - kh) / sh + 1,
            ow: (w - kw) / sw + 1,
        })
    }
}

pub(crate) fn pool_forward<T: Real>(g: &PoolGeom, batch: usize, x: &[T]) -> Vec<T> {
    let scale = T::one() / T::from_f64((g.kh * g.kw) as f64);
    let mut out = vec![T::zero(); batch * g.c * g.oh * g.ow];
    // Window sums are separable: horizontal sums per input row, then vertical.
    let mut rows = vec![T::zero(); g.h * g.ow];
    for (plane, dst) in x.chunks_exact(g.h * g.w).zip(out.chunks_exact_mut(g.oh * g.ow)) {
        for (src, sums) in plane.chunks_exact(g.w).zip(rows.chunks_exact_mut(g.ow)) {
            for (ox, s) in sums.iter_mut().enumerate() {
                *s = src[ox * g.sw..ox * g.sw + g.kw].iter().copied().sum();
            }
        }
        for (oy, out_row) in dst.chunks_exact_mut(g.ow).enumerate() {
            let window = &rows[oy * g.sh * g.ow..(oy * g.sh + g.kh) * g.ow];
            out_row.fill(T::zero());
            for sums in window.chunks_exact(g.ow) {
                out_row.iter_mut().zip(sums).for_each(|(o, &s)| *o += s);
            }
            out_row.iter_mut().for_each(|o| *o *= scale);
        }
    }
    out
}

pub(crate) fn pool_backward<T: Real>(g: &PoolGeom, batch: usize, dout: &[T]) -> Vec<T> {
    let scale = T::one() / T::from_f64((g.kh * g.kw) as f64);
    let mut dx = vec![T::zero(); batch * g.c * g.h * g.w];
    let mut rows = vec![T::zero(); g.h * g.ow];
    for (plane, src) in dx.chunks_exact_mut(g.h * g.w).zip(dout.chunks_exact(g.oh * g.ow)) {
        rows.fill(T::zero());
        for (oy, grad_row) in src.chunks_exact(g.ow).enumerate() {
            for sums in rows[oy * g.sh * g.ow..(oy * g.sh + g.kh) * g.ow].chunks_exact_mut(g.ow) {
                sums.iter_mut().zip(grad_row).for_each(|(s, &d)| *s += d * scale);
            }
        }
        for (dst, sums) in plane.chunks_exact_mut(g.w).zip(rows.chunks_exact(g.ow)) {
            for (ox, &d) in sums.iter().enumerate() {
                dst[ox * g.sw..ox * g.sw + g.kw].iter_mut().for_each(|v| *v += d);
            }
        }
    }
    dx
}

/// `out[B, units] = x[B, n] * W^T + b` with `W` stored as `[units, n]`.
pub(crate) fn dense_forward<T: Real>(
    batch: usize,
    n: usize,
    units: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * units);
    for _ in 0..batch {
        out.extend_from_slice(bias);
    }
    T::gemm(
        batch,
        n,
        units,
        x,
        n as isize,
        1,
        weight,
        1,
        n as isize,
        &mut out,
        units as isize,
        1,
        true,
    );
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Real>(
    batch: usize,
    n: usize,
    units: usize,
    x: &[T],
    weight: &[T],
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    for row in dout.chunks(units) {
        for (db, d) in dbias.iter_mut().zip(row) {
            *db += *d;
        }
    }
    T::gemm(
        units,
        batch,
        n,
        dout,
        1,
        units as isize,
        x,
        n as isize,
        1,
        dweight,
        n as isize,
        1,
        true,
    );
    let mut dx = vec![T::zero(); batch * n];
    T::gemm(
        batch,
        units,
        n,
        dout,
        units as isize,
        1,
        weight,
        n as isize,
        1,
        &mut dx,
        n as isize,
        1,
        false,
    );
    dx
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Activations recorded per timestep of an LSTM pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache<T> {
    /// `[T][B, F + H]` concatenated inputs.
    pub z: Vec<Vec<T>>,
    /// `[T][B, 4H]` post-nonlinearity gates in (input, forget, candidate, output) order.
    pub gates: Vec<Vec<T>>,
    /// `[T + 1][B, H]` cell states, index 0 is the zero initial state.
    pub cells: Vec<Vec<T>>,
}

pub(crate) fn lstm_forward<T: Real>(
    batch: usize,
    steps: usize,
    features: usize,
    hidden: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
) -> (Vec<T>, LstmCache<T>) {
    let zw = features + hidden;
    let mut h = vec![T::zero(); batch * hidden];
    let mut cache = LstmCache {
        z: Vec::with_capacity(steps),
        gates: Vec::with_capacity(steps),
        cells: vec![vec![T::zero(); batch * hidden]],
    };
    for t in 0..steps {
        let mut z = vec![T::zero(); batch * zw];
        for b in 0..batch {
            let src = &x[(b * steps + t) * features..(b * steps + t + 1) * features];
            z[b * zw..b * zw + features].copy_from_slice(src);
            z[b * zw + features..(b + 1) * zw].copy_from_slice(&h[b * hidden..(b + 1) * hidden]);
        }
        let mut gates = Vec::with_capacity(batch * 4 * hidden);
        for _ in 0..batch {
            gates.extend_from_slice(bias);
        }
        T::gemm(
            batch,
            zw,
            4 * hidden,
            &z,
            zw as isize,
            1,
            weight,
            1,
            zw as isize,
            &mut gates,
            (4 * hidden) as isize,
            1,
            true,
        );
        let prev = cache.cells.last().expect("initial cell state");
        let mut cell = vec![T::zero(); batch * hidden];
        for b in 0..batch {
            let g = &mut gates[b * 4 * hidden..(b + 1) * 4 * hidden];
            for u in 0..hidden {
                g[u] = sigmoid(g[u]);
                g[hidden + u] = sigmoid(g[hidden + u]);
                g[2 * hidden + u] = g[2 * hidden + u].tanh();
                g[3 * hidden + u] = sigmoid(g[3 * hidden + u]);
                let c = g[hidden + u] * prev[b * hidden + u] + g[u] * g[2 * hidden + u];
                cell[b * hidden + u] = c;
                h[b * hidden + u] = g[3 * hidden + u] * c.tanh();
            }
        }
        cache.z.push(z);
        cache.gates.push(gates);
        cache.cells.push(cell);
    }
    (h, cache)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward<T: Real>(
    batch: usize,
    steps: usize,
    features: usize,
    hidden: usize,
    cache: &LstmCache<T>,
    weight: &[T],
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let zw = features + hidden;
    let mut dx = vec![T::zero(); batch * steps * features];
    let mut dh = dout.to_vec();
    let mut dc = vec![T::zero(); batch * hidden];
    let mut dgates = vec![T::zero(); batch * 4 * hidden];
    let mut dz = vec![T::zero(); batch * zw];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t];
        let cell = &cache.cells[t + 1];
        let prev = &cache.cells[t];
        for b in 0..batch {
            let g = &gates[b * 4 * hidden..(b + 1) * 4 * hidden];
            let dg = &mut dgates[b * 4 * hidden..(b + 1) * 4 * hidden];
            for u in 0..hidden {
                let k = b * hidden + u;
                let (i, f, cand, o) = (g[u], g[hidden + u], g[2 * hidden + u], g[3 * hidden + u]);
                let tc = cell[k].tanh();
                let d_o = dh[k] * tc;
                let dcell = dc[k] + dh[k] * o * (T::one() - tc * tc);
                dg[u] = dcell * cand * i * (T::one() - i);
                dg[hidden + u] = dcell * prev[k] * f * (T::one() - f);
                dg[2 * hidden + u] = dcell * i * (T::one() - cand * cand);
                dg[3 * hidden + u] = d_o * o * (T::one() - o);
                dc[k] = dcell * f;
            }
        }
        for row in dgates.chunks(4 * hidden) {
            for (db, d) in dbias.iter_mut().zip(row) {
                *db += *d;
            }
        }
        T::gemm(
            4 * hidden,
            batch,
            zw,
            &dgates,
            1,
            (4 * hidden) as isize,
            &cache.z[t],
            zw as isize,
            1,
            dweight,
            zw as isize,
            1,
            true,
        );
        T::gemm(
            batch,
            4 * hidden,
            zw,
            &dgates,
            (4 * hidden) as isize,
            1,
            weight,
            zw as isize,
            1,
            &mut dz,
            zw as isize,
            1,
            false,
        );
        for b in 0..batch {
            dx[(b * steps + t) * features..(b * steps + t + 1) * features]
                .copy_from_slice(&dz[b * zw..b * zw + features]);
            dh[b * hidden..(b + 1) * hidden].copy_from_slice(&dz[b * zw + features..(b + 1) * zw]);
        }
    }
    dx
}
