//! Differentiable primitives over `[batch, channels, length]` activations.
//!
//! Parameters live in one flat `&[f64]`; each layer stores offsets into it and
//! accumulates gradients into a buffer of the same layout.

use ndarray::{linalg::general_mat_mul, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Allocates parameter ranges while a network is being constructed.
pub struct ParamBuilder<'a> {
    pub values: Vec<f64>,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            values: Vec::new(),
            rng,
        }
    }

    fn alloc_uniform(&mut self, n: usize, bound: f64) -> usize {
        let off = self.values.len();
        for _ in 0..n {
            let v = if bound > 0.0 {
                self.rng.random_range(-bound..bound)
            } else {
                0.0
            };
            self.values.push(v);
        }
        off
    }

    fn alloc_const(&mut self, n: usize, c: f64) -> usize {
        let off = self.values.len();
        self.values.extend(std::iter::repeat_n(c, n));
        off
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    w: usize,
    b: usize,
}

pub struct ConvCache {
    cols: Array2<f64>,
    len_in: usize,
}

impl Conv1d {
    pub fn new(pb: &mut ParamBuilder, c_in: usize, c_out: usize, kernel: usize, stride: usize, zero: bool) -> Self {
        let bound = if zero { 0.0 } else { 1.0 / ((c_in * kernel) as f64).sqrt() };
        let w = pb.alloc_uniform(c_out * c_in * kernel, bound);
        let b = pb.alloc_uniform(c_out, bound);
        Conv1d {
            c_in,
            c_out,
            kernel,
            stride,
            pad: kernel / 2,
            w,
            b,
        }
    }

    pub fn len_out(&self, len_in: usize) -> usize {
        (len_in + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn weight<'p>(&self, p: &'p [f64]) -> ArrayView2<'p, f64> {
        let n = self.c_out * self.c_in * self.kernel;
        ArrayView2::from_shape((self.c_out, self.c_in * self.kernel), &p[self.w..self.w + n])
            .expect("weight shape")
    }

    pub fn forward(&self, p: &[f64], x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (nb, c_in, len_in) = x.dim();
        assert_eq!(c_in, self.c_in, "conv input channels");
        let len_out = self.len_out(len_in);
        let k = self.kernel;
        let ncol = nb * len_out;
        let mut cols = Array2::<f64>::zeros((c_in * k, ncol));
        {
            let x = x.as_standard_layout();
            let xs = x.as_slice().expect("standard layout");
            let cs = cols.as_slice_mut().unwrap();
            for ci in 0..c_in {
                for kk in 0..k {
                    let row = &mut cs[(ci * k + kk) * ncol..(ci * k + kk + 1) * ncol];
                    for bi in 0..nb {
                        let src = &xs[(bi * c_in + ci) * len_in..(bi * c_in + ci + 1) * len_in];
                        let dst = &mut row[bi * len_out..(bi + 1) * len_out];
                        for (t, d) in dst.iter_mut().enumerate() {
                            let s = (t * self.stride + kk) as isize - self.pad as isize;
                            if s >= 0 && (s as usize) < len_in {
                                *d = src[s as usize];
                            }
                        }
                    }
                }
            }
        }
        let mut out2 = Array2::<f64>::zeros((self.c_out, ncol));
        general_mat_mul(1.0, &self.weight(p), &cols, 0.0, &mut out2);
        let bias = &p[self.b..self.b + self.c_out];
        let mut y = Array3::<f64>::zeros((nb, self.c_out, len_out));
        {
            let os = out2.as_slice().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for bi in 0..nb {
                for co in 0..self.c_out {
                    let src = &os[co * ncol + bi * len_out..co * ncol + (bi + 1) * len_out];
                    let dst = &mut ys[(bi * self.c_out + co) * len_out..(bi * self.c_out + co + 1) * len_out];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + bias[co];
                    }
                }
            }
        }
        (y, ConvCache { cols, len_in })
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient
    /// when `need_dx`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &ConvCache,
        dy: &Array3<f64>,
        need_dx: bool,
    ) -> Option<Array3<f64>> {
        let (nb, c_out, len_out) = dy.dim();
        let ncol = nb * len_out;
        let mut dy2 = Array2::<f64>::zeros((c_out, ncol));
        {
            let dy = dy.as_standard_layout();
            let ds = dy.as_slice().expect("standard layout");
            let d2 = dy2.as_slice_mut().unwrap();
            for bi in 0..nb {
                for co in 0..c_out {
                    let src = &ds[(bi * c_out + co) * len_out..(bi * c_out + co + 1) * len_out];
                    d2[co * ncol + bi * len_out..co * ncol + (bi + 1) * len_out].copy_from_slice(src);
                }
            }
        }
        {
            let n = self.c_out * self.c_in * self.kernel;
            let mut gw = ArrayViewMut2::from_shape((self.c_out, self.c_in * self.kernel), &mut g[self.w..self.w + n])
                .expect("weight shape");
            general_mat_mul(1.0, &dy2, &cache.cols.t(), 1.0, &mut gw);
        }
        for (gb, row) in g[self.b..self.b + c_out].iter_mut().zip(dy2.rows()) {
            *gb += row.sum();
        }
        if !need_dx {
            return None;
        }
        let k = self.kernel;
        let mut dcols = Array2::<f64>::zeros((self.c_in * k, ncol));
        general_mat_mul(1.0, &self.weight(p).t(), &dy2, 0.0, &mut dcols);
        let len_in = cache.len_in;
        let mut dx = Array3::<f64>::zeros((nb, self.c_in, len_in));
        {
            let cs = dcols.as_slice().unwrap();
            let xs = dx.as_slice_mut().unwrap();
            for ci in 0..self.c_in {
                for kk in 0..k {
                    let row = &cs[(ci * k + kk) * ncol..(ci * k + kk + 1) * ncol];
                    for bi in 0..nb {
                        let dst = &mut xs[(bi * self.c_in + ci) * len_in..(bi * self.c_in + ci + 1) * len_in];
                        let src = &row[bi * len_out..(bi + 1) * len_out];
                        for (t, v) in src.iter().enumerate() {
                            let s = (t * self.stride + kk) as isize - self.pad as isize;
                            if s >= 0 && (s as usize) < len_in {
                                dst[s as usize] += v;
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    gamma: usize,
    beta: usize,
}

pub struct NormCache {
    xhat: Array3<f64>,
    inv_std: Array2<f64>,
}

const GN_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn new(pb: &mut ParamBuilder, channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0, "{channels} channels not divisible into {groups} groups");
        GroupNorm {
            channels,
            groups,
            gamma: pb.alloc_const(channels, 1.0),
            beta: pb.alloc_const(channels, 0.0),
        }
    }

    pub fn forward(&self, p: &[f64], x: &Array3<f64>) -> (Array3<f64>, NormCache) {
        let (nb, c, len) = x.dim();
        let cg = c / self.groups;
        let n = (cg * len) as f64;
        let gamma = &p[self.gamma..self.gamma + c];
        let beta = &p[self.beta..self.beta + c];
        let mut xhat = Array3::<f64>::zeros((nb, c, len));
        let mut y = Array3::<f64>::zeros((nb, c, len));
        let mut inv_std = Array2::<f64>::zeros((nb, self.groups));
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let hs = xhat.as_slice_mut().unwrap();
        let ys = y.as_slice_mut().unwrap();
        for bi in 0..nb {
            for gi in 0..self.groups {
                let lo = (bi * c + gi * cg) * len;
                let hi = lo + cg * len;
                let seg = &xs[lo..hi];
                let mean = seg.iter().sum::<f64>() / n;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let is = 1.0 / (var + GN_EPS).sqrt();
                inv_std[[bi, gi]] = is;
                for (j, (h, v)) in hs[lo..hi].iter_mut().zip(seg).enumerate() {
                    *h = (v - mean) * is;
                    let ch = gi * cg + j / len;
                    ys[lo + j] = gamma[ch] * *h + beta[ch];
                }
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &NormCache, dy: &Array3<f64>) -> Array3<f64> {
        let (nb, c, len) = dy.dim();
        let cg = c / self.groups;
        let n = (cg * len) as f64;
        let gamma = &p[self.gamma..self.gamma + c];
        let hs = cache.xhat.as_slice().unwrap();
        let dy = dy.as_standard_layout();
        let ds = dy.as_slice().unwrap();
        let mut dx = Array3::<f64>::zeros((nb, c, len));
        let xs = dx.as_slice_mut().unwrap();
        let mut dxhat = vec![0.0; cg * len];
        for bi in 0..nb {
            for gi in 0..self.groups {
                let lo = (bi * c + gi * cg) * len;
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for j in 0..cg * len {
                    let ch = gi * cg + j / len;
                    let d = ds[lo + j];
                    let h = hs[lo + j];
                    g[self.gamma + ch] += d * h;
                    g[self.beta + ch] += d;
                    let dh = d * gamma[ch];
                    dxhat[j] = dh;
                    s1 += dh;
                    s2 += dh * h;
                }
                let (m1, m2) = (s1 / n, s2 / n);
                let is = cache.inv_std[[bi, gi]];
                for j in 0..cg * len {
                    xs[lo + j] = is * (dxhat[j] - m1 - hs[lo + j] * m2);
                }
            }
        }
        dx
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

#[inline]
pub fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    let sig = 1.0 / (1.0 + (-x).exp());
    t + x * (1.0 - t * t) * sig
}

pub fn mish_fwd<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(mish)
}

/// Gradient through Mish given the activation's input `x`.
pub fn mish_bwd<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    dy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut out = dy.clone();
    out.zip_mut_with(x, |d, &v| *d *= mish_grad(v));
    out
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, d_in: usize, d_out: usize, zero: bool) -> Self {
        let bound = if zero { 0.0 } else { 1.0 / (d_in as f64).sqrt() };
        Linear {
            d_in,
            d_out,
            w: pb.alloc_uniform(d_in * d_out, bound),
            b: pb.alloc_uniform(d_out, bound),
        }
    }

    /// Offsets of the weight and bias blocks.
    pub fn param_ranges(&self) -> [std::ops::Range<usize>; 2] {
        [self.w..self.w + self.d_in * self.d_out, self.b..self.b + self.d_out]
    }

    fn weight<'p>(&self, p: &'p [f64]) -> ArrayView2<'p, f64> {
        ArrayView2::from_shape((self.d_out, self.d_in), &p[self.w..self.w + self.d_in * self.d_out])
            .expect("weight shape")
    }

    /// `x`: `[batch, d_in]`.
    pub fn forward(&self, p: &[f64], x: &Array2<f64>) -> Array2<f64> {
        let mut y = Array2::<f64>::zeros((x.nrows(), self.d_out));
        general_mat_mul(1.0, x, &self.weight(p).t(), 0.0, &mut y);
        let bias = &p[self.b..self.b + self.d_out];
        for mut row in y.rows_mut() {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        y
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        {
            let mut gw = ArrayViewMut2::from_shape((self.d_out, self.d_in), &mut g[self.w..self.w + self.d_in * self.d_out])
                .expect("weight shape");
            general_mat_mul(1.0, &dy.t(), x, 1.0, &mut gw);
        }
        for (gb, col) in g[self.b..self.b + self.d_out].iter_mut().zip(dy.axis_iter(Axis(1))) {
            *gb += col.sum();
        }
        let mut dx = Array2::<f64>::zeros((dy.nrows(), self.d_in));
        general_mat_mul(1.0, dy, &self.weight(p), 0.0, &mut dx);
        dx
    }
}

/// Nearest-neighbour doubling along the length axis.
pub fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (nb, c, len) = x.dim();
    Array3::from_shape_fn((nb, c, 2 * len), |(b, ch, t)| x[[b, ch, t / 2]])
}

pub fn upsample2_bwd(dy: &Array3<f64>) -> Array3<f64> {
    let (nb, c, len2) = dy.dim();
    Array3::from_shape_fn((nb, c, len2 / 2), |(b, ch, t)| dy[[b, ch, 2 * t]] + dy[[b, ch, 2 * t + 1]])
}

/// Sinusoidal features of diffusion step indices, `[batch, dim]`.
pub fn step_features(steps: &[usize], dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let scale = (10000f64).ln() / (half.max(2) - 1) as f64;
    Array2::from_shape_fn((steps.len(), dim), |(b, j)| {
        let f = (-(scale * (j % half) as f64)).exp();
        let a = steps[b] as f64 * f;
        if j < half {
            a.sin()
        } else {
            a.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Checks analytic input and parameter gradients of `loss = <w, f(x)>`
    /// against central differences.
    fn check<F, B>(params: &mut [f64], x: &Array3<f64>, f: F, b: B)
    where
        F: Fn(&[f64], &Array3<f64>) -> Array3<f64>,
        B: Fn(&[f64], &mut [f64], &Array3<f64>, &Array3<f64>) -> Array3<f64>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = f(params, x);
        let w = rand3(&mut rng, y.dim());
        let loss = |p: &[f64], x: &Array3<f64>| (&f(p, x) * &w).sum();
        let mut g = vec![0.0; params.len()];
        let dx = b(params, &mut g, x, &w);
        let h = 1e-5;
        for idx in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (loss(params, &xp) - loss(params, &xm)) / (2.0 * h);
            let an = dx.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "dx[{idx}] fd {fd} an {an}");
        }
        for k in (0..params.len()).step_by(3) {
            let orig = params[k];
            params[k] = orig + h;
            let lp = loss(params, x);
            params[k] = orig - h;
            let lm = loss(params, x);
            params[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "dp[{k}] fd {fd} an {}", g[k]);
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, stride) in [(5, 1), (3, 2), (1, 1)] {
            let mut pb = ParamBuilder::new(&mut rng);
            let conv = Conv1d::new(&mut pb, 3, 4, k, stride, false);
            let mut p = pb.values;
            let x = rand3(&mut ChaCha8Rng::seed_from_u64(2), (2, 3, 8));
            check(
                &mut p,
                &x,
                |p, x| conv.forward(p, x).0,
                |p, g, x, dy| {
                    let (_, c) = conv.forward(p, x);
                    conv.backward(p, g, &c, dy, true).unwrap()
                },
            );
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pb = ParamBuilder::new(&mut rng);
        let conv = Conv1d::new(&mut pb, 2, 3, 3, 2, false);
        let p = pb.values;
        let x = rand3(&mut ChaCha8Rng::seed_from_u64(4), (2, 2, 7));
        let (y, _) = conv.forward(&p, &x);
        assert_eq!(y.dim(), (2, 3, 4));
        for b in 0..2 {
            for co in 0..3 {
                for t in 0..4 {
                    let mut acc = p[conv.b + co];
                    for ci in 0..2 {
                        for kk in 0..3 {
                            let s = (t * 2 + kk) as isize - 1;
                            if (0..7).contains(&s) {
                                acc += p[conv.w + (co * 2 + ci) * 3 + kk] * x[[b, ci, s as usize]];
                            }
                        }
                    }
                    assert!((acc - y[[b, co, t]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn groupnorm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pb = ParamBuilder::new(&mut rng);
        let gn = GroupNorm::new(&mut pb, 4, 2);
        let mut p = pb.values;
        for v in p.iter_mut() {
            *v += 0.3;
        }
        let x = rand3(&mut ChaCha8Rng::seed_from_u64(2), (2, 4, 5));
        check(
            &mut p,
            &x,
            |p, x| gn.forward(p, x).0,
            |p, g, x, dy| {
                let (_, c) = gn.forward(p, x);
                gn.backward(p, g, &c, dy)
            },
        );
    }

    #[test]
    fn mish_and_upsample_gradients() {
        let x = rand3(&mut ChaCha8Rng::seed_from_u64(2), (2, 3, 4)) * 4.0;
        check(&mut [], &x, |_, x| mish_fwd(x), |_, _, x, dy| mish_bwd(x, dy));
        check(&mut [], &x, |_, x| upsample2(x), |_, _, _, dy| upsample2_bwd(dy));
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pb = ParamBuilder::new(&mut rng);
        let lin = Linear::new(&mut pb, 6, 4, false);
        let mut p = pb.values;
        let x = rand3(&mut ChaCha8Rng::seed_from_u64(2), (1, 3, 6));
        check(
            &mut p,
            &x,
            |p, x| {
                let x2 = x.index_axis(Axis(0), 0).to_owned();
                lin.forward(p, &x2).insert_axis(Axis(0))
            },
            |p, g, x, dy| {
                let x2 = x.index_axis(Axis(0), 0).to_owned();
                let d2 = dy.index_axis(Axis(0), 0).to_owned();
                lin.backward(p, g, &x2, &d2).insert_axis(Axis(0))
            },
        );
    }

    #[test]
    fn zero_init_layers_output_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pb = ParamBuilder::new(&mut rng);
        let conv = Conv1d::new(&mut pb, 3, 2, 1, 1, true);
        let p = pb.values;
        let x = rand3(&mut ChaCha8Rng::seed_from_u64(2), (2, 3, 5));
        assert!(conv.forward(&p, &x).0.iter().all(|v| *v == 0.0));
    }
}
