//! Temporal U-Net noise model and the value network built from its
//! downsampling half.

use ndarray::{concatenate, s, Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    mish_bwd, mish_fwd, step_features, upsample2, upsample2_bwd, Conv1d, ConvCache, GroupNorm, Linear, NormCache,
    ParamBuilder,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Channels at the finest resolution; also the step-embedding width.
    pub base_width: usize,
    /// Channel multiplier per resolution level.
    pub dim_mults: Vec<usize>,
    pub blocks_per_level: usize,
    pub kernel: usize,
    pub groups: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            base_width: 32,
            dim_mults: vec![1, 2, 4],
            blocks_per_level: 2,
            kernel: 5,
            groups: 8,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_mults.is_empty() || self.dim_mults.contains(&0) {
            return Err(Error::rejected("dim_mults must be non-empty and positive"));
        }
        if self.blocks_per_level == 0 {
            return Err(Error::rejected("blocks_per_level must be at least 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::rejected(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.base_width < 4 || self.groups == 0 || self.dims().iter().any(|d| d % self.groups != 0) {
            return Err(Error::rejected(format!(
                "every level width must be divisible by {} groups",
                self.groups
            )));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        self.dim_mults.iter().map(|m| m * self.base_width).collect()
    }

    /// Total length reduction between input and bottleneck.
    pub fn length_factor(&self) -> usize {
        1 << (self.dim_mults.len() - 1)
    }

    /// Internal sequence length used for a horizon.
    pub fn padded_len(&self, horizon: usize) -> usize {
        horizon.div_ceil(self.length_factor()) * self.length_factor()
    }
}

struct ResBlock {
    conv1: Conv1d,
    gn1: GroupNorm,
    conv2: Conv1d,
    gn2: GroupNorm,
    tproj: Linear,
    res: Option<Conv1d>,
}

struct ResCache {
    c1: ConvCache,
    n1c: NormCache,
    n1: Array3<f64>,
    c2: ConvCache,
    n2c: NormCache,
    n2: Array3<f64>,
    rc: Option<ConvCache>,
}

impl ResBlock {
    fn new(pb: &mut ParamBuilder, c_in: usize, c_out: usize, temb: usize, a: &ArchConfig) -> Self {
        ResBlock {
            conv1: Conv1d::new(pb, c_in, c_out, a.kernel, 1, false),
            gn1: GroupNorm::new(pb, c_out, a.groups),
            conv2: Conv1d::new(pb, c_out, c_out, a.kernel, 1, false),
            gn2: GroupNorm::new(pb, c_out, a.groups),
            tproj: Linear::new(pb, temb, c_out, false),
            res: (c_in != c_out).then(|| Conv1d::new(pb, c_in, c_out, 1, 1, false)),
        }
    }

    fn forward(&self, p: &[f64], x: &Array3<f64>, temb_act: &Array2<f64>) -> (Array3<f64>, ResCache) {
        let (a1, c1) = self.conv1.forward(p, x);
        let (n1, n1c) = self.gn1.forward(p, &a1);
        let mut h = mish_fwd(&n1);
        let tp = self.tproj.forward(p, temb_act);
        h += &tp.insert_axis(Axis(2));
        let (a2, c2) = self.conv2.forward(p, &h);
        let (n2, n2c) = self.gn2.forward(p, &a2);
        let mut out = mish_fwd(&n2);
        let rc = match &self.res {
            Some(r) => {
                let (rx, rc) = r.forward(p, x);
                out += &rx;
                Some(rc)
            }
            None => {
                out += x;
                None
            }
        };
        (
            out,
            ResCache {
                c1,
                n1c,
                n1,
                c2,
                n2c,
                n2,
                rc,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        c: &ResCache,
        temb_act: &Array2<f64>,
        dtemb_act: &mut Array2<f64>,
        dout: &Array3<f64>,
        need_dx: bool,
    ) -> Option<Array3<f64>> {
        let dn2 = mish_bwd(&c.n2, dout);
        let da2 = self.gn2.backward(p, g, &c.n2c, &dn2);
        let dh = self.conv2.backward(p, g, &c.c2, &da2, true).expect("dx requested");
        let dtp = dh.sum_axis(Axis(2));
        *dtemb_act += &self.tproj.backward(p, g, temb_act, &dtp);
        let dn1 = mish_bwd(&c.n1, &dh);
        let da1 = self.gn1.backward(p, g, &c.n1c, &dn1);
        let dx = self.conv1.backward(p, g, &c.c1, &da1, need_dx);
        let skip = match (&self.res, &c.rc) {
            (Some(r), Some(rc)) => r.backward(p, g, rc, dout, need_dx),
            _ => need_dx.then(|| dout.clone()),
        };
        match (dx, skip) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        }
    }
}

struct Level {
    blocks: Vec<ResBlock>,
    resample: Option<Conv1d>,
}

/// Step-embedding MLP, downsampling path and first bottleneck block.
struct Encoder {
    time1: Linear,
    time2: Linear,
    temb_dim: usize,
    levels: Vec<Level>,
    mid: ResBlock,
}

struct EncCache {
    feats: Array2<f64>,
    t1: Array2<f64>,
    temb: Array2<f64>,
    temb_act: Array2<f64>,
    levels: Vec<(Vec<ResCache>, Option<ConvCache>)>,
    mid: ResCache,
}

impl Encoder {
    fn new(pb: &mut ParamBuilder, a: &ArchConfig, features: usize) -> Self {
        let w = a.base_width;
        let time1 = Linear::new(pb, w, 4 * w, false);
        let time2 = Linear::new(pb, 4 * w, w, false);
        let dims = a.dims();
        let n = dims.len();
        let mut levels = Vec::with_capacity(n);
        let mut c_in = features;
        for (i, &d) in dims.iter().enumerate() {
            let blocks = (0..a.blocks_per_level)
                .map(|b| ResBlock::new(pb, if b == 0 { c_in } else { d }, d, w, a))
                .collect();
            let resample = (i + 1 < n).then(|| Conv1d::new(pb, d, d, 3, 2, false));
            levels.push(Level { blocks, resample });
            c_in = d;
        }
        let mid = ResBlock::new(pb, c_in, c_in, w, a);
        Encoder {
            time1,
            time2,
            temb_dim: w,
            levels,
            mid,
        }
    }

    /// Returns the bottleneck activation and the per-level skip tensors.
    fn forward(&self, p: &[f64], x: &Array3<f64>, steps: &[usize]) -> (Array3<f64>, Vec<Array3<f64>>, EncCache) {
        let feats = step_features(steps, self.temb_dim);
        let t1 = self.time1.forward(p, &feats);
        let temb = self.time2.forward(p, &mish_fwd(&t1));
        let temb_act = mish_fwd(&temb);
        let mut h = x.clone();
        let mut skips = Vec::with_capacity(self.levels.len());
        let mut lcache = Vec::with_capacity(self.levels.len());
        for lvl in &self.levels {
            let mut bc = Vec::with_capacity(lvl.blocks.len());
            for b in &lvl.blocks {
                let (o, c) = b.forward(p, &h, &temb_act);
                h = o;
                bc.push(c);
            }
            skips.push(h.clone());
            let dc = lvl.resample.as_ref().map(|d| {
                let (o, c) = d.forward(p, &h);
                h = o;
                c
            });
            lcache.push((bc, dc));
        }
        let (h, mid) = self.mid.forward(p, &h, &temb_act);
        (
            h,
            skips,
            EncCache {
                feats,
                t1,
                temb,
                temb_act,
                levels: lcache,
                mid,
            },
        )
    }

    /// Backpropagates from the bottleneck output and skip gradients, then
    /// through the step embedding using everything accumulated in `dtemb_act`.
    fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        c: &EncCache,
        dmid: &Array3<f64>,
        dskips: Vec<Option<Array3<f64>>>,
        mut dtemb_act: Array2<f64>,
        need_dx: bool,
    ) -> Option<Array3<f64>> {
        let mut dh = self
            .mid
            .backward(p, g, &c.mid, &c.temb_act, &mut dtemb_act, dmid, true)
            .expect("dx requested");
        let mut dx = None;
        for (li, (lvl, (bc, dc))) in self.levels.iter().zip(&c.levels).enumerate().rev() {
            if let (Some(d), Some(dc)) = (&lvl.resample, dc) {
                dh = d.backward(p, g, dc, &dh, true).expect("dx requested");
            }
            if let Some(ds) = &dskips[li] {
                dh += ds;
            }
            for (bi, (b, bcache)) in lvl.blocks.iter().zip(bc).enumerate().rev() {
                let first = li == 0 && bi == 0;
                let r = b.backward(p, g, bcache, &c.temb_act, &mut dtemb_act, &dh, !first || need_dx);
                if first {
                    dx = r;
                } else {
                    dh = r.expect("dx requested");
                }
            }
        }
        let dtemb = mish_bwd(&c.temb, &dtemb_act);
        let dt1a = self.time2.backward(p, g, &mish_fwd(&c.t1), &dtemb);
        let dt1 = mish_bwd(&c.t1, &dt1a);
        self.time1.backward(p, g, &c.feats, &dt1);
        dx
    }
}

/// Pads `[batch, channels, h]` to `len` by repeating the last step.
fn pad_edge(x: &Array3<f64>, len: usize) -> Array3<f64> {
    let (nb, c, h) = x.dim();
    if h == len {
        return x.clone();
    }
    Array3::from_shape_fn((nb, c, len), |(b, ch, t)| x[[b, ch, t.min(h - 1)]])
}

fn pad_edge_bwd(dy: &Array3<f64>, h: usize) -> Array3<f64> {
    let mut dx = dy.slice(s![.., .., ..h]).to_owned();
    let tail = dy.slice(s![.., .., h..]).sum_axis(Axis(2));
    let mut last = dx.slice_mut(s![.., .., h - 1]);
    last += &tail;
    dx
}

/// Noise-prediction network over `[batch, features, horizon]` inputs.
pub struct UNet {
    pub arch: ArchConfig,
    pub features: usize,
    pub horizon: usize,
    enc: Encoder,
    mid2: ResBlock,
    ups: Vec<Level>,
    fconv: Conv1d,
    fgn: GroupNorm,
    out: Conv1d,
    /// Per-channel gain on the input, predicted from the step embedding.
    gain: Linear,
    n_params: usize,
}

pub struct UNetCache {
    enc: EncCache,
    mid2: ResCache,
    ups: Vec<(Vec<ResCache>, Option<ConvCache>)>,
    fc: ConvCache,
    fnc: NormCache,
    fn_: Array3<f64>,
    oc: ConvCache,
    xp: Array3<f64>,
}

impl UNet {
    /// Builds the network and its freshly initialised parameters.
    pub fn new(arch: &ArchConfig, features: usize, horizon: usize, seed: u64) -> Result<(UNet, Vec<f64>)> {
        arch.validate()?;
        if horizon == 0 {
            return Err(Error::rejected("horizon must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let enc = Encoder::new(&mut pb, arch, features);
        let dims = arch.dims();
        let n = dims.len();
        let last = dims[n - 1];
        let mid2 = ResBlock::new(&mut pb, last, last, arch.base_width, arch);
        let mut ups = Vec::new();
        let mut c_in = last;
        for i in (0..n).rev() {
            let d = dims[i];
            let blocks = (0..arch.blocks_per_level)
                .map(|b| ResBlock::new(&mut pb, if b == 0 { c_in + d } else { d }, d, arch.base_width, arch))
                .collect();
            let resample = (i > 0).then(|| Conv1d::new(&mut pb, d, dims[i - 1], 3, 1, false));
            ups.push(Level { blocks, resample });
            c_in = if i > 0 { dims[i - 1] } else { d };
        }
        let fconv = Conv1d::new(&mut pb, c_in, c_in, arch.kernel, 1, false);
        let fgn = GroupNorm::new(&mut pb, c_in, arch.groups);
        // The projection also sees the (padded) input directly.
        let out = Conv1d::new(&mut pb, c_in + features, features, 1, 1, true);
        let gain = Linear::new(&mut pb, arch.base_width, features, true);
        let params = pb.values;
        Ok((
            UNet {
                arch: arch.clone(),
                features,
                horizon,
                enc,
                mid2,
                ups,
                fconv,
                fgn,
                out,
                gain,
                n_params: params.len(),
            },
            params,
        ))
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn forward(&self, p: &[f64], x: &Array3<f64>, steps: &[usize]) -> (Array3<f64>, UNetCache) {
        let h0 = x.dim().2;
        let xp = pad_edge(x, self.arch.padded_len(h0));
        let (h, mut skips, enc) = self.enc.forward(p, &xp, steps);
        let (mut h, mid2) = self.mid2.forward(p, &h, &enc.temb_act);
        let mut ups = Vec::with_capacity(self.ups.len());
        for lvl in &self.ups {
            let skip = skips.pop().expect("skip per level");
            h = concatenate(Axis(1), &[h.view(), skip.view()]).expect("matching lengths");
            let mut bc = Vec::new();
            for b in &lvl.blocks {
                let (o, c) = b.forward(p, &h, &enc.temb_act);
                h = o;
                bc.push(c);
            }
            let uc = lvl.resample.as_ref().map(|conv| {
                let (o, uc) = conv.forward(p, &upsample2(&h));
                h = o;
                uc
            });
            ups.push((bc, uc));
        }
        let (a, fc) = self.fconv.forward(p, &h);
        let (fn_, fnc) = self.fgn.forward(p, &a);
        let head_in = concatenate(Axis(1), &[mish_fwd(&fn_).view(), xp.view()]).expect("matching lengths");
        let (mut y, oc) = self.out.forward(p, &head_in);
        // Noise prediction needs an input scale that varies strongly with the
        // step, which the normalized feature path cannot supply.
        let gain = self.gain.forward(p, &enc.temb_act);
        for ((b, ch, t), v) in y.indexed_iter_mut() {
            *v += gain[[b, ch]] * xp[[b, ch, t]];
        }
        let y = y.slice(s![.., .., ..h0]).to_owned();
        (
            y,
            UNetCache {
                enc,
                mid2,
                ups,
                fc,
                fnc,
                fn_,
                oc,
                xp,
            },
        )
    }

    pub fn predict(&self, p: &[f64], x: &Array3<f64>, steps: &[usize]) -> Array3<f64> {
        self.forward(p, x, steps).0
    }

    /// Accumulates parameter gradients of `<dy, output>` into `g`.
    pub fn backward(&self, p: &[f64], g: &mut [f64], c: &UNetCache, dy: &Array3<f64>) {
        let (nb, ch, h0) = dy.dim();
        let len = self.arch.padded_len(h0);
        let mut dyp = Array3::<f64>::zeros((nb, ch, len));
        dyp.slice_mut(s![.., .., ..h0]).assign(dy);
        let dhead = self
            .out
            .backward(p, g, &c.oc, &dyp, true)
            .expect("dx requested");
        let dfn = dhead.slice(s![.., ..c.fn_.dim().1, ..]).to_owned();
        let da = self.fgn.backward(p, g, &c.fnc, &mish_bwd(&c.fn_, &dfn));
        let mut dh = self.fconv.backward(p, g, &c.fc, &da, true).expect("dx requested");
        let temb_act = &c.enc.temb_act;
        let dgain = Array2::from_shape_fn((nb, ch), |(b, k)| {
            (0..len).map(|t| dyp[[b, k, t]] * c.xp[[b, k, t]]).sum::<f64>()
        });
        let mut dtemb_act = self.gain.backward(p, g, temb_act, &dgain);
        let n_levels = self.enc.levels.len();
        let mut dskips: Vec<Option<Array3<f64>>> = vec![None; n_levels];
        for (ui, (lvl, (bc, uc))) in self.ups.iter().zip(&c.ups).enumerate().rev() {
            if let (Some(conv), Some(uc)) = (&lvl.resample, uc) {
                let du = conv.backward(p, g, uc, &dh, true).expect("dx requested");
                dh = upsample2_bwd(&du);
            }
            for (b, bcache) in lvl.blocks.iter().zip(bc).rev() {
                dh = b
                    .backward(p, g, bcache, temb_act, &mut dtemb_act, &dh, true)
                    .expect("dx requested");
            }
            let skip_level = n_levels - 1 - ui;
            let c_skip = self.arch.dims()[skip_level];
            let c_h = dh.dim().1 - c_skip;
            dskips[skip_level] = Some(dh.slice(s![.., c_h.., ..]).to_owned());
            dh = dh.slice(s![.., ..c_h, ..]).to_owned();
        }
        let dmid = self
            .mid2
            .backward(p, g, &c.mid2, temb_act, &mut dtemb_act, &dh, true)
            .expect("dx requested");
        self.enc.backward(p, g, &c.enc, &dmid, dskips, dtemb_act, false);
    }
}

/// Scalar return predictor: the U-Net's downsampling half plus a linear head.
pub struct ValueNet {
    pub arch: ArchConfig,
    pub features: usize,
    pub horizon: usize,
    enc: Encoder,
    head: Linear,
    n_params: usize,
}

pub struct ValueCache {
    enc: EncCache,
    flat: Array2<f64>,
    mid_dim: (usize, usize, usize),
    h0: usize,
}

impl ValueNet {
    pub fn new(arch: &ArchConfig, features: usize, horizon: usize, seed: u64) -> Result<(ValueNet, Vec<f64>)> {
        arch.validate()?;
        if horizon == 0 {
            return Err(Error::rejected("horizon must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let enc = Encoder::new(&mut pb, arch, features);
        let last = *arch.dims().last().expect("non-empty");
        let flat = last * arch.padded_len(horizon) / arch.length_factor();
        let head = Linear::new(&mut pb, flat, 1, true);
        let params = pb.values;
        Ok((
            ValueNet {
                arch: arch.clone(),
                features,
                horizon,
                enc,
                head,
                n_params: params.len(),
            },
            params,
        ))
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Parameter ranges of the output layer's weight and bias.
    pub fn head_ranges(&self) -> [std::ops::Range<usize>; 2] {
        self.head.param_ranges()
    }

    /// `x`: `[batch, features, horizon]`; returns one value per batch element.
    pub fn forward(&self, p: &[f64], x: &Array3<f64>, steps: &[usize]) -> (Array1<f64>, ValueCache) {
        let h0 = x.dim().2;
        assert_eq!(
            self.arch.padded_len(h0),
            self.arch.padded_len(self.horizon),
            "value network built for horizon {}, got {h0}",
            self.horizon
        );
        let xp = pad_edge(x, self.arch.padded_len(h0));
        let (h, _, enc) = self.enc.forward(p, &xp, steps);
        let mid_dim = h.dim();
        let flat = h
            .into_shape_with_order((mid_dim.0, mid_dim.1 * mid_dim.2))
            .expect("contiguous");
        let y = self.head.forward(p, &flat).remove_axis(Axis(1));
        (
            y,
            ValueCache {
                enc,
                flat,
                mid_dim,
                h0,
            },
        )
    }

    pub fn predict(&self, p: &[f64], x: &Array3<f64>, steps: &[usize]) -> Array1<f64> {
        self.forward(p, x, steps).0
    }

    /// Accumulates parameter gradients of `<dy, output>`; returns the input
    /// gradient when `need_dx`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        c: &ValueCache,
        dy: &Array1<f64>,
        need_dx: bool,
    ) -> Option<Array3<f64>> {
        let dflat = self.head.backward(p, g, &c.flat, &dy.clone().insert_axis(Axis(1)));
        let dmid = dflat.into_shape_with_order(c.mid_dim).expect("contiguous");
        let dtemb_act = Array2::<f64>::zeros(c.enc.temb_act.dim());
        let dskips = vec![None; self.enc.levels.len()];
        self.enc
            .backward(p, g, &c.enc, &dmid, dskips, dtemb_act, need_dx)
            .map(|dx| pad_edge_bwd(&dx, c.h0))
    }
}
