//! Raw numeric kernels on row-major slices.
//!
//! Every output element is produced by exactly one task with a fixed
//! summation order, so results do not depend on the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Below this many multiply-adds a kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

/// `c += op(a) * op(b)` with `op(a)` of shape `[m, k]` and `op(b)` of shape `[k, n]`.
///
/// When `trans_a` is set `a` is stored as `[k, m]`; when `trans_b` is set `b` is stored as `[n, k]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(trans_a: bool, trans_b: bool, m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, crow: &mut [T]| {
        let a_at = |p: usize| if trans_a { a[p * m + i] } else { a[i * k + p] };
        if trans_b {
            for (j, out) in crow.iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (p, &bv) in brow.iter().enumerate() {
                    acc += a_at(p) * bv;
                }
                *out += acc;
            }
        } else {
            for p in 0..k {
                let av = a_at(p);
                let brow = &b[p * n..(p + 1) * n];
                for (out, &bv) in crow.iter_mut().zip(brow) {
                    *out += av * bv;
                }
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| row(i, crow));
    } else {
        c.chunks_mut(n).enumerate().for_each(|(i, crow)| row(i, crow));
    }
}

/// Geometry of a 2-D convolution with square kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || groups == 0 {
            return Err(Error::Config(format!(
                "conv extents must be positive: in={in_channels} out={out_channels} k={kernel} s={stride} g={groups}"
            )));
        }
        for (what, value) in [("in_channels", in_channels), ("out_channels", out_channels)] {
            if value % groups != 0 {
                return Err(Error::Divisibility {
                    what: what.to_string(),
                    value,
                    divisor: groups,
                });
            }
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
        })
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, 1, 1, 0, 1)
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        Self::new(channels, channels, kernel, stride, kernel / 2, channels)
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_per_group(), self.kernel, self.kernel]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::Contract(format!(
                "input {h}x{w} with padding {} is smaller than kernel {}",
                self.padding, self.kernel
            )));
        }
        Ok((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }

    fn is_plain_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0 && self.groups == 1
    }
}

/// Shape of a feature map without batch: `(channels, height, width)`.
pub type Chw = (usize, usize, usize);

/// Forward cross-correlation. Returns the `[n, out, oh, ow]` buffer and `(oh, ow)`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    n: usize,
    (c, h, w): Chw,
    weight: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Result<(Vec<T>, usize, usize)> {
    if c != g.in_channels {
        return Err(Error::shape("conv2d", &[n, c, h, w], &g.weight_shape()));
    }
    let (oh, ow) = g.output_hw(h, w)?;
    let oc_total = g.out_channels;
    let plane_out = oh * ow;
    let mut out = vec![T::zero(); n * oc_total * plane_out];

    if g.is_plain_pointwise() {
        let hw = h * w;
        for b in 0..n {
            let xo = &x[b * c * hw..(b + 1) * c * hw];
            let yo = &mut out[b * oc_total * hw..(b + 1) * oc_total * hw];
            if let Some(bias) = bias {
                for (o, plane) in yo.chunks_mut(hw).enumerate() {
                    plane.fill(bias[o]);
                }
            }
            gemm(false, false, oc_total, hw, c, weight, xo, yo);
        }
        return Ok((out, oh, ow));
    }

    let cin_g = g.in_per_group();
    let cout_g = g.out_per_group();
    let k = g.kernel;
    let (s, p) = (g.stride as isize, g.padding as isize);
    let work = n * oc_total * plane_out * cin_g * k * k;
    let plane_fn = |idx: usize, yplane: &mut [T]| {
        let b = idx / oc_total;
        let oc = idx % oc_total;
        let grp = oc / cout_g;
        if let Some(bias) = bias {
            yplane.fill(bias[oc]);
        }
        for icl in 0..cin_g {
            let ic = grp * cin_g + icl;
            let xplane = &x[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
            for kh in 0..k {
                for kw in 0..k {
                    let wv = weight[((oc * cin_g + icl) * k + kh) * k + kw];
                    for oy in 0..oh {
                        let iy = oy as isize * s + kh as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[iy as usize * w..(iy as usize + 1) * w];
                        let yrow = &mut yplane[oy * ow..(oy + 1) * ow];
                        for (ox, yv) in yrow.iter_mut().enumerate() {
                            let ix = ox as isize * s + kw as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *yv += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    };
    if work >= PAR_THRESHOLD {
        out.par_chunks_mut(plane_out)
            .enumerate()
            .for_each(|(i, pl)| plane_fn(i, pl));
    } else {
        out.chunks_mut(plane_out)
            .enumerate()
            .for_each(|(i, pl)| plane_fn(i, pl));
    }
    Ok((out, oh, ow))
}

/// Gradients of a convolution: `(d_input, d_weight, d_bias)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    n: usize,
    (c, h, w): Chw,
    weight: &[T],
    g: &ConvGeom,
    dy: &[T],
    (oh, ow): (usize, usize),
    need_input: bool,
    need_bias: bool,
) -> (Option<Vec<T>>, Vec<T>, Option<Vec<T>>) {
    let oc_total = g.out_channels;
    let plane_out = oh * ow;
    let hw = h * w;

    let d_bias = need_bias.then(|| {
        (0..oc_total)
            .map(|oc| {
                let mut acc = T::zero();
                for b in 0..n {
                    let base = (b * oc_total + oc) * plane_out;
                    for &v in &dy[base..base + plane_out] {
                        acc += v;
                    }
                }
                acc
            })
            .collect()
    });

    if g.is_plain_pointwise() {
        let mut dw = vec![T::zero(); oc_total * c];
        let mut dx = need_input.then(|| vec![T::zero(); n * c * hw]);
        for b in 0..n {
            let xo = &x[b * c * hw..(b + 1) * c * hw];
            let dyo = &dy[b * oc_total * hw..(b + 1) * oc_total * hw];
            gemm(false, true, oc_total, c, hw, dyo, xo, &mut dw);
            if let Some(dx) = dx.as_mut() {
                gemm(
                    true,
                    false,
                    c,
                    hw,
                    oc_total,
                    weight,
                    dyo,
                    &mut dx[b * c * hw..(b + 1) * c * hw],
                );
            }
        }
        return (dx, dw, d_bias);
    }

    let cin_g = g.in_per_group();
    let cout_g = g.out_per_group();
    let k = g.kernel;
    let (s, p) = (g.stride as isize, g.padding as isize);

    let mut dw = vec![T::zero(); oc_total * cin_g * k * k];
    dw.par_chunks_mut(cin_g * k * k).enumerate().for_each(|(oc, dwo)| {
        let grp = oc / cout_g;
        for b in 0..n {
            let dyplane = &dy[(b * oc_total + oc) * plane_out..(b * oc_total + oc + 1) * plane_out];
            for icl in 0..cin_g {
                let ic = grp * cin_g + icl;
                let xplane = &x[(b * c + ic) * hw..(b * c + ic + 1) * hw];
                for kh in 0..k {
                    for kw in 0..k {
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let iy = oy as isize * s + kh as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = ox as isize * s + kw as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    acc += dyplane[oy * ow + ox] * xplane[iy as usize * w + ix as usize];
                                }
                            }
                        }
                        dwo[(icl * k + kh) * k + kw] += acc;
                    }
                }
            }
        }
    });

    if !need_input {
        return (None, dw, d_bias);
    }
    let mut dx = vec![T::zero(); n * c * hw];
    dx.par_chunks_mut(hw).enumerate().for_each(|(idx, dxplane)| {
        let b = idx / c;
        let ic = idx % c;
        let grp = ic / cin_g;
        let icl = ic % cin_g;
        for ocl in 0..cout_g {
            let oc = grp * cout_g + ocl;
            let dyplane = &dy[(b * oc_total + oc) * plane_out..(b * oc_total + oc + 1) * plane_out];
            for kh in 0..k {
                for kw in 0..k {
                    let wv = weight[((oc * cin_g + icl) * k + kh) * k + kw];
                    for oy in 0..oh {
                        let iy = oy as isize * s + kh as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = ox as isize * s + kw as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dxplane[iy as usize * w + ix as usize] += wv * dyplane[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    });
    (Some(dx), dw, d_bias)
}
