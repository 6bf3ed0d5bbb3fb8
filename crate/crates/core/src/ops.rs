//! Differentiable operations on [`Var`].

use crate::autograd::{Ctx, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{Scalar, Tensor};

fn row_split(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().unwrap_or(&1);
    (shape.iter().product::<usize>() / last.max(1), last)
}

impl<T: Scalar> Var<T> {
    /// Elementwise sum. `other` may also omit the leading batch axis of `self`.
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let (a, b) = (self.value(), other.value());
        let broadcast = if a.shape() == b.shape() {
            false
        } else if a.rank() == b.rank() + 1 && &a.shape()[1..] == b.shape() {
            true
        } else {
            return Err(Error::shape("add", a.shape(), b.shape()));
        };
        let mut out = a.clone();
        let inner = b.numel();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (o, &v) in chunk.iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        drop((a, b));
        Var::from_op(
            "add",
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |c: &Ctx<T>| {
                let gb = c.needs[1].then(|| {
                    if broadcast {
                        let inner = c.inputs[1].numel();
                        let mut acc = Tensor::zeros(c.inputs[1].shape().to_vec());
                        for chunk in c.grad.data().chunks(inner) {
                            for (a, &g) in acc.data_mut().iter_mut().zip(chunk) {
                                *a += g;
                            }
                        }
                        acc
                    } else {
                        c.grad.clone()
                    }
                });
                Ok(vec![Some(c.grad.clone()), gb])
            }),
        )
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        let out = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Var::from_op(
            "sub",
            out,
            vec![self.clone(), other.clone()],
            Box::new(|c: &Ctx<T>| Ok(vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))])),
        )
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let out = self.value().zip_map(&other.value(), |a, b| a * b)?;
        Var::from_op(
            "mul",
            out,
            vec![self.clone(), other.clone()],
            Box::new(|c: &Ctx<T>| {
                let ga = c.needs[0]
                    .then(|| c.grad.zip_map(c.inputs[1], |g, b| g * b))
                    .transpose()?;
                let gb = c.needs[1]
                    .then(|| c.grad.zip_map(c.inputs[0], |g, a| g * a))
                    .transpose()?;
                Ok(vec![ga, gb])
            }),
        )
    }

    pub fn scale(&self, s: f64) -> Result<Var<T>> {
        let k = T::lit(s);
        let out = self.value().map(|v| v * k);
        Var::from_op(
            "scale",
            out,
            vec![self.clone()],
            Box::new(move |c: &Ctx<T>| Ok(vec![Some(c.grad.map(|g| g * k))])),
        )
    }

    pub fn relu(&self) -> Result<Var<T>> {
        let out = self.value().map(|v| if v > T::zero() { v } else { T::zero() });
        Var::from_op(
            "relu",
            out,
            vec![self.clone()],
            Box::new(|c: &Ctx<T>| {
                Ok(vec![Some(c.grad.zip_map(c.inputs[0], |g, x| {
                    if x > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                })?)])
            }),
        )
    }

    pub fn sigmoid(&self) -> Result<Var<T>> {
        let out = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        Var::from_op(
            "sigmoid",
            out,
            vec![self.clone()],
            Box::new(|c: &Ctx<T>| Ok(vec![Some(c.grad.zip_map(c.output, |g, y| g * y * (T::one() - y))?)])),
        )
    }

    pub fn softmax_lastdim(&self) -> Result<Var<T>> {
        let x = self.value();
        let (_, cols) = row_split(x.shape());
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        drop(x);
        Var::from_op(
            "softmax",
            out,
            vec![self.clone()],
            Box::new(move |c: &Ctx<T>| {
                let mut gx = c.grad.clone();
                for (grow, yrow) in gx.data_mut().chunks_mut(cols).zip(c.output.data().chunks(cols)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                    for (g, &y) in grow.iter_mut().zip(yrow) {
                        *g = y * (*g - dot);
                    }
                }
                Ok(vec![Some(gx)])
            }),
        )
    }

    pub fn log_softmax_lastdim(&self) -> Result<Var<T>> {
        let x = self.value();
        let (_, cols) = row_split(x.shape());
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        drop(x);
        Var::from_op(
            "log_softmax",
            out,
            vec![self.clone()],
            Box::new(move |c: &Ctx<T>| {
                let mut gx = c.grad.clone();
                for (grow, yrow) in gx.data_mut().chunks_mut(cols).zip(c.output.data().chunks(cols)) {
                    let total: T = grow.iter().copied().sum();
                    for (g, &y) in grow.iter_mut().zip(yrow) {
                        *g -= y.exp() * total;
                    }
                }
                Ok(vec![Some(gx)])
            }),
        )
    }

    pub fn sum(&self) -> Result<Var<T>> {
        let out = Tensor::scalar(self.value().sum());
        Var::from_op(
            "sum",
            out,
            vec![self.clone()],
            Box::new(|c: &Ctx<T>| Ok(vec![Some(Tensor::full(c.inputs[0].shape().to_vec(), c.grad.data()[0]))])),
        )
    }

    pub fn mean(&self) -> Result<Var<T>> {
        let n = self.numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
        let out = self.value().reshape(shape)?;
        Var::from_op(
            "reshape",
            out,
            vec![self.clone()],
            Box::new(|c: &Ctx<T>| Ok(vec![Some(c.grad.reshape(c.inputs[0].shape().to_vec())?)])),
        )
    }

    pub fn transpose_last2(&self) -> Result<Var<T>> {
        let out = self.value().transpose_last2()?;
        Var::from_op(
            "transpose",
            out,
            vec![self.clone()],
            Box::new(|c: &Ctx<T>| Ok(vec![Some(c.grad.transpose_last2()?)])),
        )
    }

    /// `[.., m, k] x [.., k, n]`; leading axes must agree (rank 2 or 3).
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let ok = sa.len() == sb.len()
            && (sa.len() == 2 || sa.len() == 3)
            && sa[..sa.len() - 2] == sb[..sb.len() - 2]
            && sa[sa.len() - 1] == sb[sb.len() - 2];
        if !ok {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let r = sa.len();
        let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let batch = if r == 3 { sa[0] } else { 1 };
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            kernels::gemm(
                false,
                false,
                m,
                n,
                k,
                &a.data()[bi * m * k..(bi + 1) * m * k],
                &b.data()[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let mut shape = sa.clone();
        shape[r - 1] = n;
        drop((a, b));
        Var::from_op(
            "matmul",
            Tensor::new(shape, out)?,
            vec![self.clone(), other.clone()],
            Box::new(move |c: &Ctx<T>| {
                let (a, b, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
                let ga = c.needs[0].then(|| {
                    let mut ga = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        kernels::gemm(
                            false,
                            true,
                            m,
                            k,
                            n,
                            &g[bi * m * n..(bi + 1) * m * n],
                            &b[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                        );
                    }
                    Tensor::new(c.inputs[0].shape().to_vec(), ga)
                });
                let gb = c.needs[1].then(|| {
                    let mut gb = vec![T::zero(); batch * k * n];
                    for bi in 0..batch {
                        kernels::gemm(
                            true,
                            false,
                            k,
                            n,
                            m,
                            &a[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                        );
                    }
                    Tensor::new(c.inputs[1].shape().to_vec(), gb)
                });
                Ok(vec![ga.transpose()?, gb.transpose()?])
            }),
        )
    }

    /// 2-D cross-correlation of `[n, c, h, w]` input with `[out, c/groups, k, k]` weights.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, geom: ConvGeom) -> Result<Var<T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let wv = weight.value();
        if wv.shape() != geom.weight_shape() {
            return Err(Error::shape("conv2d weight", wv.shape(), &geom.weight_shape()));
        }
        let bv = bias.map(|b| b.value());
        if let Some(b) = &bv {
            if b.shape() != [geom.out_channels] {
                return Err(Error::shape("conv2d bias", b.shape(), &[geom.out_channels]));
            }
        }
        let (out, oh, ow) =
            kernels::conv2d_forward(x.data(), n, (c, h, w), wv.data(), bv.as_ref().map(|b| b.data()), &geom)?;
        drop((x, wv, bv));
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Var::from_op(
            "conv2d",
            Tensor::new([n, geom.out_channels, oh, ow], out)?,
            parents,
            Box::new(move |cx: &Ctx<T>| {
                let (dx, dw, db) = kernels::conv2d_backward(
                    cx.inputs[0].data(),
                    n,
                    (c, h, w),
                    cx.inputs[1].data(),
                    &geom,
                    cx.grad.data(),
                    (oh, ow),
                    cx.needs[0],
                    has_bias && cx.needs[2],
                );
                let mut grads = vec![
                    dx.map(|d| Tensor::new([n, c, h, w], d)).transpose()?,
                    Some(Tensor::new(geom.weight_shape(), dw)?),
                ];
                if has_bias {
                    grads.push(db.map(Tensor::from_vec));
                }
                Ok(grads)
            }),
        )
    }

    /// Batch normalization using batch statistics over `(n, h, w)`.
    ///
    /// Returns the output with the per-channel batch mean and biased variance.
    pub fn batch_norm_train(&self, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<(Var<T>, Vec<T>, Vec<T>)> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        check_channel_param("batch_norm gamma", &gamma.value(), c)?;
        check_channel_param("batch_norm beta", &beta.value(), c)?;
        let m = n * h * w;
        if m < 2 {
            return Err(Error::Contract(format!(
                "train-mode batch norm needs more than one value per channel, got shape {:?}",
                x.shape()
            )));
        }
        let plane = h * w;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                s += x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
            let mu = s / T::lit(m as f64);
            let mut sq = T::zero();
            for b in 0..n {
                for &v in &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                    sq += (v - mu) * (v - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = sq / T::lit(m as f64);
        }
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + T::lit(eps)).sqrt()).collect();
        let (gm, bt) = (gamma.value(), beta.value());
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = gm.data()[ch] * (*v - mean[ch]) * inv[ch] + bt.data()[ch];
        }
        drop((x, gm, bt));
        let (mean_c, inv_c) = (mean.clone(), inv);
        let y = Var::from_op(
            "batch_norm",
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |cx: &Ctx<T>| {
                let (x, g, gm) = (cx.inputs[0].data(), cx.grad.data(), cx.inputs[1].data());
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, (&gv, &xv)) in g.iter().zip(x).enumerate() {
                    let ch = (i / plane) % c;
                    sum_g[ch] += gv;
                    sum_gx[ch] += gv * (xv - mean_c[ch]) * inv_c[ch];
                }
                let dx = cx.needs[0].then(|| {
                    let mf = T::lit(m as f64);
                    let data = g
                        .iter()
                        .zip(x)
                        .enumerate()
                        .map(|(i, (&gv, &xv))| {
                            let ch = (i / plane) % c;
                            let xhat = (xv - mean_c[ch]) * inv_c[ch];
                            gm[ch] * inv_c[ch] / mf * (mf * gv - sum_g[ch] - xhat * sum_gx[ch])
                        })
                        .collect();
                    Tensor::new(cx.inputs[0].shape().to_vec(), data)
                });
                Ok(vec![
                    dx.transpose()?,
                    Some(Tensor::from_vec(sum_gx)),
                    Some(Tensor::from_vec(sum_g)),
                ])
            }),
        )?;
        Ok((y, mean, var))
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Var<T>,
        beta: &Var<T>,
        mean: &Tensor<T>,
        var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var<T>> {
        let x = self.value();
        let (_, c, h, w) = x.dims4()?;
        check_channel_param("batch_norm gamma", &gamma.value(), c)?;
        check_channel_param("batch_norm beta", &beta.value(), c)?;
        check_channel_param("batch_norm running_mean", mean, c)?;
        check_channel_param("batch_norm running_var", var, c)?;
        let plane = h * w;
        let mean: Vec<T> = mean.data().to_vec();
        let inv: Vec<T> = var
            .data()
            .iter()
            .map(|&v| T::one() / (v + T::lit(eps)).sqrt())
            .collect();
        let (gm, bt) = (gamma.value(), beta.value());
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = gm.data()[ch] * (*v - mean[ch]) * inv[ch] + bt.data()[ch];
        }
        drop((x, gm, bt));
        Var::from_op(
            "batch_norm",
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |cx: &Ctx<T>| {
                let (x, g, gm) = (cx.inputs[0].data(), cx.grad.data(), cx.inputs[1].data());
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, (&gv, &xv)) in g.iter().zip(x).enumerate() {
                    let ch = (i / plane) % c;
                    sum_g[ch] += gv;
                    sum_gx[ch] += gv * (xv - mean[ch]) * inv[ch];
                }
                let dx = cx.needs[0].then(|| {
                    let data = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| {
                            let ch = (i / plane) % c;
                            gv * gm[ch] * inv[ch]
                        })
                        .collect();
                    Tensor::new(cx.inputs[0].shape().to_vec(), data)
                });
                Ok(vec![
                    dx.transpose()?,
                    Some(Tensor::from_vec(sum_gx)),
                    Some(Tensor::from_vec(sum_g)),
                ])
            }),
        )
    }

    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Var<T>> {
        let out = self.value().narrow_channels(start, len)?;
        Var::from_op(
            "narrow",
            out,
            vec![self.clone()],
            Box::new(move |cx: &Ctx<T>| {
                let (n, c, h, w) = cx.inputs[0].dims4()?;
                let plane = h * w;
                let mut gx = Tensor::zeros([n, c, h, w]);
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    gx.data_mut()[dst..dst + len * plane].copy_from_slice(&cx.grad.data()[src..src + len * plane]);
                }
                Ok(vec![Some(gx)])
            }),
        )
    }

    /// Concatenate along channels.
    pub fn concat_channels(parts: &[Var<T>]) -> Result<Var<T>> {
        let guards: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = guards.iter().map(|g| &**g).collect();
        let out = Tensor::concat_channels(&refs)?;
        let widths: Vec<usize> = refs.iter().map(|t| t.shape()[1]).collect();
        drop(refs);
        drop(guards);
        Var::from_op(
            "concat",
            out,
            parts.to_vec(),
            Box::new(move |cx: &Ctx<T>| {
                let mut start = 0;
                let mut grads = Vec::with_capacity(widths.len());
                for (&wdt, &need) in widths.iter().zip(cx.needs) {
                    grads.push(if need {
                        Some(cx.grad.narrow_channels(start, wdt)?)
                    } else {
                        None
                    });
                    start += wdt;
                }
                Ok(grads)
            }),
        )
    }

    /// `[n, c, h, w] * [n, c, 1, 1]`, broadcasting the gate over space.
    pub fn mul_channel(&self, gate: &Var<T>) -> Result<Var<T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let gv = gate.value();
        if gv.shape() != [n, c, 1, 1] {
            return Err(Error::shape("mul_channel", x.shape(), gv.shape()));
        }
        let plane = h * w;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= gv.data()[i / plane];
        }
        drop((x, gv));
        Var::from_op(
            "mul_channel",
            out,
            vec![self.clone(), gate.clone()],
            Box::new(move |cx: &Ctx<T>| {
                let (x, g, gate) = (cx.inputs[0].data(), cx.grad.data(), cx.inputs[1].data());
                let dx = cx.needs[0].then(|| {
                    let d = g.iter().enumerate().map(|(i, &gv)| gv * gate[i / plane]).collect();
                    Tensor::new([n, c, h, w], d)
                });
                let dg = cx.needs[1].then(|| {
                    let d = (0..n * c)
                        .map(|j| {
                            g[j * plane..(j + 1) * plane]
                                .iter()
                                .zip(&x[j * plane..(j + 1) * plane])
                                .map(|(&a, &b)| a * b)
                                .sum()
                        })
                        .collect();
                    Tensor::new([n, c, 1, 1], d)
                });
                Ok(vec![dx.transpose()?, dg.transpose()?])
            }),
        )
    }

    /// Mean over the spatial axes: `[n, c, h, w] -> [n, c, 1, 1]`.
    pub fn mean_spatial(&self) -> Result<Var<T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let plane = h * w;
        let inv = T::lit(1.0 / plane as f64);
        let data = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        drop(x);
        Var::from_op(
            "mean_spatial",
            Tensor::new([n, c, 1, 1], data)?,
            vec![self.clone()],
            Box::new(move |cx: &Ctx<T>| {
                let g = cx.grad.data();
                Ok(vec![Some(Tensor::from_fn([n, c, h, w], |i| g[i / plane] * inv))])
            }),
        )
    }

    /// `x [n, in] -> x · weightᵀ + bias`, with `weight [out, in]`.
    pub fn linear(&self, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        let x = self.value();
        let wv = weight.value();
        let (n, fin) = match x.shape() {
            [n, f] => (*n, *f),
            s => return Err(Error::shape("linear", s, wv.shape())),
        };
        let fout = match wv.shape() {
            [o, i] if *i == fin => *o,
            s => return Err(Error::shape("linear", x.shape(), s)),
        };
        let mut out = vec![T::zero(); n * fout];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [fout] {
                return Err(Error::shape("linear bias", bv.shape(), &[fout]));
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        kernels::gemm(false, true, n, fout, fin, x.data(), wv.data(), &mut out);
        drop((x, wv));
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Var::from_op(
            "linear",
            Tensor::new([n, fout], out)?,
            parents,
            Box::new(move |cx: &Ctx<T>| {
                let (x, w, g) = (cx.inputs[0].data(), cx.inputs[1].data(), cx.grad.data());
                let dx = cx.needs[0].then(|| {
                    let mut d = vec![T::zero(); n * fin];
                    kernels::gemm(false, false, n, fin, fout, g, w, &mut d);
                    Tensor::new([n, fin], d)
                });
                let mut dw = vec![T::zero(); fout * fin];
                kernels::gemm(true, false, fout, fin, n, g, x, &mut dw);
                let mut grads = vec![dx.transpose()?, Some(Tensor::new([fout, fin], dw)?)];
                if has_bias {
                    let mut db = vec![T::zero(); fout];
                    for row in g.chunks(fout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    grads.push(Some(Tensor::from_vec(db)));
                }
                Ok(grads)
            }),
        )
    }

    /// Mean negative log-likelihood of `labels` under row-wise log-probabilities `[n, k]`.
    pub fn nll(&self, labels: &[usize]) -> Result<Var<T>> {
        let lp = self.value();
        let (n, k) = match lp.shape() {
            [n, k] => (*n, *k),
            s => return Err(Error::shape("nll", s, &[labels.len()])),
        };
        if labels.len() != n {
            return Err(Error::shape("nll", lp.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Contract(format!("label {bad} out of range for {k} classes")));
        }
        let total: T = labels.iter().enumerate().map(|(i, &l)| lp.data()[i * k + l]).sum();
        let out = Tensor::scalar(-total / T::lit(n as f64));
        drop(lp);
        let labels = labels.to_vec();
        Var::from_op(
            "nll",
            out,
            vec![self.clone()],
            Box::new(move |cx: &Ctx<T>| {
                let scale = -cx.grad.data()[0] / T::lit(n as f64);
                let mut gx = Tensor::zeros([n, k]);
                for (i, &l) in labels.iter().enumerate() {
                    gx.data_mut()[i * k + l] = scale;
                }
                Ok(vec![Some(gx)])
            }),
        )
    }
}

fn check_channel_param<T: Scalar>(what: &'static str, t: &Tensor<T>, c: usize) -> Result<()> {
    if t.shape() != [c] {
        return Err(Error::shape(what, t.shape(), &[c]));
    }
    Ok(())
}
