//! Cascaded group attention and the full transformer block around it.
//!
//! Each head sees its own channel slice; from the second head on, the slice
//! is summed with the previous head's output before attention is computed.

use std::sync::Arc;

use crate::analytics::{CostRow, LayerKind};
use crate::autograd::Var;
use crate::ccffn::{CcFfn, CcFfnConfig};
use crate::error::{Error, Result};
use crate::kernels::{Chw, ConvGeom};
use crate::nn::{join, residual, ConvBn, Layer, Visitor};
use crate::rng::Generator;
use crate::tensor::Scalar;

/// Query/key width per head.
pub const KEY_DIM: usize = 16;
/// Kernel of the depthwise conv applied to each head's queries.
pub const QUERY_KERNEL: usize = 3;

/// `v · softmax(qᵀk · scale)ᵀ` for `q, k: [n, d, t]`, `v: [n, c, t]`.
///
/// Returns the output `[n, c, t]` and the attention map `[n, t, t]` whose rows
/// are indexed by query position.
pub fn attention<T: Scalar>(q: &Var<T>, k: &Var<T>, v: &Var<T>, scale: f64) -> Result<(Var<T>, Var<T>)> {
    let logits = q.transpose_last2()?.matmul(k)?.scale(scale)?;
    let attn = logits.softmax_lastdim()?;
    let out = v.matmul(&attn.transpose_last2()?)?;
    Ok((out, attn))
}

pub struct Cga<T: Scalar = f32> {
    pub dim: usize,
    pub head_dim: usize,
    pub key_dim: usize,
    pub qkvs: Vec<ConvBn<T>>,
    pub query_dws: Vec<ConvBn<T>>,
    pub proj: ConvBn<T>,
}

/// Intermediate results of one attention pass.
pub struct CgaTrace<T: Scalar> {
    /// Per-head outputs `[n, head_dim, h, w]` before concatenation.
    pub heads: Vec<Var<T>>,
    /// Per-head attention maps `[n, h·w, h·w]`.
    pub attention: Vec<Var<T>>,
    pub output: Var<T>,
}

impl<T: Scalar> Cga<T> {
    /// Heads split `dim` evenly; indivisible widths are rejected.
    pub fn new(dim: usize, heads: usize, rng: &mut Generator) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Divisibility {
                what: "attention dim".into(),
                value: dim,
                divisor: heads,
            });
        }
        Self::with_head_dim(dim, heads, dim / heads, KEY_DIM, rng)
    }

    /// Heads of width `head_dim` read the first `heads·head_dim` channels; the
    /// projection maps their concatenation back to `dim`.
    pub fn with_head_dim(
        dim: usize,
        heads: usize,
        head_dim: usize,
        key_dim: usize,
        rng: &mut Generator,
    ) -> Result<Self> {
        if heads == 0 || head_dim == 0 || heads * head_dim > dim {
            return Err(Error::Config(format!(
                "{heads} heads of width {head_dim} do not fit in {dim} channels"
            )));
        }
        let ch = head_dim;
        let mut qkvs = Vec::with_capacity(heads);
        let mut query_dws = Vec::with_capacity(heads);
        for _ in 0..heads {
            qkvs.push(ConvBn::new(ConvGeom::pointwise(ch, 2 * key_dim + ch)?, rng));
            query_dws.push(ConvBn::new(ConvGeom::depthwise(key_dim, QUERY_KERNEL, 1)?, rng));
        }
        Ok(Self {
            dim,
            head_dim,
            key_dim,
            qkvs,
            query_dws,
            proj: ConvBn::new(ConvGeom::pointwise(heads * head_dim, dim)?, rng),
        })
    }

    pub fn heads(&self) -> usize {
        self.qkvs.len()
    }

    pub fn scale(&self) -> f64 {
        (self.key_dim as f64).powf(-0.5)
    }

    pub fn forward_detailed(&self, x: &Var<T>) -> Result<CgaTrace<T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.dim {
            return Err(Error::shape("cga input", &shape, &[self.dim]));
        }
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        let (ch, kd, t) = (self.head_dim, self.key_dim, h * w);
        let mut heads: Vec<Var<T>> = Vec::with_capacity(self.heads());
        let mut maps = Vec::with_capacity(self.heads());
        for i in 0..self.heads() {
            let run = || -> Result<(Var<T>, Var<T>)> {
                let mut xi = x.narrow_channels(i * ch, ch)?;
                if let Some(prev) = heads.last() {
                    xi = xi.add(prev)?;
                }
                let qkv = self.qkvs[i].forward(&xi)?;
                let q = self.query_dws[i].forward(&qkv.narrow_channels(0, kd)?)?;
                let k = qkv.narrow_channels(kd, kd)?;
                let v = qkv.narrow_channels(2 * kd, ch)?;
                let (o, a) = attention(
                    &q.reshape([n, kd, t])?,
                    &k.reshape([n, kd, t])?,
                    &v.reshape([n, ch, t])?,
                    self.scale(),
                )?;
                Ok((o.reshape([n, ch, h, w])?, a))
            };
            let (o, a) = run().map_err(|e| e.in_layer(&format!("head{i}")))?;
            heads.push(o);
            maps.push(a);
        }
        let cat = if heads.len() == 1 {
            heads[0].clone()
        } else {
            Var::concat_channels(&heads)?
        };
        let output = cat
            .relu()
            .and_then(|y| self.proj.forward(&y))
            .map_err(|e| e.in_layer("proj"))?;
        Ok(CgaTrace {
            heads,
            attention: maps,
            output,
        })
    }
}

impl<T: Scalar> Layer<T> for Cga<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        Ok(self.forward_detailed(x)?.output)
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        for i in 0..self.heads() {
            self.qkvs[i].visit(&join(prefix, &format!("qkvs.{i}")), v);
            self.query_dws[i].visit(&join(prefix, &format!("query_dws.{i}")), v);
        }
        self.proj.visit(&join(prefix, "proj"), v);
    }

    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        let (c, h, w) = input;
        if c != self.dim {
            return Err(Error::shape("cga input", &[c, h, w], &[self.dim]));
        }
        let (ch, kd, t) = (self.head_dim, self.key_dim, (h * w) as u64);
        for i in 0..self.heads() {
            self.qkvs[i].cost(&join(prefix, &format!("qkvs.{i}")), (ch, h, w), rows)?;
            self.query_dws[i].cost(&join(prefix, &format!("query_dws.{i}")), (kd, h, w), rows)?;
            rows.push(CostRow {
                path: join(prefix, &format!("attn.{i}")),
                kind: LayerKind::Attention,
                params: 0,
                buffers: 0,
                flops: t * t * kd as u64 + t * t * ch as u64,
                param_ids: Vec::new(),
            });
        }
        self.proj.cost(&join(prefix, "proj"), (ch * self.heads(), h, w), rows)
    }
}

/// Depthwise token mixing, FFN, attention, depthwise token mixing, FFN; each
/// wrapped in a residual connection.
pub struct CViTBlock<T: Scalar = f32> {
    pub dw0: ConvBn<T>,
    pub ffn0: Arc<CcFfn<T>>,
    pub mixer: Cga<T>,
    pub dw1: ConvBn<T>,
    pub ffn1: Arc<CcFfn<T>>,
}

impl<T: Scalar> CViTBlock<T> {
    pub fn new(heads: usize, pre_ffn: CcFfnConfig, post_ffn: CcFfnConfig, rng: &mut Generator) -> Result<Self> {
        let dim = pre_ffn.channels;
        if post_ffn.channels != dim {
            return Err(Error::Config(format!(
                "block ffn widths differ: {dim} vs {}",
                post_ffn.channels
            )));
        }
        Ok(Self {
            dw0: ConvBn::new(ConvGeom::depthwise(dim, 3, 1)?, rng),
            ffn0: Arc::new(CcFfn::new(pre_ffn, rng)?),
            mixer: Cga::with_head_dim(dim, heads, dim / heads.max(1), KEY_DIM, rng)?,
            dw1: ConvBn::new(ConvGeom::depthwise(dim, 3, 1)?, rng),
            ffn1: Arc::new(CcFfn::new(post_ffn, rng)?),
        })
    }

    pub fn dim(&self) -> usize {
        self.mixer.dim
    }
}

impl<T: Scalar> Layer<T> for CViTBlock<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = residual(x, "dw0", |v| self.dw0.forward(v))?;
        let y = residual(&y, "ffn0", |v| self.ffn0.forward(v))?;
        let y = residual(&y, "mixer", |v| self.mixer.forward(v))?;
        let y = residual(&y, "dw1", |v| self.dw1.forward(v))?;
        residual(&y, "ffn1", |v| self.ffn1.forward(v))
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.dw0.visit(&join(prefix, "dw0"), v);
        self.ffn0.visit(&join(prefix, "ffn0"), v);
        self.mixer.visit(&join(prefix, "mixer"), v);
        self.dw1.visit(&join(prefix, "dw1"), v);
        self.ffn1.visit(&join(prefix, "ffn1"), v);
    }

    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        let s = self.dw0.cost(&join(prefix, "dw0"), input, rows)?;
        let s = self.ffn0.cost(&join(prefix, "ffn0"), s, rows)?;
        let s = self.mixer.cost(&join(prefix, "mixer"), s, rows)?;
        let s = self.dw1.cost(&join(prefix, "dw1"), s, rows)?;
        self.ffn1.cost(&join(prefix, "ffn1"), s, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::Tensor;

    /// Single-query softmax attention evaluated with explicit loops.
    fn flat_attention(q: &[f64], k: &[f64], v: &[f64], d: usize, c: usize, t: usize, scale: f64) -> Vec<f64> {
        let mut out = vec![0.0; c * t];
        for i in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|j| (0..d).map(|a| q[a * t + i] * k[a * t + j]).sum::<f64>() * scale)
                .collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for ch in 0..c {
                out[ch * t + i] = (0..t).map(|j| e[j] / z * v[ch * t + j]).sum();
            }
        }
        out
    }

    #[test]
    fn single_head_matches_flat_oracle() {
        let mut rng = RngState::new(21).generator();
        let (d, c, t) = (4, 3, 6);
        let q = rng.normal_tensor::<f64>(&[1, d, t], 1.0);
        let k = rng.normal_tensor::<f64>(&[1, d, t], 1.0);
        let v = rng.normal_tensor::<f64>(&[1, c, t], 1.0);
        let (o, a) = attention(
            &Var::constant(q.clone()),
            &Var::constant(k.clone()),
            &Var::constant(v.clone()),
            0.5,
        )
        .unwrap();
        let want = flat_attention(q.data(), k.data(), v.data(), d, c, t, 0.5);
        for (x, y) in o.value().data().iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
        for row in a.value().data().chunks(t) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_gives_uniform_attention() {
        let mut rng = RngState::new(3).generator();
        let cga = Cga::<f64>::new(8, 2, &mut rng).unwrap();
        let x = Var::constant(Tensor::full([1, 8, 3, 3], 0.7));
        let trace = cga.forward_detailed(&x).unwrap();
        // borders see zero padding in the query conv, so only keys must be constant
        for a in &trace.attention {
            let av = a.value();
            for row in av.data().chunks(9) {
                for &p in row {
                    assert!((p - 1.0 / 9.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rows_sum_to_one_on_random_input() {
        let mut rng = RngState::new(8).generator();
        let cga = Cga::<f32>::new(12, 3, &mut rng).unwrap();
        let x = Var::constant(rng.normal_tensor(&[2, 12, 4, 4], 3.0));
        for a in cga.forward_detailed(&x).unwrap().attention {
            for row in a.value().data().chunks(16) {
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn head_outputs_are_causal() {
        let mut rng = RngState::new(5).generator();
        let cga = Cga::<f64>::new(12, 3, &mut rng).unwrap();
        let x = rng.normal_tensor::<f64>(&[1, 12, 3, 3], 1.0);
        let base = cga.forward_detailed(&Var::constant(x.clone())).unwrap();
        for j in 0..3 {
            let mut xp = x.clone();
            xp.data_mut()[j * 4 * 9 + 5] += 0.5;
            let pert = cga.forward_detailed(&Var::constant(xp)).unwrap();
            for i in 0..3 {
                let same = base.heads[i].value().bit_eq(&pert.heads[i].value());
                assert_eq!(same, i < j, "head {i} after perturbing slice {j}");
            }
        }
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut rng = RngState::new(0).generator();
        assert!(matches!(
            Cga::<f32>::new(10, 3, &mut rng),
            Err(Error::Divisibility { .. })
        ));
    }

    #[test]
    fn zeroed_outputs_make_block_identity() {
        let mut rng = RngState::new(6).generator();
        let block = CViTBlock::<f64>::new(2, CcFfnConfig::new(8), CcFfnConfig::new(8), &mut rng).unwrap();
        let zero = |cb: &ConvBn<f64>| {
            let s = cb.conv.weight.shape();
            cb.conv.weight.set_value(Tensor::zeros(s)).unwrap();
        };
        zero(&block.dw0);
        zero(&block.dw1);
        zero(&block.mixer.proj);
        for f in [&block.ffn0, &block.ffn1] {
            for c in &f.chunks {
                zero(&c.project);
            }
        }
        let x = rng.normal_tensor::<f64>(&[1, 8, 3, 3], 1.0);
        let y = block.forward(&Var::constant(x.clone())).unwrap().to_tensor();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn block_keeps_shape() {
        let mut rng = RngState::new(7).generator();
        let block = CViTBlock::<f32>::new(4, CcFfnConfig::new(128), CcFfnConfig::new(128), &mut rng).unwrap();
        let y = block
            .forward(&Var::constant(rng.normal_tensor(&[1, 128, 14, 14], 1.0)))
            .unwrap();
        assert_eq!(y.shape(), vec![1, 128, 14, 14]);
    }
}
