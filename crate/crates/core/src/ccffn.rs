//! Cascaded-chunk feed-forward network.
//!
//! Channels are split into `n` equal chunks. Each chunk runs its own compact
//! FFN; with cascading on, the output of chunk `i-1` is added to the input of
//! chunk `i` before it is processed. Outputs are concatenated back in order.

use serde::{Deserialize, Serialize};

use crate::analytics::CostRow;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::kernels::{Chw, ConvGeom};
use crate::nn::{join, ConvBn, Layer, Visitor};
use crate::rng::Generator;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_CHUNKS: usize = 2;
pub const DEFAULT_EXPANSION: f64 = 2.5;

/// Hidden width for `channels` inputs at expansion `e`: `max(1, floor(e·channels))`.
pub fn hidden_width(channels: usize, e: f64) -> usize {
    ((e * channels as f64).floor() as usize).max(1)
}

/// `conv1×1(c→h)+BN → ReLU → conv1×1(h→c)+BN`.
pub struct ChunkFfn<T: Scalar = f32> {
    pub expand: ConvBn<T>,
    pub project: ConvBn<T>,
}

impl<T: Scalar> ChunkFfn<T> {
    pub fn new(channels: usize, hidden: usize, rng: &mut Generator) -> Result<Self> {
        Ok(Self {
            expand: ConvBn::new(ConvGeom::pointwise(channels, hidden)?, rng),
            project: ConvBn::new(ConvGeom::pointwise(hidden, channels)?, rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.project.out_channels()
    }

    pub fn hidden(&self) -> usize {
        self.expand.out_channels()
    }
}

impl<T: Scalar> Layer<T> for ChunkFfn<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let h = self
            .expand
            .forward(x)
            .and_then(|h| h.relu())
            .map_err(|e| e.in_layer("expand"))?;
        self.project.forward(&h).map_err(|e| e.in_layer("project"))
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.expand.visit(&join(prefix, "expand"), v);
        self.project.visit(&join(prefix, "project"), v);
    }

    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        let h = self.expand.cost(&join(prefix, "expand"), input, rows)?;
        self.project.cost(&join(prefix, "project"), h, rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcFfnConfig {
    pub channels: usize,
    pub chunks: usize,
    pub expansion: f64,
    pub cascade: bool,
    pub projection: bool,
}

impl CcFfnConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            chunks: DEFAULT_CHUNKS,
            expansion: DEFAULT_EXPANSION,
            cascade: true,
            projection: false,
        }
    }

    /// Ordinary single-chunk FFN.
    pub fn plain(channels: usize, expansion: f64) -> Self {
        Self {
            channels,
            chunks: 1,
            expansion,
            cascade: false,
            projection: false,
        }
    }

    pub fn with_chunks(self, chunks: usize) -> Self {
        Self { chunks, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunks == 0 || !self.channels.is_multiple_of(self.chunks) {
            return Err(Error::Divisibility {
                what: "ffn channels".into(),
                value: self.channels,
                divisor: self.chunks,
            });
        }
        if !(self.expansion > 0.0 && self.expansion.is_finite()) {
            return Err(Error::Config(format!(
                "expansion ratio must be positive, got {}",
                self.expansion
            )));
        }
        Ok(())
    }

    pub fn chunk_channels(&self) -> usize {
        self.channels / self.chunks
    }

    pub fn hidden(&self) -> usize {
        hidden_width(self.chunk_channels(), self.expansion)
    }

    fn has_projection(&self) -> bool {
        self.cascade && self.projection && self.chunks > 1
    }
}

pub struct CcFfn<T: Scalar = f32> {
    pub config: CcFfnConfig,
    pub chunks: Vec<ChunkFfn<T>>,
    /// `P` applied to `Y_{i-1}` before it is added to chunk `i`; empty unless enabled.
    pub projections: Vec<ConvBn<T>>,
}

impl<T: Scalar> CcFfn<T> {
    pub fn new(config: CcFfnConfig, rng: &mut Generator) -> Result<Self> {
        config.validate()?;
        let (c, h) = (config.chunk_channels(), config.hidden());
        let chunks = (0..config.chunks)
            .map(|_| ChunkFfn::new(c, h, rng))
            .collect::<Result<_>>()?;
        let projections = if config.has_projection() {
            (1..config.chunks)
                .map(|_| Ok(ConvBn::new(ConvGeom::pointwise(c, c)?, rng)))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            chunks,
            projections,
        })
    }

    /// Per-chunk outputs `Y_1..Y_n` before concatenation.
    pub fn forward_chunks(&self, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.config.channels {
            return Err(Error::shape("ccffn input", &shape, &[self.config.channels]));
        }
        if self.chunks.len() == 1 {
            return Ok(vec![self.chunks[0].forward(x).map_err(|e| e.in_layer("chunks.0"))?]);
        }
        let c = self.config.chunk_channels();
        let mut outs: Vec<Var<T>> = Vec::with_capacity(self.chunks.len());
        for (i, chunk) in self.chunks.iter().enumerate() {
            let name = format!("chunks.{i}");
            let mut xi = x.narrow_channels(i * c, c)?;
            if self.config.cascade && i > 0 {
                let prev = &outs[i - 1];
                let carry = match self.projections.get(i - 1) {
                    Some(p) => p
                        .forward(prev)
                        .map_err(|e| e.in_layer(&format!("projections.{}", i - 1)))?,
                    None => prev.clone(),
                };
                xi = xi.add(&carry).map_err(|e| e.in_layer(&name))?;
            }
            outs.push(chunk.forward(&xi).map_err(|e| e.in_layer(&name))?);
        }
        Ok(outs)
    }

    pub fn param_count(&self) -> u64 {
        ccffn_param_count(&self.config)
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        ccffn_flops(&self.config, h, w)
    }
}

impl<T: Scalar> Layer<T> for CcFfn<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let mut outs = self.forward_chunks(x)?;
        if outs.len() == 1 {
            return Ok(outs.remove(0));
        }
        Var::concat_channels(&outs)
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        for (i, c) in self.chunks.iter().enumerate() {
            c.visit(&join(prefix, &format!("chunks.{i}")), v);
        }
        for (i, p) in self.projections.iter().enumerate() {
            p.visit(&join(prefix, &format!("projections.{i}")), v);
        }
    }

    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        let (ch, h, w) = input;
        if ch != self.config.channels {
            return Err(Error::shape("ccffn input", &[ch, h, w], &[self.config.channels]));
        }
        let part = (self.config.chunk_channels(), h, w);
        for (i, c) in self.chunks.iter().enumerate() {
            c.cost(&join(prefix, &format!("chunks.{i}")), part, rows)?;
        }
        for (i, p) in self.projections.iter().enumerate() {
            p.cost(&join(prefix, &format!("projections.{i}")), part, rows)?;
        }
        Ok(input)
    }
}

/// Partition `x [N, C, H, W]` into `n` channel-contiguous pieces.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, n: usize) -> Result<Vec<Tensor<T>>> {
    let (_, c, _, _) = x.dims4()?;
    if n == 0 || c % n != 0 {
        return Err(Error::Divisibility {
            what: "channels".into(),
            value: c,
            divisor: n,
        });
    }
    let k = c / n;
    (0..n).map(|i| x.narrow_channels(i * k, k)).collect()
}

/// Learnable parameters: `n·(c·h + 2h + h·c + 2c)`, plus `(n-1)·(c² + 2c)` with projection.
pub fn ccffn_param_count(cfg: &CcFfnConfig) -> u64 {
    let (n, c, h) = (cfg.chunks as u64, cfg.chunk_channels() as u64, cfg.hidden() as u64);
    let mut p = n * (c * h + 2 * h + h * c + 2 * c);
    if cfg.has_projection() {
        p += (n - 1) * (c * c + 2 * c);
    }
    p
}

/// Multiply-accumulates per image: `H·W·n·(c·h + h·c)`, plus `H·W·(n-1)·c²` with projection.
pub fn ccffn_flops(cfg: &CcFfnConfig, height: usize, width: usize) -> u64 {
    let hw = (height * width) as u64;
    let (n, c, h) = (cfg.chunks as u64, cfg.chunk_channels() as u64, cfg.hidden() as u64);
    let mut f = hw * n * (c * h + h * c);
    if cfg.has_projection() {
        f += hw * (n - 1) * c * c;
    }
    f
}
