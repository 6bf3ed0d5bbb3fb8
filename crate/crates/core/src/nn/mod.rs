//! Layers the network is assembled from.

mod conv;
mod embed;
mod linear;
mod norm;
mod se;
mod subsample;

use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard};

pub use conv::{fold_bn_into_conv, Conv2d, ConvBn};
pub use embed::{PatchEmbed, PATCH_STRIDE};
pub use linear::Linear;
pub use norm::{BatchNorm, BN_EPS, BN_MOMENTUM};
pub use se::{SqueezeExcite, SE_REDUCTION};
pub use subsample::{Downsample, SubsampleBlock, DOWNSAMPLE_FFN_EXPANSION, SUBSAMPLE_EXPANSION};

use crate::analytics::CostRow;
use crate::autograd::Var;
use crate::error::Result;
use crate::kernels::Chw;
use crate::tensor::{Scalar, Tensor};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Non-trainable state such as batch-norm running statistics.
pub struct Buffer<T: Scalar = f32> {
    id: u64,
    value: Arc<RwLock<Tensor<T>>>,
}

impl<T: Scalar> Clone for Buffer<T> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            value: Arc::clone(&self.value),
        }
    }
}

impl<T: Scalar> Buffer<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self {
            id: crate::autograd::fresh_id(),
            value: Arc::new(RwLock::new(value)),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn value(&self) -> RwLockReadGuard<'_, Tensor<T>> {
        self.value.read()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value.read().clone()
    }

    pub fn set(&self, value: Tensor<T>) -> Result<()> {
        let mut slot = self.value.write();
        if slot.shape() != value.shape() {
            return Err(crate::error::Error::shape("buffer set", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }
}

/// Callbacks for walking every tensor a layer owns.
pub trait Visitor<T: Scalar> {
    fn param(&mut self, _path: &str, _p: &Var<T>) {}
    fn buffer(&mut self, _path: &str, _b: &Buffer<T>) {}
    fn norm(&mut self, _path: &str, _bn: &BatchNorm<T>) {}
    fn conv_bn(&mut self, _path: &str, _cb: &ConvBn<T>) {}
}

pub trait Layer<T: Scalar>: Send + Sync {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>>;

    /// Report parameters and buffers under `prefix`.
    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>);

    /// Append cost rows for an input of shape `input`, returning the output shape.
    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw>;
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Switch every batch norm under `layer` to `mode`.
pub fn set_mode<T: Scalar, L: Layer<T> + ?Sized>(layer: &L, mode: Mode) {
    struct SetMode(Mode);
    impl<T: Scalar> Visitor<T> for SetMode {
        fn norm(&mut self, _path: &str, bn: &BatchNorm<T>) {
            bn.set_mode(self.0);
        }
    }
    layer.visit("", &mut SetMode(mode));
}

/// All distinct trainable parameters under `layer`, in visiting order.
pub fn parameters<T: Scalar, L: Layer<T> + ?Sized>(layer: &L) -> Vec<(String, Var<T>)> {
    struct Collect<T: Scalar> {
        seen: std::collections::HashSet<u64>,
        out: Vec<(String, Var<T>)>,
    }
    impl<T: Scalar> Visitor<T> for Collect<T> {
        fn param(&mut self, path: &str, p: &Var<T>) {
            if self.seen.insert(p.id()) {
                self.out.push((path.to_string(), p.clone()));
            }
        }
    }
    let mut c = Collect {
        seen: Default::default(),
        out: Vec::new(),
    };
    layer.visit("", &mut c);
    c.out
}

/// Fold every conv+BN pair under `layer` into a single biased conv.
pub fn fuse_bn<T: Scalar, L: Layer<T> + ?Sized>(layer: &L) -> Result<()> {
    struct Fuse(Result<()>);
    impl<T: Scalar> Visitor<T> for Fuse {
        fn conv_bn(&mut self, path: &str, cb: &ConvBn<T>) {
            if self.0.is_ok() {
                self.0 = cb.fuse().map_err(|e| e.in_layer(path));
            }
        }
    }
    let mut f = Fuse(Ok(()));
    layer.visit("", &mut f);
    f.0
}

pub fn zero_grad<T: Scalar, L: Layer<T> + ?Sized>(layer: &L) {
    for (_, p) in parameters(layer) {
        p.zero_grad();
    }
}

/// `x + f(x)`.
pub(crate) fn residual<T: Scalar>(x: &Var<T>, name: &str, f: impl FnOnce(&Var<T>) -> Result<Var<T>>) -> Result<Var<T>> {
    let y = f(x).map_err(|e| e.in_layer(name))?;
    x.add(&y).map_err(|e| e.in_layer(name))
}
