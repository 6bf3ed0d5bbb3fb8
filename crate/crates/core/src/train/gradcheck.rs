use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{no_grad, Var};
use crate::ccffn::{CcFfn, CcFfnConfig};
use crate::cga::{CViTBlock, Cga};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::{self, Conv2d, ConvBn, Layer, Linear, Mode};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::loss::{kd_loss, KdParams};

pub const EPSILON: f64 = 1e-4;
/// Denominator floor for the relative error, so near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// Number of scalar coordinates compared.
    pub checked: usize,
    /// Coordinate with the largest error, as `name[index]`.
    pub worst: String,
}

/// Compare autodiff against central differences for the objective
/// `Σ r ⊙ f()`, with fixed random weights `r`, over every element of `wrt`.
pub fn gradcheck(f: &dyn Fn() -> Result<Var<f64>>, wrt: &[(String, Var<f64>)], seed: u64) -> Result<GradcheckReport> {
    let out = f()?;
    let weights = Var::constant(
        RngState::new(seed)
            .split(7)
            .generator()
            .normal_tensor::<f64>(&out.shape(), 1.0),
    );
    let objective = |out: Var<f64>| -> Result<Var<f64>> { out.mul(&weights)?.sum() };
    for (_, v) in wrt {
        v.zero_grad();
    }
    objective(out)?.backward()?;
    let analytic: Vec<Tensor<f64>> = wrt
        .iter()
        .map(|(_, v)| v.grad().unwrap_or_else(|| Tensor::zeros(v.shape())))
        .collect();
    let eval = || -> Result<f64> { Ok(no_grad(|| objective(f()?))?.value().data()[0]) };
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: String::new(),
    };
    for ((name, v), grad) in wrt.iter().zip(&analytic) {
        for i in 0..v.numel() {
            let orig = v.value().data()[i];
            v.update(|t| t.data_mut()[i] = orig + EPSILON);
            let plus = eval()?;
            v.update(|t| t.data_mut()[i] = orig - EPSILON);
            let minus = eval()?;
            v.update(|t| t.data_mut()[i] = orig);
            let numeric = (plus - minus) / (2.0 * EPSILON);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if err > report.max_rel_err || report.checked == 0 {
                report.max_rel_err = err;
                report.worst = format!("{name}[{i}]");
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradcheckTarget {
    Linear,
    Conv,
    ConvBnRelu,
    Ccffn,
    Cga,
    Block,
    Kd,
}

impl GradcheckTarget {
    pub const ALL: [GradcheckTarget; 7] = [
        Self::Linear,
        Self::Conv,
        Self::ConvBnRelu,
        Self::Ccffn,
        Self::Cga,
        Self::Block,
        Self::Kd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Conv => "conv",
            Self::ConvBnRelu => "conv-bn-relu",
            Self::Ccffn => "ccffn",
            Self::Cga => "cga",
            Self::Block => "block",
            Self::Kd => "kd",
        }
    }

    /// Error bound the target is expected to meet.
    pub fn tolerance(self) -> f64 {
        match self {
            Self::Linear | Self::Conv => 1e-6,
            _ => 1e-4,
        }
    }
}

impl FromStr for GradcheckTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|t| t.name()).collect();
            Error::Config(format!(
                "unknown gradcheck target `{s}`; expected one of {}",
                names.join(", ")
            ))
        })
    }
}

const BATCH: usize = 2;
const GRID: usize = 4;
const ATTENTION_HEADS: usize = 2;

/// Re-draw every parameter at unit scale so the check is not dominated by tiny initial weights.
fn randomize<L: Layer<f64>>(layer: &L, rng: RngState) -> Result<Vec<(String, Var<f64>)>> {
    let mut g = rng.generator();
    let params = nn::parameters(layer);
    for (_, p) in &params {
        p.set_value(g.normal_tensor(&p.shape(), 0.5))?;
    }
    Ok(params)
}

fn check_layer<L: Layer<f64>>(layer: &L, input_shape: &[usize], seed: u64) -> Result<GradcheckReport> {
    let root = RngState::new(seed);
    nn::set_mode(layer, Mode::Train);
    let mut params = randomize(layer, root.split(1))?;
    let x = Var::parameter(root.split(2).generator().normal_tensor(input_shape, 1.0));
    params.push(("input".into(), x.clone()));
    gradcheck(&|| layer.forward(&x), &params, seed)
}

/// Gradient check of one module kind at width `dims`, in 64-bit.
pub fn gradcheck_module(target: GradcheckTarget, dims: usize, seed: u64) -> Result<GradcheckReport> {
    let mut g = RngState::new(seed).split(0).generator();
    let grid = [BATCH, dims, GRID, GRID];
    match target {
        GradcheckTarget::Linear => {
            let l = Linear::<f64>::new(dims, dims + 3, &mut g);
            check_layer(&l, &[BATCH, dims], seed)
        }
        GradcheckTarget::Conv => {
            let c = Conv2d::<f64>::with_bias(ConvGeom::new(dims, dims, 3, 1, 1, 1)?, &mut g);
            check_layer(&c, &grid, seed)
        }
        GradcheckTarget::ConvBnRelu => {
            struct Composite(ConvBn<f64>);
            impl Layer<f64> for Composite {
                fn forward(&self, x: &Var<f64>) -> Result<Var<f64>> {
                    self.0.forward(x)?.relu()
                }
                fn visit(&self, prefix: &str, v: &mut dyn nn::Visitor<f64>) {
                    self.0.visit(prefix, v)
                }
                fn cost(
                    &self,
                    prefix: &str,
                    input: crate::kernels::Chw,
                    rows: &mut Vec<crate::analytics::CostRow>,
                ) -> Result<crate::kernels::Chw> {
                    self.0.cost(prefix, input, rows)
                }
            }
            let c = Composite(ConvBn::new(ConvGeom::new(dims, dims, 3, 1, 1, 1)?, &mut g));
            check_layer(&c, &grid, seed)
        }
        GradcheckTarget::Ccffn => {
            let f = CcFfn::<f64>::new(CcFfnConfig::new(dims), &mut g)?;
            check_layer(&f, &grid, seed)
        }
        GradcheckTarget::Cga => {
            let a = Cga::<f64>::new(dims, ATTENTION_HEADS, &mut g)?;
            check_layer(&a, &grid, seed)
        }
        GradcheckTarget::Block => {
            let b = CViTBlock::<f64>::new(ATTENTION_HEADS, CcFfnConfig::new(dims), CcFfnConfig::new(dims), &mut g)?;
            check_layer(&b, &grid, seed)
        }
        GradcheckTarget::Kd => {
            let rows = 3;
            let student = Var::parameter(g.normal_tensor::<f64>(&[rows, dims], 1.0));
            let teacher = Var::constant(g.normal_tensor::<f64>(&[rows, dims], 1.0));
            let labels: Vec<usize> = (0..rows).map(|i| i % dims).collect();
            let kd = KdParams::default();
            let f = || -> Result<Var<f64>> { kd_loss(&student, &teacher, &labels, kd)?.reshape([1]) };
            gradcheck(&f, &[("student".into(), student.clone())], seed)
        }
    }
}
