//! Fully connected networks and diagonal Gaussians on top of the tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{AutodiffError, Result};
use crate::params::{ParamSet, ParamVars};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Layer layout of a fully connected network: tanh on every hidden layer,
/// identity on the output layer.
///
/// Parameters are named `{prefix}.l{i}.weight` (shape `[in, out]`) and
/// `{prefix}.l{i}.bias` (shape `[out]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub prefix: String,
    pub sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(prefix: impl Into<String>, sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        MlpSpec {
            prefix: prefix.into(),
            sizes: sizes.to_vec(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.weight", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.bias", self.prefix)
    }

    /// Glorot-normal weights, zero biases. The output layer's weights are
    /// multiplied by `output_gain`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, output_gain: f64) -> ParamSet {
        let mut set = ParamSet::new();
        for layer in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let gain = if layer + 1 == self.num_layers() {
                output_gain
            } else {
                1.0
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            let w = (0..fan_in * fan_out)
                .map(|_| gain * normal.sample(rng))
                .collect();
            set.insert(
                self.weight_name(layer),
                Tensor::matrix(fan_in, fan_out, w).unwrap(),
            )
            .expect("unique layer names");
            set.insert(self.bias_name(layer), Tensor::zeros(&[fan_out]))
                .expect("unique layer names");
        }
        set
    }

    pub fn zeros(&self) -> ParamSet {
        let mut set = ParamSet::new();
        for layer in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            set.insert(self.weight_name(layer), Tensor::zeros(&[fan_in, fan_out]))
                .unwrap();
            set.insert(self.bias_name(layer), Tensor::zeros(&[fan_out]))
                .unwrap();
        }
        set
    }

    /// Checks that `params` has every layer entry with the right shape.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        for layer in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let w = params.get(&self.weight_name(layer)).ok_or_else(|| {
                AutodiffError::Layer {
                    layer,
                    detail: format!("missing `{}`", self.weight_name(layer)),
                }
            })?;
            let b = params.get(&self.bias_name(layer)).ok_or_else(|| {
                AutodiffError::Layer {
                    layer,
                    detail: format!("missing `{}`", self.bias_name(layer)),
                }
            })?;
            if w.shape() != [fan_in, fan_out] || b.shape() != [fan_out] {
                return Err(AutodiffError::Layer {
                    layer,
                    detail: format!(
                        "expected weight [{fan_in}, {fan_out}] and bias [{fan_out}], got {:?} and {:?}",
                        w.shape(),
                        b.shape()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Forward pass over a batch `input` of shape `[batch, input_dim]`.
    pub fn forward<'t>(&self, params: &ParamVars<'t>, input: Var<'t>) -> Result<Var<'t>> {
        forward_mlp(params, input, self)
    }
}

/// Runs `spec` over `input` (`[batch, in]`), returning `[batch, out]`.
pub fn forward_mlp<'t>(params: &ParamVars<'t>, input: Var<'t>, spec: &MlpSpec) -> Result<Var<'t>> {
    let shape = input.shape();
    if shape.len() != 2 || shape[1] != spec.input_dim() {
        return Err(AutodiffError::Layer {
            layer: 0,
            detail: format!(
                "input shape {shape:?} does not match input width {}",
                spec.input_dim()
            ),
        });
    }
    let mut x = input;
    for layer in 0..spec.num_layers() {
        let missing = |name: String| AutodiffError::Layer {
            layer,
            detail: format!("missing `{name}`"),
        };
        let w = params
            .get(&spec.weight_name(layer))
            .ok_or_else(|| missing(spec.weight_name(layer)))?;
        let b = params
            .get(&spec.bias_name(layer))
            .ok_or_else(|| missing(spec.bias_name(layer)))?;
        let (fan_in, fan_out) = (spec.sizes[layer], spec.sizes[layer + 1]);
        if w.shape() != [fan_in, fan_out] || b.shape() != [fan_out] {
            return Err(AutodiffError::Layer {
                layer,
                detail: format!(
                    "expected weight [{fan_in}, {fan_out}] and bias [{fan_out}], got {:?} and {:?}",
                    w.shape(),
                    b.shape()
                ),
            });
        }
        x = x.matmul(w).add_row(b);
        if layer + 1 < spec.num_layers() {
            x = x.tanh();
        }
    }
    Ok(x)
}

/// `ln(2π)`
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian over rows: `mean` is `[batch, dim]`, `log_std` is
/// `[dim]` and shared by every row.
#[derive(Clone, Copy, Debug)]
pub struct DiagonalGaussian<'t> {
    pub mean: Var<'t>,
    pub log_std: Var<'t>,
}

impl<'t> DiagonalGaussian<'t> {
    pub fn new(mean: Var<'t>, log_std: Var<'t>) -> Result<Self> {
        let (ms, ls) = (mean.shape(), log_std.shape());
        if ms.len() != 2 || ls.len() != 1 || ms[1] != ls[0] {
            return Err(AutodiffError::Shape(format!(
                "gaussian mean {ms:?} incompatible with log-std {ls:?}"
            )));
        }
        Ok(DiagonalGaussian { mean, log_std })
    }

    pub fn dim(&self) -> usize {
        self.log_std.shape()[0]
    }

    pub fn batch(&self) -> usize {
        self.mean.shape()[0]
    }

    pub fn std(&self) -> Tensor {
        self.log_std.value().map(f64::exp)
    }

    /// Per-row log-density of `x` (`[batch, dim]`), shape `[batch]`.
    pub fn log_density(&self, x: Var<'t>) -> Result<Var<'t>> {
        gaussian_log_density(self, x)
    }
}

/// `log N(x; mean, diag(exp(log_std)^2))`, one value per row.
pub fn gaussian_log_density<'t>(dist: &DiagonalGaussian<'t>, x: Var<'t>) -> Result<Var<'t>> {
    if x.shape() != dist.mean.shape() {
        return Err(AutodiffError::Shape(format!(
            "sample shape {:?} vs gaussian mean {:?}",
            x.shape(),
            dist.mean.shape()
        )));
    }
    let (batch, dim) = (dist.batch(), dist.dim());
    let inv_std = (-dist.log_std).exp().broadcast_rows(batch);
    let z = (x - dist.mean) * inv_std;
    let quad = z.square().sum_cols().scale(-0.5);
    let norm = dist
        .log_std
        .sum()
        .offset(0.5 * dim as f64 * LN_2PI)
        .scale(-1.0)
        .expand(&[batch]);
    Ok(quad + norm)
}
