use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};

/// One square convolution. `weight` is laid out for patch matrices:
/// row `(dr * k + dc) * c_in + ci`, column `co`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub kernel: usize,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv {
    pub fn c_in(&self) -> usize {
        self.weight.nrows() / (self.kernel * self.kernel)
    }

    pub fn c_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Several kernel sizes applied in parallel and averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct Inception {
    pub convs: Vec<Conv>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub conv_in: Inception,
    pub conv_out: Inception,
    pub norm_gamma: Array1<f64>,
    pub norm_beta: Array1<f64>,
}

/// Every learnable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// input_dim × d_model
    pub embed_w: Array2<f64>,
    pub embed_b: Array1<f64>,
    pub blocks: Vec<BlockParams>,
    /// horizon × lookback, mixes along time
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// d_model × cameras
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
}

fn uniform1(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..bound))
}

fn inception(rng: &mut ChaCha8Rng, kernels: &[usize], c_in: usize, c_out: usize) -> Inception {
    Inception {
        convs: kernels
            .iter()
            .map(|&k| {
                let fan = k * k * c_in;
                Conv {
                    kernel: k,
                    weight: uniform(rng, (fan, c_out), fan),
                    bias: uniform1(rng, c_out, fan),
                }
            })
            .collect(),
    }
}

impl Params {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases,
    /// unit gain and zero shift for the layer norms.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let embed_w = uniform(&mut rng, (cfg.input_dim, d), cfg.input_dim);
        let embed_b = uniform1(&mut rng, d, cfg.input_dim);
        let blocks = (0..cfg.num_blocks)
            .map(|_| BlockParams {
                conv_in: inception(&mut rng, &cfg.kernel_sizes, d, cfg.conv_channels),
                conv_out: inception(&mut rng, &cfg.kernel_sizes, cfg.conv_channels, d),
                norm_gamma: Array1::ones(d),
                norm_beta: Array1::zeros(d),
            })
            .collect();
        let proj_w = uniform(&mut rng, (cfg.horizon, cfg.lookback), cfg.lookback);
        let proj_b = uniform1(&mut rng, cfg.horizon, cfg.lookback);
        let head_w = uniform(&mut rng, (d, cfg.cameras), d);
        let head_b = uniform1(&mut rng, cfg.cameras, d);
        Ok(Self {
            embed_w,
            embed_b,
            blocks,
            proj_w,
            proj_b,
            head_w,
            head_b,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Named tensors in a fixed canonical order with their shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let mut out = vec![
            ("embed.weight".to_string(), self.embed_w.shape().to_vec(), s2(&self.embed_w)),
            ("embed.bias".to_string(), self.embed_b.shape().to_vec(), s1(&self.embed_b)),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (stage, inc) in [("conv_in", &b.conv_in), ("conv_out", &b.conv_out)] {
                for c in &inc.convs {
                    let p = format!("blocks.{i}.{stage}.k{}", c.kernel);
                    out.push((format!("{p}.weight"), c.weight.shape().to_vec(), s2(&c.weight)));
                    out.push((format!("{p}.bias"), c.bias.shape().to_vec(), s1(&c.bias)));
                }
            }
            out.push((format!("blocks.{i}.norm.gamma"), b.norm_gamma.shape().to_vec(), s1(&b.norm_gamma)));
            out.push((format!("blocks.{i}.norm.beta"), b.norm_beta.shape().to_vec(), s1(&b.norm_beta)));
        }
        out.push(("projection.weight".into(), self.proj_w.shape().to_vec(), s2(&self.proj_w)));
        out.push(("projection.bias".into(), self.proj_b.shape().to_vec(), s1(&self.proj_b)));
        out.push(("head.weight".into(), self.head_w.shape().to_vec(), s2(&self.head_w)));
        out.push(("head.bias".into(), self.head_b.shape().to_vec(), s1(&self.head_b)));
        out
    }

    /// Same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.push(("embed.weight".into(), self.embed_w.as_slice_mut().expect("standard layout")));
        out.push(("embed.bias".into(), self.embed_b.as_slice_mut().expect("standard layout")));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let BlockParams {
                conv_in,
                conv_out,
                norm_gamma,
                norm_beta,
            } = b;
            for (stage, inc) in [("conv_in", conv_in), ("conv_out", conv_out)] {
                for c in inc.convs.iter_mut() {
                    let p = format!("blocks.{i}.{stage}.k{}", c.kernel);
                    out.push((format!("{p}.weight"), c.weight.as_slice_mut().expect("standard layout")));
                    out.push((format!("{p}.bias"), c.bias.as_slice_mut().expect("standard layout")));
                }
            }
            out.push((format!("blocks.{i}.norm.gamma"), norm_gamma.as_slice_mut().expect("standard layout")));
            out.push((format!("blocks.{i}.norm.beta"), norm_beta.as_slice_mut().expect("standard layout")));
        }
        out.push(("projection.weight".into(), self.proj_w.as_slice_mut().expect("standard layout")));
        out.push(("projection.bias".into(), self.proj_b.as_slice_mut().expect("standard layout")));
        out.push(("head.weight".into(), self.head_w.as_slice_mut().expect("standard layout")));
        out.push(("head.bias".into(), self.head_b.as_slice_mut().expect("standard layout")));
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    /// Rebuilds parameters for `cfg` from named tensors. Every expected
    /// tensor must be present with the expected shape; extras are rejected.
    pub fn from_tensors(cfg: &ModelConfig, mut named: BTreeMap<String, (Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let mut p = Self::init(cfg, 0)?;
        let expected: Vec<(String, Vec<usize>)> = p.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        for (name, shape) in expected {
            match named.get(&name) {
                None => return Err(Error::Integrity(format!("tensor `{name}` missing"))),
                Some((got, data)) if *got != shape || data.len() != shape.iter().product::<usize>() => {
                    return Err(Error::Integrity(format!(
                        "tensor `{name}` has shape {got:?}, expected {shape:?}"
                    )))
                }
                Some(_) => {}
            }
        }
        for (name, dst) in p.tensors_mut() {
            let (_, data) = named.remove(&name).expect("checked above");
            dst.copy_from_slice(&data);
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Integrity(format!("unexpected tensor `{extra}`")));
        }
        Ok(p)
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}
