use rand::{Rng, RngExt};

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Affine map `y = x W + b` with `W` stored as `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Linear {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Linear {
            w: Matrix::from_vec(fan_in, fan_out, data),
            b: vec![0.0; fan_out],
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: Matrix::zeros(fan_in, fan_out),
            b: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows(), self.fan_out());
        for i in 0..y.rows() {
            y.row_mut(i).copy_from_slice(&self.b);
        }
        gemm(1.0, x, false, &self.w, false, 1.0, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Matrix {
        gemm(1.0, x, true, dy, false, 1.0, &mut grad.w);
        for i in 0..dy.rows() {
            for (g, d) in grad.b.iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
        let mut dx = Matrix::zeros(x.rows(), x.cols());
        gemm(1.0, dy, false, &self.w, true, 0.0, &mut dx);
        dx
    }
}

/// Per-row normalization over the feature axis with learned gain and offset.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug)]
struct LayerNormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> LayerNorm {
        LayerNorm {
            gain: vec![1.0; width],
            offset: vec![0.0; width],
        }
    }

    fn forward(&self, x: &Matrix) -> (Matrix, LayerNormCache) {
        let w = x.cols() as f64;
        let mut xhat = Matrix::zeros(x.rows(), x.cols());
        let mut y = Matrix::zeros(x.rows(), x.cols());
        let mut rstd = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let r = x.row(i);
            let mean = r.iter().sum::<f64>() / w;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(s);
            let (h, o) = (xhat.row_mut(i), y.row_mut(i));
            for c in 0..r.len() {
                h[c] = (r[c] - mean) * s;
                o[c] = h[c] * self.gain[c] + self.offset[c];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    fn backward(&self, cache: &LayerNormCache, dy: &Matrix, grad: &mut LayerNorm) -> Matrix {
        let w = dy.cols() as f64;
        let mut dx = Matrix::zeros(dy.rows(), dy.cols());
        let mut dxhat = vec![0.0; dy.cols()];
        for i in 0..dy.rows() {
            let (d, h) = (dy.row(i), cache.xhat.row(i));
            let mut mean_d = 0.0;
            let mut mean_dh = 0.0;
            for c in 0..d.len() {
                grad.gain[c] += d[c] * h[c];
                grad.offset[c] += d[c];
                dxhat[c] = d[c] * self.gain[c];
                mean_d += dxhat[c];
                mean_dh += dxhat[c] * h[c];
            }
            mean_d /= w;
            mean_dh /= w;
            let s = cache.rstd[i];
            for (c, out) in dx.row_mut(i).iter_mut().enumerate() {
                *out = s * (dxhat[c] - mean_d - h[c] * mean_dh);
            }
        }
        dx
    }
}

/// Multilayer perceptron: affine layers with ReLU between them and an
/// optional output LayerNorm.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norm: Option<LayerNorm>,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Input to each linear layer; entries after the first are ReLU outputs.
    inputs: Vec<Matrix>,
    norm: Option<LayerNormCache>,
}

impl MlpCache {
    /// Appends whether each ReLU unit was active, layer by layer.
    pub fn push_active(&self, out: &mut Vec<bool>) {
        for h in &self.inputs[1..] {
            out.extend(h.as_slice().iter().map(|&v| v > 0.0));
        }
    }
}

impl Mlp {
    /// `hidden_layers` ReLU layers of width `hidden`, then a linear output.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        hidden_layers: usize,
        output: usize,
        layer_norm: bool,
        rng: &mut R,
    ) -> Mlp {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, hidden_layers));
        widths.push(output);
        Mlp {
            layers: widths.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect(),
            norm: layer_norm.then(|| LayerNorm::new(output)),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("at least one layer").fan_out()
    }

    /// Same shapes, all parameters zero (a gradient accumulator).
    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(|l| Linear::zeros(l.fan_in(), l.fan_out())).collect(),
            norm: self.norm.as_ref().map(|n| LayerNorm {
                gain: vec![0.0; n.gain.len()],
                offset: vec![0.0; n.offset.len()],
            }),
        }
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, MlpCache) {
        assert_eq!(x.cols(), self.input_width(), "mlp input width");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&h);
            inputs.push(h);
            if l < last {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = z;
        }
        let (y, norm) = match &self.norm {
            Some(n) => {
                let (y, c) = n.forward(&h);
                (y, Some(c))
            }
            None => (h, None),
        };
        (y, MlpCache { inputs, norm })
    }

    /// Single-vector forward pass with shape checking.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::Dimension(format!(
                "mlp expects input width {}, got {}",
                self.input_width(),
                x.len()
            )));
        }
        Ok(self.forward(&Matrix::from_vec(1, x.len(), x.to_vec())).0.into_vec())
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, cache: &MlpCache, dy: &Matrix, grad: &mut Mlp) -> Matrix {
        let mut d = match (&self.norm, &cache.norm, &mut grad.norm) {
            (Some(n), Some(c), Some(g)) => n.backward(c, dy, g),
            _ => dy.clone(),
        };
        for l in (0..self.layers.len()).rev() {
            let x = &cache.inputs[l];
            d = self.layers[l].backward(x, &d, &mut grad.layers[l]);
            if l > 0 {
                // x is the ReLU output of the previous layer
                for (dv, &xv) in d.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
        }
        d
    }

    /// Parameter tensors in declaration order: per layer `w`, `b`; then
    /// LayerNorm `gain`, `offset`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.w.as_slice());
            out.push(&l.b);
        }
        if let Some(n) = &self.norm {
            out.push(&n.gain);
            out.push(&n.offset);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.as_mut_slice());
            out.push(&mut l.b);
        }
        if let Some(n) = &mut self.norm {
            out.push(&mut n.gain);
            out.push(&mut n.offset);
        }
        out
    }

    /// `(name, shape)` for each tensor of [`Mlp::tensors`].
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("linear{i}.w"), vec![l.fan_in(), l.fan_out()]));
            out.push((format!("linear{i}.b"), vec![l.fan_out()]));
        }
        if let Some(n) = &self.norm {
            out.push(("norm.gain".into(), vec![n.gain.len()]));
            out.push(("norm.offset".into(), vec![n.offset.len()]));
        }
        out
    }
}
