use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Connection weights of one layer. There are no biases inside the cell or
/// the prior heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `d × d` recurrent weights of the layer onto itself.
    pub w_dd: Mat,
    /// `d × z` latent-to-state weights.
    pub w_zd: Mat,
    /// `d × d_{l+1}` top-down weights; absent at the top layer.
    pub w_top: Option<Mat>,
    /// `d × d_{l-1}` bottom-up weights; absent at the bottom layer.
    pub w_bottom: Option<Mat>,
    /// `z × d` prior mean head.
    pub w_mu_p: Mat,
    /// `z × d` prior log-std head.
    pub w_sigma_p: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    /// `output_dims × d_1` readout of the bottom layer.
    pub w_out: Mat,
    pub b_out: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self::build(config, |rows, cols| Mat::zeros(rows, cols))
    }

    /// Gaussian initialization with std `1/sqrt(fan_in)` per matrix; zero output bias.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        Self::build(config, |rows, cols| Mat::random_fan_in(rows, cols, rng))
    }

    fn build(config: &ModelConfig, mut make: impl FnMut(usize, usize) -> Mat) -> Self {
        let n = config.layers.len();
        let layers = (0..n)
            .map(|l| {
                let d = config.layers[l].d_size;
                let z = config.layers[l].z_size;
                let w_dd = make(d, d);
                let w_zd = make(d, z);
                let w_top = (l + 1 < n).then(|| make(d, config.layers[l + 1].d_size));
                let w_bottom = (l > 0).then(|| make(d, config.layers[l - 1].d_size));
                let w_mu_p = make(z, d);
                let w_sigma_p = make(z, d);
                LayerParams { w_dd, w_zd, w_top, w_bottom, w_mu_p, w_sigma_p }
            })
            .collect();
        let w_out = make(config.output_dims, config.layers[0].d_size);
        Self { layers, w_out, b_out: vec![0.0; config.output_dims] }
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(config);
        let shapes =
            |p: &NetworkParams| -> Vec<(usize, usize)> { p.matrices().iter().map(|m| (m.rows, m.cols)).collect() };
        if self.layers.len() != expected.layers.len()
            || shapes(self) != shapes(&expected)
            || self.b_out.len() != config.output_dims
            || self
                .layers
                .iter()
                .zip(&expected.layers)
                .any(|(a, b)| a.w_top.is_some() != b.w_top.is_some() || a.w_bottom.is_some() != b.w_bottom.is_some())
        {
            return Err(Error::Config("network parameter shapes do not match the model config".into()));
        }
        Ok(())
    }

    fn matrices(&self) -> Vec<&Mat> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.w_dd);
            out.push(&layer.w_zd);
            if let Some(m) = &layer.w_top {
                out.push(m);
            }
            if let Some(m) = &layer.w_bottom {
                out.push(m);
            }
            out.push(&layer.w_mu_p);
            out.push(&layer.w_sigma_p);
        }
        out.push(&self.w_out);
        out
    }

    /// Every trainable value, in a fixed order shared with [`Self::slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.matrices().into_iter().map(|m| m.data.as_slice()).collect();
        out.push(&self.b_out);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.w_dd.data);
            out.push(&mut layer.w_zd.data);
            if let Some(m) = &mut layer.w_top {
                out.push(&mut m.data);
            }
            if let Some(m) = &mut layer.w_bottom {
                out.push(&mut m.data);
            }
            out.push(&mut layer.w_mu_p.data);
            out.push(&mut layer.w_sigma_p.data);
        }
        out.push(&mut self.w_out.data);
        out.push(&mut self.b_out);
        out
    }

    pub fn num_values(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn set_zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Bitwise equality, treating `-0.0` and `0.0` as different.
    pub fn bitwise_eq(&self, other: &NetworkParams) -> bool {
        let a = self.slices();
        let b = other.slices();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()))
    }
}
