use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes and regulation of one level of the hierarchy. Index 0 is the
/// fastest layer, the only one read out to the sensory output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub d_size: usize,
    pub z_size: usize,
    pub tau: f64,
    /// Meta-prior weighting the complexity term from the second step on.
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: Vec<LayerConfig>,
    /// Meta-prior at the first time step.
    pub w_first: f64,
    pub output_dims: usize,
    pub seed: u64,
}

/// Meta-prior multipliers of the upper layers relative to the bottom one.
pub const META_PRIOR_SCALING: [f64; 3] = [1.0, 10.0, 100.0];

impl ModelConfig {
    /// Three-layer network `d = (40, 20, 10)`, `z = (4, 2, 1)`, `tau = (2, 4, 8)`
    /// with meta-priors `(w, 10w, 100w)` and a 10-dimensional output.
    pub fn standard(w: f64, seed: u64) -> Self {
        let sizes = [(40, 4, 2.0), (20, 2, 4.0), (10, 1, 8.0)];
        let layers = sizes
            .iter()
            .zip(META_PRIOR_SCALING)
            .map(|(&(d_size, z_size, tau), scale)| LayerConfig { d_size, z_size, tau, w: w * scale })
            .collect();
        Self { layers, w_first: 1.0, output_dims: 10, seed }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Bottom-layer meta-prior, the value networks are usually labelled by.
    pub fn base_w(&self) -> f64 {
        self.layers.first().map_or(0.0, |l| l.w)
    }

    /// Meta-prior for layer `l` at absolute (1-based) time `t`.
    pub fn meta_prior(&self, l: usize, t: usize) -> f64 {
        if t <= 1 {
            self.w_first
        } else {
            self.layers[l].w
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if self.output_dims == 0 {
            return Err(Error::Config("output_dims must be positive".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.d_size == 0 || layer.z_size == 0 {
                return Err(Error::Config(format!("layer {l}: d_size and z_size must be positive")));
            }
            if !(layer.tau >= 1.0 && layer.tau.is_finite()) {
                return Err(Error::Config(format!("layer {l}: tau must be >= 1, got {}", layer.tau)));
            }
            if !(layer.w >= 0.0 && layer.w.is_finite()) {
                return Err(Error::Config(format!("layer {l}: meta-prior must be >= 0, got {}", layer.w)));
            }
        }
        if !(self.w_first >= 0.0 && self.w_first.is_finite()) {
            return Err(Error::Config("w_first must be >= 0".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    /// Same architecture and meta-priors; seeds may differ.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        self.layers == other.layers && self.w_first == other.w_first && self.output_dims == other.output_dims
    }
}

/// Offsets of each layer inside the flat per-step state buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub d_sizes: Vec<usize>,
    pub z_sizes: Vec<usize>,
    pub d_offsets: Vec<usize>,
    pub z_offsets: Vec<usize>,
    pub d_total: usize,
    pub z_total: usize,
    pub output_dims: usize,
}

impl Layout {
    fn new(config: &ModelConfig) -> Self {
        let d_sizes: Vec<usize> = config.layers.iter().map(|l| l.d_size).collect();
        let z_sizes: Vec<usize> = config.layers.iter().map(|l| l.z_size).collect();
        let offsets = |sizes: &[usize]| {
            sizes
                .iter()
                .scan(0, |acc, &s| {
                    let o = *acc;
                    *acc += s;
                    Some(o)
                })
                .collect::<Vec<_>>()
        };
        Self {
            d_offsets: offsets(&d_sizes),
            z_offsets: offsets(&z_sizes),
            d_total: d_sizes.iter().sum(),
            z_total: z_sizes.iter().sum(),
            d_sizes,
            z_sizes,
            output_dims: config.output_dims,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.d_sizes.len()
    }

    #[inline]
    pub fn d_range(&self, l: usize) -> std::ops::Range<usize> {
        self.d_offsets[l]..self.d_offsets[l] + self.d_sizes[l]
    }

    #[inline]
    pub fn z_range(&self, l: usize) -> std::ops::Range<usize> {
        self.z_offsets[l]..self.z_offsets[l] + self.z_sizes[l]
    }
}
