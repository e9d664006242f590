//! Echo state network used to label movement primitives step by step.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    make_primitive, sample_pfsm, AmplitudeProfile, Joints, PfsmSpec, PrimitiveLabel, SequenceSample, JOINT_SCALE,
    PROPRIO_DIMS,
};
use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnConfig {
    pub reservoir_size: usize,
    /// Fraction of nonzero reservoir weights.
    pub connectivity: f64,
    pub leak_rate: f64,
    pub spectral_radius: f64,
    pub ridge: f64,
    /// Minimum confidence for a step to be labelled.
    pub threshold: f64,
    pub input_scaling: f64,
    /// Initial steps of each fitting sequence excluded from the readout fit.
    pub washout: usize,
}

impl Default for EsnConfig {
    fn default() -> Self {
        Self {
            reservoir_size: 45,
            connectivity: 0.25,
            leak_rate: 0.6,
            spectral_radius: 0.9,
            ridge: 1e-6,
            threshold: 0.55,
            input_scaling: 16.0,
            washout: 10,
        }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reservoir_size == 0 {
            return Err(Error::Config("reservoir size must be positive".into()));
        }
        if !(self.leak_rate > 0.0 && self.leak_rate <= 1.0) {
            return Err(Error::Config(format!("leak rate must be in (0, 1], got {}", self.leak_rate)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        if !(self.connectivity > 0.0 && self.connectivity <= 1.0) {
            return Err(Error::Config("connectivity must be in (0, 1]".into()));
        }
        if !(self.ridge >= 0.0) || !(self.spectral_radius > 0.0) {
            return Err(Error::Config("ridge must be >= 0 and spectral radius > 0".into()));
        }
        Ok(())
    }

    /// Number of nonzero reservoir weights.
    pub fn nonzeros(&self) -> usize {
        (self.connectivity * (self.reservoir_size * self.reservoir_size) as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnModel {
    pub config: EsnConfig,
    pub w_in: Mat,
    pub reservoir: Mat,
    /// `3 × (reservoir + inputs + 1)` readout over `[state; input; 1]`.
    pub readout: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedSequence {
    /// `None` marks a step that was not classified.
    pub labels: Vec<Option<PrimitiveLabel>>,
    /// Confidence of the best class at each step.
    pub confidence: Vec<f64>,
}

impl ClassifiedSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One character per step: `A`, `B`, `C`, or `-` for not classified.
    pub fn label_string(&self) -> String {
        self.labels.iter().map(|l| l.map_or('-', |p| p.as_char())).collect()
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> f64 {
    let dm = DMatrix::from_row_slice(m.rows, m.cols, &m.data);
    dm.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

impl EsnModel {
    fn untrained<R: Rng + ?Sized>(config: &EsnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = config.reservoir_size;
        let mut reservoir = Mat::zeros(n, n);
        for idx in sample_indices(rng, n * n, config.nonzeros().min(n * n)) {
            reservoir.data[idx] = rng.random_range(-1.0..1.0);
        }
        let rho = spectral_radius(&reservoir);
        if rho > 0.0 {
            let s = config.spectral_radius / rho;
            reservoir.data.iter_mut().for_each(|v| *v *= s);
        }
        let mut w_in = Mat::zeros(n, PROPRIO_DIMS);
        for v in &mut w_in.data {
            *v = config.input_scaling * rng.random_range(-1.0..1.0);
        }
        Ok(Self { config: config.clone(), w_in, reservoir, readout: Mat::zeros(3, n + PROPRIO_DIMS + 1) })
    }

    fn feature_len(&self) -> usize {
        self.config.reservoir_size + PROPRIO_DIMS + 1
    }

    /// Readout features `[state; input; 1]` for every step of a trajectory in degrees.
    fn features(&self, proprio: &[Joints]) -> Vec<Vec<f64>> {
        let n = self.config.reservoir_size;
        let a = self.config.leak_rate;
        let mut x = vec![0.0; n];
        let mut pre = vec![0.0; n];
        proprio
            .iter()
            .map(|frame| {
                let u: Vec<f64> = frame.iter().map(|v| v / JOINT_SCALE).collect();
                self.w_in.matvec(&u, &mut pre);
                self.reservoir.matvec_acc(&x, &mut pre);
                for (xi, p) in x.iter_mut().zip(&pre) {
                    *xi = (1.0 - a) * *xi + a * p.tanh();
                }
                let mut f = Vec::with_capacity(self.feature_len());
                f.extend_from_slice(&x);
                f.extend_from_slice(&u);
                f.push(1.0);
                f
            })
            .collect()
    }

    /// Raw class scores per step.
    pub fn scores(&self, proprio: &[Joints]) -> Vec<[f64; 3]> {
        self.features(proprio)
            .iter()
            .map(|f| {
                let mut s = [0.0; 3];
                self.readout.matvec(f, &mut s);
                s
            })
            .collect()
    }
}

/// Scores → confidences: clipped to `[0, 1]` and renormalized only when
/// they sum to more than one, so diffuse evidence stays low-confidence.
pub fn confidences(scores: &[f64; 3]) -> [f64; 3] {
    let mut c = scores.map(|s| s.clamp(0.0, 1.0));
    let sum: f64 = c.iter().sum();
    if sum > 1.0 {
        c.iter_mut().for_each(|v| *v /= sum);
    }
    c
}

/// Fits the readout by ridge regression onto one-hot labels, skipping each
/// sequence's washout steps. Sequences labelled `None` at a step are fitted
/// towards all-zero scores (used for rejection examples).
pub fn esn_fit<R: Rng + ?Sized>(
    sequences: &[(Vec<Joints>, Vec<Option<PrimitiveLabel>>)],
    config: &EsnConfig,
    rng: &mut R,
) -> Result<EsnModel> {
    let mut model = EsnModel::untrained(config, rng)?;
    let nf = model.feature_len();
    let mut gram = DMatrix::<f64>::zeros(nf, nf);
    let mut cross = DMatrix::<f64>::zeros(nf, 3);
    let mut rows = 0usize;
    for (proprio, labels) in sequences {
        if proprio.len() != labels.len() {
            return Err(Error::Usage("every fitting step needs a label".into()));
        }
        for (f, label) in model.features(proprio).iter().zip(labels).skip(config.washout) {
            let fv = DVector::from_column_slice(f);
            gram.ger(1.0, &fv, &fv, 1.0);
            if let Some(l) = label {
                let mut col = cross.column_mut(l.index());
                col.axpy(1.0, &fv, 1.0);
            }
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(Error::Usage("no fitting steps left after washout".into()));
    }
    for i in 0..nf {
        gram[(i, i)] += config.ridge * rows as f64;
    }
    let chol =
        gram.cholesky().ok_or_else(|| Error::Numerical("ridge system for the ESN readout is singular".into()))?;
    let w = chol.solve(&cross);
    for k in 0..3 {
        for j in 0..nf {
            model.readout.set(k, j, w[(j, k)]);
        }
    }
    Ok(model)
}

/// Per-step labels; a step is classified when its best confidence reaches
/// the threshold (inclusive).
pub fn esn_classify(model: &EsnModel, proprio: &[Joints]) -> ClassifiedSequence {
    let mut labels = Vec::with_capacity(proprio.len());
    let mut confidence = Vec::with_capacity(proprio.len());
    for s in model.scores(proprio) {
        let c = confidences(&s);
        let (best, conf) = label_from_confidences(&c, model.config.threshold);
        labels.push(best);
        confidence.push(conf);
    }
    ClassifiedSequence { labels, confidence }
}

pub fn label_from_confidences(c: &[f64; 3], threshold: f64) -> (Option<PrimitiveLabel>, f64) {
    let mut best = 0;
    for k in 1..3 {
        if c[k] > c[best] {
            best = k;
        }
    }
    let label = (c[best] >= threshold).then_some(PrimitiveLabel::ALL[best]);
    (label, c[best])
}

/// Labelled fitting data: P-FSM sequences with per-primitive amplitude jitter
/// and small sensor noise, plus a few white-noise sequences whose target is
/// all-zero scores so that unstructured movement is left unclassified.
pub fn esn_training_set<R: Rng + ?Sized>(
    n_sequences: usize,
    length: usize,
    rng: &mut R,
) -> Result<Vec<(Vec<Joints>, Vec<Option<PrimitiveLabel>>)>> {
    let spec = PfsmSpec::new(0.5)?;
    let mut out = Vec::with_capacity(n_sequences + n_sequences.div_ceil(8));
    for _ in 0..n_sequences {
        let labels = sample_pfsm(&spec, length.div_ceil(crate::dataset::PRIMITIVE_LEN), rng)?;
        let mut proprio = Vec::with_capacity(length);
        let mut per_step = Vec::with_capacity(length);
        for label in labels {
            let prim = make_primitive(label, &AmplitudeProfile::jittered(0.15, rng));
            for frame in prim.joints {
                if proprio.len() < length {
                    proprio.push(frame.map(|v| v + 2.0 * gaussian(rng)));
                    per_step.push(Some(label));
                }
            }
        }
        out.push((proprio, per_step));
    }
    for _ in 0..n_sequences.div_ceil(8) {
        let proprio: Vec<Joints> = (0..length).map(|_| [0.0; PROPRIO_DIMS].map(|_| 40.0 * gaussian(rng))).collect();
        out.push((proprio, vec![None; length]));
    }
    Ok(out)
}

/// Default classifier: fitted on freshly generated labelled data from `rng`.
pub fn default_classifier<R: Rng + ?Sized>(rng: &mut R) -> Result<EsnModel> {
    let set = esn_training_set(24, 400, rng)?;
    esn_fit(&set, &EsnConfig::default(), rng)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Ground-truth labelled view of a dataset sample.
pub fn labelled(sample: &SequenceSample) -> (Vec<Joints>, Vec<Option<PrimitiveLabel>>) {
    (sample.proprio.clone(), sample.labels.iter().map(|l| Some(*l)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reservoir_has_requested_sparsity_and_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = EsnModel::untrained(&EsnConfig::default(), &mut rng).unwrap();
        let nz = m.reservoir.data.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nz, 507);
        assert!((spectral_radius(&m.reservoir) - 0.9).abs() < 1e-9);
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        assert_eq!(label_from_confidences(&[0.55, 0.3, 0.15], 0.55).0, Some(PrimitiveLabel::A));
        assert_eq!(label_from_confidences(&[0.2, 0.549, 0.251], 0.55).0, None);
    }

    #[test]
    fn confidences_stay_low_for_diffuse_scores() {
        assert_eq!(confidences(&[0.3, 0.3, -0.2]), [0.3, 0.3, 0.0]);
        let c = confidences(&[1.5, 0.5, 0.0]);
        assert!((c[0] - 2.0 / 3.0).abs() < 1e-12 && (c[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = EsnConfig { leak_rate: 0.0, ..EsnConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = EsnConfig { threshold: 1.0, ..EsnConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
