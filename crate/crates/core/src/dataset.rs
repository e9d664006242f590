//! Synthetic movement-primitive task: three 40-step joint trajectories, a
//! probabilistic finite state machine that strings them together, and the
//! kinematic channel that turns joint angles into mirrored hand positions.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROPRIO_DIMS: usize = 6;
pub const EXTERO_DIMS: usize = 4;
pub const OUTPUT_DIMS: usize = PROPRIO_DIMS + EXTERO_DIMS;
pub const PRIMITIVE_LEN: usize = 40;
/// Planar arm link lengths, shoulder to hand.
pub const LINK_LENGTHS: [f64; 3] = [1.0, 0.8, 0.5];
/// Joint angles are divided by this to map `[-180, 180]` degrees onto `[-1, 1]`.
pub const JOINT_SCALE: f64 = 180.0;
/// Hand coordinates are divided by the arm reach to map them onto `[-1, 1]`.
pub const REACH: f64 = 2.3;

pub const PROPRIO_COLUMNS: [&str; PROPRIO_DIMS] =
    ["r_shoulder", "r_upper_arm", "r_elbow", "l_shoulder", "l_upper_arm", "l_elbow"];
pub const EXTERO_COLUMNS: [&str; EXTERO_DIMS] = ["x_r", "y_r", "x_l", "y_l"];

pub type Joints = [f64; PROPRIO_DIMS];
pub type Hands = [f64; EXTERO_DIMS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimitiveLabel {
    A,
    B,
    C,
}

impl PrimitiveLabel {
    pub const ALL: [PrimitiveLabel; 3] = [PrimitiveLabel::A, PrimitiveLabel::B, PrimitiveLabel::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_char(self) -> char {
        match self {
            PrimitiveLabel::A => 'A',
            PrimitiveLabel::B => 'B',
            PrimitiveLabel::C => 'C',
        }
    }

    pub fn from_char(c: char) -> Result<Self> {
        match c {
            'A' => Ok(PrimitiveLabel::A),
            'B' => Ok(PrimitiveLabel::B),
            'C' => Ok(PrimitiveLabel::C),
            other => Err(Error::Usage(format!("unknown primitive label {other:?}"))),
        }
    }
}

impl fmt::Display for PrimitiveLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl std::str::FromStr for PrimitiveLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_char(c),
            _ => Err(Error::Usage(format!("unknown primitive label {s:?}"))),
        }
    }
}

/// Per-joint gain applied to a primitive's nominal amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeProfile {
    pub gain: Joints,
}

impl Default for AmplitudeProfile {
    fn default() -> Self {
        Self { gain: [1.0; PROPRIO_DIMS] }
    }
}

impl AmplitudeProfile {
    pub fn uniform(g: f64) -> Self {
        Self { gain: [g; PROPRIO_DIMS] }
    }

    /// Gains drawn uniformly from `[1 - spread, 1 + spread]`.
    pub fn jittered<R: Rng + ?Sized>(spread: f64, rng: &mut R) -> Self {
        let mut gain = [1.0; PROPRIO_DIMS];
        for g in &mut gain {
            *g = 1.0 + rng.random_range(-spread..=spread);
        }
        Self { gain }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub label: PrimitiveLabel,
    /// `PRIMITIVE_LEN` frames of joint angles in degrees.
    pub joints: Vec<Joints>,
}

const AMP_A: Joints = [60.0, 30.0, 30.0, 60.0, 30.0, 30.0];
const AMP_B: Joints = [60.0, 30.0, 30.0, -60.0, -30.0, -30.0];
const AMP_C: Joints = [0.0, 60.0, -60.0, 0.0, 60.0, -60.0];

/// Builds a 40-frame primitive that leaves the home posture (all joints at
/// zero) along a fixed direction in joint space and returns: `A` raises both
/// arms together, `B` raises one and lowers the other, `C` bends elbows and
/// wrists in opposite directions. The three directions are orthogonal.
pub fn make_primitive(label: PrimitiveLabel, profile: &AmplitudeProfile) -> Primitive {
    let last = (PRIMITIVE_LEN - 1) as f64;
    let joints = (0..PRIMITIVE_LEN)
        .map(|s| {
            let phase = s as f64 / last;
            let amp = match label {
                PrimitiveLabel::A => AMP_A,
                PrimitiveLabel::B => AMP_B,
                PrimitiveLabel::C => AMP_C,
            };
            let shape = (PI * phase).sin();
            let mut j = [0.0; PROPRIO_DIMS];
            for k in 0..PROPRIO_DIMS {
                j[k] = amp[k] * profile.gain[k] * shape;
            }
            // sin(π) is ~1e-16 away from zero; pin the boundary frames exactly.
            if s == 0 || s == PRIMITIVE_LEN - 1 {
                j = [0.0; PROPRIO_DIMS];
            }
            j
        })
        .collect();
    Primitive { label, joints }
}

/// Hand positions `(x_r, y_r, x_l, y_l)` of two 3-link planar arms; joint
/// angles in degrees, three per arm, each relative to the previous link.
pub fn forward_kinematics(joints: &Joints) -> Hands {
    let mut out = [0.0; EXTERO_DIMS];
    for arm in 0..2 {
        let mut angle = 0.0;
        let (mut x, mut y) = (0.0, 0.0);
        for (k, len) in LINK_LENGTHS.iter().enumerate() {
            angle += joints[arm * 3 + k].to_radians();
            x += len * angle.cos();
            y += len * angle.sin();
        }
        out[arm * 2] = x;
        out[arm * 2 + 1] = y;
    }
    out
}

/// Mirror image of a hand configuration: left and right swap and x flips sign.
pub fn mirror(ex: &Hands) -> Hands {
    [-ex[2], ex[3], -ex[0], ex[1]]
}

/// Exteroceptive view of a posture as seen by the counterpart.
pub fn exteroception(joints: &Joints) -> Hands {
    mirror(&forward_kinematics(joints))
}

/// After every `A` the machine moves to `B` with probability `p_b` and to
/// `C` otherwise; both return to `A` deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfsmSpec {
    pub p_b: f64,
    pub p_c: f64,
}

impl PfsmSpec {
    pub fn new(p_b: f64) -> Result<Self> {
        let spec = Self { p_b, p_c: 1.0 - p_b };
        spec.validate()?;
        Ok(spec)
    }

    /// `A` → 20% `B`, 80% `C`.
    pub fn c_preferring() -> Self {
        Self { p_b: 0.2, p_c: 0.8 }
    }

    /// `A` → 80% `B`, 20% `C`.
    pub fn b_preferring() -> Self {
        Self { p_b: 0.8, p_c: 0.2 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_b) || !ok(self.p_c) || (self.p_b + self.p_c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "P-FSM probabilities must lie in [0, 1] and sum to 1 (p_b = {}, p_c = {})",
                self.p_b, self.p_c
            )));
        }
        Ok(())
    }

    /// Short name such as `A20B80C`.
    pub fn name(&self) -> String {
        format!("A{:.0}B{:.0}C", self.p_b * 100.0, self.p_c * 100.0)
    }
}

/// Label sequence of `n_primitives` entries starting with `A`.
pub fn sample_pfsm<R: Rng + ?Sized>(spec: &PfsmSpec, n_primitives: usize, rng: &mut R) -> Result<Vec<PrimitiveLabel>> {
    spec.validate()?;
    if n_primitives == 0 {
        return Err(Error::Usage("a P-FSM sequence needs at least one primitive".into()));
    }
    let mut out = Vec::with_capacity(n_primitives);
    let mut state = PrimitiveLabel::A;
    for _ in 0..n_primitives {
        out.push(state);
        state = match state {
            PrimitiveLabel::A => {
                if rng.random::<f64>() < spec.p_b {
                    PrimitiveLabel::B
                } else {
                    PrimitiveLabel::C
                }
            }
            _ => PrimitiveLabel::A,
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    /// Joint angles in degrees.
    pub proprio: Vec<Joints>,
    /// Mirrored hand positions derived from `proprio`.
    pub extero: Vec<Hands>,
    pub labels: Vec<PrimitiveLabel>,
}

impl SequenceSample {
    pub fn from_labels(labels: &[PrimitiveLabel], length: usize, profile: &AmplitudeProfile) -> Self {
        let mut proprio = Vec::with_capacity(length);
        let mut per_step = Vec::with_capacity(length);
        'outer: for &label in labels {
            let prim = make_primitive(label, profile);
            for frame in prim.joints {
                if proprio.len() == length {
                    break 'outer;
                }
                proprio.push(frame);
                per_step.push(label);
            }
        }
        let extero = proprio.iter().map(exteroception).collect();
        Self { proprio, extero, labels: per_step }
    }

    pub fn len(&self) -> usize {
        self.proprio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proprio.is_empty()
    }

    /// Network targets: `len × 10` step-major, proprio then extero, normalized.
    pub fn network_targets(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * OUTPUT_DIMS);
        for (p, e) in self.proprio.iter().zip(&self.extero) {
            out.extend(p.iter().map(|v| v / JOINT_SCALE));
            out.extend(e.iter().map(|v| v / REACH));
        }
        out
    }

    /// Primitive labels of the contiguous segments, in order.
    pub fn segment_labels(&self) -> Vec<PrimitiveLabel> {
        let mut out: Vec<PrimitiveLabel> = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if i % PRIMITIVE_LEN == 0 {
                out.push(*l);
            }
        }
        out
    }
}

/// Normalized network outputs → joint angles in degrees.
pub fn proprio_from_output(output: &[f64]) -> Joints {
    let mut j = [0.0; PROPRIO_DIMS];
    for k in 0..PROPRIO_DIMS {
        j[k] = output[k] * JOINT_SCALE;
    }
    j
}

/// Hand positions → normalized network targets.
pub fn normalize_extero(ex: &Hands) -> Hands {
    let mut out = *ex;
    out.iter_mut().for_each(|v| *v /= REACH);
    out
}

pub const DATASET_FORMAT: &str = "pvrnn-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    pub version: u32,
    pub spec: PfsmSpec,
    pub seed: u64,
    pub length: usize,
    /// Column order of each proprio row (degrees) and extero row.
    pub proprio_columns: Vec<String>,
    pub extero_columns: Vec<String>,
    pub samples: Vec<SequenceSample>,
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ds.format != DATASET_FORMAT || ds.version != DATASET_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported dataset format {} v{}",
                path.display(),
                ds.format,
                ds.version
            )));
        }
        Ok(ds)
    }

    /// Fraction of `B` among all `B`/`C` segments across samples.
    pub fn b_fraction(&self) -> f64 {
        let (mut b, mut c) = (0usize, 0usize);
        for s in &self.samples {
            for l in s.segment_labels() {
                match l {
                    PrimitiveLabel::B => b += 1,
                    PrimitiveLabel::C => c += 1,
                    PrimitiveLabel::A => {}
                }
            }
        }
        b as f64 / (b + c).max(1) as f64
    }
}

/// `n_samples` sequences of `length` steps following `spec`.
pub fn build_dataset<R: Rng + ?Sized>(
    spec: &PfsmSpec,
    n_samples: usize,
    length: usize,
    seed: u64,
    rng: &mut R,
) -> Result<Dataset> {
    if length == 0 {
        return Err(Error::Usage("sequence length must be positive".into()));
    }
    let n_prims = length.div_ceil(PRIMITIVE_LEN);
    let samples = (0..n_samples)
        .map(|_| {
            let labels = sample_pfsm(spec, n_prims, rng)?;
            Ok(SequenceSample::from_labels(&labels, length, &AmplitudeProfile::default()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        spec: *spec,
        seed,
        length,
        proprio_columns: PROPRIO_COLUMNS.iter().map(|s| s.to_string()).collect(),
        extero_columns: EXTERO_COLUMNS.iter().map(|s| s.to_string()).collect(),
        samples,
    })
}
