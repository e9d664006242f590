use pvrnn::analysis::esn::{esn_fit, esn_training_set, spectral_radius, EsnConfig, EsnModel};
use pvrnn::analysis::{default_classifier, esn_classify};
use pvrnn::dataset::{make_primitive, sample_pfsm, AmplitudeProfile, Joints, PfsmSpec, PrimitiveLabel, SequenceSample};
use pvrnn::linalg::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Spectral radius by power iteration, fitting either a dominant real
/// eigenvalue or a dominant complex pair from a short Krylov sequence.
fn power_iteration_radius(m: &Mat) -> f64 {
    let n = m.rows;
    let apply = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| m.data[i * n + j] * v[j]).sum()).collect() };
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
    for _ in 0..3000 {
        v = apply(&v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }
    let v1 = apply(&v);
    let v2 = apply(&v1);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // v2 ≈ p v1 + q v: q = -|λ|² for a complex pair.
    let (a11, a12, a22) = (dot(&v1, &v1), dot(&v1, &v), dot(&v, &v));
    let (b1, b2) = (dot(&v2, &v1), dot(&v2, &v));
    let det = a11 * a22 - a12 * a12;
    let p = (b1 * a22 - b2 * a12) / det;
    let q = (a11 * b2 - a12 * b1) / det;
    let resid2: f64 = v2.iter().zip(&v1).zip(&v).map(|((c, b), a)| (c - p * b - q * a).powi(2)).sum();
    // Real dominant eigenvalue: v1 ≈ λ v.
    let lam = dot(&v1, &v) / a22;
    let resid1: f64 = v1.iter().zip(&v).map(|(b, a)| (b - lam * a).powi(2)).sum();
    if resid1 <= resid2.max(1e-24) * 10.0 || q >= 0.0 {
        lam.abs()
    } else {
        (-q).sqrt()
    }
}

#[test]
fn scaled_reservoir_radius_matches_power_iteration() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = default_classifier(&mut rng).unwrap();
        let nz = model.reservoir.data.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nz, (0.25f64 * 45.0 * 45.0).ceil() as usize);
        let oracle = power_iteration_radius(&model.reservoir);
        assert!((oracle - 0.9).abs() < 1e-6, "seed {seed}: power iteration gives {oracle}");
        assert!((spectral_radius(&model.reservoir) - 0.9).abs() < 1e-6);
    }
}

fn clean_sequence(seed: u64, n_primitives: usize) -> SequenceSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = sample_pfsm(&PfsmSpec::new(0.5).unwrap(), n_primitives, &mut rng).unwrap();
    SequenceSample::from_labels(&labels, n_primitives * 40, &AmplitudeProfile::uniform(1.0))
}

fn accuracy(model: &EsnModel, sample: &SequenceSample, washout: usize) -> f64 {
    let cls = esn_classify(model, &sample.proprio);
    let hits = cls.labels.iter().zip(&sample.labels).skip(washout).filter(|(p, t)| **p == Some(**t)).count();
    hits as f64 / (sample.len() - washout) as f64
}

#[test]
fn classifies_clean_primitive_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = default_classifier(&mut rng).unwrap();
    for seed in 100..105 {
        let acc = accuracy(&model, &clean_sequence(seed, 10), 10);
        assert!(acc >= 0.95, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn fit_on_clean_primitives_recovers_them() {
    let train: Vec<_> = (0..6)
        .map(|s| {
            let smp = clean_sequence(s, 10);
            (smp.proprio.clone(), smp.labels.iter().map(|l| Some(*l)).collect())
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = esn_fit(&train, &EsnConfig::default(), &mut rng).unwrap();
    let mut hits = 0;
    for label in PrimitiveLabel::ALL {
        let p = make_primitive(label, &AmplitudeProfile::uniform(1.0));
        hits += esn_classify(&model, &p.joints).labels.iter().skip(10).filter(|l| **l == Some(label)).count();
    }
    let acc = hits as f64 / 90.0;
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn pure_b_input_is_labelled_b() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = default_classifier(&mut rng).unwrap();
    let b = make_primitive(PrimitiveLabel::B, &AmplitudeProfile::uniform(1.0));
    let proprio: Vec<Joints> = std::iter::repeat_n(b.joints, 5).flatten().collect();
    let cls = esn_classify(&model, &proprio);
    let frac = cls.labels.iter().filter(|l| **l == Some(PrimitiveLabel::B)).count() as f64 / proprio.len() as f64;
    assert!(frac >= 0.9, "B fraction {frac}");
}

#[test]
fn white_noise_is_mostly_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = default_classifier(&mut rng).unwrap();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(99);
    let proprio: Vec<Joints> = (0..400)
        .map(|_| {
            std::array::from_fn(|_| {
                40.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut noise_rng)
            })
        })
        .collect();
    let cls = esn_classify(&model, &proprio);
    let rejected = cls.labels.iter().filter(|l| l.is_none()).count();
    assert!(rejected > 200, "rejected {rejected} of 400");
}

#[test]
fn ridge_fit_is_deterministic() {
    let mut r1 = ChaCha8Rng::seed_from_u64(4);
    let mut r2 = ChaCha8Rng::seed_from_u64(4);
    let s1 = esn_training_set(4, 200, &mut r1).unwrap();
    let s2 = esn_training_set(4, 200, &mut r2).unwrap();
    let m1 = esn_fit(&s1, &EsnConfig::default(), &mut r1).unwrap();
    let m2 = esn_fit(&s2, &EsnConfig::default(), &mut r2).unwrap();
    assert_eq!(m1, m2);
}
