//! Straight-line reference implementations used as independent oracles.
//! Nothing here calls into the library's numerical kernels: matrices are
//! copied into nested vectors and every formula is written out per element.
#![allow(dead_code)]

use pvrnn::linalg::Mat;
use pvrnn::model::{ModelConfig, NetworkParams};

pub type Matrix = Vec<Vec<f64>>;

pub fn to_rows(m: &Mat) -> Matrix {
    (0..m.rows).map(|r| (0..m.cols).map(|c| m.get(r, c)).collect()).collect()
}

pub fn mv(m: &Matrix, x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| {
            let mut s = 0.0;
            for j in 0..row.len() {
                s += row[j] * x[j];
            }
            s
        })
        .collect()
}

pub struct OracleTrace {
    /// `[step][layer][unit]`
    pub h: Vec<Vec<Vec<f64>>>,
    pub outputs: Vec<Vec<f64>>,
    pub mu_p: Vec<Vec<Vec<f64>>>,
    pub sigma_p: Vec<Vec<Vec<f64>>>,
    pub mu_q: Vec<Vec<Vec<f64>>>,
    pub sigma_q: Vec<Vec<Vec<f64>>>,
    pub kl: Vec<Vec<f64>>,
    pub total: f64,
    pub accuracy: f64,
}

/// Posterior rollout from the zero state at t = 0 over `a_mu.len()` steps.
/// `a_mu`, `a_sigma`, `eps` are indexed `[step][layer][unit]`.
pub fn posterior_rollout(
    config: &ModelConfig,
    params: &NetworkParams,
    a_mu: &[Vec<Vec<f64>>],
    a_sigma: &[Vec<Vec<f64>>],
    eps: &[Vec<Vec<f64>>],
    targets: &[Vec<f64>],
    mask: &[bool],
) -> OracleTrace {
    let nl = config.layers.len();
    let steps = a_mu.len();
    let wdd: Vec<Matrix> = params.layers.iter().map(|l| to_rows(&l.w_dd)).collect();
    let wzd: Vec<Matrix> = params.layers.iter().map(|l| to_rows(&l.w_zd)).collect();
    let wtop: Vec<Option<Matrix>> = params.layers.iter().map(|l| l.w_top.as_ref().map(to_rows)).collect();
    let wbot: Vec<Option<Matrix>> = params.layers.iter().map(|l| l.w_bottom.as_ref().map(to_rows)).collect();
    let wmu: Vec<Matrix> = params.layers.iter().map(|l| to_rows(&l.w_mu_p)).collect();
    let wsig: Vec<Matrix> = params.layers.iter().map(|l| to_rows(&l.w_sigma_p)).collect();
    let wout = to_rows(&params.w_out);

    let mut h_prev: Vec<Vec<f64>> = config.layers.iter().map(|l| vec![0.0; l.d_size]).collect();
    let mut d_prev = h_prev.clone();
    let mut tr = OracleTrace {
        h: vec![],
        outputs: vec![],
        mu_p: vec![],
        sigma_p: vec![],
        mu_q: vec![],
        sigma_q: vec![],
        kl: vec![],
        total: 0.0,
        accuracy: 0.0,
    };
    let nx = mask.iter().filter(|m| **m).count() as f64;
    let mut complexity = 0.0;
    let mut sq = 0.0;
    for k in 0..steps {
        let t = k + 1;
        let mut h_new = Vec::new();
        let (mut mps, mut sps, mut mqs, mut sqs, mut kls) = (vec![], vec![], vec![], vec![], vec![]);
        for l in 0..nl {
            let zs = config.layers[l].z_size;
            let (mp, sp): (Vec<f64>, Vec<f64>) = if t == 1 {
                (vec![0.0; zs], vec![1.0; zs])
            } else {
                let a = mv(&wmu[l], &d_prev[l]);
                let b = mv(&wsig[l], &d_prev[l]);
                (a.iter().map(|v| v.tanh()).collect(), b.iter().map(|v| v.clamp(-10.0, 10.0).exp()).collect())
            };
            let mq: Vec<f64> = a_mu[k][l].iter().map(|v| v.tanh()).collect();
            let sq_: Vec<f64> = a_sigma[k][l].iter().map(|v| v.clamp(-10.0, 10.0).exp()).collect();
            let z: Vec<f64> = (0..zs).map(|i| mq[i] + sq_[i] * eps[k][l][i]).collect();
            let mut kl = 0.0;
            for i in 0..zs {
                kl += (sp[i] / sq_[i]).ln() + (sq_[i].powi(2) + (mq[i] - mp[i]).powi(2)) / (2.0 * sp[i].powi(2)) - 0.5;
            }
            let w = if t == 1 { config.w_first } else { config.layers[l].w };
            complexity += w / zs as f64 * kl;
            let tau = config.layers[l].tau;
            let rec = mv(&wdd[l], &d_prev[l]);
            let lat = mv(&wzd[l], &z);
            let top = match &wtop[l] {
                Some(m) => mv(m, &d_prev[l + 1]),
                None => vec![0.0; rec.len()],
            };
            let bot = match &wbot[l] {
                Some(m) => mv(m, &d_prev[l - 1]),
                None => vec![0.0; rec.len()],
            };
            let h: Vec<f64> = (0..rec.len())
                .map(|i| (1.0 - 1.0 / tau) * h_prev[l][i] + (rec[i] + lat[i] + top[i] + bot[i]) / tau)
                .collect();
            h_new.push(h);
            mps.push(mp);
            sps.push(sp);
            mqs.push(mq);
            sqs.push(sq_);
            kls.push(kl);
        }
        let d_new: Vec<Vec<f64>> = h_new.iter().map(|h| h.iter().map(|v| v.tanh()).collect()).collect();
        let x: Vec<f64> = mv(&wout, &d_new[0]).iter().zip(&params.b_out).map(|(a, b)| a + b).collect();
        for i in 0..x.len() {
            if mask[i] {
                sq += (x[i] - targets[k][i]).powi(2);
            }
        }
        tr.h.push(h_new.clone());
        tr.outputs.push(x);
        tr.mu_p.push(mps);
        tr.sigma_p.push(sps);
        tr.mu_q.push(mqs);
        tr.sigma_q.push(sqs);
        tr.kl.push(kls);
        h_prev = h_new;
        d_prev = d_new;
    }
    tr.accuracy = -0.5 * sq / nx;
    tr.total = -(tr.accuracy - complexity);
    tr
}

/// `∫ q ln(q/p)` for one-dimensional Gaussians by composite Simpson's rule
/// over ±12 std of the wider distribution.
pub fn kl_numeric(mq: f64, sq: f64, mp: f64, sp: f64) -> f64 {
    let pdf =
        |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let log_pdf =
        |x: f64, m: f64, s: f64| -(x - m).powi(2) / (2.0 * s * s) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let lo = mq - 12.0 * sq;
    let hi = mq + 12.0 * sq;
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| pdf(x, mq, sq) * (log_pdf(x, mq, sq) - log_pdf(x, mp, sp));
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let x = lo + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Central finite difference of `f` around `x0` with step `h`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// Relative error with an absolute floor for near-zero values.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < abs || diff / analytic.abs().max(numeric.abs()) < rel
}
