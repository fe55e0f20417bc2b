//! Ensemble smoother with multiple data assimilation over plain parameter vectors.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BeliefError;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsmdaConfig {
    /// Inflation factor per pass; the reciprocals must sum to one.
    pub alphas: Vec<f64>,
}

impl Default for EsmdaConfig {
    fn default() -> Self {
        Self::uniform(4)
    }
}

impl EsmdaConfig {
    /// `n` passes with constant inflation `n`.
    pub fn uniform(n: usize) -> Self {
        Self {
            alphas: vec![n as f64; n],
        }
    }

    pub fn new(alphas: Vec<f64>) -> Result<Self, BeliefError> {
        let c = Self { alphas };
        c.validate()?;
        Ok(c)
    }

    pub fn n_assimilations(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<(), BeliefError> {
        if self.alphas.is_empty() {
            return Err(BeliefError::Config("at least one assimilation pass required".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(BeliefError::Config(format!("inflation factor {a} must be > 0")));
        }
        let s: f64 = self.alphas.iter().map(|a| 1.0 / a).sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(BeliefError::Config(format!(
                "inflation reciprocals sum to {s}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EsmdaReport {
    pub passes: usize,
    /// Whether any pass needed the ridge fallback to factor the innovation covariance.
    pub ridge_used: bool,
}

pub const RIDGE: f64 = 1e-8;

/// Updates `members` in place so their predictions `forward(m)` move toward
/// `d_obs`, whose errors are independent with standard deviations `obs_sd`.
/// `clamp` bounds every parameter after each pass.
pub fn esmda_update<F>(
    members: &mut [Vec<f64>],
    d_obs: &[f64],
    obs_sd: &[f64],
    forward: F,
    cfg: &EsmdaConfig,
    clamp: Option<(f64, f64)>,
    rng: &mut Rng,
) -> Result<EsmdaReport, BeliefError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, BeliefError> + Sync,
{
    cfg.validate()?;
    let ne = members.len();
    if ne < 2 {
        return Err(BeliefError::Ensemble("ES-MDA needs at least two members".into()));
    }
    let nd = d_obs.len();
    if obs_sd.len() != nd {
        return Err(BeliefError::Data(format!("{} data but {} error scales", nd, obs_sd.len())));
    }
    let nm = members[0].len();
    if members.iter().any(|m| m.len() != nm) {
        return Err(BeliefError::Ensemble("members differ in length".into()));
    }
    let mut report = EsmdaReport::default();
    if nd == 0 {
        return Ok(report);
    }
    let scale = 1.0 / (ne as f64 - 1.0);
    for &alpha in &cfg.alphas {
        let preds: Vec<Vec<f64>> = members.par_iter().map(|m| forward(m)).collect::<Result<_, _>>()?;
        if let Some(p) = preds.iter().find(|p| p.len() != nd) {
            return Err(BeliefError::Data(format!("forward returned {} values, expected {nd}", p.len())));
        }
        let d = DMatrix::from_fn(nd, ne, |r, c| preds[c][r]);
        let m = DMatrix::from_fn(nm, ne, |r, c| members[c][r]);
        let dm = centred(&d);
        let mm = centred(&m);

        let mut c = &dm * dm.transpose() * scale;
        for r in 0..nd {
            c[(r, r)] += alpha * obs_sd[r] * obs_sd[r];
        }
        let innov = DMatrix::from_fn(nd, ne, |r, col| {
            let z: f64 = rng.sample(StandardNormal);
            d_obs[r] + alpha.sqrt() * obs_sd[r] * z - d[(r, col)]
        });
        let x = match c.clone().cholesky() {
            Some(ch) => ch.solve(&innov),
            None => {
                report.ridge_used = true;
                for r in 0..nd {
                    c[(r, r)] += RIDGE;
                }
                match c.clone().cholesky() {
                    Some(ch) => ch.solve(&innov),
                    None => c
                        .lu()
                        .solve(&innov)
                        .ok_or_else(|| BeliefError::Numerical("innovation covariance is singular".into()))?,
                }
            }
        };
        let delta = &mm * (dm.transpose() * x) * scale;
        for (col, member) in members.iter_mut().enumerate() {
            for (r, v) in member.iter_mut().enumerate() {
                *v += delta[(r, col)];
                if let Some((lo, hi)) = clamp {
                    *v = v.clamp(lo, hi);
                }
            }
        }
        report.passes += 1;
    }
    Ok(report)
}

fn centred(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for r in 0..a.nrows() {
        let mean = a.row(r).mean();
        out.row_mut(r).add_scalar_mut(-mean);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn prior(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| vec![rng.sample::<f64, _>(StandardNormal)]).collect()
    }

    fn moments(m: &[Vec<f64>]) -> (f64, f64) {
        let n = m.len() as f64;
        let mean = m.iter().map(|v| v[0]).sum::<f64>() / n;
        let var = m.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn schedule_validation() {
        assert!(EsmdaConfig::new(vec![4.0; 4]).is_ok());
        assert!(EsmdaConfig::new(vec![2.0, 2.0]).is_ok());
        assert!(EsmdaConfig::new(vec![2.0, 3.0]).is_err());
        assert!(EsmdaConfig::new(vec![]).is_err());
        assert!(EsmdaConfig::new(vec![-1.0, 0.5]).is_err());
        EsmdaConfig::default().validate().unwrap();
    }

    #[test]
    fn linear_gaussian_matches_kalman_posterior() {
        // prior N(0,1), identity forward, noise sd 1, datum 1: posterior N(0.5, 0.5)
        for n in [1usize, 2, 4] {
            for seed in 0..3u64 {
                let mut m = prior(500, 100 + seed);
                let mut rng = rng_from_seed(seed);
                let cfg = EsmdaConfig::uniform(n);
                esmda_update(&mut m, &[1.0], &[1.0], |x| Ok(x.to_vec()), &cfg, None, &mut rng).unwrap();
                let (mean, var) = moments(&m);
                let band_mean = 3.0 * (0.5f64 / 500.0).sqrt();
                let band_var = 3.0 * 0.5 * (2.0f64 / 499.0).sqrt();
                assert!((mean - 0.5).abs() < band_mean, "n={n} mean {mean}");
                assert!((var - 0.5).abs() < band_var, "n={n} var {var}");
            }
        }
    }

    #[test]
    fn single_pass_equals_ensemble_smoother() {
        let mut rng = rng_from_seed(8);
        let ne = 30;
        let members: Vec<Vec<f64>> = (0..ne)
            .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let g = |x: &[f64]| vec![x[0] + 2.0 * x[1], x[2] - x[0]];
        let d_obs = [0.7, -0.3];
        let sd = [0.5, 0.2];

        let mut es = members.clone();
        esmda_update(
            &mut es,
            &d_obs,
            &sd,
            |x| Ok(g(x)),
            &EsmdaConfig::new(vec![1.0]).unwrap(),
            None,
            &mut rng_from_seed(42),
        )
        .unwrap();

        // Textbook smoother with explicit covariances and the same perturbations.
        let mut prng = rng_from_seed(42);
        let preds: Vec<Vec<f64>> = members.iter().map(|m| g(m)).collect();
        let mean = |v: &Vec<Vec<f64>>, r: usize| v.iter().map(|x| x[r]).sum::<f64>() / ne as f64;
        let mbar: Vec<f64> = (0..3).map(|r| mean(&members, r)).collect();
        let dbar: Vec<f64> = (0..2).map(|r| mean(&preds, r)).collect();
        let mut cmd: DMatrix<f64> = DMatrix::zeros(3, 2);
        let mut cdd: DMatrix<f64> = DMatrix::zeros(2, 2);
        for e in 0..ne {
            for a in 0..2 {
                for b in 0..3 {
                    cmd[(b, a)] += (members[e][b] - mbar[b]) * (preds[e][a] - dbar[a]) / (ne as f64 - 1.0);
                }
                for b in 0..2 {
                    cdd[(a, b)] += (preds[e][a] - dbar[a]) * (preds[e][b] - dbar[b]) / (ne as f64 - 1.0);
                }
            }
        }
        for a in 0..2 {
            cdd[(a, a)] += sd[a] * sd[a];
        }
        let inv = cdd.try_inverse().unwrap();
        let gain = cmd * inv;
        let mut perturb: DMatrix<f64> = DMatrix::zeros(2, ne);
        for e in 0..ne {
            for r in 0..2 {
                let z: f64 = prng.sample(StandardNormal);
                perturb[(r, e)] = d_obs[r] + sd[r] * z;
            }
        }
        for e in 0..ne {
            let innov = nalgebra::DVector::from_fn(2, |r, _| perturb[(r, e)] - preds[e][r]);
            let upd = &gain * innov;
            for b in 0..3 {
                assert!((es[e][b] - (members[e][b] + upd[b])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_innovation_leaves_members_and_flags_ridge() {
        let mut m: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.01, 0.3]).collect();
        let before = m.clone();
        let mut rng = rng_from_seed(0);
        let r = esmda_update(&mut m, &[1.0, 2.0], &[0.0, 0.0], |_| Ok(vec![1.0, 2.0]), &EsmdaConfig::default(), None, &mut rng)
            .unwrap();
        assert!(r.ridge_used);
        for (a, b) in m.iter().flatten().zip(before.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn clamp_and_length_checks() {
        let mut m = prior(50, 1);
        let mut rng = rng_from_seed(1);
        esmda_update(&mut m, &[10.0], &[0.1], |x| Ok(x.to_vec()), &EsmdaConfig::default(), Some((-0.5, 0.5)), &mut rng)
            .unwrap();
        assert!(m.iter().all(|v| v[0] <= 0.5 && v[0] >= -0.5));
        assert!(esmda_update(&mut m, &[1.0], &[], |x| Ok(x.to_vec()), &EsmdaConfig::default(), None, &mut rng).is_err());
        assert!(esmda_update(&mut m, &[1.0, 2.0], &[1.0, 1.0], |x| Ok(x.to_vec()), &EsmdaConfig::default(), None, &mut rng)
            .is_err());
    }
}
