use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EpisodeRecord;
use crate::pomdp::ObservationMode;

pub const DENSITY_BINS: usize = 30;
pub const DENSITY_SMOOTHING: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub policy: String,
    pub mode: ObservationMode,
    pub n: usize,
    pub mean_return: f64,
    /// Standard error of the mean; `None` for fewer than two episodes.
    pub se_return: Option<f64>,
    pub mean_trapped: f64,
    pub mean_free: f64,
    pub mean_exited: f64,
}

impl MetricsRow {
    /// "mean ± SE | trapped / free / exited MT".
    pub fn display(&self) -> String {
        let se = self.se_return.map(|s| format!("{s:.1}")).unwrap_or_else(|| "n/a".into());
        format!(
            "{:<8} {:<10} {:>10.1} ± {:<8} | {:.1} / {:.1} / {:.1} MT",
            self.policy, self.mode, self.mean_return, se, self.mean_trapped, self.mean_free, self.mean_exited
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    /// Groups records by (policy, mode), in first-appearance order.
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let mut order: Vec<(String, ObservationMode)> = Vec::new();
        let mut groups: BTreeMap<(String, ObservationMode), Vec<&EpisodeRecord>> = BTreeMap::new();
        for r in records {
            let key = (r.policy.clone(), r.mode);
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(r);
        }
        let rows = order
            .into_iter()
            .map(|key| {
                let g = &groups[&key];
                let returns: Vec<f64> = g.iter().map(|r| r.discounted_return).collect();
                let (mean_return, se_return) = mean_se(&returns);
                let avg = |f: fn(&EpisodeRecord) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / g.len() as f64;
                MetricsRow {
                    policy: key.0,
                    mode: key.1,
                    n: g.len(),
                    mean_return,
                    se_return,
                    mean_trapped: avg(|r| r.final_ledger.trapped),
                    mean_free: avg(|r| r.final_ledger.free),
                    mean_exited: avg(|r| r.final_ledger.exited),
                }
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, policy: &str, mode: ObservationMode) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.policy == policy && r.mode == mode)
    }

    pub fn display(&self) -> String {
        let mut s = format!(
            "{:<8} {:<10} {:>10}   {:<8} | {}\n",
            "policy", "mode", "return", "SE", "trapped / free / exited"
        );
        for r in &self.rows {
            s.push_str(&r.display());
            s.push('\n');
        }
        s
    }
}

/// Sample mean and standard error (sd/√n, `None` below two samples).
pub fn mean_se(x: &[f64]) -> (f64, Option<f64>) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, Some((var / n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided p-value for "a tends to exceed b".
    pub p_value: f64,
}

/// Paired one-sided sign test; ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    assert_eq!(a.len(), b.len(), "paired samples");
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let ties = a.len() - wins - losses;
    SignTest {
        wins,
        losses,
        ties,
        p_value: binomial_upper_tail(wins, wins + losses),
    }
}

/// P(X ≥ k) for X ~ Binomial(n, 1/2).
pub fn binomial_upper_tail(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_c = 0.0; // ln C(n, 0)
    let mut total = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            total += (ln_c + ln_half_n).exp();
        }
    }
    total.min(1.0)
}

/// Histogram density on `bins` equal-width bins over `[lo, hi]`.
/// Returns (bin centres, densities integrating to one).
pub fn histogram_density(x: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<f64>) {
    let width = (hi - lo) / bins as f64;
    let centres = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    let mut counts = vec![0.0; bins];
    if width > 0.0 {
        for &v in x {
            let b = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
            counts[b] += 1.0;
        }
    }
    let total = x.len().max(1) as f64 * if width > 0.0 { width } else { 1.0 };
    (centres, counts.into_iter().map(|c| c / total).collect())
}

fn smoothed_probabilities(x: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let (_, dens) = histogram_density(x, lo, hi, bins);
    let raw: Vec<f64> = dens.iter().map(|d| d + DENSITY_SMOOTHING).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / s).collect()
}

/// Jensen–Shannon divergence (natural log) between the histogram densities
/// of two samples on their joint range. Bounded by ln 2.
pub fn js_divergence(a: &[f64], b: &[f64], bins: usize) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "samples must be nonempty");
    assert!(bins >= 2, "need at least two bins");
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return 0.0;
    }
    let p = smoothed_probabilities(a, lo, hi, bins);
    let q = smoothed_probabilities(b, lo, hi, bins);
    let kl = |x: &[f64], m: &[f64]| x.iter().zip(m).map(|(xi, mi)| xi * (xi / mi).ln()).sum::<f64>();
    let m: Vec<f64> = p.iter().zip(&q).map(|(x, y)| 0.5 * (x + y)).collect();
    (0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).clamp(0.0, std::f64::consts::LN_2)
}
