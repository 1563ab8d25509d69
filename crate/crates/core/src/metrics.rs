//! Gaussian NLL and RMSE scoring, seed sweeps, and report formatting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `0.5 * ln(2 pi)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Mean of `0.5 ln(2 pi var) + (y - mu)^2 / (2 var)` over all points.
pub fn nll_score(mu: &[f64], var: &[f64], y: &[f64]) -> Result<f64> {
    if mu.len() != y.len() || var.len() != y.len() {
        return Err(Error::Shape {
            at: "nll inputs".into(),
            expected: y.len(),
            got: mu.len().min(var.len()),
        });
    }
    if y.is_empty() {
        return Err(Error::Empty("nll inputs".into()));
    }
    let mut total = 0.0;
    for ((m, v), t) in mu.iter().zip(var).zip(y) {
        if !(m.is_finite() && v.is_finite() && t.is_finite()) {
            return Err(Error::NonFinite("nll inputs".into()));
        }
        if *v <= 0.0 {
            return Err(Error::OutOfBounds(format!("non-positive variance {v}")));
        }
        let r = t - m;
        total += 0.5 * v.ln() + r * r / (2.0 * v) + HALF_LN_2PI;
    }
    let nll = total / y.len() as f64;
    if !nll.is_finite() {
        return Err(Error::NonFinite("nll value".into()));
    }
    Ok(nll)
}

pub fn rmse_score(mu: &[f64], y: &[f64]) -> Result<f64> {
    if mu.len() != y.len() {
        return Err(Error::Shape {
            at: "rmse inputs".into(),
            expected: y.len(),
            got: mu.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Empty("rmse inputs".into()));
    }
    let sq: f64 = mu.iter().zip(y).map(|(m, t)| (t - m) * (t - m)).sum();
    Ok((sq / y.len() as f64).sqrt())
}

/// Sample mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(scores: &[f64]) -> Result<MeanSe> {
    if scores.len() < 2 {
        return Err(Error::Config(
            "a seed sweep needs at least two seeds".into(),
        ));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    Ok(MeanSe {
        mean,
        se: (var / n).sqrt(),
    })
}

/// Runs `run` once per seed `0..n_seeds` and summarizes the scores.
pub fn seed_sweep<F>(n_seeds: u64, mut run: F) -> Result<MeanSe>
where
    F: FnMut(u64) -> Result<f64>,
{
    let scores = (0..n_seeds).map(&mut run).collect::<Result<Vec<_>>>()?;
    mean_se(&scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub nll: f64,
    pub rmse: f64,
    pub n: usize,
    pub dataset: String,
    pub seed: u64,
}

impl ScoreReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

/// Aligned plain-text table of reports.
pub fn format_table(reports: &[ScoreReport]) -> String {
    let name_w = reports
        .iter()
        .map(|r| r.dataset.len())
        .max()
        .unwrap_or(0)
        .max("dataset".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>6}  {:>5}  {:>10}  {:>10}",
        "dataset", "seed", "n", "nll", "rmse"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>6}  {:>5}  {:>10.4}  {:>10.4}",
            r.dataset, r.seed, r.n, r.nll, r.rmse
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nll_closed_forms() {
        assert!((nll_score(&[0.0], &[1.0], &[0.0]).unwrap() - 0.918_938_5).abs() < 1e-7);
        assert!((nll_score(&[0.0], &[1.0], &[1.0]).unwrap() - 1.418_938_5).abs() < 1e-7);
        let e2 = std::f64::consts::E.powi(2);
        assert!((nll_score(&[0.0], &[e2], &[0.0]).unwrap() - 1.918_938_5).abs() < 1e-7);
        let v = 1.0 / (2.0 * std::f64::consts::PI);
        assert!(
            nll_score(&[3.0, -1.0], &[v, v], &[3.0, -1.0])
                .unwrap()
                .abs()
                < 1e-12
        );
        let two = nll_score(&[0.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!((two - 1.168_938_5).abs() < 1e-7);
    }

    #[test]
    fn nll_rejects_bad_variance() {
        assert!(nll_score(&[0.0], &[0.0], &[0.0]).is_err());
        assert!(nll_score(&[0.0], &[-1.0], &[0.0]).is_err());
        assert!(nll_score(&[f64::NAN], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn rmse_values() {
        assert_eq!(rmse_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse_score(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-12);
        let scaled = rmse_score(&[0.0, 0.0], &[-6.0, -8.0]).unwrap();
        assert!((scaled - 2.0 * r).abs() < 1e-12);
        assert!(rmse_score(&[], &[]).is_err());
    }

    #[test]
    fn mean_and_standard_error() {
        assert_eq!(
            mean_se(&[1.0, 1.0, 1.0]).unwrap(),
            MeanSe { mean: 1.0, se: 0.0 }
        );
        let m = mean_se(&[1.0, 3.0]).unwrap();
        assert!((m.mean - 2.0).abs() < 1e-15 && (m.se - 1.0).abs() < 1e-15);
        assert_eq!(mean_se(&[3.0, 1.0]).unwrap(), m);
        assert!(mean_se(&[1.0]).is_err());
    }

    #[test]
    fn sweep_passes_seeds_in_order() {
        let s = seed_sweep(3, |seed| Ok(seed as f64)).unwrap();
        assert_eq!(s.mean, 1.0);
    }

    #[test]
    fn table_aligns_columns() {
        let r = ScoreReport {
            nll: 1.0,
            rmse: 0.5,
            n: 10,
            dataset: "toy".into(),
            seed: 1,
        };
        let t = format_table(&[
            r.clone(),
            ScoreReport {
                dataset: "yacht".into(),
                ..r
            },
        ]);
        let lens: Vec<usize> = t.lines().map(str::len).collect();
        assert!(lens.windows(2).all(|w| w[0] == w[1]), "{t}");
    }
}
