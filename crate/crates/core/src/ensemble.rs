//! Ensemble construction from a catalog of trained models, mixture moments,
//! and architecture diversity.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::arch::{embed, ArchGenome};
use crate::error::{Error, Result};
use crate::metrics::nll_score;
use crate::nn::{Matrix, Predictions};

/// Moments of an equal-weight ensemble at one input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePoint {
    pub mu: f64,
    pub var_total: f64,
    pub var_aleatoric: f64,
    pub var_epistemic: f64,
}

/// Combines member `(mu, var)` pairs at a single input.
///
/// Aleatoric variance is the mean member variance; epistemic variance is the
/// Bessel-corrected spread of member means, taken as zero for a single member.
pub fn combine(members: &[(f64, f64)]) -> Result<EnsemblePoint> {
    if members.is_empty() {
        return Err(Error::Empty("ensemble members".into()));
    }
    let k = members.len() as f64;
    let mu = members.iter().map(|m| m.0).sum::<f64>() / k;
    let var_aleatoric = members.iter().map(|m| m.1).sum::<f64>() / k;
    let var_epistemic = if members.len() > 1 {
        members.iter().map(|m| (m.0 - mu) * (m.0 - mu)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(EnsemblePoint {
        mu,
        var_total: var_aleatoric + var_epistemic,
        var_aleatoric,
        var_epistemic,
    })
}

/// Per-entry ensemble moments, each `(rows, output_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePrediction {
    pub mu: Matrix,
    pub var_total: Matrix,
    pub var_aleatoric: Matrix,
    pub var_epistemic: Matrix,
}

impl EnsemblePrediction {
    /// Moment-matched Gaussian view of the mixture.
    pub fn as_gaussian(&self) -> Predictions {
        Predictions {
            mu: self.mu.clone(),
            var: self.var_total.clone(),
        }
    }
}

pub fn predict_ensemble(members: &[&Predictions]) -> Result<EnsemblePrediction> {
    let first = members
        .first()
        .ok_or_else(|| Error::Empty("ensemble members".into()))?;
    let (rows, cols) = (first.mu.rows(), first.mu.cols());
    for m in members {
        if m.mu.rows() != rows || m.mu.cols() != cols {
            return Err(Error::Shape {
                at: "member predictions".into(),
                expected: rows * cols,
                got: m.mu.rows() * m.mu.cols(),
            });
        }
    }
    let mut out = EnsemblePrediction {
        mu: Matrix::zeros(rows, cols),
        var_total: Matrix::zeros(rows, cols),
        var_aleatoric: Matrix::zeros(rows, cols),
        var_epistemic: Matrix::zeros(rows, cols),
    };
    let mut buf = Vec::with_capacity(members.len());
    for k in 0..rows * cols {
        buf.clear();
        buf.extend(members.iter().map(|m| (m.mu.data()[k], m.var.data()[k])));
        let p = combine(&buf)?;
        out.mu.data_mut()[k] = p.mu;
        out.var_total.data_mut()[k] = p.var_total;
        out.var_aleatoric.data_mut()[k] = p.var_aleatoric;
        out.var_epistemic.data_mut()[k] = p.var_epistemic;
    }
    Ok(out)
}

/// Gaussian NLL of the moment-matched ensemble; the quantity greedy selection minimizes.
pub fn ensemble_nll(members: &[&Predictions], y: &Matrix) -> Result<f64> {
    let e = predict_ensemble(members)?;
    nll_score(e.mu.data(), e.var_total.data(), y.data())
}

/// A catalog model's cached predictions on the selection data.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub id: usize,
    pub valid_nll: f64,
    pub predictions: Predictions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    /// Member ids in the order they were added; repeats weight a model more.
    pub member_ids: Vec<usize>,
    pub k: usize,
}

impl Ensemble {
    pub fn unique_ids(&self) -> Vec<usize> {
        self.member_ids
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyOutcome {
    pub ensemble: Ensemble,
    /// Ensemble NLL after each accepted addition.
    pub accepted_nll: Vec<f64>,
}

impl GreedyOutcome {
    pub fn valid_nll(&self) -> f64 {
        *self
            .accepted_nll
            .last()
            .expect("at least one accepted member")
    }
}

/// Repeatedly adds, with replacement, the candidate that minimizes the
/// ensemble's validation NLL. Stops when the best addition does not strictly
/// improve, or when it would push the number of distinct members past `k`.
pub fn greedy_select(candidates: &[Candidate], y: &Matrix, k: usize) -> Result<GreedyOutcome> {
    if k == 0 {
        return Err(Error::Config("ensemble size k must be positive".into()));
    }
    let usable: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| c.valid_nll.is_finite())
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let max_steps = candidates.len() * k;
    let mut members: Vec<usize> = Vec::new();
    let mut accepted = Vec::new();
    let mut min_loss = f64::INFINITY;
    let mut unique = BTreeSet::new();

    while members.len() < max_steps {
        let mut best: Option<(usize, f64)> = None;
        for (ci, cand) in usable.iter().enumerate() {
            let mut preds: Vec<&Predictions> =
                members.iter().map(|&m| &usable[m].predictions).collect();
            preds.push(&cand.predictions);
            let loss = match ensemble_nll(&preds, y) {
                Ok(l) => l,
                Err(Error::NonFinite(_)) | Err(Error::OutOfBounds(_)) => continue,
                Err(e) => return Err(e),
            };
            if best.is_none_or(|(_, b)| loss < b) {
                best = Some((ci, loss));
            }
        }
        let Some((ci, loss)) = best else { break };
        if !(loss < min_loss) {
            break;
        }
        let id = usable[ci].id;
        if !unique.contains(&id) && unique.len() == k {
            break;
        }
        unique.insert(id);
        members.push(ci);
        accepted.push(loss);
        min_loss = loss;
    }
    if members.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    Ok(GreedyOutcome {
        ensemble: Ensemble {
            member_ids: members.iter().map(|&m| usable[m].id).collect(),
            k,
        },
        accepted_nll: accepted,
    })
}

/// The `k` best models by validation NLL, ties broken by lower id.
pub fn top_k_select(candidates: &[(usize, f64)], k: usize) -> Result<Ensemble> {
    let mut ok: Vec<(usize, f64)> = candidates
        .iter()
        .copied()
        .filter(|(_, s)| s.is_finite())
        .collect();
    if k == 0 || ok.len() < k {
        return Err(Error::Config(format!(
            "top-{k} selection needs at least {k} trained models, catalog has {}",
            ok.len()
        )));
    }
    ok.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(Ensemble {
        member_ids: ok[..k].iter().map(|c| c.0).collect(),
        k,
    })
}

/// Sum of the normalized strict upper triangle of pairwise embedding distances.
pub fn diversity_score(genomes: &[&ArchGenome]) -> Result<f64> {
    if genomes.len() < 2 {
        return Err(Error::Config("diversity needs at least two genomes".into()));
    }
    let emb: Vec<Vec<usize>> = genomes.iter().map(|g| embed(g)).collect();
    let len = emb[0].len();
    if let Some(bad) = emb.iter().find(|e| e.len() != len) {
        return Err(Error::Shape {
            at: "genome embeddings".into(),
            expected: len,
            got: bad.len(),
        });
    }
    let mut dists = Vec::new();
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let d2: f64 = emb[i]
                .iter()
                .zip(&emb[j])
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    let norm = dists.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(dists.iter().map(|d| d / norm).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column_vector(v.to_vec())
    }

    fn cand(id: usize, mu: &[f64], var: &[f64], y: &Matrix) -> Candidate {
        let predictions = Predictions {
            mu: col(mu),
            var: col(var),
        };
        let valid_nll = ensemble_nll(&[&predictions], y).unwrap();
        Candidate {
            id,
            valid_nll,
            predictions,
        }
    }

    #[test]
    fn two_member_decomposition() {
        let p = combine(&[(0.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(
            p,
            EnsemblePoint {
                mu: 1.0,
                var_total: 4.0,
                var_aleatoric: 2.0,
                var_epistemic: 2.0
            }
        );
    }

    #[test]
    fn single_member_has_no_epistemic_part() {
        let p = combine(&[(5.0, 0.25)]).unwrap();
        assert_eq!((p.mu, p.var_aleatoric, p.var_epistemic), (5.0, 0.25, 0.0));
    }

    #[test]
    fn identical_members_have_no_spread() {
        let p = combine(&[(1.5, 0.7); 6]).unwrap();
        assert_eq!(p.var_epistemic, 0.0);
        assert!((p.var_aleatoric - 0.7).abs() < 1e-15);
        assert!(combine(&[]).is_err());
    }

    #[test]
    fn greedy_on_single_model_catalog() {
        let y = col(&[0.0, 1.0]);
        let c = vec![cand(7, &[0.1, 0.9], &[1.0, 1.0], &y)];
        let out = greedy_select(&c, &y, 5).unwrap();
        assert_eq!(out.ensemble.unique_ids(), vec![7]);
    }

    /// Every multiset of catalog indices with `size` members.
    fn multisets(n: usize, size: usize) -> Vec<Vec<usize>> {
        if size == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for rest in multisets(n, size - 1) {
            let start = rest.last().copied().unwrap_or(0);
            for i in start..n {
                let mut m = rest.clone();
                m.push(i);
                out.push(m);
            }
        }
        out
    }

    fn brute_nll(c: &[Candidate], idx: &[usize], y: &Matrix) -> f64 {
        let preds: Vec<&Predictions> = idx.iter().map(|&i| &c[i].predictions).collect();
        ensemble_nll(&preds, y).unwrap()
    }

    #[test]
    fn greedy_stops_at_the_best_pair() {
        // A is the best single model; B alone is worse but averages out part
        // of A's error. C is poor and dilutes the pair.
        let y = col(&[0.0, 1.0, -1.0, 0.5]);
        let c = vec![
            cand(0, &[0.6, 0.5, -1.7, 0.7], &[0.1; 4], &y),
            cand(1, &[0.2, 0.7, -1.9, 1.5], &[0.2; 4], &y),
            cand(2, &[0.2, -0.2, -1.8, 1.8], &[1.1; 4], &y),
        ];
        let singles: Vec<f64> = (0..3).map(|i| brute_nll(&c, &[i], &y)).collect();
        assert!(singles[0] < singles[1] && singles[1] < singles[2]);
        let pair = brute_nll(&c, &[0, 1], &y);
        assert!(pair < singles[0]);
        for m in multisets(3, 3) {
            if m.contains(&0) && m.contains(&1) {
                assert!(brute_nll(&c, &m, &y) >= pair, "{m:?}");
            }
        }
        let out = greedy_select(&c, &y, 3).unwrap();
        assert_eq!(out.ensemble.member_ids, vec![0, 1]);
        assert_eq!(out.valid_nll(), pair);
    }

    #[test]
    fn greedy_respects_unique_bound() {
        let y = col(&[0.0, 0.0]);
        let c: Vec<Candidate> = (0..4)
            .map(|i| {
                let off = if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + i as f64 * 0.1);
                cand(i, &[off, off], &[0.5, 0.5], &y)
            })
            .collect();
        let out = greedy_select(&c, &y, 1).unwrap();
        assert_eq!(out.ensemble.unique_ids().len(), 1);
        let out = greedy_select(&c, &y, 2).unwrap();
        assert!(out.ensemble.unique_ids().len() <= 2);
    }

    #[test]
    fn greedy_skips_failed_models_and_errors_when_all_failed() {
        let y = col(&[0.0]);
        let mut bad = cand(0, &[0.0], &[1.0], &y);
        bad.valid_nll = f64::INFINITY;
        assert!(matches!(
            greedy_select(&[bad.clone()], &y, 2),
            Err(Error::EmptyCatalog)
        ));
        let good = cand(1, &[0.5], &[1.0], &y);
        let out = greedy_select(&[bad, good], &y, 2).unwrap();
        assert_eq!(out.ensemble.unique_ids(), vec![1]);
    }

    #[test]
    fn top_k_orders_by_score_then_id() {
        let scores = [(0, 3.0), (1, 1.0), (2, 2.0), (3, 1.0), (4, f64::INFINITY)];
        assert_eq!(top_k_select(&scores, 1).unwrap().member_ids, vec![1]);
        assert_eq!(top_k_select(&scores, 3).unwrap().member_ids, vec![1, 3, 2]);
        assert!(top_k_select(&scores, 5).is_err());
    }

    #[test]
    fn diversity_hand_values() {
        let g = |v: &[usize]| ArchGenome(v.to_vec());
        let (a, b) = (g(&[0, 0]), g(&[3, 4]));
        assert_eq!(diversity_score(&[&a, &a.clone()]).unwrap(), 0.0);
        assert!((diversity_score(&[&a, &b]).unwrap() - 1.0).abs() < 1e-9);
        let three = diversity_score(&[&a, &b, &a]).unwrap();
        assert!((three - 10.0 / 50f64.sqrt()).abs() < 1e-9);
        assert!(diversity_score(&[&a, &g(&[1])]).is_err());
    }

    proptest! {
        #[test]
        fn decomposition_identity_and_order_invariance(
            members in proptest::collection::vec((-10.0f64..10.0, 1e-3f64..5.0), 1..12),
            rot in 0usize..12,
        ) {
            let p = combine(&members).unwrap();
            prop_assert!((p.var_total - (p.var_aleatoric + p.var_epistemic)).abs() <= 1e-12);
            prop_assert!(p.var_aleatoric >= 0.0 && p.var_epistemic >= 0.0);
            let mut r = members.clone();
            r.rotate_left(rot % members.len());
            let q = combine(&r).unwrap();
            prop_assert!((p.mu - q.mu).abs() < 1e-12);
            prop_assert!((p.var_total - q.var_total).abs() < 1e-10);
        }

        #[test]
        fn diversity_is_order_invariant(
            gs in proptest::collection::vec(proptest::collection::vec(0usize..177, 4), 2..6),
        ) {
            let genomes: Vec<ArchGenome> = gs.into_iter().map(ArchGenome).collect();
            let fwd: Vec<&ArchGenome> = genomes.iter().collect();
            let rev: Vec<&ArchGenome> = genomes.iter().rev().collect();
            let a = diversity_score(&fwd).unwrap();
            let b = diversity_score(&rev).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
