//! Reference aggregation rules used for comparison: plain weighted averaging,
//! the oracle that knows the attackers, random client sampling, leave-one-out
//! screening, Krum, coordinate-wise trimmed mean and median.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cosine_similarity, ParamVector};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    Fedzz,
    Fedavg,
    Fl100,
    RandomSampling,
    NWay,
    Krum,
    TrimmedMean,
    Median,
}

impl DefenseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefenseKind::Fedzz => "fedzz",
            DefenseKind::Fedavg => "fedavg",
            DefenseKind::Fl100 => "fl100",
            DefenseKind::RandomSampling => "random_sampling",
            DefenseKind::NWay => "n_way",
            DefenseKind::Krum => "krum",
            DefenseKind::TrimmedMean => "trimmed_mean",
            DefenseKind::Median => "median",
        }
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fedzz" => DefenseKind::Fedzz,
            "fedavg" => DefenseKind::Fedavg,
            "fl100" => DefenseKind::Fl100,
            "random_sampling" => DefenseKind::RandomSampling,
            "n_way" => DefenseKind::NWay,
            "krum" => DefenseKind::Krum,
            "trimmed_mean" => DefenseKind::TrimmedMean,
            "median" => DefenseKind::Median,
            other => return Err(Error::Config(format!("unknown defense '{other}'"))),
        })
    }
}

fn check_shapes(updates: &[ParamVector], weights: Option<&[f64]>) -> Result<usize> {
    let first = updates.first().ok_or(Error::EmptyData)?;
    let len = first.len();
    if let Some(u) = updates.iter().find(|u| u.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            actual: u.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != updates.len() {
            return Err(Error::DimensionMismatch {
                expected: updates.len(),
                actual: w.len(),
            });
        }
    }
    Ok(len)
}

/// `sum_k weights[k] * updates[k]`, accumulated in index order.
pub fn weighted_sum(updates: &[&ParamVector], weights: &[f64]) -> ParamVector {
    let len = updates.first().map_or(0, |u| u.len());
    let mut out = vec![0.0; len];
    for (u, &w) in updates.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(u.iter()) {
            *o += w * v;
        }
    }
    ParamVector::new(out)
}

/// Weighted average over the selected indices with weights renormalized to
/// sum to one; equal weights when the selected weights sum to zero. `None`
/// when nothing is selected.
pub fn renormalized_average(
    updates: &[ParamVector],
    weights: &[f64],
    selected: &[usize],
) -> Option<ParamVector> {
    if selected.is_empty() {
        return None;
    }
    let total: f64 = selected.iter().map(|&i| weights[i]).sum();
    let w: Vec<f64> = if total > 0.0 {
        selected.iter().map(|&i| weights[i] / total).collect()
    } else {
        vec![1.0 / selected.len() as f64; selected.len()]
    };
    let refs: Vec<&ParamVector> = selected.iter().map(|&i| &updates[i]).collect();
    Some(weighted_sum(&refs, &w))
}

/// Weighted sum with no filtering. `weights` must sum to one.
pub fn fedavg_aggregate(updates: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    check_shapes(updates, Some(weights))?;
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
    }
    let refs: Vec<&ParamVector> = updates.iter().collect();
    Ok(weighted_sum(&refs, weights))
}

/// FedAvg over clients not in `malicious`; `None` when every client is malicious.
pub fn fl100_aggregate(
    updates: &[ParamVector],
    weights: &[f64],
    malicious: &BTreeSet<usize>,
) -> Result<Option<ParamVector>> {
    check_shapes(updates, Some(weights))?;
    let benign: Vec<usize> = (0..updates.len()).filter(|i| !malicious.contains(i)).collect();
    Ok(renormalized_average(updates, weights, &benign))
}

/// Indices of the `ceil(fraction * n)` clients sampled for a round.
pub fn random_sample(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling fraction must be in (0, 1], got {fraction}"
        )));
    }
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1));
    let mut picked = sample(&mut seed::rng_from(seed), n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// FedAvg over a uniform random sample of clients. Returns the aggregate and
/// the sampled indices.
pub fn random_sampling_aggregate(
    updates: &[ParamVector],
    weights: &[f64],
    fraction: f64,
    seed: u64,
) -> Result<(ParamVector, Vec<usize>)> {
    check_shapes(updates, Some(weights))?;
    let picked = random_sample(updates.len(), fraction, seed)?;
    let agg = renormalized_average(updates, weights, &picked).expect("sample is non-empty");
    Ok((agg, picked))
}

/// Leave-one-out screening: client `x` survives iff its update has cosine
/// similarity at least `alpha` with the weighted aggregate of every other
/// update. Returns the FedAvg of the survivors (or `prev_global` when none
/// survive) and the surviving indices.
pub fn n_way_aggregate(
    updates: &[ParamVector],
    weights: &[f64],
    alpha: f64,
    prev_global: &ParamVector,
) -> Result<(ParamVector, Vec<usize>)> {
    check_shapes(updates, Some(weights))?;
    let n = updates.len();
    if n < 2 {
        return Err(Error::InvalidParameter("n-way needs at least 2 updates".into()));
    }
    let mut survivors = Vec::new();
    for x in 0..n {
        let others: Vec<usize> = (0..n).filter(|&i| i != x).collect();
        let loo = renormalized_average(updates, weights, &others).expect("n >= 2");
        if cosine_similarity(&updates[x], &loo)? >= alpha {
            survivors.push(x);
        }
    }
    let agg = renormalized_average(updates, weights, &survivors).unwrap_or_else(|| prev_global.clone());
    Ok((agg, survivors))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Krum scores: sum of squared distances to the `n - f - 2` nearest other updates.
pub fn krum_scores(updates: &[ParamVector], f: usize) -> Result<Vec<f64>> {
    check_shapes(updates, None)?;
    let n = updates.len();
    if n < f + 3 {
        return Err(Error::InvalidParameter(format!(
            "krum needs n >= f + 3 (n={n}, f={f})"
        )));
    }
    let neighbours = n - f - 2;
    Ok((0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| squared_distance(&updates[i], &updates[j]))
                .collect();
            d.sort_by(f64::total_cmp);
            d[..neighbours].iter().sum()
        })
        .collect())
}

/// Index of the update with the lowest Krum score; ties to the lowest index.
pub fn krum_select(updates: &[ParamVector], f: usize) -> Result<usize> {
    let scores = krum_scores(updates, f)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

fn coordinate_column(updates: &[ParamVector], coord: usize) -> Vec<f64> {
    let mut col: Vec<f64> = updates.iter().map(|u| u[coord]).collect();
    col.sort_by(f64::total_cmp);
    col
}

/// Per coordinate: drop the `k` largest and `k` smallest values, average the rest.
pub fn trimmed_mean_aggregate(updates: &[ParamVector], k: usize) -> Result<ParamVector> {
    let len = check_shapes(updates, None)?;
    let n = updates.len();
    if 2 * k >= n {
        return Err(Error::InvalidParameter(format!(
            "trimmed mean needs 2k < n (n={n}, k={k})"
        )));
    }
    if k == 0 {
        // plain mean, accumulated in client order
        let w = vec![1.0 / n as f64; n];
        let refs: Vec<&ParamVector> = updates.iter().collect();
        return Ok(weighted_sum(&refs, &w));
    }
    let kept = (n - 2 * k) as f64;
    Ok(ParamVector::new(
        (0..len)
            .map(|c| coordinate_column(updates, c)[k..n - k].iter().sum::<f64>() / kept)
            .collect(),
    ))
}

/// Coordinate-wise median; the mean of the two middle values for even `n`.
pub fn median_aggregate(updates: &[ParamVector]) -> Result<ParamVector> {
    let len = check_shapes(updates, None)?;
    let n = updates.len();
    Ok(ParamVector::new(
        (0..len)
            .map(|c| {
                let col = coordinate_column(updates, c);
                if n % 2 == 1 {
                    col[n / 2]
                } else {
                    (col[n / 2 - 1] + col[n / 2]) / 2.0
                }
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    #[test]
    fn fedavg_examples() {
        let v = pv(&[1.0, -2.0]);
        let neg = pv(&[-1.0, 2.0]);
        assert_eq!(fedavg_aggregate(&[v.clone(), neg], &[0.5, 0.5]).unwrap(), pv(&[0.0, 0.0]));
        assert_eq!(fedavg_aggregate(std::slice::from_ref(&v), &[1.0]).unwrap(), v);
        let a = pv(&[4.0, 0.0]);
        let b = pv(&[0.0, 8.0]);
        assert_eq!(fedavg_aggregate(&[a, b], &[0.25, 0.75]).unwrap(), pv(&[1.0, 6.0]));
        assert!(fedavg_aggregate(std::slice::from_ref(&v), &[0.5]).is_err());
        assert!(fedavg_aggregate(&[v], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn fl100_examples() {
        let ups = vec![pv(&[1.0, 3.0]), pv(&[5.0, -1.0])];
        let w = [0.5, 0.5];
        assert_eq!(
            fl100_aggregate(&ups, &w, &BTreeSet::new()).unwrap().unwrap(),
            fedavg_aggregate(&ups, &w).unwrap()
        );
        assert_eq!(fl100_aggregate(&ups, &w, &[1].into()).unwrap().unwrap(), ups[0]);
        assert!(fl100_aggregate(&ups, &w, &[0, 1].into()).unwrap().is_none());
    }

    #[test]
    fn random_sampling_examples() {
        let ups: Vec<ParamVector> = (0..40).map(|i| pv(&[i as f64])).collect();
        let w = vec![1.0 / 40.0; 40];
        let (all, picked) = random_sampling_aggregate(&ups, &w, 1.0, 3).unwrap();
        assert_eq!(picked.len(), 40);
        assert!((all[0] - fedavg_aggregate(&ups, &w).unwrap()[0]).abs() < 1e-12);
        assert_eq!(random_sample(40, 0.5, 9).unwrap().len(), 20);
        assert_eq!(random_sample(40, 0.5, 9).unwrap(), random_sample(40, 0.5, 9).unwrap());
        assert!(random_sample(40, 0.0, 9).is_err());
    }

    #[test]
    fn n_way_examples() {
        let u = pv(&[1.0, 0.0, 0.0]);
        let prev = pv(&[9.0, 9.0, 9.0]);
        let same = vec![u.clone(); 4];
        let (agg, kept) = n_way_aggregate(&same, &[0.25; 4], 0.97, &prev).unwrap();
        assert_eq!(agg, u);
        assert_eq!(kept.len(), 4);

        let outlier = pv(&[0.0, 1.0, 0.0]);
        let mut ups = vec![u.clone(); 9];
        ups.push(outlier);
        let w = [0.1; 10];
        let (agg, kept) = n_way_aggregate(&ups, &w, 0.97, &prev).unwrap();
        assert_eq!(kept, (0..9).collect::<Vec<_>>());
        assert!(agg.iter().zip(u.iter()).all(|(a, b)| (a - b).abs() < 1e-12));

        let (agg, kept) = n_way_aggregate(&ups, &w, -1.0, &prev).unwrap();
        assert_eq!(kept.len(), 10);
        let avg = fedavg_aggregate(&ups, &w).unwrap();
        assert!(agg.iter().zip(avg.iter()).all(|(a, b)| (a - b).abs() < 1e-12));

        let opposite = vec![pv(&[1.0]), pv(&[-1.0])];
        let (agg, kept) = n_way_aggregate(&opposite, &[0.5, 0.5], 0.5, &prev).unwrap();
        assert!(kept.is_empty());
        assert_eq!(agg, prev);
    }

    #[test]
    fn krum_examples() {
        let same = vec![pv(&[2.0, 2.0]); 5];
        assert_eq!(krum_select(&same, 1).unwrap(), 0);

        let mut ups: Vec<ParamVector> = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [0.1, 0.1], [0.05, 0.05]]
            .iter()
            .map(|v| pv(v))
            .collect();
        ups.push(pv(&[50.0, 50.0]));
        let chosen = krum_select(&ups, 1).unwrap();
        assert!(chosen < 5);
        assert_eq!(chosen, 4);
        assert!(krum_select(&ups[..3], 1).is_err());
    }

    #[test]
    fn trimmed_mean_and_median_examples() {
        let ups = vec![pv(&[1.0]), pv(&[2.0]), pv(&[100.0])];
        assert_eq!(trimmed_mean_aggregate(&ups, 1).unwrap(), pv(&[2.0]));
        assert_eq!(median_aggregate(&ups).unwrap(), pv(&[2.0]));
        let mean = trimmed_mean_aggregate(&ups, 0).unwrap();
        assert!((mean[0] - 103.0 / 3.0).abs() < 1e-12);
        assert!(trimmed_mean_aggregate(&ups, 2).is_err());
        let even = vec![pv(&[0.0]), pv(&[1.0]), pv(&[3.0]), pv(&[10.0])];
        assert_eq!(median_aggregate(&even).unwrap(), pv(&[2.0]));
        assert_eq!(median_aggregate(&ups[..1]).unwrap(), ups[0]);
        assert!(median_aggregate(&[]).is_err());
    }

    #[test]
    fn defense_names_round_trip() {
        for d in [
            DefenseKind::Fedzz,
            DefenseKind::Fedavg,
            DefenseKind::Fl100,
            DefenseKind::RandomSampling,
            DefenseKind::NWay,
            DefenseKind::Krum,
            DefenseKind::TrimmedMean,
            DefenseKind::Median,
        ] {
            assert_eq!(d.as_str().parse::<DefenseKind>().unwrap(), d);
        }
        assert!("flame".parse::<DefenseKind>().is_err());
    }
}
