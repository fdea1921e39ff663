//! Defense probes: adversarially trained targets and local-outlier-factor
//! screening of user profiles.

use serde::{Deserialize, Serialize};

use crate::community::CommunityPartition;
use crate::data::{Dataset, UserId};
use crate::error::{invalid, Result};
use crate::recenv::RecModel;
use crate::seed::SeedStream;

/// Continues training `model` for `epochs` epochs with base embeddings
/// perturbed by `eps` along the loss gradient. With `eps = 0` this is plain
/// training.
pub fn adversarial_train(model: &RecModel, eps: f64, epochs: usize, seed: SeedStream) -> Result<RecModel> {
    if !(eps >= 0.0) {
        return invalid(format!("perturbation radius {eps} must be non-negative"));
    }
    let mut robust = model.clone();
    robust.config.adv_eps = eps;
    robust.config.epochs = epochs;
    robust.fit(seed)?;
    Ok(robust)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LofConfig {
    pub neighbors: usize,
    pub threshold: f64,
}

impl Default for LofConfig {
    fn default() -> Self {
        LofConfig { neighbors: 20, threshold: 1.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub flagged: Vec<UserId>,
    pub fakes: usize,
    pub flagged_fakes: usize,
    /// `flagged_fakes / fakes`, zero without fakes.
    pub rate: f64,
    pub config: LofConfig,
    pub scores: Vec<f64>,
}

/// Per-user features: social degree, interaction count, mean popularity of
/// the consumed items and the number of distinct communities among friends.
pub fn user_features(dataset: &Dataset, partition: &CommunityPartition) -> Vec<[f64; 4]> {
    let pop = dataset.popularity();
    let items = dataset.user_items();
    let friends = dataset.social_neighbors();
    (0..dataset.user_count())
        .map(|u| {
            let own = &items[u];
            let mean_pop = if own.is_empty() {
                0.0
            } else {
                own.iter().map(|&i| f64::from(pop[i as usize])).sum::<f64>() / own.len() as f64
            };
            let mut comms: Vec<usize> = friends[u]
                .iter()
                .filter_map(|&v| partition.assignment.get(v as usize).copied())
                .collect();
            comms.sort_unstable();
            comms.dedup();
            [friends[u].len() as f64, own.len() as f64, mean_pop, comms.len() as f64]
        })
        .collect()
}

/// Columns shifted to zero mean and scaled to unit variance (columns that
/// are constant up to rounding are only centred).
pub fn standardize(points: &[[f64; 4]]) -> Vec<Vec<f64>> {
    let n = points.len().max(1) as f64;
    let mut mean = [0.0; 4];
    let mut var = [0.0; 4];
    for p in points {
        for j in 0..4 {
            mean[j] += p[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for p in points {
        for j in 0..4 {
            var[j] += (p[j] - mean[j]).powi(2) / n;
        }
    }
    points
        .iter()
        .map(|p| {
            (0..4)
                .map(|j| {
                    let sd = var[j].sqrt();
                    if sd > 1e-12 * mean[j].abs().max(1.0) {
                        (p[j] - mean[j]) / sd
                    } else {
                        p[j] - mean[j]
                    }
                })
                .collect()
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Local outlier factor of every point with `k` neighbours. The
/// neighbourhood of a point holds every other point within its k-distance,
/// so ties may enlarge it.
pub fn lof_scores(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if k == 0 || k >= n {
        return invalid(format!("k={k} needs 1 <= k < {n}"));
    }
    let mut neighbors: Vec<Vec<(f64, usize)>> = Vec::with_capacity(n);
    let mut kdist = vec![0.0; n];
    for p in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n).filter(|&o| o != p).map(|o| (euclid(&points[p], &points[o]), o)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        kdist[p] = d[k - 1].0;
        let cut = d.partition_point(|x| x.0 <= kdist[p]);
        d.truncate(cut);
        neighbors.push(d);
    }
    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let reach: f64 = neighbors[p].iter().map(|&(d, o)| d.max(kdist[o])).sum::<f64>() / neighbors[p].len() as f64;
            1.0 / reach.max(1e-12)
        })
        .collect();
    Ok((0..n)
        .map(|p| neighbors[p].iter().map(|&(_, o)| lrd[o]).sum::<f64>() / (neighbors[p].len() as f64 * lrd[p]))
        .collect())
}

/// Flags users whose local outlier factor over standardized profile
/// features exceeds the threshold; the rate counts flagged fakes.
pub fn detect_anomalies(dataset: &Dataset, partition: &CommunityPartition, config: LofConfig) -> Result<DetectionReport> {
    let features = standardize(&user_features(dataset, partition));
    let scores = lof_scores(&features, config.neighbors)?;
    Ok(report_from_scores(dataset, scores, config))
}

pub fn report_from_scores(dataset: &Dataset, scores: Vec<f64>, config: LofConfig) -> DetectionReport {
    let flagged: Vec<UserId> = (0..scores.len() as UserId).filter(|&u| scores[u as usize] > config.threshold).collect();
    let fakes = dataset.user_count() - dataset.real_user_count();
    let flagged_fakes = flagged.iter().filter(|&&u| dataset.is_fake(u)).count();
    let rate = detection_rate(flagged_fakes, fakes);
    DetectionReport { flagged, fakes, flagged_fakes, rate, config, scores }
}

/// Share of fakes flagged; zero when there are none.
pub fn detection_rate(flagged_fakes: usize, fakes: usize) -> f64 {
    if fakes == 0 {
        0.0
    } else {
        flagged_fakes as f64 / fakes as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_homogeneous() {
        let pts: Vec<Vec<f64>> = (0..10).flat_map(|x| (0..10).map(move |y| vec![x as f64, y as f64])).collect();
        let s = lof_scores(&pts, 4).unwrap();
        assert!(s.iter().all(|&v| v < 1.5));
        let interior = s[5 * 10 + 5];
        assert!((interior - 1.0).abs() < 1e-9);
    }

    #[test]
    fn far_point_flagged() {
        let mut pts: Vec<Vec<f64>> = (0..9).map(|i| vec![(i % 3) as f64 * 0.1, (i / 3) as f64 * 0.1]).collect();
        pts.push(vec![5.0, 5.0]);
        let s = lof_scores(&pts, 3).unwrap();
        assert!(s[9] > 1.5);
        assert!(s[..9].iter().all(|&v| v < 1.5));
        assert!(lof_scores(&pts, 10).is_err());
    }

    #[test]
    fn rate_arithmetic() {
        assert!((detection_rate(3, 50) - 0.06).abs() < 1e-15);
        assert_eq!(detection_rate(0, 0), 0.0);
    }
}
