//! Top-k ranking metrics and the cold-item hit ratio used as attack reward.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{ItemId, ItemPool, UserId};
use crate::error::{invalid, Error, Result};

/// Cutoffs reported in every [`MetricsReport`].
pub const CUTOFFS: [usize; 3] = [5, 10, 20];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub k: usize,
}

impl RankedList {
    pub fn top(&self, k: usize) -> &[ItemId] {
        &self.items[..k.min(self.items.len())]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Ndcg,
    Recall,
    Precision,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ndcg, Metric::Recall, Metric::Precision];

    pub fn short(self) -> &'static str {
        match self {
            Metric::Ndcg => "N",
            Metric::Recall => "R",
            Metric::Precision => "P",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ndcg => "NDCG",
            Metric::Recall => "Recall",
            Metric::Precision => "Precision",
        })
    }
}

fn hits(ranked: &RankedList, relevant: &[ItemId], k: usize) -> usize {
    ranked.top(k).iter().filter(|i| relevant.contains(i)).count()
}

/// Binary-relevance NDCG with the ideal DCG truncated at `min(|relevant|, k)`.
/// `relevant` is treated as a set and must not contain duplicates.
pub fn ndcg_at_k(ranked: &RankedList, relevant: &[ItemId], k: usize) -> Result<f64> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if relevant.is_empty() {
        return Err(Error::UndefinedMetric(format!("user {} has no relevant items", ranked.user)));
    }
    let discount = |p: usize| 1.0 / ((p + 2) as f64).log2();
    let dcg: f64 = ranked
        .top(k)
        .iter()
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(p, _)| discount(p))
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(discount).sum();
    Ok(dcg / idcg)
}

pub fn recall_at_k(ranked: &RankedList, relevant: &[ItemId], k: usize) -> Result<f64> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if relevant.is_empty() {
        return Err(Error::UndefinedMetric(format!("user {} has no relevant items", ranked.user)));
    }
    Ok(hits(ranked, relevant, k) as f64 / relevant.len() as f64)
}

pub fn precision_at_k(ranked: &RankedList, relevant: &[ItemId], k: usize) -> Result<f64> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    Ok(hits(ranked, relevant, k) as f64 / k as f64)
}

pub fn metric_at_k(metric: Metric, ranked: &RankedList, relevant: &[ItemId], k: usize) -> Result<f64> {
    match metric {
        Metric::Ndcg => ndcg_at_k(ranked, relevant, k),
        Metric::Recall => recall_at_k(ranked, relevant, k),
        Metric::Precision => precision_at_k(ranked, relevant, k),
    }
}

/// Mean fraction of each spy's top-k that falls in the cold pool.
pub fn cold_hit_reward(spy_lists: &[RankedList], cold: &ItemPool, k: usize) -> Result<f64> {
    if spy_lists.is_empty() {
        return invalid("no spy lists to score");
    }
    if k == 0 {
        return invalid("k must be at least 1");
    }
    let mut sorted = cold.items.clone();
    sorted.sort_unstable();
    let mut total = 0.0;
    for list in spy_lists {
        if list.items.len() < k {
            return invalid(format!("spy {} list shorter than k={k}", list.user));
        }
        let h = list.top(k).iter().filter(|i| sorted.binary_search(i).is_ok()).count();
        total += h as f64 / k as f64;
    }
    Ok(total / spy_lists.len() as f64)
}

/// Means of NDCG/Recall/Precision at each cutoff over users with a
/// non-empty relevant set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub users: usize,
    pub values: BTreeMap<String, f64>,
}

pub fn metric_key(metric: Metric, k: usize) -> String {
    format!("{metric}@{k}")
}

impl MetricsReport {
    /// Aggregates over `(ranked list, relevant items)` pairs. Users whose
    /// relevant set is empty are skipped. Lists must hold at least the
    /// largest cutoff or every candidate.
    pub fn from_lists<'a>(
        label: impl Into<String>,
        lists: impl IntoIterator<Item = (&'a RankedList, &'a [ItemId])>,
    ) -> Result<Self> {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut users = 0usize;
        for (ranked, relevant) in lists {
            if relevant.is_empty() {
                continue;
            }
            users += 1;
            for metric in Metric::ALL {
                for k in CUTOFFS {
                    *sums.entry(metric_key(metric, k)).or_default() +=
                        metric_at_k(metric, ranked, relevant, k)?;
                }
            }
        }
        if users == 0 {
            return Err(Error::UndefinedMetric("no users with relevant items".into()));
        }
        let values = sums.into_iter().map(|(key, s)| (key, s / users as f64)).collect();
        Ok(MetricsReport { label: label.into(), users, values })
    }

    pub fn get(&self, metric: Metric, k: usize) -> f64 {
        self.values.get(&metric_key(metric, k)).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg10(&self) -> f64 {
        self.get(Metric::Ndcg, 10)
    }

    /// One CSV row per metric@k: `label,metric,k,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_reports_csv(&[self], writer)
    }
}

/// Several reports in one table, report by report.
pub fn write_reports_csv<W: Write>(reports: &[&MetricsReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "metric", "k", "value"])?;
    for report in reports {
        for metric in Metric::ALL {
            for k in CUTOFFS {
                w.write_record([
                    report.label.clone(),
                    metric.to_string(),
                    k.to_string(),
                    format!("{:.6}", report.get(metric, k)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rl(items: &[ItemId]) -> RankedList {
        RankedList { user: 0, items: items.to_vec(), k: items.len() }
    }

    #[test]
    fn ndcg_examples() {
        assert!((ndcg_at_k(&rl(&[0, 1]), &[0, 1], 2).unwrap() - 1.0).abs() < 1e-12);
        // [x, a, y] with relevant {a}
        assert!((ndcg_at_k(&rl(&[9, 0, 8]), &[0], 3).unwrap() - 0.63093).abs() < 1e-5);
        // [a, x, b] with relevant {a, b}
        assert!((ndcg_at_k(&rl(&[0, 9, 1]), &[0, 1], 3).unwrap() - 0.91972).abs() < 1e-5);
        assert!(matches!(ndcg_at_k(&rl(&[0]), &[], 1), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn recall_precision_examples() {
        assert!((recall_at_k(&rl(&[0, 7, 8]), &[0, 1, 2], 3).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(recall_at_k(&rl(&[2, 1, 0, 5]), &[0, 1, 2], 4).unwrap(), 1.0);
        assert_eq!(recall_at_k(&rl(&[5, 6]), &[0, 1], 2).unwrap(), 0.0);
        assert!((precision_at_k(&rl(&[0, 1, 7, 8, 9]), &[0, 1], 5).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(precision_at_k(&rl(&[7, 8]), &[0], 2).unwrap(), 0.0);
        assert_eq!(precision_at_k(&rl(&[0, 1]), &[0, 1], 2).unwrap(), 1.0);
        assert!(precision_at_k(&rl(&[0]), &[0], 0).is_err());
    }

    #[test]
    fn cold_hit_examples() {
        let cold = ItemPool { items: (0..4).collect(), rule: crate::data::PoolRule::AllItems };
        let a = rl(&[0, 1, 2, 3, 10, 11, 12, 13, 14, 15]);
        let b = rl(&[0, 1, 10, 11, 12, 13, 14, 15, 16, 17]);
        assert!((cold_hit_reward(&[a.clone()], &cold, 10).unwrap() - 0.4).abs() < 1e-12);
        assert!((cold_hit_reward(&[a, b], &cold, 10).unwrap() - 0.3).abs() < 1e-12);
        let none = rl(&[20, 21, 22, 23, 24, 25, 26, 27, 28, 29]);
        assert_eq!(cold_hit_reward(&[none], &cold, 10).unwrap(), 0.0);
        assert!(cold_hit_reward(&[], &cold, 10).is_err());
    }

    #[test]
    fn report_skips_empty_users() {
        let a = rl(&(0..20).collect::<Vec<_>>());
        let b = rl(&(0..20).collect::<Vec<_>>());
        let rel_a: Vec<ItemId> = vec![0];
        let rel_b: Vec<ItemId> = vec![];
        let r = MetricsReport::from_lists("clean", [(&a, &rel_a[..]), (&b, &rel_b[..])]).unwrap();
        assert_eq!(r.users, 1);
        assert_eq!(r.ndcg10(), 1.0);
        assert!((r.get(Metric::Precision, 5) - 0.2).abs() < 1e-12);
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 10);
    }
}
