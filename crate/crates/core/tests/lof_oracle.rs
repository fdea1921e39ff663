use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use socattack::guard::{lof_scores, standardize};
use socattack::seed::Rng;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Textbook LOF: k-distance, k-distance neighbourhood, reachability,
/// local reachability density, ratio of densities.
fn oracle(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let kdist: Vec<f64> = (0..n)
        .map(|p| {
            let mut d: Vec<f64> = (0..n).filter(|&o| o != p).map(|o| dist(&points[p], &points[o])).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    let hood = |p: usize| -> Vec<usize> { (0..n).filter(|&o| o != p && dist(&points[p], &points[o]) <= kdist[p]).collect() };
    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let h = hood(p);
            let reach: f64 = h.iter().map(|&o| kdist[o].max(dist(&points[p], &points[o]))).sum();
            h.len() as f64 / reach
        })
        .collect();
    (0..n)
        .map(|p| {
            let h = hood(p);
            h.iter().map(|&o| lrd[o] / lrd[p]).sum::<f64>() / h.len() as f64
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_textbook_definition(seed in any::<u64>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..40usize);
        let dim = rng.gen_range(1..5usize);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let k = rng.gen_range(1..n);
        let got = lof_scores(&points, k).unwrap();
        for (g, o) in got.iter().zip(oracle(&points, k)) {
            prop_assert!((g - o).abs() <= 1e-9 * o.abs().max(1.0), "{} vs {}", g, o);
        }
    }

    #[test]
    fn standardized_columns(seed in any::<u64>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 4]> = (0..rng.gen_range(2..30)).map(|_| [rng.gen_range(0.0..9.0), rng.gen_range(0.0..100.0), 7.0, rng.gen_range(-1.0..1.0)]).collect();
        let z = standardize(&pts);
        let n = z.len() as f64;
        for j in 0..4 {
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-9);
            let var = z.iter().map(|r| r[j] * r[j]).sum::<f64>() / n;
            if j == 2 {
                prop_assert!(var <= 1e-20);
            } else {
                prop_assert!((var - 1.0).abs() <= 1e-9);
            }
        }
    }
}
