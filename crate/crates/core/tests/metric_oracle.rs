mod common;

use proptest::prelude::*;
use socattack::metrics::{ndcg_at_k, recall_at_k, RankedList};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ranking_metrics_match_brute_force(seed in any::<u64>()) {
        common::metric_case(seed).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn empty_relevant_set_is_undefined() {
    let list = RankedList { user: 3, items: vec![0, 1], k: 2 };
    assert!(ndcg_at_k(&list, &[], 2).is_err());
    assert!(recall_at_k(&list, &[], 2).is_err());
    assert!(ndcg_at_k(&list, &[1], 0).is_err());
}
