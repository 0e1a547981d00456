use leaseguard_core::checker::random_history;
use leaseguard_core::rng::SeededRng;
use leaseguard_core::{brute_force_check, check};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fast_checker_agrees_with_exhaustive_search(seed in any::<u64>()) {
        let h = random_history(&mut SeededRng::new(seed), 8);
        let fast = check(&h).unwrap();
        let slow = brute_force_check(&h).unwrap();
        prop_assert_eq!(fast.linearizable, slow.linearizable, "history:\n{}", h.to_text());
        prop_assert_eq!(fast.witness.is_none(), fast.linearizable);
    }
}

#[test]
fn generator_covers_both_verdicts_ties_and_failed_writes() {
    let (mut yes, mut no, mut ties, mut failed) = (0, 0, 0, 0);
    for seed in 0..1000 {
        let h = random_history(&mut SeededRng::new(seed), 8);
        if check(&h).unwrap().linearizable {
            yes += 1;
        } else {
            no += 1;
        }
        let times: Vec<_> = h.entries.iter().filter_map(|e| e.execution_ts).collect();
        if (1..times.len()).any(|i| times[..i].contains(&times[i])) {
            ties += 1;
        }
        if h.entries.iter().any(|e| !e.success && e.op_type == leaseguard_core::OpType::ListAppend) {
            failed += 1;
        }
    }
    assert!(yes > 200 && no > 200, "linearizable {yes}, not {no}");
    assert!(ties > 300, "{ties}");
    assert!(failed > 300, "{failed}");
}
