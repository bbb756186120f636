mod support;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariants_hold_for_random_configs(seed in any::<u64>()) {
        if let Err(e) = support::attention_checks::check(seed) {
            return Err(TestCaseError::fail(e));
        }
    }
}
