mod common;

use crash_core::baselines::{
    compute_priors, keyword_defaults, keyword_predict, majority_predict, RuleSet,
};
use crash_core::taxonomy::{validate, Dimension};
use proptest::prelude::*;

fn shuffled_rule_sets() -> impl Strategy<Value = (RuleSet, RuleSet)> {
    let rules = RuleSet::default().rules().to_vec();
    Just(rules)
        .prop_shuffle()
        .prop_map(|shuffled| (RuleSet::default(), RuleSet::new(shuffled).unwrap()))
}

proptest! {
    #[test]
    fn keyword_output_is_always_valid(text in common::narrative()) {
        let rec = common::unified("k", &text);
        let out = keyword_predict(&rec, &RuleSet::default(), &keyword_defaults());
        prop_assert!(validate(&out).is_empty(), "{:?}", out.labels);
    }

    #[test]
    fn keyword_output_ignores_rule_order((a, b) in shuffled_rule_sets(), text in common::narrative()) {
        let rec = common::unified("k", &text);
        prop_assert_eq!(
            keyword_predict(&rec, &a, &keyword_defaults()).labels,
            keyword_predict(&rec, &b, &keyword_defaults()).labels
        );
    }

    #[test]
    fn majority_output_is_valid_and_constant(
        corpus in proptest::collection::vec(common::raw_labels(), 1..40),
        ids in proptest::collection::vec("[a-z0-9]{1,8}", 1..10),
    ) {
        let corpus: Vec<_> = corpus
            .into_iter()
            .enumerate()
            .map(|(i, l)| common::record(&i.to_string(), l))
            .collect();
        let priors = compute_priors(&corpus).unwrap();
        let first = majority_predict(&ids[0], &priors);
        prop_assert!(validate(&first).is_empty());
        for id in &ids {
            prop_assert_eq!(majority_predict(id, &priors).labels, first.labels);
        }
    }
}

#[test]
fn unmatched_text_gets_the_defaults() {
    let rec = common::unified("k", "nothing of note happened");
    let out = keyword_predict(&rec, &RuleSet::default(), &keyword_defaults());
    assert_eq!(out.labels, keyword_defaults());
    assert_eq!(out.labels.code(Dimension::AvFailed), "I");
}
