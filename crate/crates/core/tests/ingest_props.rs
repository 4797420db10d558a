use std::collections::BTreeMap;

use crash_core::ingest::{filter_and_unify, parse_table, Category, ColumnMap, RawReport, Redaction};
use proptest::prelude::*;

fn raw(id: String, narrative: String, duplicate: bool) -> RawReport {
    RawReport {
        report_id: id,
        reporting_entity: "Acme".into(),
        make: "Acme".into(),
        model: "M1".into(),
        category: Category::Ads,
        narrative,
        metadata: vec![("City".into(), "Springfield".into())],
        duplicate,
    }
}

fn narrative_choice() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(String::new()),
        Just("   ".to_string()),
        Just("[REDACTED]".to_string()),
        Just(" [XXX] [REDACTED] ".to_string()),
        "[a-zA-Z ,.]{1,40}",
    ]
}

fn corpus() -> impl Strategy<Value = Vec<RawReport>> {
    proptest::collection::vec((0u8..20, narrative_choice()), 0..60).prop_map(|rows| {
        let mut seen = std::collections::HashSet::new();
        rows.into_iter()
            .map(|(id, n)| {
                let id = format!("R{id}");
                let dup = !seen.insert(id.clone());
                raw(id, n, dup)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn kept_and_dropped_partition_the_input(reports in corpus()) {
        let out = filter_and_unify(&reports, &Redaction::default());
        prop_assert_eq!(out.kept.len() + out.dropped.len(), reports.len());
        let mut expect: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &reports {
            *expect.entry(&r.report_id).or_default() += 1;
        }
        let mut got: BTreeMap<&str, usize> = BTreeMap::new();
        for id in out.kept.iter().map(|k| &k.report_id).chain(out.dropped.iter().map(|d| &d.report_id)) {
            *got.entry(id).or_default() += 1;
        }
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn kept_full_text_contains_the_narrative(reports in corpus()) {
        let out = filter_and_unify(&reports, &Redaction::default());
        for k in &out.kept {
            let src = reports.iter().find(|r| r.report_id == k.report_id && !r.duplicate).unwrap();
            prop_assert!(k.full_text.contains(&src.narrative));
        }
    }

    #[test]
    fn refiltering_the_kept_set_drops_nothing(reports in corpus()) {
        let redaction = Redaction::default();
        let out = filter_and_unify(&reports, &redaction);
        let again: Vec<RawReport> = reports
            .iter()
            .filter(|r| !r.duplicate && out.kept.iter().any(|k| k.report_id == r.report_id))
            .cloned()
            .collect();
        let second = filter_and_unify(&again, &redaction);
        prop_assert!(second.dropped.is_empty());
        prop_assert_eq!(second.kept, out.kept);
    }

    #[test]
    fn filtering_is_deterministic(reports in corpus()) {
        let a = filter_and_unify(&reports, &Redaction::default());
        let b = filter_and_unify(&reports, &Redaction::default());
        prop_assert_eq!(serde_json::to_string(&a.kept).unwrap(), serde_json::to_string(&b.kept).unwrap());
    }

    #[test]
    fn arbitrary_bytes_never_panic_the_parser(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let _ = parse_table(&bytes, std::path::Path::new("fuzz.csv"), Category::Other, &ColumnMap::default());
    }
}
