#![allow(dead_code)]

use crash_core::ingest::{Category, UnifiedRecord};
use crash_core::taxonomy::{AvFailed, Cause, ClassificationRecord, FailedSystem, Labels, Source};
use proptest::prelude::*;

pub fn av_failed() -> impl Strategy<Value = AvFailed> {
    proptest::sample::select(AvFailed::ALL.to_vec())
}

pub fn cause() -> impl Strategy<Value = Cause> {
    proptest::sample::select(Cause::ALL.to_vec())
}

pub fn system() -> impl Strategy<Value = FailedSystem> {
    proptest::sample::select(FailedSystem::ALL.to_vec())
}

/// Any combination of codes, valid or not.
pub fn raw_labels() -> impl Strategy<Value = Labels> {
    (av_failed(), cause(), system(), any::<bool>(), cause())
        .prop_map(|(a, c, s, l, sec)| Labels::new(a, c, s, l, sec))
}

pub fn valid_labels() -> impl Strategy<Value = Labels> {
    raw_labels().prop_map(Labels::coerced)
}

pub fn record(id: &str, labels: Labels) -> ClassificationRecord {
    ClassificationRecord::new(id, labels, Source::Llm)
}

pub fn unified(id: &str, text: &str) -> UnifiedRecord {
    UnifiedRecord {
        report_id: id.into(),
        entity_make: "Acme/Acme".into(),
        full_text: text.into(),
        category: Category::Ads,
    }
}

/// Narrative-ish text mixing keyword fragments with filler.
pub fn narrative() -> impl Strategy<Value = String> {
    let words = vec![
        "the", "vehicle", "ADAS engaged", "failed to detect", "rain", "fog", "lidar",
        "lane change", "brake", "steering", "other driver", "rear-ended by", "sensor",
        "too late", "after impact", "merge", "camera", "glare", "software", "Narrative:",
        "{", "}", "\"", "é", "🚗", "\n", "[REDACTED]",
    ];
    proptest::collection::vec(proptest::sample::select(words), 0..40)
        .prop_map(|w| w.join(" "))
}
