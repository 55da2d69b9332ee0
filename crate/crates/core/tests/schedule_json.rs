use grp_urn::schedule::{BurnIn, ScheduleSpec, VARIANT_NAMES};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), -1e3f64..1e3]
}

fn spec_strategy() -> impl Strategy<Value = ScheduleSpec> {
    let burn_in = prop_oneof![Just(BurnIn::Reject), Just(BurnIn::Clamp)];
    prop_oneof![
        (finite(), finite(), finite(), burn_in)
            .prop_map(|(c, eps, b0_norm, burn_in)| ScheduleSpec::Example1 { c, eps, b0_norm, burn_in }),
        (finite(), finite(), finite(), any::<u64>())
            .prop_map(|(eps, delta, b0_norm, offset)| ScheduleSpec::Example2 { eps, delta, b0_norm, offset }),
        finite().prop_map(|alpha| ScheduleSpec::StandardPolya { alpha }),
        (finite(), finite()).prop_map(|(alpha, beta)| ScheduleSpec::RescaledPolya { alpha, beta }),
        (finite(), finite()).prop_map(|(a, exponent)| ScheduleSpec::PemantlePower { a, exponent }),
        (finite(), finite()).prop_map(|(b, a)| ScheduleSpec::PemantleExp { b, a }),
        finite().prop_map(|alpha| ScheduleSpec::MemoryOne { alpha }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn json_round_trip_is_bit_exact(spec in spec_strategy()) {
        let text = spec.to_json();
        let back = ScheduleSpec::from_json(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn variant_tag_and_field_order() {
    let spec = ScheduleSpec::Example2 { eps: 0.75, delta: 0.5, b0_norm: 1.0, offset: 1 };
    assert_eq!(
        spec.to_json(),
        r#"{"variant":"Example2","params":{"eps":0.75,"delta":0.5,"b0_norm":1.0,"offset":1}}"#
    );
    let spec = ScheduleSpec::Example1 { c: 1.0, eps: 0.5, b0_norm: 1.0, burn_in: BurnIn::Clamp };
    assert!(spec.to_json().ends_with(r#""burn_in":"clamp"}}"#));
}

#[test]
fn unknown_variant_and_fields_are_rejected() {
    let err = ScheduleSpec::from_json(r#"{"variant":"Nope","params":{}}"#).unwrap_err().to_string();
    for name in VARIANT_NAMES {
        assert!(err.contains(name), "{err}");
    }
    assert!(ScheduleSpec::from_json(r#"{"variant":"StandardPolya","params":{"alpha":1.0,"x":2}}"#).is_err());
}
