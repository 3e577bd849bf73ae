use cropbench_core::prompt::{embed_prompt, parse_prompt, token_embedding, IdentifierRegistry};
use proptest::prelude::*;

fn registry() -> IdentifierRegistry {
    let mut r = IdentifierRegistry::new();
    r.insert("nbd", "anthracnose").unwrap();
    r.insert("sks", "downy mildew").unwrap();
    r
}

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => "[a-z]{1,8}",
        1 => Just("nbd".to_string()),
        1 => "[A-Z][a-z]{2,10}",
    ]
}

fn weight() -> impl Strategy<Value = String> {
    prop_oneof![
        (1u32..40).prop_map(|w| format!("{}", w as f64 / 10.0)),
        (1u32..9).prop_map(|w| format!("{w}")),
        Just("0.5".to_string()),
        Just("1e0".to_string()),
    ]
}

/// A word or a parenthesized phrase, optionally followed by a weight.
fn item() -> impl Strategy<Value = String> {
    let target = prop_oneof![
        3 => word(),
        1 => prop::collection::vec(word(), 1..4).prop_map(|ws| format!("({})", ws.join(" "))),
    ];
    (target, prop::option::of(weight())).prop_map(|(t, w)| match w {
        Some(w) => format!("{t} ({w})"),
        None => t,
    })
}

fn prompt() -> impl Strategy<Value = String> {
    prop::collection::vec(item(), 1..12).prop_map(|items| items.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn canonical_text_is_a_fixpoint(raw in prompt()) {
        let reg = registry();
        let ast = parse_prompt(&raw, &reg).unwrap();
        let canon = ast.canonical();
        let again = parse_prompt(&canon, &reg).unwrap();
        prop_assert_eq!(again.tokens(), ast.tokens());
        prop_assert_eq!(again.canonical(), canon);
    }

    #[test]
    fn identifier_flags_never_change_tokenization(raw in prompt()) {
        let flagged = parse_prompt(&raw, &registry()).unwrap();
        let plain = parse_prompt(&raw, &IdentifierRegistry::new()).unwrap();
        prop_assert_eq!(flagged.tokens().len(), plain.tokens().len());
        for (a, b) in flagged.tokens().iter().zip(plain.tokens()) {
            prop_assert_eq!(&a.text, &b.text);
            prop_assert_eq!(a.weight, b.weight);
            prop_assert!(!b.is_identifier);
            prop_assert_eq!(a.is_identifier, a.text == "nbd");
        }
    }
}

proptest! {
    #[test]
    fn reweighting_one_token_changes_only_its_summand(raw in prompt(), pick in any::<prop::sample::Index>(), w in 0.1f64..9.0) {
        let mut ast = parse_prompt(&raw, &registry()).unwrap();
        let i = pick.index(ast.tokens().len());
        let before = embed_prompt(&ast, 7, 16);
        let old = ast.tokens()[i].weight;
        ast.set_weight(i, w).unwrap();
        let after = embed_prompt(&ast, 7, 16);
        let e = token_embedding(&ast.tokens()[i].text, 7, 16);
        for k in 0..16 {
            let expected = before[k] + (w - old) * e[k];
            prop_assert!((after[k] - expected).abs() < 1e-9, "dim {}: {} vs {}", k, after[k], expected);
        }
    }
}
