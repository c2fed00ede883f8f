use mams::metrics::{corpus_bleu, sentence_bleu};

#[path = "fixtures/bleu_cases.rs"]
mod bleu_cases;

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

#[test]
fn sentence_bleu_matches_hand_counts() {
    let cases = bleu_cases::cases();
    assert_eq!(cases.len(), 10);
    for (cand, reference, expect) in cases {
        for n in 1..=4 {
            let got = sentence_bleu(&words(cand), &words(reference), n);
            assert!(
                (got - expect[n - 1]).abs() < 1e-9,
                "{cand:?} vs {reference:?} BLEU-{n}: {got} != {}",
                expect[n - 1]
            );
        }
    }
}

#[test]
fn corpus_bleu_pools_counts() {
    // p1 = (3 + 2) / (3 + 3), p2 = (2 + 1) / (2 + 2), c = r = 6
    let pairs = vec![
        (words("a b c"), words("a b c")),
        (words("a a b"), words("a b c")),
    ];
    let b = corpus_bleu(&pairs, 2);
    assert!((b[0] - 5.0 / 6.0).abs() < 1e-12);
    assert!((b[1] - (5.0f64 / 6.0 * 0.75).sqrt()).abs() < 1e-12);
}
