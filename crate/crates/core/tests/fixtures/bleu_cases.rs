/// Candidate, reference, and BLEU-1..4 counted by hand.
///
/// Each expected value is BP * (p1 * .. * pn)^(1/n) with clipped n-gram
/// precisions p_k written as fractions and BP = exp(1 - r/c) when c <= r.
pub fn cases() -> Vec<(&'static str, &'static str, [f64; 4])> {
    let e = std::f64::consts::E;
    vec![
        // identical
        ("a white square moves left", "a white square moves left", [1.0, 1.0, 1.0, 1.0]),
        // no overlap
        ("x y z", "a b c", [0.0, 0.0, 0.0, 0.0]),
        // p1 = 2/3 clipped, p2 = 1/2, no trigram match
        ("a a b", "a b c", [2.0 / 3.0, (1.0f64 / 3.0).sqrt(), 0.0, 0.0]),
        // last word substituted: p = 4/5, 3/4, 2/3, 1/2
        (
            "a white square moves right",
            "a white square moves left",
            [
                0.8,
                (0.8f64 * 0.75).sqrt(),
                (0.8f64 * 0.75 * 2.0 / 3.0).cbrt(),
                (0.8f64 * 0.75 * 2.0 / 3.0 * 0.5).powf(0.25),
            ],
        ),
        // prefix of length 3 from 5: p = 1, BP = e^(1 - 5/3)
        (
            "a gray circle",
            "a gray circle stays still",
            {
                let bp = e.powf(1.0 - 5.0 / 3.0);
                [bp, bp, bp, 0.0]
            },
        ),
        // longer candidate, BP = 1: p = 5/6, 4/5, 3/4, 2/3
        (
            "a white square moves left then",
            "a white square moves left",
            [
                5.0 / 6.0,
                (5.0f64 / 6.0 * 0.8).sqrt(),
                (5.0f64 / 6.0 * 0.8 * 0.75).cbrt(),
                (5.0f64 / 6.0 * 0.8 * 0.75 * 2.0 / 3.0).powf(0.25),
            ],
        ),
        // repeated word clipped at its reference count: p1 = 2/4, p2 = 1/3
        ("moves moves moves left", "moves left", [0.5, (0.5f64 / 3.0).sqrt(), 0.0, 0.0]),
        // two-clause caption with swapped directions: p = 8/8, 6/7, 2/6, 1/5
        (
            "a gray circle moves up then moves down",
            "a gray circle moves down then moves up",
            [
                1.0,
                (6.0f64 / 7.0).sqrt(),
                (6.0f64 / 7.0 / 3.0).cbrt(),
                (6.0f64 / 7.0 / 3.0 / 5.0).powf(0.25),
            ],
        ),
        // reordered words: p1 = 1, p2 = 1/3, no trigram
        ("b a c d", "a b c d", [1.0, (1.0f64 / 3.0).sqrt(), 0.0, 0.0]),
        // single word against two words: p1 = 1, BP = e^(1 - 2)
        ("a", "a b", [1.0 / e, 0.0, 0.0, 0.0]),
    ]
}
