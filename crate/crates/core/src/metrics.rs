//! Word and character error rates over Levenshtein alignments.

/// Alignment error counts against a reference of `ref_len` tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl ErrorCounts {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn add(&mut self, other: &ErrorCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }
}

/// Minimal-edit alignment with unit costs. The traceback is deterministic:
/// on cost ties it prefers substitution, then deletion, then insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> ErrorCounts {
    let n = reference.len();
    let m = hypothesis.len();
    let width = m + 1;
    let mut dp = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        dp[i * width] = i;
    }
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let sub = dp[(i - 1) * width + (j - 1)] + sub_cost;
            let del = dp[(i - 1) * width + j] + 1;
            let ins = dp[i * width + (j - 1)] + 1;
            dp[i * width + j] = sub.min(del).min(ins);
        }
    }

    let mut counts = ErrorCounts {
        ref_len: n,
        ..ErrorCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * width + j];
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if dp[(i - 1) * width + (j - 1)] + sub_cost == here {
                if sub_cost == 1 {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * width + j] + 1 == here {
            counts.deletions += 1;
            i -= 1;
            continue;
        }
        counts.insertions += 1;
        j -= 1;
    }
    counts
}

fn words(text: &str) -> Vec<&str> {
    text.split(' ').filter(|w| !w.is_empty()).collect()
}

/// Corpus-pooled word error rate, in percent: `100 * (S + D + I) / N`
/// summed over the whole corpus. May exceed 100 when insertions dominate.
pub fn wer<S1: AsRef<str>, S2: AsRef<str>>(corpus: &[(S1, S2)]) -> Option<f64> {
    let mut total = ErrorCounts::default();
    for (r, h) in corpus {
        total.add(&edit_distance(
            &words(r.as_ref().trim()),
            &words(h.as_ref().trim()),
        ));
    }
    if total.ref_len == 0 {
        return None;
    }
    Some(100.0 * total.distance() as f64 / total.ref_len as f64)
}

/// Corpus-pooled character error rate; every charset symbol (including
/// space) is a token.
pub fn cer<S1: AsRef<str>, S2: AsRef<str>>(corpus: &[(S1, S2)]) -> Option<f64> {
    let mut total = ErrorCounts::default();
    for (r, h) in corpus {
        let rc: Vec<char> = r.as_ref().chars().collect();
        let hc: Vec<char> = h.as_ref().chars().collect();
        total.add(&edit_distance(&rc, &hc));
    }
    if total.ref_len == 0 {
        return None;
    }
    Some(100.0 * total.distance() as f64 / total.ref_len as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force recursive edit distance, the independent oracle.
    fn slow_distance<T: PartialEq>(r: &[T], h: &[T]) -> usize {
        match (r.is_empty(), h.is_empty()) {
            (true, _) => h.len(),
            (_, true) => r.len(),
            _ => {
                let sub = slow_distance(&r[1..], &h[1..]) + usize::from(r[0] != h[0]);
                let del = slow_distance(&r[1..], h) + 1;
                let ins = slow_distance(r, &h[1..]) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn identical_sequences() {
        let c = edit_distance(&words("the cat"), &words("the cat"));
        assert_eq!(c, ErrorCounts { substitutions: 0, deletions: 0, insertions: 0, ref_len: 2 });
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let c = edit_distance(&words("a b c"), &words(""));
        assert_eq!(c.deletions, 3);
        assert_eq!(c.distance(), 3);
    }

    #[test]
    fn substitution_plus_insertion() {
        let c = edit_distance(&words("the cat sat"), &words("the bat sat on"));
        assert_eq!(c.substitutions, 1);
        assert_eq!(c.insertions, 1);
        assert_eq!(c.deletions, 0);
        assert_eq!(c.distance(), 2);
    }

    #[test]
    fn wer_basics() {
        assert_eq!(wer(&[("a b", "a b"), ("c", "c")]), Some(0.0));
        assert_eq!(wer(&[("one two three four", "one two x four")]), Some(25.0));
        // insertions can push past 100
        assert_eq!(wer(&[("a", "a b c")]), Some(200.0));
        assert_eq!(wer::<&str, &str>(&[]), None);
    }

    #[test]
    fn wer_is_corpus_pooled() {
        // pooled: (1 + 0) errors over (1 + 9) words = 10%, not mean(100%, 0%)
        let corpus = [("x", "y"), ("a b c d e f g h i", "a b c d e f g h i")];
        assert_eq!(wer(&corpus), Some(10.0));
    }

    #[test]
    fn cer_counts_spaces() {
        // "ab" -> "a b": one inserted space
        let c = cer(&[("ab", "a b")]).unwrap();
        assert!((c - 50.0).abs() < 1e-12);
    }

    #[test]
    fn matches_bruteforce_small() {
        let alphabet = ["x", "y", "z"];
        let mut cases = Vec::new();
        for len_r in 0..=4usize {
            for len_h in 0..=4usize {
                let r: Vec<&str> = (0..len_r).map(|i| alphabet[(i * 7 + 1) % 3]).collect();
                let h: Vec<&str> = (0..len_h).map(|i| alphabet[(i * 5 + 2) % 3]).collect();
                cases.push((r, h));
            }
        }
        for (r, h) in cases {
            assert_eq!(edit_distance(&r, &h).distance(), slow_distance(&r, &h));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn symmetric_distance(
            r in proptest::collection::vec(0u8..3, 0..6),
            h in proptest::collection::vec(0u8..3, 0..6),
        ) {
            let a = edit_distance(&r, &h);
            let b = edit_distance(&h, &r);
            prop_assert_eq!(a.distance(), b.distance());
            // insertions and deletions swap roles
            prop_assert_eq!(a.insertions, b.deletions);
            prop_assert_eq!(a.deletions, b.insertions);
        }

        #[test]
        fn triangle_inequality(
            a in proptest::collection::vec(0u8..3, 0..6),
            b in proptest::collection::vec(0u8..3, 0..6),
            c in proptest::collection::vec(0u8..3, 0..6),
        ) {
            let ab = edit_distance(&a, &b).distance();
            let bc = edit_distance(&b, &c).distance();
            let ac = edit_distance(&a, &c).distance();
            prop_assert!(ac <= ab + bc);
        }

        #[test]
        fn agrees_with_oracle(
            r in proptest::collection::vec(0u8..3, 0..6),
            h in proptest::collection::vec(0u8..3, 0..6),
        ) {
            prop_assert_eq!(edit_distance(&r, &h).distance(), slow_distance(&r, &h));
        }
    }
}
