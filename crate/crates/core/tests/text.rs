use arsg::lm::NgramLm;
use arsg::metrics::{cer, corpus_cer, edit_distance};
use arsg::vocab::Vocabulary;
use proptest::prelude::*;

fn dp_distance(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..=a.len() {
        d[i][0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Add-k bigram probability by direct counting over padded strings.
fn counted_bigram(corpus: &[&str], chars: &[char], prev: Option<char>, y: Option<char>, k: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in corpus {
        let mut h: Option<char> = None;
        let seq: Vec<Option<char>> = s.chars().map(Some).chain(std::iter::once(None)).collect();
        for sym in seq {
            if h == prev {
                den += 1.0;
                if sym == y {
                    num += 1.0;
                }
            }
            h = sym;
        }
    }
    let symbols = (chars.len() + 1) as f64;
    ((num + k) / (den + k * symbols)).ln()
}

proptest! {
    #[test]
    fn edit_distance_matches_dynamic_program(a in "[abc]{0,10}", b in "[abc]{0,10}") {
        let (ac, bc): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        prop_assert_eq!(edit_distance(&a, &b), dp_distance(&ac, &bc));
        if !a.is_empty() {
            prop_assert!((cer(&a, &b).unwrap() - dp_distance(&ac, &bc) as f64 / ac.len() as f64).abs() < 1e-15);
            prop_assert_eq!(cer(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn bigram_matches_counting(corpus in prop::collection::vec("[ab]{0,6}", 1..5), k in 0.05f64..1.5) {
        let chars = ['a', 'b'];
        let v = Vocabulary::new(chars).unwrap();
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let lm = NgramLm::train(refs.iter().copied(), v.clone(), 2, k).unwrap();
        for prev in [None, Some('a'), Some('b')] {
            let history: Vec<usize> = prev.map(|c| vec![v.index_of(c).unwrap()]).unwrap_or_default();
            let seen = refs.iter().any(|s| match prev {
                None => true,
                Some(c) => s.contains(c),
            });
            for y in [Some('a'), Some('b'), None] {
                let yi = y.map_or(v.eos(), |c| v.index_of(c).unwrap());
                let got = lm.log_prob(&history, yi);
                let want = if seen { counted_bigram(&refs, &chars, prev, y, k) } else { -(3f64).ln() };
                prop_assert!((got - want).abs() < 1e-12, "{:?} {:?}: {} vs {}", prev, y, got, want);
            }
        }
    }

    #[test]
    fn lm_text_round_trip(corpus in prop::collection::vec("[a b<\t]{0,8}", 1..5), n in 1usize..4) {
        let v = Vocabulary::new(['a', 'b', ' ', '<', '\t']).unwrap();
        let lm = NgramLm::train(corpus.iter().map(String::as_str), v, n, 0.1).unwrap();
        let back = NgramLm::from_text(&lm.to_text()).unwrap();
        prop_assert_eq!(back.order(), n);
        prop_assert_eq!(back.to_text(), lm.to_text());
        for ((c1, l1), (c2, l2)) in lm.contexts().zip(back.contexts()) {
            prop_assert_eq!(c1, c2);
            for (a, b) in l1.iter().zip(l2) {
                prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(1.0));
            }
        }
    }
}

#[test]
fn lm_file_round_trip_and_errors() {
    let v = Vocabulary::new("abc".chars()).unwrap();
    let lm = NgramLm::train(["abc", "cab", "a"], v, 3, 0.1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.txt");
    lm.write(&path).unwrap();
    assert_eq!(NgramLm::read(&path).unwrap().to_text(), lm.to_text());
    assert!(lm.to_text().starts_with("NGRAM-LM v1 n=3 k=0.1\n"));
    assert_eq!(NgramLm::from_text("ARPA\n").unwrap_err().category(), "format");
    let mut broken = lm.to_text();
    broken.push_str("nonsense line\n");
    assert_eq!(NgramLm::from_text(&broken).unwrap_err().category(), "parse");
}

#[test]
fn corpus_rate_examples() {
    assert_eq!(cer("kitten", "sitting").unwrap(), 0.5);
    assert_eq!(cer("abc", "").unwrap(), 1.0);
    assert_eq!(cer("", "x").unwrap_err().category(), "domain");
    assert_eq!(corpus_cer([("ab", "ab"), ("cd", "c")]).unwrap(), 0.25);
}
