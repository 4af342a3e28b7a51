//! Character error rate.

use crate::error::{Error, Result};

/// Character-level edit distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// `edit_distance(reference, hypothesis) / |reference|`.
pub fn cer(reference: &str, hypothesis: &str) -> Result<f64> {
    let n = reference.chars().count();
    if n == 0 {
        return Err(Error::domain("character error rate of an empty reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / n as f64)
}

/// Total edits over total reference characters.
pub fn corpus_cer<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<f64> {
    let mut edits = 0;
    let mut chars = 0;
    for (r, h) in pairs {
        edits += edit_distance(r, h);
        chars += r.chars().count();
    }
    if chars == 0 {
        return Err(Error::domain("character error rate of an empty reference set"));
    }
    Ok(edits as f64 / chars as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(cer("abc", "abc").unwrap(), 0.0);
        assert_eq!(cer("abc", "").unwrap(), 1.0);
        assert_eq!(cer("kitten", "sitting").unwrap(), 0.5);
        assert_eq!(cer("", "a").unwrap_err().category(), "domain");
    }

    #[test]
    fn corpus_rate_pools_counts() {
        let r = corpus_cer([("ab", "ab"), ("abcd", "abxd")]).unwrap();
        assert!((r - 1.0 / 6.0).abs() < 1e-15);
    }
}
