//! String and vector similarity helpers shared across stages.

/// Levenshtein distance over Unicode scalar values, two-row DP.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - distance / max_len`, in `[0, 1]`; two empty strings are identical.
pub fn lexical_similarity(a: &str, b: &str) -> f64 {
    let max = a.chars().count().max(b.chars().count());
    if max == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine over vectors of different dimension");
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        (dot(a, b) / d).clamp(-1.0, 1.0)
    }
}

/// Lowercase alphanumeric words; underscores and punctuation split words.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// `create_support_ticket` -> `create support ticket`.
pub fn humanize(identifier: &str) -> String {
    words(identifier).join(" ")
}

/// Lowercase snake_case identifier built from arbitrary text.
pub fn snake_case(text: &str) -> String {
    let mut out = String::new();
    for w in words(text) {
        if !out.is_empty() {
            out.push('_');
        }
        out.push_str(&w);
    }
    if out.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        out.insert_str(0, "n_");
    }
    out
}

/// Collapses runs of whitespace to single spaces and trims.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-fold, drop currency symbols and digit-grouping commas.
///
/// `"$1,201.40"` becomes `"1201.40"`; `"20140"` stays as is, so the two never
/// match each other.
pub fn normalize_value_text(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        if matches!(c, '$' | '€' | '£' | '¥' | '₹' | '₩') {
            continue;
        }
        if c == ',' && i > 0 && chars[i - 1].is_ascii_digit() && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()) {
            continue;
        }
        out.extend(c.to_lowercase());
    }
    out
}

/// Whether `needle` occurs in `hay` bounded by non-alphanumeric characters.
pub fn contains_token(hay: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut start = 0;
    while let Some(pos) = hay[start..].find(needle) {
        let at = start + pos;
        let end = at + needle.len();
        let before_ok = hay[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        start = at + needle.chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// 64-bit FNV-1a, used for feature hashing and seed derivation.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_distances() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
        assert_eq!(levenshtein("search_ticket", "search_tickets"), 1);
    }

    #[test]
    fn value_normalization() {
        assert_eq!(normalize_value_text("Charge the $201.40"), "charge the 201.40");
        assert_eq!(normalize_value_text("$1,201.40"), "1201.40");
        assert_eq!(normalize_value_text("a, b"), "a, b");
        assert!(!normalize_value_text("$201.40").contains("20140"));
    }

    #[test]
    fn token_containment() {
        assert!(contains_token("id is tkt1, ok", "tkt1"));
        assert!(!contains_token("id is tkt12", "tkt1"));
        assert!(contains_token("open", "open"));
        assert!(!contains_token("reopened", "open"));
    }

    #[test]
    fn naming_helpers() {
        assert_eq!(humanize("create_support_ticket"), "create support ticket");
        assert_eq!(snake_case("Film Industry"), "film_industry");
        assert_eq!(snake_case("3D print"), "n_3d_print");
    }

    proptest! {
        #[test]
        fn lexical_similarity_is_symmetric_and_bounded(a in "[a-z_]{0,12}", b in "[a-z_]{0,12}") {
            let s = lexical_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, lexical_similarity(&b, &a));
            prop_assert_eq!(lexical_similarity(&a, &a), 1.0);
        }

        #[test]
        fn levenshtein_triangle(a in "[ab]{0,8}", b in "[ab]{0,8}", c in "[ab]{0,8}") {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }
    }
}
