//! Deterministic name similarity used to relate parameters, response fields
//! and resources.
//!
//! The pipeline is: split on separators and camel-case boundaries, lowercase,
//! singularize each token, then strip trailing `id`/`ref` tokens. Two names
//! score by the Dice coefficient of their token sets.

use std::collections::BTreeSet;

/// Default score at or above which two names are considered the same entity.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

const SUFFIX_TOKENS: &[&str] = &["id", "ref"];

/// Splits an identifier into lowercase words.
///
/// `"bookId"`, `"book_id"`, `"Book-ID"` and `"BookID"` all yield
/// `["book", "id"]`.
pub fn tokenize(name: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for part in name.split(|c: char| !c.is_ascii_alphanumeric()) {
        let chars: Vec<char> = part.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let boundary = i > 0 && {
                let prev = chars[i - 1];
                let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
                (c.is_ascii_uppercase() && (prev.is_ascii_lowercase() || prev.is_ascii_digit()))
                    || (c.is_ascii_uppercase() && prev.is_ascii_uppercase() && next_lower)
                    || (c.is_ascii_digit() != prev.is_ascii_digit())
            };
            if boundary && !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            current.push(c.to_ascii_lowercase());
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// English singular form for the plural shapes common in API nouns.
pub fn singularize(word: &str) -> String {
    let w = word.to_ascii_lowercase();
    if w.len() <= 3 {
        return match w.as_str() {
            "ids" => "id".to_string(),
            _ => w,
        };
    }
    if let Some(stem) = w.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["sses", "xes", "ches", "shes", "zes"] {
        if w.ends_with(suffix) {
            return w[..w.len() - 2].to_string();
        }
    }
    if w.ends_with("ss") || w.ends_with("us") || w.ends_with("is") {
        return w;
    }
    match w.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => w,
    }
}

/// Normalized token list: tokenized, singular, with trailing id-like
/// suffixes removed. A name made only of suffix tokens keeps them.
pub fn normalize(name: &str) -> Vec<String> {
    let tokens: Vec<String> = tokenize(name).iter().map(|t| singularize(t)).collect();
    let mut stripped = tokens.clone();
    while stripped
        .last()
        .is_some_and(|t| SUFFIX_TOKENS.contains(&t.as_str()))
    {
        stripped.pop();
    }
    if stripped.is_empty() {
        tokens
    } else {
        stripped
    }
}

/// True when a name consists only of id-like tokens (`id`, `ID`, `ref`, ...).
pub fn is_generic_id(name: &str) -> bool {
    let tokens: Vec<String> = tokenize(name).iter().map(|t| singularize(t)).collect();
    !tokens.is_empty() && tokens.iter().all(|t| SUFFIX_TOKENS.contains(&t.as_str()))
}

/// Qualifies a bare id-like name with its owning resource: `id` on a book
/// becomes `book id`. Other names are returned unchanged.
pub fn qualify(name: &str, resource: &str) -> String {
    if is_generic_id(name) {
        format!("{resource} {name}")
    } else {
        name.to_string()
    }
}

/// Similarity in `[0, 1]` between two names. Symmetric; `1.0` when both
/// normalize to the same token set.
pub fn match_names(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<String> = normalize(a).into_iter().collect();
    let tb: BTreeSet<String> = normalize(b).into_iter().collect();
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let shared = ta.intersection(&tb).count() as f64;
    2.0 * shared / (ta.len() + tb.len()) as f64
}

/// Canonical resource name for a path noun: lowercase, singular, words
/// joined by `_`.
pub fn resource_name(noun: &str) -> String {
    tokenize(noun)
        .iter()
        .map(|t| singularize(t))
        .collect::<Vec<_>>()
        .join("_")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_shapes() {
        assert_eq!(tokenize("bookId"), ["book", "id"]);
        assert_eq!(tokenize("book_id"), ["book", "id"]);
        assert_eq!(tokenize("BookID"), ["book", "id"]);
        assert_eq!(tokenize("HTTPServerURL"), ["http", "server", "url"]);
        assert_eq!(tokenize("metadata.creationTimestamp"), ["metadata", "creation", "timestamp"]);
        assert_eq!(tokenize("v2Name"), ["v", "2", "name"]);
    }

    #[test]
    fn singular_forms() {
        assert_eq!(singularize("books"), "book");
        assert_eq!(singularize("categories"), "category");
        assert_eq!(singularize("addresses"), "address");
        assert_eq!(singularize("boxes"), "box");
        assert_eq!(singularize("status"), "status");
        assert_eq!(singularize("ids"), "id");
        assert_eq!(singularize("bus"), "bus");
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(match_names("bookId", "book_id"), 1.0);
        // authorId -> [author, id] -> strip -> [author]; Author -> [author].
        assert_eq!(match_names("authorId", "Author"), 1.0);
        // [customer] vs [order]: no shared token.
        assert!(match_names("customerId", "orderId") < DEFAULT_THRESHOLD);
        assert_eq!(match_names("customerId", "orderId"), 0.0);
        assert_eq!(match_names("bookIds", "bookId"), 1.0);
        // [customer, name] vs [customer]: 2*1/3.
        assert!((match_names("customerName", "customerId") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(match_names("id", "ID"), 1.0);
    }

    #[test]
    fn qualification() {
        assert_eq!(qualify("id", "book"), "book id");
        assert_eq!(qualify("bookId", "book"), "bookId");
        assert_eq!(match_names(&qualify("id", "customer"), "customerId"), 1.0);
    }

    #[test]
    fn resource_names() {
        assert_eq!(resource_name("books"), "book");
        assert_eq!(resource_name("lineItems"), "line_item");
        assert_eq!(resource_name("order-lines"), "order_line");
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in "[a-zA-Z_]{1,16}", b in "[a-zA-Z_]{1,16}") {
            let ab = match_names(&a, &b);
            prop_assert_eq!(ab, match_names(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn reflexive(a in "[a-zA-Z][a-zA-Z0-9_]{0,16}") {
            prop_assert_eq!(match_names(&a, &a), 1.0);
        }
    }
}
