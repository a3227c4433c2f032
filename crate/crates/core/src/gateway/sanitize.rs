//! Rule-based query repair.
//!
//! Rules only delete characters or normalize whitespace, and the pipeline is
//! applied until nothing changes, which makes the result idempotent.

use std::sync::OnceLock;

use regex::Regex;

use super::GatewayError;

pub const MAX_QUERY_CHARS: usize = 256;

struct Rules {
    markup: Regex,
    code_ticks: Regex,
    emphasis: Regex,
    empty_quotes: Regex,
    repeated_ops: Regex,
    leading_op: Regex,
    trailing_op: Regex,
    site_space: Regex,
    doubled_sign: Regex,
    stray_edges: Regex,
    whitespace: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        markup: Regex::new(r"<[^<>]*>").unwrap(),
        code_ticks: Regex::new(r"`+").unwrap(),
        emphasis: Regex::new(r"\*{2,}|_{2,}").unwrap(),
        empty_quotes: Regex::new(r#""\s*"|''"#).unwrap(),
        repeated_ops: Regex::new(r"\b(AND|OR|NOT)(?:\s+(?:AND|OR|NOT))+\b").unwrap(),
        leading_op: Regex::new(r"^(?:AND|OR)\s+").unwrap(),
        trailing_op: Regex::new(r"\s+(?:AND|OR|NOT)$").unwrap(),
        site_space: Regex::new(r"\b(site|intitle|inurl|filetype):\s+").unwrap(),
        doubled_sign: Regex::new(r"([+\-])[+\-]+").unwrap(),
        stray_edges: Regex::new(r"^[+\-|&,;:]+|[+\-|&,;:]+$").unwrap(),
        whitespace: Regex::new(r"\s+").unwrap(),
    })
}

const QUOTE_PAIRS: &[(char, char)] = &[('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')];

fn strip_enclosing_quotes(s: &str) -> &str {
    let mut s = s;
    loop {
        let mut chars = s.chars();
        let (Some(first), Some(last)) = (chars.next(), chars.next_back()) else {
            return s;
        };
        match QUOTE_PAIRS.iter().find(|(o, c)| *o == first && *c == last) {
            Some(_) => s = s[first.len_utf8()..s.len() - last.len_utf8()].trim(),
            None => return s,
        }
    }
}

fn drop_unbalanced_quote(s: &str) -> String {
    if s.matches('"').count() % 2 == 1 {
        let idx = s.rfind('"').expect("odd count implies presence");
        let mut out = String::with_capacity(s.len());
        out.push_str(&s[..idx]);
        out.push_str(&s[idx + 1..]);
        out
    } else {
        s.to_string()
    }
}

fn pass(input: &str) -> String {
    let r = rules();
    let s = r.markup.replace_all(input, " ");
    let s = r.code_ticks.replace_all(&s, "");
    let s = r.emphasis.replace_all(&s, "");
    let s = r.whitespace.replace_all(&s, " ");
    let s = strip_enclosing_quotes(s.trim()).to_string();
    let s = r.empty_quotes.replace_all(&s, "");
    let s = drop_unbalanced_quote(&s);
    let s = r.repeated_ops.replace_all(&s, "$1");
    let s = r.site_space.replace_all(&s, "$1:");
    let s = r.doubled_sign.replace_all(&s, "$1");
    let s = r.whitespace.replace_all(&s, " ");
    let s = s.trim();
    let s = r.leading_op.replace(s, "");
    let s = r.trailing_op.replace(&s, "");
    let s = r.stray_edges.replace_all(&s, "");
    let s: String = s.trim().chars().take(MAX_QUERY_CHARS).collect();
    s.trim().to_string()
}

pub fn sanitize_query(raw: &str) -> Result<String, GatewayError> {
    let mut current = pass(raw);
    for _ in 0..32 {
        let next = pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        return Err(GatewayError::EmptyAfterSanitize);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn collapses_whitespace() {
        assert_eq!(sanitize_query("  weather   today ").unwrap(), "weather today");
    }

    #[test]
    fn clean_query_unchanged() {
        assert_eq!(sanitize_query("weather today").unwrap(), "weather today");
    }

    #[test]
    fn empty_quotes_rejected() {
        assert_eq!(sanitize_query("\"\""), Err(GatewayError::EmptyAfterSanitize));
        assert_eq!(sanitize_query("   "), Err(GatewayError::EmptyAfterSanitize));
    }

    #[test]
    fn repairs_common_mistakes() {
        assert_eq!(sanitize_query("\"gas prices\"").unwrap(), "gas prices");
        assert_eq!(sanitize_query("<b>gas</b> prices").unwrap(), "gas prices");
        assert_eq!(sanitize_query("gas AND AND prices").unwrap(), "gas AND prices");
        assert_eq!(sanitize_query("AND gas prices OR").unwrap(), "gas prices");
        assert_eq!(sanitize_query("site: wikipedia.org lemon").unwrap(), "site:wikipedia.org lemon");
        assert_eq!(sanitize_query("\"unbalanced quote").unwrap(), "unbalanced quote");
        assert_eq!(sanitize_query("--verbose ++flag").unwrap(), "verbose +flag");
    }

    #[test]
    fn length_capped() {
        let long = "word ".repeat(200);
        assert!(sanitize_query(&long).unwrap().chars().count() <= MAX_QUERY_CHARS);
    }

    proptest! {
        #[test]
        fn idempotent(raw in "[ a-zA-Z0-9\"'<>*_`+\\-:|&,;\t]{0,80}") {
            if let Ok(once) = sanitize_query(&raw) {
                prop_assert_eq!(sanitize_query(&once).unwrap(), once);
            }
        }

        #[test]
        fn idempotent_with_operators(words in proptest::collection::vec(
            prop_oneof!["AND", "OR", "NOT", "site:", "\"", "--", "x", "y"], 0..12)) {
            let raw = words.join(" ");
            if let Ok(once) = sanitize_query(&raw) {
                prop_assert_eq!(sanitize_query(&once).unwrap(), once);
            }
        }
    }
}
