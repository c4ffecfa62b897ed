//! Word-level text matching shared by the catalog, prompt builder and scorers.
//!
//! All containment checks tokenize on non-alphanumeric characters and compare
//! lower-cased tokens, so "car" never matches inside "cart" and "closed-wings"
//! matches "closed wings".

/// Splits `text` into lower-cased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn find_sequence(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// True when every token of `phrase` occurs contiguously, in order, in `text`.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    find_sequence(&tokenize(text), &tokenize(phrase))
}

/// Like [`contains_phrase`] but the final token of `concept` may carry a
/// plural suffix ("dogs", "benches").
pub fn mentions_concept(text: &str, concept: &str) -> bool {
    let hay = tokenize(text);
    let needle = tokenize(concept);
    let Some((last, head)) = needle.split_last() else {
        return false;
    };
    if needle.len() > hay.len() {
        return false;
    }
    hay.windows(needle.len()).any(|w| {
        let (w_last, w_head) = w.split_last().expect("window is non-empty");
        w_head == head && is_inflection_of(w_last, last)
    })
}

fn is_inflection_of(token: &str, lemma: &str) -> bool {
    if token == lemma {
        return true;
    }
    matches!(token.strip_prefix(lemma), Some("s") | Some("es"))
}

/// Strips a trailing plural suffix using a few English rules.
pub fn singularize(token: &str) -> String {
    let t = token.to_lowercase();
    if t.len() > 4 && t.ends_with("ies") {
        return format!("{}y", &t[..t.len() - 3]);
    }
    for suffix in ["ches", "shes", "sses", "xes"] {
        if t.len() > suffix.len() + 1 && t.ends_with(suffix) {
            return t[..t.len() - 2].to_string();
        }
    }
    if t.len() > 3 && t.ends_with('s') && !t.ends_with("ss") && !t.ends_with("us") {
        return t[..t.len() - 1].to_string();
    }
    t
}

const AN_EXCEPTIONS: &[&str] = &["uni", "use", "usu", "uti", "eu", "one", "once"];
const SILENT_H: &[&str] = &["hour", "honest", "honor", "honour", "heir"];

/// Indefinite article for the word that follows it.
pub fn indefinite_article(next_word: &str) -> &'static str {
    let w = next_word.trim().to_lowercase();
    if SILENT_H.iter().any(|p| w.starts_with(p)) {
        return "an";
    }
    if AN_EXCEPTIONS.iter().any(|p| w.starts_with(p)) {
        return "a";
    }
    match w.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}
