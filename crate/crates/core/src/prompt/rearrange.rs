//! Sentence-to-phrase rearrangement.
//!
//! Grounding models split a prompt into phrases at commas, so a sentence like
//! "Polyp is a pink and round bump in rectum" reads better as
//! "pink, round, bump, in rectum": descriptors before the head noun become
//! prefix phrases and everything after it becomes suffix phrases.

use super::{CategorySpec, PromptError};

const COPULAS: [&str; 5] = ["is", "are", "was", "were", "be"];
const ARTICLES: [&str; 3] = ["a", "an", "the"];
const CONJUNCTION: &str = "and";

fn normalize(token: &str) -> String {
    token
        .trim_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

fn strip_trailing_punct(token: &str) -> &str {
    token.trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?'))
}

fn find_head(tokens: &[&str], category: &CategorySpec) -> Option<(usize, usize)> {
    let normalized: Vec<String> = tokens.iter().map(|t| normalize(t)).collect();
    category.surface_forms().find_map(|form| {
        let words: Vec<String> = form.split_whitespace().map(normalize).collect();
        if words.is_empty() || words.len() > tokens.len() {
            return None;
        }
        (0..=tokens.len() - words.len())
            .find(|&i| normalized[i..i + words.len()] == words[..])
            .map(|i| (i, i + words.len()))
    })
}

/// Splits a token run into phrases at commas and at the conjunction "and",
/// dropping leading articles.
fn phrases(tokens: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, out: &mut Vec<String>| {
        let mut start = 0;
        while start < current.len() && ARTICLES.contains(&normalize(current[start]).as_str()) {
            start += 1;
        }
        if start < current.len() {
            let mut words: Vec<&str> = current[start..].to_vec();
            if let Some(last) = words.last_mut() {
                *last = strip_trailing_punct(last);
            }
            let phrase = words
                .into_iter()
                .filter(|w| !w.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            if !phrase.is_empty() {
                out.push(phrase);
            }
        }
        current.clear();
    };
    for &tok in tokens {
        let norm = normalize(tok);
        if norm.is_empty() {
            flush(&mut current, &mut out);
            continue;
        }
        if norm == CONJUNCTION {
            flush(&mut current, &mut out);
            continue;
        }
        current.push(tok);
        if tok.ends_with([',', ';']) {
            flush(&mut current, &mut out);
        }
    }
    flush(&mut current, &mut out);
    out
}

/// Rewrites `sentence` as comma-separated phrases around the category's head
/// noun. Words before a copula ("is", "are", ...) form the subject and are
/// dropped; the head noun keeps its original spelling.
pub fn rearrange_for_grounding(
    sentence: &str,
    category: &CategorySpec,
) -> Result<String, PromptError> {
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    let (start, end) = find_head(&tokens, category).ok_or_else(|| PromptError::CategoryNotFound {
        category: category.name.clone(),
        sentence: sentence.to_string(),
    })?;

    let before = &tokens[..start];
    let descriptors_from = before
        .iter()
        .rposition(|t| COPULAS.contains(&normalize(t).as_str()))
        .map_or(0, |i| i + 1);

    let mut parts = phrases(&before[descriptors_from..]);
    let head: Vec<&str> = tokens[start..end].to_vec();
    let mut head_text = head.join(" ");
    head_text.truncate(strip_trailing_punct(&head_text).len());
    parts.push(head_text);
    parts.extend(phrases(&tokens[end..]));
    Ok(parts.join(", "))
}
