//! PII scrubbing for case text and transcripts.

use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};

pub const NAME: &str = "[NAME]";
pub const PHONE: &str = "[PHONE]";
pub const NATIONAL_ID: &str = "[NATIONAL_ID]";
pub const ADDRESS: &str = "[ADDRESS]";

struct Patterns {
    placeholder: Regex,
    rules: Vec<(Regex, &'static str)>,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("static regex");
        Patterns {
            placeholder: re(r"\[(?:NAME|PHONE|NATIONAL_ID|ADDRESS)\]"),
            rules: vec![
                // Identity numbers go first so phone rules never split them.
                (re(r"[0-9]{17}[0-9Xx]"), NATIONAL_ID),
                (re(r"[0-9]{3}-[0-9]{2}-[0-9]{4}"), NATIONAL_ID),
                (re(r"\+[0-9]{1,3}(?:[ -]?\(?[0-9]{2,4}\)?){2,5}"), PHONE),
                (re(r"1[3-9][0-9](?:[ -]?[0-9]{4}){2}"), PHONE),
                (re(r"0[0-9]{2,3}-[0-9]{7,8}"), PHONE),
                (re(r"\(?[0-9]{3}\)?[ .-][0-9]{3}[ .-][0-9]{4}"), PHONE),
                (
                    re(r"[0-9]{1,5}\s+(?:[A-Z][A-Za-z]*\.?\s+){1,4}(?:Street|St|Road|Rd|Avenue|Ave|Lane|Ln|Boulevard|Blvd|Drive|Dr|Way|Court|Ct|Place|Pl)\b\.?"),
                    ADDRESS,
                ),
                (re(r"\p{Han}{0,12}(?:路|街|大道|巷|弄)[0-9]+(?:号|號)?"), ADDRESS),
            ],
        }
    })
}

fn is_ascii_word(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_ascii_alphanumeric())
}

/// Replaces matches of `re` whose edges are not glued to further ASCII
/// letters or digits.
fn replace_bounded(re: &Regex, text: &str, tag: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in re.find_iter(text) {
        let matched = m.as_str();
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        let first = matched.chars().next();
        let tail = matched.chars().next_back();
        let glued = (is_ascii_word(first) && is_ascii_word(before)) || (is_ascii_word(tail) && is_ascii_word(after));
        if glued {
            continue;
        }
        out.push_str(&text[last..m.start()]);
        out.push_str(tag);
        last = m.end();
    }
    out.push_str(&text[last..]);
    out
}

/// Compiled roster matcher; longer names win over their prefixes.
pub struct Roster {
    names: Option<Regex>,
}

impl Roster {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        let mut names: Vec<&str> = names.iter().map(|s| s.as_ref().trim()).filter(|s| !s.is_empty()).collect();
        names.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then(a.cmp(b)));
        names.dedup();
        let names = (!names.is_empty()).then(|| {
            let alternation: Vec<String> = names
                .iter()
                .map(|n| n.split_whitespace().map(regex::escape).collect::<Vec<_>>().join(r"\s+"))
                .collect();
            RegexBuilder::new(&alternation.join("|"))
                .case_insensitive(true)
                .build()
                .expect("escaped roster")
        });
        Self { names }
    }
}

/// Applies `re` to the text between existing placeholders.
fn replace_outside_placeholders(re: &Regex, text: &str, tag: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in patterns().placeholder.find_iter(text) {
        out.push_str(&replace_bounded(re, &text[last..m.start()], tag));
        out.push_str(m.as_str());
        last = m.end();
    }
    out.push_str(&replace_bounded(re, &text[last..], tag));
    out
}

fn scrub_once(text: &str, roster: &Roster) -> String {
    let mut text = text.to_string();
    for (re, tag) in &patterns().rules {
        text = replace_outside_placeholders(re, &text, tag);
    }
    if let Some(names) = &roster.names {
        text = replace_outside_placeholders(names, &text, NAME);
    }
    text
}

/// Replaces roster names, phone numbers, identity numbers and street
/// addresses with typed placeholders. Existing placeholders are left alone
/// and the result is a fixpoint, so the function is idempotent.
pub fn anonymize_with(text: &str, roster: &Roster) -> String {
    let mut current = text.to_string();
    loop {
        let next = scrub_once(&current, roster);
        if next == current {
            return current;
        }
        current = next;
    }
}

pub fn anonymize<S: AsRef<str>>(text: &str, roster: &[S]) -> String {
    anonymize_with(text, &Roster::new(roster))
}
