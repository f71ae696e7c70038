//! Question rewriting: turn list-style questions ("Name something that ...")
//! into Cloze-style statements ending in "is", so a left-to-right generator
//! can complete them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Question;
use crate::error::{Error, Result};
use crate::jsonl;

/// The statement head substituted for a matched question prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    #[serde(rename = "one")]
    One,
    #[serde(rename = "one thing")]
    OneThing,
    #[serde(rename = "one way to tell")]
    OneWayToTell,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::One => "one",
            Head::OneThing => "one thing",
            Head::OneWayToTell => "one way to tell",
        }
    }

    /// The head with its first letter uppercased, used when the original
    /// question was capitalized.
    fn capitalized(self) -> &'static str {
        match self {
            Head::One => "One",
            Head::OneThing => "One thing",
            Head::OneWayToTell => "One way to tell",
        }
    }
}

/// Maps one question prefix to the statement head that replaces it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    prefix: String,
    head: Head,
}

impl RewriteRule {
    pub fn new(prefix: impl Into<String>, head: Head) -> Result<RewriteRule> {
        let prefix = prefix.into().to_lowercase();
        if prefix.trim().is_empty() {
            return Err(Error::data("rewrite rule prefix must be non-empty"));
        }
        Ok(RewriteRule { prefix, head })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn head(&self) -> Head {
        self.head
    }
}

/// The built-in prefix table. Longer prefixes shadow their own shorter
/// variants ("name an" over "name") via longest-match selection in
/// [`rewrite`], so the order here is cosmetic.
pub fn default_rules() -> Vec<RewriteRule> {
    let table: &[(&str, Head)] = &[
        ("name something", Head::OneThing),
        ("what", Head::OneThing),
        ("tell me something", Head::OneThing),
        ("name a", Head::One),
        ("name an", Head::One),
        ("name", Head::One),
        ("which", Head::One),
        ("tell me a", Head::One),
        ("tell me", Head::One),
        ("give me a", Head::One),
        ("tell me an", Head::One),
        ("how can you tell", Head::OneWayToTell),
    ];
    table
        .iter()
        .map(|(prefix, head)| RewriteRule::new(*prefix, *head).expect("built-in prefixes valid"))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RuleRecord {
    prefix: String,
    head: Head,
}

/// Load a replacement rule table, one `{"prefix": ..., "head": ...}` record
/// per line.
pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<RewriteRule>> {
    let path = path.as_ref();
    let mut rules = Vec::new();
    for (line, record) in jsonl::read_records::<RuleRecord>(path)? {
        let rule = RewriteRule::new(record.prefix, record.head)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        rules.push(rule);
    }
    Ok(rules)
}

/// A question after rewriting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewrittenQuestion {
    /// The full statement, e.g. "One thing ... is", or the "Q: ... A:"
    /// fallback when no prefix matched.
    pub text: String,
    /// The rule prefix that matched, if any.
    pub matched_prefix: Option<String>,
    /// The carried-over body of the question, verbatim.
    pub content: String,
}

fn strip_trailing_punctuation(text: &str) -> &str {
    text.trim()
        .trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '?' | '.' | '!'))
}

/// True when `text` starts with `prefix` (ASCII case-insensitive) and the
/// match ends at a token boundary, so "what" does not match "whatever".
fn prefix_matches(text: &str, prefix: &str) -> bool {
    let Some(start) = text.get(..prefix.len()) else {
        return false;
    };
    if !start.eq_ignore_ascii_case(prefix) {
        return false;
    }
    text[prefix.len()..]
        .chars()
        .next()
        .is_none_or(|c| !c.is_alphanumeric())
}

/// Rewrite a question against a rule table. The longest matching prefix wins;
/// its head replaces the prefix and " is" is appended. Questions matching no
/// rule become "Q: {body} A:". The head is capitalized when the question was.
pub fn rewrite(question: &Question, rules: &[RewriteRule]) -> RewrittenQuestion {
    let text = question.text.as_str();
    let mut best: Option<&RewriteRule> = None;
    for rule in rules {
        if prefix_matches(text, &rule.prefix)
            && best.is_none_or(|b| rule.prefix.len() > b.prefix.len())
        {
            best = Some(rule);
        }
    }

    match best {
        Some(rule) => {
            let content = strip_trailing_punctuation(&text[rule.prefix.len()..]);
            let capitalize = text.chars().next().is_some_and(char::is_uppercase);
            let head = if capitalize {
                rule.head.capitalized()
            } else {
                rule.head.as_str()
            };
            RewrittenQuestion {
                text: format!("{head} {content} is"),
                matched_prefix: Some(rule.prefix.clone()),
                content: content.to_string(),
            }
        }
        None => {
            let content = strip_trailing_punctuation(text);
            RewrittenQuestion {
                text: format!("Q: {content} A:"),
                matched_prefix: None,
                content: content.to_string(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn q(text: &str) -> Question {
        Question::new("q", text).unwrap()
    }

    #[test]
    fn default_table_has_twelve_rules_with_expected_heads() {
        let rules = default_rules();
        assert_eq!(rules.len(), 12);
        let head_of = |prefix: &str| {
            rules
                .iter()
                .find(|r| r.prefix() == prefix)
                .unwrap_or_else(|| panic!("missing rule for '{prefix}'"))
                .head()
        };
        assert_eq!(head_of("name something"), Head::OneThing);
        assert_eq!(head_of("what"), Head::OneThing);
        assert_eq!(head_of("tell me something"), Head::OneThing);
        for prefix in [
            "name a",
            "name an",
            "name",
            "which",
            "tell me a",
            "tell me",
            "give me a",
            "tell me an",
        ] {
            assert_eq!(head_of(prefix), Head::One, "prefix '{prefix}'");
        }
        assert_eq!(head_of("how can you tell"), Head::OneWayToTell);
    }

    #[test]
    fn rewrites_the_athlete_question() {
        let rewritten = rewrite(
            &q("Name something that an athlete would not keep in her refrigerator?"),
            &default_rules(),
        );
        assert_eq!(
            rewritten.text,
            "One thing that an athlete would not keep in her refrigerator is"
        );
        assert_eq!(rewritten.matched_prefix.as_deref(), Some("name something"));
        assert_eq!(
            rewritten.content,
            "that an athlete would not keep in her refrigerator"
        );
    }

    #[test]
    fn longest_prefix_wins() {
        let rewritten = rewrite(&q("name an animal that lives in water?"), &default_rules());
        assert_eq!(rewritten.matched_prefix.as_deref(), Some("name an"));
        assert_eq!(rewritten.text, "one animal that lives in water is");
    }

    #[test]
    fn head_case_follows_the_question() {
        let rules = default_rules();
        assert_eq!(
            rewrite(&q("How can you tell a house has children?"), &rules).text,
            "One way to tell a house has children is"
        );
        assert_eq!(
            rewrite(&q("how can you tell a house has children?"), &rules).text,
            "one way to tell a house has children is"
        );
    }

    #[test]
    fn prefix_requires_token_boundary() {
        let rules = default_rules();
        let rewritten = rewrite(&q("Whatever you do, don't stop?"), &rules);
        assert_eq!(rewritten.matched_prefix, None);
        assert_eq!(rewritten.text, "Q: Whatever you do, don't stop A:");
    }

    #[test]
    fn fallback_strips_trailing_punctuation_only() {
        let rewritten = rewrite(&q("Describe your favorite tool."), &default_rules());
        assert_eq!(rewritten.text, "Q: Describe your favorite tool A:");
        assert_eq!(rewritten.content, "Describe your favorite tool");
    }

    #[test]
    fn content_survives_verbatim_including_inner_punctuation() {
        let rewritten = rewrite(
            &q("Name something you'd find in Bob's garage?!"),
            &default_rules(),
        );
        assert_eq!(rewritten.content, "you'd find in Bob's garage");
        assert!(rewritten.text.ends_with(" is"));
        let original = "Name something you'd find in Bob's garage?!";
        assert!(original.contains(&rewritten.content));
    }

    #[test]
    fn outputs_never_rematch_the_table() {
        // A rewritten statement must not itself look like a question the
        // table would rewrite, for every rule in the table.
        let rules = default_rules();
        for rule in &rules {
            let question = q(&format!("{} example body?", rule.prefix()));
            let rewritten = rewrite(&question, &rules);
            assert!(rewritten.matched_prefix.is_some());
            let again = Question::new("q2", &rewritten.text).unwrap();
            assert_eq!(
                rewrite(&again, &rules).matched_prefix,
                None,
                "output of rule '{}' rematched the table",
                rule.prefix()
            );
        }
    }

    #[test]
    fn case_insensitive_match() {
        let rewritten = rewrite(&q("NAME A FRUIT?"), &default_rules());
        assert_eq!(rewritten.matched_prefix.as_deref(), Some("name a"));
        assert_eq!(rewritten.text, "One FRUIT is");
    }

    #[test]
    fn rule_file_round_trip_and_validation() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, r#"{{"prefix":"Is there","head":"one"}}"#).unwrap();
        writeln!(
            file,
            r#"{{"prefix":"how can you tell","head":"one way to tell"}}"#
        )
        .unwrap();
        let rules = load_rules(file.path()).unwrap();
        assert_eq!(rules.len(), 2);
        // prefixes are stored lowercase
        assert_eq!(rules[0].prefix(), "is there");
        assert_eq!(rules[0].head(), Head::One);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, r#"{{"prefix":"name","head":"two things"}}"#).unwrap();
        assert!(load_rules(bad.path()).is_err());
    }

    #[test]
    fn empty_rule_table_always_falls_back() {
        let rewritten = rewrite(&q("Name a color?"), &[]);
        assert_eq!(rewritten.text, "Q: Name a color A:");
    }
}
