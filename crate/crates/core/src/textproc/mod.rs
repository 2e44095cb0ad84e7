//! Tweet normalization and clause-discarding semantic rules.
//!
//! Preprocessing runs in two stages that can be toggled independently:
//! the semantic rules prune a raw tweet down to its sentiment-bearing
//! sub-sentence, then normalization replaces Twitter noise (usernames,
//! links, repeated letters) with a compact vocabulary-friendly form
//! while keeping emoticons verbatim.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use regex::Regex;

use crate::error::{Error, Result};

/// Built-in emoticon list (one per line), overridable by path.
pub const BUILTIN_EMOTICONS: &str = include_str!("data/emoticons.txt");
/// Built-in negative-cue list for the R13 negativity test.
pub const BUILTIN_NEGATIVE_CUES: &str = include_str!("data/negative_cues.txt");
/// Built-in stop-word list (removal is off by default).
pub const BUILTIN_STOPWORDS: &str = include_str!("data/stopwords.txt");

pub const USER_SENTINEL: &str = "<user>";
pub const URL_SENTINEL: &str = "<url>";

/// Cue words that survive stop-word removal no matter what: the rules
/// and the negation detector depend on them.
const PROTECTED_TOKENS: [&str; 6] = ["but", "despite", "unless", "while", "however", "not"];

/// An unprocessed tweet with an optional class label
/// (0 = negative, 1 = positive).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTweet {
    pub text: String,
    pub label: Option<usize>,
}

impl RawTweet {
    pub fn new(text: impl Into<String>, label: Option<usize>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::DegenerateTweet("empty text".into()));
        }
        Ok(RawTweet { text, label })
    }

    pub fn unlabeled(text: impl Into<String>) -> Result<Self> {
        RawTweet::new(text, None)
    }
}

/// A tweet after preprocessing, with provenance of what fired.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessedTweet {
    pub text: String,
    pub applied_rules: Vec<Rule>,
    pub emoticons_kept: Vec<String>,
}

/// Whitespace-delimited tokens; each token is itself the character
/// sequence consumed by the character-level feature extractor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub tokens: Vec<String>,
}

impl TokenizedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The five clause-discarding rules, keyed on their cue words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    /// "but": keep only what follows the last "but".
    R11,
    /// "despite": keep only what precedes "despite".
    R12,
    /// "unless" followed by a negative clause: drop the unless-clause.
    R13,
    /// "while": drop the while-clause, keep the clause after it.
    R14,
    /// "however": keep only what follows "however".
    R15,
}

impl Rule {
    pub const ALL: [Rule; 5] = [Rule::R11, Rule::R12, Rule::R13, Rule::R14, Rule::R15];
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Rule::R11 => "R11",
            Rule::R12 => "R12",
            Rule::R13 => "R13",
            Rule::R14 => "R14",
            Rule::R15 => "R15",
        };
        f.write_str(name)
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R11" => Ok(Rule::R11),
            "R12" => Ok(Rule::R12),
            "R13" => Ok(Rule::R13),
            "R14" => Ok(Rule::R14),
            "R15" => Ok(Rule::R15),
            other => Err(Error::Contract(format!("unknown rule {other:?}"))),
        }
    }
}

/// Per-corpus rule statistics (how many tweets each rule touched).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RuleStats {
    pub fired: Vec<(Rule, usize)>,
    pub total_processed: usize,
}

impl RuleStats {
    pub fn count(&self, rule: Rule) -> usize {
        self.fired
            .iter()
            .find(|(r, _)| *r == rule)
            .map_or(0, |(_, n)| *n)
    }
}

/// The raw text of the three configurable lists, kept so a trained
/// model can carry its exact preprocessing configuration around.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListSources {
    pub emoticons: String,
    pub negative_cues: String,
    pub stopwords: String,
}

impl ListSources {
    /// Lines rejoined with single newlines, so the text survives a
    /// checkpoint round trip byte-for-byte.
    fn canonical(text: &str) -> String {
        text.lines().collect::<Vec<_>>().join("\n")
    }
}

impl Default for ListSources {
    fn default() -> Self {
        ListSources {
            emoticons: Self::canonical(BUILTIN_EMOTICONS),
            negative_cues: Self::canonical(BUILTIN_NEGATIVE_CUES),
            stopwords: Self::canonical(BUILTIN_STOPWORDS),
        }
    }
}

/// The preprocessing engine. All methods are pure functions of the
/// configured lists, so one instance can be shared across threads.
pub struct Preprocessor {
    sources: ListSources,
    emoticons: HashSet<String>,
    max_emoticon_chars: usize,
    negative_cues: HashSet<String>,
    stopwords: HashSet<String>,
    remove_stopwords: bool,
    url_re: Regex,
    user_re: Regex,
    but_re: Regex,
    despite_re: Regex,
    unless_re: Regex,
    while_re: Regex,
    however_re: Regex,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new()
    }
}

impl Preprocessor {
    /// Engine with the built-in emoticon, negative-cue, and stop-word
    /// lists; stop-word removal is off.
    pub fn new() -> Self {
        Self::with_lists(BUILTIN_EMOTICONS, BUILTIN_NEGATIVE_CUES, BUILTIN_STOPWORDS)
    }

    /// Engine with caller-supplied lists (one entry per line; blank
    /// lines ignored).
    pub fn with_lists(emoticons: &str, negative_cues: &str, stopwords: &str) -> Self {
        let parse = |text: &str| -> HashSet<String> {
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect()
        };
        let sources = ListSources {
            emoticons: ListSources::canonical(emoticons),
            negative_cues: ListSources::canonical(negative_cues),
            stopwords: ListSources::canonical(stopwords),
        };
        let emoticons = parse(emoticons);
        let max_emoticon_chars = emoticons.iter().map(|e| e.chars().count()).max().unwrap_or(0);
        Preprocessor {
            sources,
            emoticons,
            max_emoticon_chars,
            negative_cues: parse(negative_cues)
                .into_iter()
                .map(|c| c.to_lowercase())
                .collect(),
            stopwords: parse(stopwords).into_iter().map(|c| c.to_lowercase()).collect(),
            remove_stopwords: false,
            url_re: Regex::new(r"(?i)\b(?:[a-z][a-z0-9+.\-]*://\S+|www\.\S+)").unwrap(),
            user_re: Regex::new(r"@\w+").unwrap(),
            but_re: Regex::new(r"(?i)\bbut\b").unwrap(),
            despite_re: Regex::new(r"(?i)\bdespite\b").unwrap(),
            unless_re: Regex::new(r"(?i)\bunless\b").unwrap(),
            while_re: Regex::new(r"(?i)\bwhile\b").unwrap(),
            however_re: Regex::new(r"(?i)\bhowever\b").unwrap(),
        }
    }

    pub fn set_remove_stopwords(&mut self, on: bool) {
        self.remove_stopwords = on;
    }

    pub fn from_sources(sources: &ListSources, remove_stopwords: bool) -> Self {
        let mut p = Self::with_lists(&sources.emoticons, &sources.negative_cues, &sources.stopwords);
        p.set_remove_stopwords(remove_stopwords);
        p
    }

    /// The exact list texts this engine was built from.
    pub fn list_sources(&self) -> &ListSources {
        &self.sources
    }

    /// Full pipeline: semantic rules on the raw text (optional), then
    /// normalization. The same path serves training and prediction.
    pub fn preprocess(&self, raw: &RawTweet, apply_rules: bool) -> Result<ProcessedTweet> {
        let (text, applied_rules) = if apply_rules {
            self.apply_semantic_rules(&raw.text)
        } else {
            (raw.text.clone(), Vec::new())
        };
        let mut processed = self.normalize_text(&text)?;
        processed.applied_rules = applied_rules;
        Ok(processed)
    }

    /// Twitter-noise normalization only (no semantic rules).
    pub fn normalize_tweet(&self, raw: &RawTweet) -> Result<ProcessedTweet> {
        self.normalize_text(&raw.text)
    }

    fn normalize_text(&self, text: &str) -> Result<ProcessedTweet> {
        let text = self.url_re.replace_all(text, URL_SENTINEL);
        let text = self.user_re.replace_all(&text, USER_SENTINEL);

        let mut tokens: Vec<String> = Vec::new();
        let mut emoticons_kept = Vec::new();
        for raw_token in text.split_whitespace() {
            if raw_token == "RT" {
                continue;
            }
            for piece in self.scrub_token(raw_token, &mut emoticons_kept) {
                if self.remove_stopwords
                    && self.stopwords.contains(&piece)
                    && !PROTECTED_TOKENS.contains(&piece.as_str())
                {
                    continue;
                }
                tokens.push(piece);
            }
        }
        if tokens.is_empty() {
            return Err(Error::DegenerateTweet(format!(
                "nothing left after normalization of {text:?}"
            )));
        }
        Ok(ProcessedTweet {
            text: tokens.join(" "),
            applied_rules: Vec::new(),
            emoticons_kept,
        })
    }

    /// Splits one whitespace token into normalized pieces: sentinels
    /// and emoticons verbatim, everything else lowercased with letter
    /// runs capped at two and punctuation (except apostrophes) dropped.
    fn scrub_token(&self, token: &str, emoticons_kept: &mut Vec<String>) -> Vec<String> {
        let chars: Vec<char> = token.chars().collect();
        let mut pieces = Vec::new();
        let mut plain = String::new();
        let mut i = 0;
        while i < chars.len() {
            if let Some(len) = self.special_at(&chars, i) {
                let special: String = chars[i..i + len].iter().collect();
                flush_plain(&mut plain, &mut pieces);
                if self.emoticons.contains(&special) {
                    emoticons_kept.push(special.clone());
                }
                pieces.push(special);
                i += len;
            } else {
                push_scrubbed(&mut plain, chars[i]);
                i += 1;
            }
        }
        flush_plain(&mut plain, &mut pieces);
        pieces
    }

    /// Longest sentinel or emoticon starting at `pos`, if any. A match
    /// whose alphanumeric edge touches adjacent alphanumeric text is
    /// rejected so words like "5:30pm" stay intact.
    fn special_at(&self, chars: &[char], pos: usize) -> Option<usize> {
        let remaining = chars.len() - pos;
        let max = self.max_emoticon_chars.max(6).min(remaining);
        for len in (2..=max).rev() {
            let candidate: String = chars[pos..pos + len].iter().collect();
            let known = candidate == USER_SENTINEL
                || candidate == URL_SENTINEL
                || self.emoticons.contains(&candidate);
            if !known {
                continue;
            }
            let first = chars[pos];
            let last = chars[pos + len - 1];
            let prev_alnum = pos > 0 && chars[pos - 1].is_alphanumeric();
            let next_alnum = pos + len < chars.len() && chars[pos + len].is_alphanumeric();
            if (prev_alnum && first.is_alphanumeric()) || (next_alnum && last.is_alphanumeric()) {
                continue;
            }
            return Some(len);
        }
        None
    }

    /// Applies the rules in order R11..R15, rescanning after each
    /// application; each rule fires at most once.
    pub fn apply_semantic_rules(&self, text: &str) -> (String, Vec<Rule>) {
        let mut current = text.trim().to_string();
        let mut applied = Vec::new();
        loop {
            let next = Rule::ALL
                .iter()
                .filter(|r| !applied.contains(*r))
                .find_map(|&rule| self.try_rule(rule, &current).map(|t| (rule, t)));
            match next {
                Some((rule, new_text)) => {
                    applied.push(rule);
                    current = new_text;
                }
                None => break,
            }
            if applied.len() >= Rule::ALL.len() {
                break;
            }
        }
        (current, applied)
    }

    fn try_rule(&self, rule: Rule, text: &str) -> Option<String> {
        match rule {
            Rule::R11 => {
                let m = self.but_re.find_iter(text).last()?;
                non_empty(trim_leading(&text[m.end()..]))
            }
            Rule::R12 => {
                let m = self.despite_re.find(text)?;
                non_empty(trim_trailing(&text[..m.start()]))
            }
            Rule::R13 => {
                let m = self.unless_re.find(text)?;
                if !self.is_negative(&text[m.end()..]) {
                    return None;
                }
                non_empty(trim_trailing(&text[..m.start()]))
            }
            Rule::R14 => {
                let m = self.while_re.find(text)?;
                let tail = &text[m.end()..];
                // the while-clause runs to the next clause boundary;
                // what follows, up to the end of that sentence, is kept
                let b1 = tail.find([',', '.', '!', '?', ';'])?;
                let after = &tail[b1 + 1..];
                let b2 = after.find(['.', '!', '?']).unwrap_or(after.len());
                non_empty(trim_leading(trim_trailing(&after[..b2])))
            }
            Rule::R15 => {
                let m = self.however_re.find(text)?;
                non_empty(trim_leading(&text[m.end()..]))
            }
        }
    }

    /// A clause is negative when any of its tokens is a negative cue or
    /// carries an "n't" contraction.
    fn is_negative(&self, clause: &str) -> bool {
        clause
            .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’'))
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .any(|t| {
                let plain = t.replace(['\'', '’'], "");
                self.negative_cues.contains(&t)
                    || self.negative_cues.contains(&plain)
                    || t.ends_with("n't")
                    || t.ends_with("n’t")
            })
    }

    /// Whitespace tokenization of (normally already normalized) text.
    pub fn tokenize(&self, text: &str) -> Result<TokenizedSentence> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::DegenerateTweet("no tokens".into()));
        }
        Ok(TokenizedSentence { tokens })
    }

    /// How many tweets each rule touches, plus the number of tweets
    /// where at least one rule fired.
    pub fn corpus_rule_stats(&self, tweets: &[RawTweet]) -> RuleStats {
        let mut counts = [0usize; 5];
        let mut total_processed = 0;
        for tweet in tweets {
            let (_, applied) = self.apply_semantic_rules(&tweet.text);
            if !applied.is_empty() {
                total_processed += 1;
            }
            for rule in applied {
                counts[Rule::ALL.iter().position(|r| *r == rule).unwrap()] += 1;
            }
        }
        RuleStats {
            fired: Rule::ALL.iter().copied().zip(counts).collect(),
            total_processed,
        }
    }
}

fn flush_plain(plain: &mut String, pieces: &mut Vec<String>) {
    for part in plain.split_whitespace() {
        pieces.push(part.to_string());
    }
    plain.clear();
}

/// Lowercases into `out`, capping alphabetic runs at two characters and
/// turning punctuation (apart from apostrophes) into token breaks.
fn push_scrubbed(out: &mut String, ch: char) {
    for low in ch.to_lowercase() {
        if low.is_alphanumeric() || low == '\'' || low == '’' {
            if low.is_alphabetic() {
                let mut rev = out.chars().rev();
                if rev.next() == Some(low) && rev.next() == Some(low) {
                    continue;
                }
            }
            out.push(low);
        } else {
            out.push(' ');
        }
    }
}

const EDGE_TRIM: [char; 6] = [',', ';', ':', '-', '–', '—'];

fn trim_leading(s: &str) -> &str {
    s.trim_start_matches(|c: char| c.is_whitespace() || EDGE_TRIM.contains(&c))
}

fn trim_trailing(s: &str) -> &str {
    s.trim_end_matches(|c: char| c.is_whitespace() || EDGE_TRIM.contains(&c))
}

fn non_empty(s: &str) -> Option<String> {
    if s.trim().is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}
