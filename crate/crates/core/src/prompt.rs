//! Prompt weighting: key identifiers and parenthesized strength modifiers.
//!
//! Grammar, after whitespace tokenization:
//!
//! * a bare word is a token with weight 1;
//! * `( ... )` is a phrase; its words become literal tokens;
//! * a phrase whose only content is a numeric literal, e.g. `(1.2)`, is a
//!   modifier: it multiplies the weight of the immediately preceding word
//!   or phrase and emits nothing itself;
//! * the `**` marker is decoration and is removed before tokenizing.
//!
//! ```text
//! a photo of watermelon showing nbd anthracnose** (1.2) (Colletotrichum orbiculare) disease
//! ```
//!
//! yields `anthracnose` at weight 1.2, `Colletotrichum` and `orbiculare` at
//! weight 1, and flags `nbd` when the registry knows it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::rng;

/// Tokens beyond this position do not contribute to the conditioning.
pub const MAX_SEQUENCE_LENGTH: usize = 100;
pub const MAX_WEIGHT: f64 = 10.0;
const DECORATION: &str = "**";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptToken {
    pub text: String,
    pub weight: f64,
    pub is_identifier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptAst {
    raw: String,
    tokens: Vec<PromptToken>,
}

impl PromptAst {
    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[PromptToken] {
        &self.tokens
    }

    pub fn token(&self, text: &str) -> Option<&PromptToken> {
        self.tokens.iter().find(|t| t.text == text)
    }

    pub fn identifiers(&self) -> impl Iterator<Item = &PromptToken> {
        self.tokens.iter().filter(|t| t.is_identifier)
    }

    /// Renders the tokens back to prompt text: weighted tokens are written
    /// as `text (w)` with the shortest round-tripping decimal for `w`.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&tok.text);
            if tok.weight != 1.0 {
                out.push_str(&format!(" ({})", tok.weight));
            }
        }
        out
    }

    /// Sets one token's weight, keeping the ceiling invariant.
    pub fn set_weight(&mut self, index: usize, weight: f64) -> Result<()> {
        check_weight(weight, &format!("{weight}"), 0)?;
        self.tokens[index].weight = weight;
        Ok(())
    }
}

/// Maps identifier tokens (e.g. `nbd`) to the class they stand for.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdentifierRegistry {
    entries: BTreeMap<String, String>,
}

impl IdentifierRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, identifier: &str, class_label: &str) -> Result<()> {
        let valid = !identifier.is_empty() && identifier.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit());
        if !valid {
            return Err(Error::InvalidIdentifier(identifier.to_string()));
        }
        if self.entries.contains_key(identifier) {
            return Err(Error::DuplicateIdentifier(identifier.to_string()));
        }
        self.entries.insert(identifier.to_string(), class_label.to_string());
        Ok(())
    }

    pub fn class_of(&self, identifier: &str) -> Option<&str> {
        self.entries.get(identifier).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses `identifier=class` lines; blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut reg = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::MalformedRegistryLine {
                    line: i + 1,
                    text: line.to_string(),
                });
            };
            reg.insert(key.trim(), value.trim())?;
        }
        Ok(reg)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Lexeme<'a> {
    Open(usize),
    Close(usize),
    Word(&'a str, usize),
}

fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        let boundary = ch.is_whitespace() || ch == '(' || ch == ')';
        if boundary {
            if let Some(s) = start.take() {
                out.push(Lexeme::Word(&text[s..i], s));
            }
            match ch {
                '(' => out.push(Lexeme::Open(i)),
                ')' => out.push(Lexeme::Close(i)),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Lexeme::Word(&text[s..], s));
    }
    out
}

/// `[+-]digits[.digits][e[+-]digits]`, with at least one mantissa digit.
fn is_numeric_literal(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let mut digits = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
        digits += 1;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
            digits += 1;
        }
    }
    if digits == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == b.len()
}

fn check_weight(w: f64, text: &str, position: usize) -> Result<()> {
    let reason = if !(w > 0.0) {
        "weight must be positive"
    } else if w > MAX_WEIGHT {
        "weight exceeds the ceiling of 10"
    } else {
        return Ok(());
    };
    Err(Error::MalformedWeight {
        text: text.to_string(),
        position,
        reason,
    })
}

struct Parser<'a, 'r> {
    lexemes: Vec<Lexeme<'a>>,
    pos: usize,
    registry: &'r IdentifierRegistry,
    tokens: Vec<PromptToken>,
}

impl<'a> Parser<'a, '_> {
    /// Parses items until a closing parenthesis (when `nested`) or the end.
    fn sequence(&mut self, nested: Option<usize>) -> Result<()> {
        let mut target: Option<Range<usize>> = None;
        while self.pos < self.lexemes.len() {
            match self.lexemes[self.pos].clone() {
                Lexeme::Word(text, _) => {
                    self.pos += 1;
                    let start = self.tokens.len();
                    self.tokens.push(PromptToken {
                        text: text.to_string(),
                        weight: 1.0,
                        is_identifier: self.registry.contains(text),
                    });
                    target = Some(start..start + 1);
                }
                Lexeme::Close(at) => {
                    if nested.is_none() {
                        return Err(Error::UnbalancedParentheses { position: at });
                    }
                    self.pos += 1;
                    return Ok(());
                }
                Lexeme::Open(at) => {
                    if let Some((text, pos)) = self.modifier() {
                        let w: f64 = text.parse().map_err(|_| Error::MalformedWeight {
                            text: text.to_string(),
                            position: pos,
                            reason: "unparseable number",
                        })?;
                        let Some(range) = target.clone().filter(|r| !r.is_empty()) else {
                            return Err(Error::MalformedWeight {
                                text: text.to_string(),
                                position: pos,
                                reason: "modifier has no preceding word or phrase",
                            });
                        };
                        check_weight(w, text, pos)?;
                        for tok in &mut self.tokens[range] {
                            let combined = tok.weight * w;
                            check_weight(combined, text, pos)?;
                            tok.weight = combined;
                        }
                        self.pos += 3;
                    } else {
                        self.pos += 1;
                        let start = self.tokens.len();
                        self.sequence(Some(at))?;
                        target = Some(start..self.tokens.len());
                    }
                }
            }
        }
        match nested {
            Some(at) => Err(Error::UnbalancedParentheses { position: at }),
            None => Ok(()),
        }
    }

    /// `( number )` starting at the current position.
    fn modifier(&self) -> Option<(&'a str, usize)> {
        match self.lexemes.get(self.pos..self.pos + 3)? {
            [Lexeme::Open(_), Lexeme::Word(text, pos), Lexeme::Close(_)] if is_numeric_literal(text) => Some((*text, *pos)),
            _ => None,
        }
    }
}

/// Parses a prompt into weighted tokens.
pub fn parse_prompt(raw: &str, registry: &IdentifierRegistry) -> Result<PromptAst> {
    if raw.trim().is_empty() {
        return Err(Error::EmptyPrompt);
    }
    // Replace rather than delete so byte positions in errors stay valid.
    let cleaned = raw.replace(DECORATION, "  ");
    let mut parser = Parser {
        lexemes: lex(&cleaned),
        pos: 0,
        registry,
        tokens: Vec::new(),
    };
    parser.sequence(None)?;
    Ok(PromptAst {
        raw: raw.to_string(),
        tokens: parser.tokens,
    })
}

/// Deterministic unit vector for one token text.
pub fn token_embedding(text: &str, vocab_seed: u64, dim: usize) -> Vec<f64> {
    let mut r = rng::seeded_pair(rng::fnv1a(text.as_bytes()), vocab_seed);
    loop {
        let mut v = rng::normal_vec(&mut r, dim, 1.0);
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// Weighted sum of token embeddings over the first
/// [`MAX_SEQUENCE_LENGTH`] tokens; empty prompts embed to zero.
pub fn embed_prompt(ast: &PromptAst, vocab_seed: u64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for tok in ast.tokens.iter().take(MAX_SEQUENCE_LENGTH) {
        let e = token_embedding(&tok.text, vocab_seed, dim);
        for (o, v) in out.iter_mut().zip(e) {
            *o += tok.weight * v;
        }
    }
    out
}
