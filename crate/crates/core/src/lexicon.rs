//! Clinical keyword lexicons.
//!
//! Three built-in sets ship with the crate: diagnostic terms (biomarkers and
//! disease concepts), quantitative terms (severity and extent), and their
//! union. User lexicons are loaded from a small sectioned text format:
//!
//! ```text
//! # comment
//! [diagnostic]
//! drusen
//! subretinal fluid
//! [quantitative]
//! several
//! ```

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use thiserror::Error;

/// Diagnostic keywords, in reference order.
pub const DIAGNOSTIC_WORDS: [&str; 22] = [
    "healthy",
    "normal",
    "early",
    "intermediate",
    "late",
    "wet",
    "dry",
    "active",
    "inactive",
    "hyperreflective",
    "hyporeflective",
    "drusen",
    "drusenoid",
    "elevation",
    "irregularity",
    "intraretinal",
    "subretinal",
    "fluid",
    "atrophy",
    "atrophic",
    "transmission",
    "hypertransmission",
];

/// Quantitative keywords, in reference order.
pub const QUANTITATIVE_WORDS: [&str; 34] = [
    "yes",
    "no",
    "small",
    "large",
    "thin",
    "thick",
    "increase",
    "increased",
    "decrease",
    "decreased",
    "one",
    "two",
    "some",
    "several",
    "multiple",
    "many",
    "minimal",
    "slightly",
    "medium",
    "moderate",
    "moderately",
    "advanced",
    "extensive",
    "very",
    "significant",
    "thickened",
    "thickening",
    "smaller",
    "larger",
    "largest",
    "thinned",
    "thinning",
    "slight",
    "significantly",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Diagnostic,
    Quantitative,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Diagnostic => "diagnostic",
            Category::Quantitative => "quantitative",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifier of a built-in keyword set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinSet {
    Diagnostic,
    Quantitative,
    Combined,
}

impl BuiltinSet {
    pub const ALL: [BuiltinSet; 3] = [BuiltinSet::Diagnostic, BuiltinSet::Quantitative, BuiltinSet::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinSet::Diagnostic => "diagnostic",
            BuiltinSet::Quantitative => "quantitative",
            BuiltinSet::Combined => "combined",
        }
    }
}

impl fmt::Display for BuiltinSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuiltinSet {
    type Err = LexiconError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diagnostic" => Ok(BuiltinSet::Diagnostic),
            "quantitative" => Ok(BuiltinSet::Quantitative),
            "combined" => Ok(BuiltinSet::Combined),
            _ => Err(LexiconError::UnknownSet(s.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("unknown keyword set `{0}` (valid: diagnostic, quantitative, combined)")]
    UnknownSet(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: invalid keyword `{surface}`: {reason}")]
    InvalidKeyword {
        line: usize,
        surface: String,
        reason: &'static str,
    },
    #[error("lexicon contains no keywords")]
    Empty,
}

/// A single lowercase keyword or phrase.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Keyword {
    surface: String,
    category: Category,
}

impl Keyword {
    /// Folds case and trims, then validates. Phrases must use single
    /// internal spaces.
    pub fn new(surface: &str, category: Category) -> Result<Self, &'static str> {
        let surface = surface.trim().to_lowercase();
        validate_surface(&surface)?;
        Ok(Keyword { surface, category })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn is_phrase(&self) -> bool {
        self.surface.contains(' ')
    }
}

fn validate_surface(surface: &str) -> Result<(), &'static str> {
    if surface.is_empty() {
        return Err("empty keyword");
    }
    if surface.starts_with(' ') || surface.ends_with(' ') {
        return Err("surrounding whitespace");
    }
    if surface.contains("  ") {
        return Err("phrases must use single internal spaces");
    }
    for c in surface.chars() {
        if c == ' ' || c == '-' || c.is_alphanumeric() {
            if c.is_uppercase() {
                return Err("keyword must be lowercase");
            }
        } else {
            return Err("only letters, digits, hyphens and single spaces are allowed");
        }
    }
    Ok(())
}

/// A named, immutable set of keywords unique by surface. Iteration follows
/// insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordSet {
    name: String,
    entries: IndexMap<String, Category>,
}

impl KeywordSet {
    pub fn empty(name: impl Into<String>) -> Self {
        KeywordSet {
            name: name.into(),
            entries: IndexMap::new(),
        }
    }

    /// Builds a set from keywords, keeping the first occurrence of each surface.
    pub fn from_keywords(name: impl Into<String>, keywords: impl IntoIterator<Item = Keyword>) -> Self {
        let mut set = KeywordSet::empty(name);
        for kw in keywords {
            set.entries.entry(kw.surface).or_insert(kw.category);
        }
        set
    }

    /// Convenience constructor for word lists of one category.
    pub fn from_words<'a>(
        name: impl Into<String>,
        category: Category,
        words: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, LexiconError> {
        let mut kws = Vec::new();
        for (i, w) in words.into_iter().enumerate() {
            let kw = Keyword::new(w, category).map_err(|reason| LexiconError::InvalidKeyword {
                line: i + 1,
                surface: w.to_string(),
                reason,
            })?;
            kws.push(kw);
        }
        Ok(KeywordSet::from_keywords(name, kws))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.entries.contains_key(surface)
    }

    pub fn category_of(&self, surface: &str) -> Option<Category> {
        self.entries.get(surface).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = Keyword> + '_ {
        self.entries.iter().map(|(s, &c)| Keyword {
            surface: s.clone(),
            category: c,
        })
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.keys().map(String::as_str)
    }

    /// Set union by surface. Categories come from the first set that holds
    /// the surface.
    pub fn merge(&self, other: &KeywordSet) -> KeywordSet {
        let mut entries = self.entries.clone();
        for (s, &c) in &other.entries {
            entries.entry(s.clone()).or_insert(c);
        }
        let name = if other.is_empty() || self.name == other.name {
            self.name.clone()
        } else {
            format!("{}+{}", self.name, other.name)
        };
        KeywordSet { name, entries }
    }

    /// Checks every entry against the keyword invariants.
    pub fn validate(&self) -> Result<(), LexiconError> {
        for (i, s) in self.entries.keys().enumerate() {
            validate_surface(s).map_err(|reason| LexiconError::InvalidKeyword {
                line: i + 1,
                surface: s.clone(),
                reason,
            })?;
        }
        Ok(())
    }
}

pub fn merge(a: &KeywordSet, b: &KeywordSet) -> KeywordSet {
    a.merge(b)
}

pub fn builtin(set: BuiltinSet) -> KeywordSet {
    let diag = || {
        KeywordSet::from_words("diagnostic", Category::Diagnostic, DIAGNOSTIC_WORDS)
            .expect("built-in diagnostic words are valid")
    };
    let quant = || {
        KeywordSet::from_words("quantitative", Category::Quantitative, QUANTITATIVE_WORDS)
            .expect("built-in quantitative words are valid")
    };
    match set {
        BuiltinSet::Diagnostic => diag(),
        BuiltinSet::Quantitative => quant(),
        BuiltinSet::Combined => {
            let mut c = diag().merge(&quant());
            c.name = "combined".to_string();
            c
        }
    }
}

/// Looks up a built-in set by name.
pub fn builtin_set(name: &str) -> Result<KeywordSet, LexiconError> {
    Ok(builtin(name.parse()?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconWarning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LexiconWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct LoadedLexicon {
    pub set: KeywordSet,
    pub warnings: Vec<LexiconWarning>,
}

/// Parses the sectioned lexicon format. Duplicate surfaces are collapsed
/// (first wins) and reported as warnings.
pub fn load_lexicon(name: &str, source: &str) -> Result<LoadedLexicon, LexiconError> {
    let mut section: Option<Category> = None;
    let mut entries: IndexMap<String, (Category, usize)> = IndexMap::new();
    let mut warnings = Vec::new();

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            let header = content
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| LexiconError::Malformed {
                    line,
                    reason: format!("unterminated section header `{content}`"),
                })?;
            section = Some(match header.trim().to_lowercase().as_str() {
                "diagnostic" => Category::Diagnostic,
                "quantitative" => Category::Quantitative,
                other => {
                    return Err(LexiconError::Malformed {
                        line,
                        reason: format!("unknown section `[{other}]`"),
                    })
                }
            });
            continue;
        }
        let category = section.ok_or_else(|| LexiconError::Malformed {
            line,
            reason: "keyword before any section header".to_string(),
        })?;
        let kw = Keyword::new(content, category).map_err(|reason| LexiconError::InvalidKeyword {
            line,
            surface: content.to_string(),
            reason,
        })?;
        match entries.get(&kw.surface) {
            Some(&(first_cat, first_line)) => warnings.push(LexiconWarning {
                line,
                message: if first_cat == category {
                    format!("duplicate keyword `{}` (first on line {first_line})", kw.surface)
                } else {
                    format!(
                        "keyword `{}` already listed as {first_cat} on line {first_line}; keeping that",
                        kw.surface
                    )
                },
            }),
            None => {
                entries.insert(kw.surface, (category, line));
            }
        }
    }

    if entries.is_empty() {
        return Err(LexiconError::Empty);
    }
    Ok(LoadedLexicon {
        set: KeywordSet {
            name: name.to_string(),
            entries: entries.into_iter().map(|(s, (c, _))| (s, c)).collect(),
        },
        warnings,
    })
}

/// Renders a set in the lexicon file format, one section per category.
pub fn to_lexicon_text(set: &KeywordSet) -> String {
    let mut out = String::new();
    for cat in [Category::Diagnostic, Category::Quantitative] {
        let words: Vec<&str> = set
            .entries
            .iter()
            .filter(|(_, &c)| c == cat)
            .map(|(s, _)| s.as_str())
            .collect();
        if words.is_empty() {
            continue;
        }
        out.push_str(&format!("[{cat}]\n"));
        for w in words {
            out.push_str(w);
            out.push('\n');
        }
    }
    out
}
