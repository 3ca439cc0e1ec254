//! Concept-aligned wordlists: the domain types, the TSV reader/writer, and
//! the filtering and cross-validation machinery that operates on them.

mod filter;
mod folds;
mod tsv;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};

pub use filter::{filter_lexicon, FilterPolicy, FilterReport};
pub use folds::{
    family_macroareas, family_weights, make_folds, reassign_families_to_macroareas, FamilyWeight,
    Fold, FoldAssignment, FoldScheme,
};
pub use tsv::{
    normalize_asjp_form, parse_wordlists, serialize_wordlists, Diagnostic, InputFormat,
    ParsedLexicon, TSV_COLUMNS,
};

/// Index into an [`Alphabet`]; the end-of-string symbol is `alphabet.len()`.
pub type Phone = u16;

/// Largest number of phone symbols an alphabet may declare.
pub const MAX_SYMBOLS: usize = 41;

/// The 41 base symbols of the ASJP transcription, in the order used by
/// `data/asjp_alphabet.txt`.
pub const ASJP_SYMBOLS: [&str; 41] = [
    "p", "b", "f", "v", "m", "w", "8", "t", "d", "s", "z", "c", "n", "r", "l", "S", "Z", "C", "j",
    "T", "5", "k", "g", "x", "N", "q", "G", "X", "7", "h", "L", "4", "y", "i", "e", "E", "3", "a",
    "u", "o", "!",
];

/// Ordered phone inventory plus an implicit end-of-string symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, Phone>,
    max_symbol_len: usize,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::data("alphabet declares no symbols"));
        }
        if symbols.len() > MAX_SYMBOLS {
            return Err(Error::data(format!(
                "alphabet declares {} symbols, at most {MAX_SYMBOLS} allowed",
                symbols.len()
            )));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == ',') {
                return Err(Error::data(format!("invalid alphabet symbol {s:?}")));
            }
            if index.insert(s.clone(), i as Phone).is_some() {
                return Err(Error::data(format!("duplicate alphabet symbol {s:?}")));
            }
        }
        let max_symbol_len = symbols.iter().map(|s| s.chars().count()).max().unwrap_or(1);
        Ok(Self {
            symbols,
            index,
            max_symbol_len,
        })
    }

    pub fn asjp() -> Self {
        Self::new(ASJP_SYMBOLS).expect("ASJP inventory is well-formed")
    }

    /// Reads a sidecar file with one symbol per line. Blank lines are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.trim().to_owned()),
        )
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::data(format!("{}: alphabet is not UTF-8", path.display())))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = self.symbols.join("\n");
        out.push('\n');
        out
    }

    /// Number of phone symbols, excluding end-of-string.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Number of output classes of a language model: symbols plus eos.
    pub fn vocab_size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn eos(&self) -> Phone {
        self.symbols.len() as Phone
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Display form of a phone index; eos renders as `<eos>`.
    pub fn symbol(&self, phone: Phone) -> &str {
        self.symbols
            .get(phone as usize)
            .map(String::as_str)
            .unwrap_or("<eos>")
    }

    pub fn lookup(&self, symbol: &str) -> Option<Phone> {
        self.index.get(symbol).copied()
    }

    /// Tokenizes a form by greedy longest match and appends eos. On failure
    /// returns the first substring that matches no symbol.
    pub fn encode(&self, form: &str) -> std::result::Result<Vec<Phone>, String> {
        let chars: Vec<char> = form.chars().collect();
        let mut out = Vec::with_capacity(chars.len() + 1);
        let mut i = 0;
        while i < chars.len() {
            let longest = self.max_symbol_len.min(chars.len() - i);
            let hit = (1..=longest).rev().find_map(|n| {
                let piece: String = chars[i..i + n].iter().collect();
                self.index.get(&piece).map(|&p| (p, n))
            });
            match hit {
                Some((p, n)) => {
                    out.push(p);
                    i += n;
                }
                None => return Err(chars[i].to_string()),
            }
        }
        out.push(self.eos());
        Ok(out)
    }

    /// Inverse of [`Alphabet::encode`]; a trailing eos is dropped.
    pub fn decode(&self, phones: &[Phone]) -> String {
        phones
            .iter()
            .take_while(|&&p| p != self.eos())
            .map(|&p| self.symbol(p))
            .collect()
    }

    /// SHA-256 over the newline-joined symbol list; identifies the alphabet in
    /// checkpoints.
    pub fn hash(&self) -> String {
        crate::rng::sha256_hex(self.symbols.join("\n").as_bytes())
    }
}

/// One of the four cross-validation regions. Declaration order is the
/// tie-break order used when reassigning families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Macroarea {
    Africa,
    Americas,
    Eurasia,
    Pacific,
}

impl Macroarea {
    pub const ALL: [Macroarea; 4] = [
        Macroarea::Africa,
        Macroarea::Americas,
        Macroarea::Eurasia,
        Macroarea::Pacific,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Macroarea::Africa => "Africa",
            Macroarea::Americas => "Americas",
            Macroarea::Eurasia => "Eurasia",
            Macroarea::Pacific => "Pacific",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Macroarea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Macroarea {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Macroarea::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::data(format!("unknown macroarea {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusFlag {
    PidginCreole,
    Constructed,
}

impl StatusFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            StatusFlag::PidginCreole => "pidgin_creole",
            StatusFlag::Constructed => "constructed",
        }
    }
}

impl fmt::Display for StatusFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatusFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pidgin_creole" => Ok(StatusFlag::PidginCreole),
            "constructed" => Ok(StatusFlag::Constructed),
            other => Err(Error::data(format!("unknown status flag {other:?}"))),
        }
    }
}

/// A single (concept, form) observation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordEntry {
    pub concept_id: usize,
    /// Phone indices, terminated by exactly one eos.
    pub phones: Vec<Phone>,
    pub loan: bool,
}

impl WordEntry {
    /// Number of next-phone predictions a language model makes on this word,
    /// eos included.
    pub fn phone_count(&self) -> usize {
        self.phones.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Doculect {
    pub doculect_id: String,
    pub iso_code: Option<String>,
    pub family: String,
    pub macroarea: Macroarea,
    pub latitude: f64,
    pub longitude: f64,
    pub status_flags: BTreeSet<StatusFlag>,
    pub entries: Vec<WordEntry>,
}

impl Doculect {
    /// Language-level grouping key: the ISO code when present, otherwise the
    /// doculect id.
    pub fn language(&self) -> &str {
        self.iso_code.as_deref().unwrap_or(&self.doculect_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub alphabet: Alphabet,
    pub concepts: Vec<String>,
    pub doculects: Vec<Doculect>,
}

impl Lexicon {
    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn word_count(&self) -> usize {
        self.doculects.iter().map(|d| d.entries.len()).sum()
    }

    pub fn doculect(&self, id: &str) -> Option<&Doculect> {
        self.doculects.iter().find(|d| d.doculect_id == id)
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == name)
    }

    /// Checks the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::data("lexicon has no concepts"));
        }
        let eos = self.alphabet.eos();
        let mut ids = BTreeSet::new();
        for d in &self.doculects {
            if !ids.insert(d.doculect_id.as_str()) {
                return Err(Error::data(format!("duplicate doculect {}", d.doculect_id)));
            }
            let mut seen = BTreeSet::new();
            for e in &d.entries {
                if e.concept_id >= self.concepts.len() {
                    return Err(Error::data(format!(
                        "{}: concept id {} out of range",
                        d.doculect_id, e.concept_id
                    )));
                }
                if !seen.insert(e.concept_id) {
                    return Err(Error::data(format!(
                        "{}: concept {} listed twice",
                        d.doculect_id, self.concepts[e.concept_id]
                    )));
                }
                let n = e.phones.len();
                if n < 2
                    || e.phones[n - 1] != eos
                    || e.phones[..n - 1].iter().any(|&p| p >= eos)
                {
                    return Err(Error::data(format!(
                        "{}: malformed phone sequence for concept {}",
                        d.doculect_id, self.concepts[e.concept_id]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Content hash of the normalized TSV rendering.
    pub fn content_hash(&self) -> String {
        crate::rng::sha256_hex(serialize_wordlists(self).as_bytes())
    }
}
