//! Token registry and greedy longest-match encoding.
//!
//! The base vocabulary is character level: digits, `.`, `-`, every ASCII
//! letter and whatever punctuation the data uses. With compression enabled,
//! every column name and every categorical value is registered as one extra
//! token, so those strings encode to a single id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::table::{ColumnKind, DataTable};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
/// `", "` between serialized `name value` pairs.
pub const SEP: TokenId = 3;
pub const SPACE: TokenId = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", ", ", " "];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("cannot encode {ch:?} at byte {offset}")]
    Unencodable { offset: usize, ch: char },
    #[error("{location}: character {ch:?} is outside printable ASCII")]
    NonAscii { location: String, ch: char },
    #[error("token id {0} is out of range")]
    OutOfRange(TokenId),
    #[error("tables and schemas disagree: {0}")]
    Mismatch(String),
    #[error("registry is not an extension of the base: id {id} maps to {found:?}, expected {expected:?}")]
    NotAnExtension { id: TokenId, expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRegistry {
    id_to_string: Vec<String>,
    string_to_id: HashMap<String, TokenId>,
    compression: bool,
    names: BTreeSet<String>,
    /// Column name → registered categorical values of that column.
    categories: BTreeMap<String, BTreeSet<String>>,
    max_token_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSequence { ids }
    }
}

impl TokenRegistry {
    /// A registry holding only the special tokens.
    pub fn empty() -> Self {
        let mut r = TokenRegistry {
            id_to_string: Vec::new(),
            string_to_id: HashMap::new(),
            compression: false,
            names: BTreeSet::new(),
            categories: BTreeMap::new(),
            max_token_len: 0,
        };
        for s in SPECIALS {
            r.push(s);
        }
        r
    }

    /// Builds (or extends `base`) from the given tables. Entries are appended
    /// in a fixed order: new base characters sorted, then column names in
    /// schema order, then each column's categories sorted.
    pub fn build(
        tables: &[&DataTable],
        compression: bool,
        base: Option<&TokenRegistry>,
    ) -> Result<Self, TokenizerError> {
        let mut reg = base.cloned().unwrap_or_else(TokenRegistry::empty);
        reg.compression = compression;

        let mut chars: BTreeSet<char> = ('0'..='9').chain(['.', '-']).collect();
        chars.extend(('a'..='z').chain('A'..='Z'));
        // Letters of the " is " connector are already covered above.
        for table in tables {
            let schema = table.schema();
            for col in schema.columns() {
                collect_chars(&col.name, &format!("column name {:?}", col.name), &mut chars)?;
            }
            for (r, row) in table.rows().iter().enumerate() {
                if row.len() != schema.len() {
                    return Err(TokenizerError::Mismatch(format!("row {r} has {} cells", row.len())));
                }
                for (c, cell) in row.iter().enumerate() {
                    let loc = format!("row {r}, column {:?}", schema.column(c).name);
                    collect_chars(cell.text(), &loc, &mut chars)?;
                }
            }
        }
        chars.remove(&' ');
        for ch in chars {
            reg.push(ch.encode_utf8(&mut [0; 4]));
        }

        if compression {
            for table in tables {
                for col in table.schema().columns() {
                    reg.push(&col.name);
                    reg.names.insert(col.name.clone());
                }
            }
            for table in tables {
                let schema = table.schema();
                for (c, col) in schema.columns().iter().enumerate() {
                    if col.kind != ColumnKind::Categorical {
                        continue;
                    }
                    let values: BTreeSet<&str> = table.column_texts(c).filter(|t| !t.is_empty()).collect();
                    for v in values {
                        reg.push(v);
                        reg.categories.entry(col.name.clone()).or_default().insert(v.to_owned());
                    }
                }
            }
        }
        Ok(reg)
    }

    fn push(&mut self, s: &str) -> TokenId {
        if let Some(&id) = self.string_to_id.get(s) {
            return id;
        }
        let id = self.id_to_string.len() as TokenId;
        self.id_to_string.push(s.to_owned());
        self.string_to_id.insert(s.to_owned(), id);
        self.max_token_len = self.max_token_len.max(s.len());
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_string.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_string.is_empty()
    }

    pub fn compression(&self) -> bool {
        self.compression
    }

    pub fn id(&self, s: &str) -> Option<TokenId> {
        self.string_to_id.get(s).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_string.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_string
    }

    pub fn registered_names(&self) -> &BTreeSet<String> {
        &self.names
    }

    /// Registered categorical values of `column`, if compression recorded any.
    pub fn categories(&self, column: &str) -> Option<&BTreeSet<String>> {
        self.categories.get(column)
    }

    pub fn all_categories(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.categories
    }

    /// True when every (id, string) pair of `base` is present unchanged here.
    pub fn check_extends(&self, base: &TokenRegistry) -> Result<(), TokenizerError> {
        for (id, s) in base.id_to_string.iter().enumerate() {
            match self.id_to_string.get(id) {
                Some(t) if t == s => {}
                found => {
                    return Err(TokenizerError::NotAnExtension {
                        id: id as TokenId,
                        expected: s.clone(),
                        found: found.cloned().unwrap_or_default(),
                    })
                }
            }
        }
        Ok(())
    }

    /// Greedy longest match, left to right. PAD/BOS/EOS never match text.
    pub fn encode_text(&self, text: &str) -> Result<TokenSequence, TokenizerError> {
        let mut ids = Vec::with_capacity(text.len());
        self.encode_into(text, &mut ids)?;
        Ok(TokenSequence { ids })
    }

    pub fn encode_into(&self, text: &str, out: &mut Vec<TokenId>) -> Result<(), TokenizerError> {
        let bytes = text.as_bytes();
        let mut pos = 0;
        while pos < bytes.len() {
            let longest = self.max_token_len.min(bytes.len() - pos);
            let found = (1..=longest).rev().find_map(|len| {
                let end = pos + len;
                if !text.is_char_boundary(end) {
                    return None;
                }
                self.string_to_id.get(&text[pos..end]).filter(|&&id| id > EOS).map(|&id| (id, len))
            });
            match found {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => {
                    let ch = text[pos..].chars().next().expect("pos is on a char boundary");
                    return Err(TokenizerError::Unencodable { offset: pos, ch });
                }
            }
        }
        Ok(())
    }

    /// Concatenates token strings, dropping PAD, BOS and EOS.
    pub fn decode_tokens(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut out = String::with_capacity(ids.len() * 2);
        for &id in ids {
            let s = self.token(id).ok_or(TokenizerError::OutOfRange(id))?;
            if id > EOS {
                out.push_str(s);
            }
        }
        Ok(out)
    }

    /// One `id<TAB>escaped-string` line per token.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, s) in self.id_to_string.iter().enumerate() {
            let _ = writeln!(out, "{id}\t{}", s.escape_default());
        }
        out
    }

    pub(crate) fn from_parts(
        tokens: Vec<String>,
        compression: bool,
        names: BTreeSet<String>,
        categories: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self, String> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err("registry does not start with the fixed special tokens".into());
        }
        let mut string_to_id = HashMap::with_capacity(tokens.len());
        for (id, s) in tokens.iter().enumerate() {
            if s.is_empty() || string_to_id.insert(s.clone(), id as TokenId).is_some() {
                return Err(format!("registry entry {id} is empty or duplicated"));
            }
        }
        let max_token_len = tokens.iter().map(String::len).max().unwrap_or(0);
        Ok(TokenRegistry { id_to_string: tokens, string_to_id, compression, names, categories, max_token_len })
    }

    pub fn is_single_token(&self, s: &str) -> bool {
        self.id(s).is_some_and(|id| id > EOS)
    }
}

fn collect_chars(text: &str, location: &str, into: &mut BTreeSet<char>) -> Result<(), TokenizerError> {
    for ch in text.chars() {
        if !(' '..='~').contains(&ch) {
            return Err(TokenizerError::NonAscii { location: location.to_owned(), ch });
        }
        into.insert(ch);
    }
    Ok(())
}

/// Convenience: builds a registry for a single schema/table pair.
pub fn build_registry(table: &DataTable, compression: bool) -> Result<TokenRegistry, TokenizerError> {
    TokenRegistry::build(&[table], compression, None)
}
