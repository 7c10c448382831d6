//! Substitution parsing and the two sequence encodings.
//!
//! The *standard* encoding appends the raw mutation text after the wild-type
//! sequence, so position digits fall outside the vocabulary. The *enhanced*
//! encoding splices each substitution into the sequence between separator
//! tokens:
//!
//! ```text
//! [CLS] seg0 [SEP] orig1 [SEP] repl1 [SEP] seg1 ... [SEP] origk [SEP] replk [SEP] segk
//! ```

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const UNK: u32 = 3;

/// The twenty proteinogenic amino acids in vocabulary order.
pub const AMINO_ACIDS: [char; 20] = [
    'A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V', 'W',
    'Y',
];

const SPECIALS: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

/// Default maximum encoded length.
pub const DEFAULT_MAX_LEN: usize = 1024;

/// Minimum residues kept on each side of a mutation site when truncating.
pub const MIN_FLANK: usize = 32;

pub fn is_standard(c: char) -> bool {
    AMINO_ACIDS.contains(&c)
}

/// Fixed token vocabulary: four specials followed by the amino acids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(AMINO_ACIDS.iter().map(|c| c.to_string()))
            .collect();
        Vocabulary { tokens }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a single residue character; anything non-standard is `[UNK]`.
    pub fn char_id(&self, c: char) -> u32 {
        AMINO_ACIDS
            .iter()
            .position(|&a| a == c)
            .map_or(UNK, |i| i as u32 + SPECIALS.len() as u32)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Writes one token per line in id order.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    /// Reads a vocabulary file and checks it matches the fixed layout.
    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let tokens = r
            .lines()
            .map(|l| l.map(|s| s.trim_end().to_string()))
            .filter(|l| !matches!(l, Ok(s) if s.is_empty()))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::Format(format!("vocabulary: {e}")))?;
        let expected = Vocabulary::default();
        if tokens != expected.tokens {
            return Err(Error::Format(
                "vocabulary file does not match the built-in token layout".into(),
            ));
        }
        Ok(expected)
    }
}

/// A single amino-acid substitution with a 1-based position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mutation {
    pub original: char,
    pub position: usize,
    pub replacement: char,
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.original, self.position, self.replacement)
    }
}

impl FromStr for Mutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_mutation(s)
    }
}

fn parse_error(text: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        what: "mutation",
        text: text.to_string(),
        reason: reason.into(),
    }
}

/// Parses `LETTER DIGITS LETTER`, e.g. `R10A`.
pub fn parse_mutation(text: &str) -> Result<Mutation> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < 3 {
        return Err(parse_error(text, "expected LETTER DIGITS LETTER"));
    }
    let original = chars[0];
    let replacement = chars[chars.len() - 1];
    let digits: String = chars[1..chars.len() - 1].iter().collect();
    if !original.is_ascii_alphabetic() || !replacement.is_ascii_alphabetic() {
        return Err(parse_error(text, "expected LETTER DIGITS LETTER"));
    }
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(parse_error(text, "position must be decimal digits"));
    }
    let position: usize = digits
        .parse()
        .map_err(|_| parse_error(text, "position out of range"))?;
    if position == 0 {
        return Err(parse_error(text, "positions are 1-based"));
    }
    for c in [original, replacement] {
        if !is_standard(c) {
            return Err(parse_error(text, format!("{c:?} is not a standard amino acid")));
        }
    }
    if original == replacement {
        return Err(parse_error(text, "original and replacement are identical"));
    }
    Ok(Mutation {
        original,
        position,
        replacement,
    })
}

/// Parses a `;`-separated list, sorted by position.
pub fn parse_mutation_list(text: &str) -> Result<Vec<Mutation>> {
    let mut muts = text
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_mutation)
        .collect::<Result<Vec<_>>>()?;
    muts.sort_by_key(|m| m.position);
    if let Some(w) = muts.windows(2).find(|w| w[0].position == w[1].position) {
        return Err(Error::Parse {
            what: "mutation list",
            text: text.to_string(),
            reason: format!("position {} appears more than once", w[0].position),
        });
    }
    Ok(muts)
}

/// Canonical `;`-joined text of a mutation list.
pub fn format_mutation_list(muts: &[Mutation]) -> String {
    muts.iter()
        .map(Mutation::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

pub fn validate_sequence(seq: &str) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::Validation("empty sequence".into()));
    }
    if let Some((i, c)) = seq.chars().enumerate().find(|(_, c)| !is_standard(*c)) {
        return Err(Error::Validation(format!(
            "non-standard residue {c:?} at position {}",
            i + 1
        )));
    }
    Ok(())
}

/// Checks the alphabet of `seq` and that every mutation names the residue
/// actually present at its position.
pub fn validate_against_sequence(seq: &str, muts: &[Mutation]) -> Result<()> {
    validate_sequence(seq)?;
    let residues = seq.as_bytes();
    for m in muts {
        if m.position > residues.len() {
            return Err(Error::Validation(format!(
                "{m}: position {} outside sequence of length {}",
                m.position,
                residues.len()
            )));
        }
        let found = residues[m.position - 1] as char;
        if found != m.original {
            return Err(Error::Validation(format!(
                "{m}: expected {} at position {}, found {found}",
                m.original, m.position
            )));
        }
    }
    Ok(())
}

/// Token ids plus attention mask, padded to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
}

impl TokenSequence {
    fn from_tokens(mut ids: Vec<u32>, max_len: usize) -> Self {
        ids.truncate(max_len);
        let active = ids.len();
        ids.resize(max_len, PAD);
        let mask = (0..max_len).map(|i| u8::from(i < active)).collect();
        TokenSequence { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding tokens.
    pub fn active_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn count(&self, id: u32) -> usize {
        self.active_ids().iter().filter(|&&t| t == id).count()
    }

    pub fn active_ids(&self) -> &[u32] {
        let n = self.mask.iter().rposition(|&m| m == 1).map_or(0, |i| i + 1);
        &self.ids[..n]
    }

    /// Space-separated token strings of the non-padding prefix.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        self.active_ids()
            .iter()
            .map(|&id| vocab.token(id).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    Enhanced,
    Standard,
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderMode::Enhanced => "enhanced",
            EncoderMode::Standard => "standard",
        })
    }
}

impl FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enhanced" => Ok(EncoderMode::Enhanced),
            "standard" => Ok(EncoderMode::Standard),
            other => Err(Error::Config(format!("unknown encoder mode {other:?}"))),
        }
    }
}

/// `[CLS] sequence [SEP] mutation-text`, character-tokenised, tail-truncated.
pub fn encode_standard(
    seq: &str,
    mut_text: &str,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence> {
    validate_sequence(seq)?;
    let mut ids = Vec::with_capacity(seq.len() + mut_text.len() + 2);
    ids.push(CLS);
    ids.extend(seq.chars().map(|c| vocab.char_id(c)));
    ids.push(SEP);
    ids.extend(mut_text.chars().map(|c| vocab.char_id(c)));
    Ok(TokenSequence::from_tokens(ids, max_len))
}

/// 0-based residue indices of each segment between sorted mutation sites,
/// with the mutated residues themselves excluded.
fn segments(len: usize, muts: &[Mutation]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(muts.len() + 1);
    let mut start = 0;
    for m in muts {
        out.push((start..m.position - 1).collect());
        start = m.position;
    }
    out.push((start..len).collect());
    out
}

fn enhanced_layout(
    seq: &[u8],
    muts: &[Mutation],
    segs: &[Vec<usize>],
    vocab: &Vocabulary,
) -> Vec<u32> {
    let mut ids = vec![CLS];
    for (i, seg) in segs.iter().enumerate() {
        ids.extend(seg.iter().map(|&r| vocab.char_id(seq[r] as char)));
        if let Some(m) = muts.get(i) {
            ids.extend([
                SEP,
                vocab.char_id(m.original),
                SEP,
                vocab.char_id(m.replacement),
                SEP,
            ]);
        }
    }
    ids
}

/// Splits the sequence around each substitution and emits
/// `[SEP] orig [SEP] repl [SEP]` at every site.
///
/// When the layout exceeds `max_len`, residues are kept by distance to the
/// nearest mutation site: the largest radius whose residues fit is retained
/// around every site, so the farthest residues go first.
pub fn encode_enhanced(
    seq: &str,
    muts: &[Mutation],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence> {
    validate_against_sequence(seq, muts)?;
    let mut muts = muts.to_vec();
    muts.sort_by_key(|m| m.position);
    if let Some(w) = muts.windows(2).find(|w| w[0].position == w[1].position) {
        return Err(Error::Validation(format!(
            "position {} mutated more than once",
            w[0].position
        )));
    }
    let bytes = seq.as_bytes();
    let mut segs = segments(bytes.len(), &muts);
    let overhead = 1 + 5 * muts.len();
    let residues: usize = segs.iter().map(Vec::len).sum();
    if overhead + residues > max_len && !muts.is_empty() {
        let sites: Vec<usize> = muts.iter().map(|m| m.position - 1).collect();
        let radius = flank_radius(&segs, &sites, max_len.saturating_sub(overhead));
        for seg in &mut segs {
            seg.retain(|&r| site_distance(r, &sites) <= radius);
        }
    }
    Ok(TokenSequence::from_tokens(
        enhanced_layout(bytes, &muts, &segs, vocab),
        max_len,
    ))
}

fn site_distance(residue: usize, sites: &[usize]) -> usize {
    sites.iter().map(|&s| s.abs_diff(residue)).min().unwrap_or(usize::MAX)
}

/// Largest radius whose residue count fits in `budget`.
fn flank_radius(segs: &[Vec<usize>], sites: &[usize], budget: usize) -> usize {
    let mut dist: Vec<usize> = segs
        .iter()
        .flatten()
        .map(|&r| site_distance(r, sites))
        .collect();
    dist.sort_unstable();
    // every residue with distance <= r is kept; find max r with count <= budget
    match dist.get(budget) {
        Some(&d) => d - 1,
        None => usize::MAX,
    }
}
