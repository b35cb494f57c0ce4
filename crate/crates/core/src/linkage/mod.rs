//! Record linkage: multi-token phonetic encoding, keyed deterministic
//! pseudonymization (PIK generation), and blocking-based candidate matching.
//!
//! The secret key enters through [`LinkSecret`], supplied by the operator via
//! the `NCDW_LINK_KEY` environment variable or a key file. It is never
//! serialized, logged, or echoed back; `Debug` output is redacted.

mod soundex;

pub use soundex::{soundex_encode, SoundexCode};

use crate::error::{Error, Result};
use crate::model::Gender;
use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Environment variable holding the hex-encoded linkage secret.
pub const LINK_KEY_ENV: &str = "NCDW_LINK_KEY";

const MIN_SECRET_BYTES: usize = 16;

/// Secret key material for pseudonymization. At least 16 bytes.
#[derive(Clone)]
pub struct LinkSecret {
    bytes: Vec<u8>,
}

impl LinkSecret {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MIN_SECRET_BYTES {
            return Err(Error::Key(format!(
                "secret must be at least {MIN_SECRET_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(LinkSecret { bytes: bytes.to_vec() })
    }

    /// Parses a hex-encoded secret (whitespace tolerated at the ends).
    pub fn from_hex(hex_str: &str) -> Result<Self> {
        let decoded = hex::decode(hex_str.trim())
            .map_err(|e| Error::Key(format!("secret is not valid hex: {e}")))?;
        Self::from_bytes(&decoded)
    }

    /// Reads a hex-encoded secret from a key file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        Self::from_hex(&content)
    }

    /// Reads the secret from [`LINK_KEY_ENV`].
    pub fn from_env() -> Result<Self> {
        match std::env::var(LINK_KEY_ENV) {
            Ok(v) => Self::from_hex(&v),
            Err(_) => Err(Error::Key(format!("{LINK_KEY_ENV} is not set"))),
        }
    }
}

impl fmt::Debug for LinkSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LinkSecret(<{} bytes redacted>)", self.bytes.len())
    }
}

/// Pseudonymous patient identifier: 32 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pik(String);

impl Pik {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Accepts a previously issued token (32 lowercase hex chars).
    pub fn parse(s: &str) -> Result<Self> {
        let ok = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !ok {
            return Err(Error::Validation(format!(
                "pik must be 32 lowercase hex chars, got {s:?}"
            )));
        }
        Ok(Pik(s.to_string()))
    }
}

impl fmt::Display for Pik {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Blocking key for one patient record: per-token phonetic codes plus the
/// coarse demographic attributes used to separate unrelated people.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkKey {
    /// Phonetic code per name token, in original token order.
    pub token_codes: Vec<SoundexCode>,
    /// Decade age band, clamped to [0, 12].
    pub age_band: u8,
    pub gender: Gender,
    /// Optional normalized geography key; `None` when the source supplies
    /// none or when geography should not influence identity.
    pub geo: Option<String>,
}

impl LinkKey {
    pub fn new(token_codes: Vec<SoundexCode>, age_band: u8, gender: Gender) -> Self {
        LinkKey { token_codes, age_band: age_band.min(12), gender, geo: None }
    }

    /// Order-insensitive form of the token codes, used for blocking and for
    /// the PIK canonicalization.
    fn sorted_codes(&self) -> Vec<SoundexCode> {
        let mut codes = self.token_codes.clone();
        codes.sort();
        codes
    }

    fn block_key(&self) -> String {
        self.sorted_codes()
            .iter()
            .map(|c| c.as_str().to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Encodes every whitespace-separated token of a full name, dropping tokens
/// with no encodable letters; fails only when nothing survives.
pub fn encode_full_name(full_name: &str) -> Result<Vec<SoundexCode>> {
    let codes: Vec<SoundexCode> = full_name
        .split_whitespace()
        .filter_map(|tok| soundex_encode(tok).ok())
        .collect();
    if codes.is_empty() {
        return Err(Error::InvalidName(format!(
            "no encodable token in name {full_name:?}"
        )));
    }
    Ok(codes)
}

/// Derives the deterministic pseudonymous identifier for a patient.
///
/// The canonical serialization covers the sorted phonetic code multiset, the
/// age band, the gender, and the raw date-of-birth-or-age text; geography is
/// excluded so a patient keeps one identity across facilities. The digest is
/// HMAC-SHA256 truncated to 128 bits, hex-encoded.
pub fn make_pik(link_key: &LinkKey, dob_or_age: &str, secret: &LinkSecret) -> Pik {
    let canonical = format!(
        "ncdw-pik-v1|codes={}|band={}|gender={}|aux={}",
        link_key.block_key(),
        link_key.age_band,
        link_key.gender,
        dob_or_age.trim()
    );
    let mut mac = Hmac::<Sha256>::new_from_slice(&secret.bytes)
        .expect("hmac accepts any key length");
    mac.update(canonical.as_bytes());
    let digest = mac.finalize().into_bytes();
    Pik(hex::encode(&digest[..16]))
}

/// How closely a candidate agrees with the query key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MatchGrade {
    /// Same code multiset, same age band, same gender, same geography.
    Exact,
    /// Same code multiset but the age band is off by one, the gender is only
    /// compatible, or the geography differs.
    Near,
}

impl fmt::Display for MatchGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchGrade::Exact => "exact",
            MatchGrade::Near => "near",
        })
    }
}

/// In-memory linkage index: single-writer batch inserts, read queries between
/// batches. Entries are blocked on the sorted phonetic code multiset.
#[derive(Debug, Default)]
pub struct LinkageIndex {
    blocks: BTreeMap<String, Vec<(LinkKey, Pik)>>,
}

impl LinkageIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: LinkKey, pik: Pik) {
        self.blocks.entry(key.block_key()).or_default().push((key, pik));
    }

    pub fn len(&self) -> usize {
        self.blocks.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Returns candidates sharing the query's full code multiset whose gender
    /// is identical or unknown on either side and whose age band is within
    /// one. Each PIK appears once, with its best grade, exact matches first.
    pub fn match_records(&self, query: &LinkKey) -> Vec<(Pik, MatchGrade)> {
        let Some(entries) = self.blocks.get(&query.block_key()) else {
            return Vec::new();
        };
        let mut best: BTreeMap<Pik, MatchGrade> = BTreeMap::new();
        for (candidate, pik) in entries {
            let band_diff = candidate.age_band.abs_diff(query.age_band);
            if band_diff > 1 {
                continue;
            }
            let gender_compatible = candidate.gender == query.gender
                || candidate.gender == Gender::Unknown
                || query.gender == Gender::Unknown;
            if !gender_compatible {
                continue;
            }
            let gender_equal = candidate.gender == query.gender;
            let geo_equal = match (&candidate.geo, &query.geo) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            };
            let grade = if band_diff == 0 && gender_equal && geo_equal {
                MatchGrade::Exact
            } else {
                MatchGrade::Near
            };
            best.entry(pik.clone())
                .and_modify(|g| *g = (*g).min(grade))
                .or_insert(grade);
        }
        let mut out: Vec<(Pik, MatchGrade)> = best.into_iter().collect();
        out.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gender;

    fn secret(n: u8) -> LinkSecret {
        LinkSecret::from_bytes(&[n; 16]).unwrap()
    }

    fn key_for(name: &str, band: u8, gender: Gender) -> LinkKey {
        LinkKey::new(encode_full_name(name).unwrap(), band, gender)
    }

    #[test]
    fn full_name_token_codes() {
        let codes = encode_full_name("Sobuj Chowdhury").unwrap();
        let strs: Vec<_> = codes.iter().map(|c| c.to_string()).collect();
        assert_eq!(strs, ["S120", "C360"]);
    }

    #[test]
    fn spelling_variants_share_codes() {
        assert_eq!(
            encode_full_name("Sobuj Chowdhury").unwrap(),
            encode_full_name("Sabuj Chaudhury").unwrap()
        );
    }

    #[test]
    fn unencodable_tokens_dropped_empty_name_fails() {
        let codes = encode_full_name("Md. 2nd Karim").unwrap();
        assert!(codes.len() >= 2);
        assert!(matches!(encode_full_name("   "), Err(Error::InvalidName(_))));
        assert!(matches!(encode_full_name("123 456"), Err(Error::InvalidName(_))));
    }

    #[test]
    fn pik_reference_vector() {
        // HMAC-SHA256, key 000102...0e0f, canonical string
        // "ncdw-pik-v1|codes=C360,S120|band=2|gender=male|aux=23",
        // first 16 digest bytes.
        let s = LinkSecret::from_hex("000102030405060708090a0b0c0d0e0f").unwrap();
        let key = key_for("Sobuj Chowdhury", 2, Gender::Male);
        let pik = make_pik(&key, "23", &s);
        assert_eq!(pik.as_str(), "2c6d38370c3de534ad68464669a9501d");
    }

    #[test]
    fn pik_deterministic_and_key_sensitive() {
        let key = key_for("Sobuj Chowdhury", 2, Gender::Male);
        let a = make_pik(&key, "23", &secret(1));
        let b = make_pik(&key, "23", &secret(1));
        let c = make_pik(&key, "23", &secret(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.as_str().len(), 32);
        assert!(a.as_str().bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()));
    }

    #[test]
    fn equal_code_spellings_share_pik() {
        let a = key_for("Sobuj Chowdhury", 2, Gender::Male);
        let b = key_for("Sabuj Chaudhury", 2, Gender::Male);
        assert_eq!(make_pik(&a, "23", &secret(9)), make_pik(&b, "23", &secret(9)));
    }

    #[test]
    fn pik_changes_with_demographics() {
        let s = secret(3);
        let base = key_for("Sobuj Chowdhury", 2, Gender::Male);
        let other_band = key_for("Sobuj Chowdhury", 3, Gender::Male);
        let other_gender = key_for("Sobuj Chowdhury", 2, Gender::Female);
        assert_ne!(make_pik(&base, "23", &s), make_pik(&other_band, "23", &s));
        assert_ne!(make_pik(&base, "23", &s), make_pik(&other_gender, "23", &s));
        assert_ne!(make_pik(&base, "23", &s), make_pik(&base, "24", &s));
    }

    #[test]
    fn short_secret_rejected() {
        assert!(matches!(LinkSecret::from_bytes(&[0; 15]), Err(Error::Key(_))));
        assert!(matches!(LinkSecret::from_hex("0011"), Err(Error::Key(_))));
        assert!(matches!(LinkSecret::from_hex("zz"), Err(Error::Key(_))));
        assert!(LinkSecret::from_bytes(&[0; 16]).is_ok());
    }

    #[test]
    fn secret_debug_is_redacted() {
        let s = secret(7);
        let dbg = format!("{s:?}");
        assert!(!dbg.contains("07"));
        assert!(dbg.contains("redacted"));
    }

    #[test]
    fn match_exact_near_and_miss() {
        let s = secret(4);
        let mut index = LinkageIndex::new();
        let smith = key_for("Smith", 3, Gender::Male);
        let pik_smith = make_pik(&smith, "35", &s);
        index.insert(smith, pik_smith.clone());

        // Same codes, same demographics: exact.
        let smyth = key_for("Smyth", 3, Gender::Male);
        let got = index.match_records(&smyth);
        assert_eq!(got, vec![(pik_smith.clone(), MatchGrade::Exact)]);

        // Age band off by one: near.
        let older = key_for("Smith", 4, Gender::Male);
        assert_eq!(index.match_records(&older), vec![(pik_smith.clone(), MatchGrade::Near)]);

        // Band off by two: no candidate.
        let much_older = key_for("Smith", 5, Gender::Male);
        assert!(index.match_records(&much_older).is_empty());

        // Different codes: no candidate.
        let karim = key_for("Karim", 3, Gender::Male);
        assert!(index.match_records(&karim).is_empty());

        // Different gender: no candidate; unknown gender: near-compatible.
        let female = key_for("Smith", 3, Gender::Female);
        assert!(index.match_records(&female).is_empty());
        let unknown = key_for("Smith", 3, Gender::Unknown);
        assert_eq!(index.match_records(&unknown), vec![(pik_smith, MatchGrade::Near)]);
    }

    #[test]
    fn match_is_token_order_insensitive() {
        let s = secret(5);
        let mut index = LinkageIndex::new();
        let ab = key_for("Sobuj Chowdhury", 2, Gender::Male);
        let pik = make_pik(&ab, "23", &s);
        index.insert(ab, pik.clone());
        let ba = key_for("Chowdhury Sobuj", 2, Gender::Male);
        assert_eq!(index.match_records(&ba), vec![(pik, MatchGrade::Exact)]);
    }

    #[test]
    fn geo_mismatch_downgrades_to_near() {
        let s = secret(6);
        let mut index = LinkageIndex::new();
        let mut here = key_for("Smith", 3, Gender::Male);
        here.geo = Some("dhaka".into());
        let pik = make_pik(&here, "35", &s);
        index.insert(here, pik.clone());

        let mut there = key_for("Smith", 3, Gender::Male);
        there.geo = Some("khulna".into());
        assert_eq!(index.match_records(&there), vec![(pik.clone(), MatchGrade::Near)]);

        // Absent geography on one side does not demote.
        let nowhere = key_for("Smith", 3, Gender::Male);
        assert_eq!(index.match_records(&nowhere), vec![(pik, MatchGrade::Exact)]);
    }
}
