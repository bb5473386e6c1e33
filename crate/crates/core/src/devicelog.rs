//! Append-only, hash-chained event logs kept by user devices and operators.
//!
//! `head_n = SHA-256(tag || head_{n-1} || lp(kind) || lp(payload) || salt_n)`.
//! Each entry carries a fresh random salt so heads published in tokens never
//! repeat and reveal nothing about the log contents.

use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tokens::LogHead;
use crate::wire::{envelope, open_envelope, TlvReader, TlvWriter, WireError};

const CHAIN_TAG: &[u8] = b"blindfare/v1/log";
const GENESIS_TAG: &[u8] = b"blindfare/v1/log-genesis";
const LOG_KIND: u8 = 0x40;

mod field {
    pub const ANCHOR: u8 = 0x01;
    pub const KIND: u8 = 0x02;
    pub const PAYLOAD: u8 = 0x03;
    pub const SALT: u8 = 0x04;
    pub const HEAD: u8 = 0x05;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogError {
    #[error("malformed log: {0}")]
    Malformed(#[from] WireError),
    #[error("stored head does not match the recomputed chain")]
    BrokenChain,
    #[error("head does not match the trusted head")]
    HeadMismatch,
    #[error("slice range {0}..{1} out of bounds")]
    Range(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub kind: String,
    pub payload: Vec<u8>,
    pub salt: [u8; 16],
}

pub fn chain(prev: &LogHead, entry: &LogEntry) -> LogHead {
    let mut h = Sha256::new();
    h.update(CHAIN_TAG);
    h.update(prev);
    h.update((entry.kind.len() as u32).to_be_bytes());
    h.update(entry.kind.as_bytes());
    h.update((entry.payload.len() as u32).to_be_bytes());
    h.update(&entry.payload);
    h.update(entry.salt);
    h.finalize().into()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashChainLog {
    anchor: LogHead,
    entries: Vec<LogEntry>,
    heads: Vec<LogHead>,
}

impl HashChainLog {
    pub fn new<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let anchor = Sha256::new().chain_update(GENESIS_TAG).chain_update(seed).finalize().into();
        HashChainLog {
            anchor,
            entries: Vec::new(),
            heads: Vec::new(),
        }
    }

    pub fn anchor(&self) -> &LogHead {
        &self.anchor
    }

    pub fn head(&self) -> LogHead {
        *self.heads.last().unwrap_or(&self.anchor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn head_at(&self, index: usize) -> Option<&LogHead> {
        self.heads.get(index)
    }

    /// Index of the entry whose resulting head is `head`.
    pub fn position_of(&self, head: &LogHead) -> Option<usize> {
        self.heads.iter().position(|h| h == head)
    }

    pub fn append<R: RngCore + ?Sized>(&mut self, kind: &str, payload: Vec<u8>, rng: &mut R) -> LogHead {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let entry = LogEntry {
            kind: kind.to_string(),
            payload,
            salt,
        };
        let head = chain(&self.head(), &entry);
        self.entries.push(entry);
        self.heads.push(head);
        head
    }

    /// Entries `from..=to` with the head preceding them.
    pub fn slice(&self, from: usize, to: usize) -> Result<LogSlice, LogError> {
        if from > to || to >= self.entries.len() {
            return Err(LogError::Range(from, to));
        }
        let prev = if from == 0 { self.anchor } else { self.heads[from - 1] };
        Ok(LogSlice {
            prev,
            entries: self.entries[from..=to].to_vec(),
        })
    }

    /// Stored form: anchor, entries, then the head as last written.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.bytes(field::ANCHOR, &self.anchor);
        for e in &self.entries {
            w.str(field::KIND, &e.kind).bytes(field::PAYLOAD, &e.payload).bytes(field::SALT, &e.salt);
        }
        w.bytes(field::HEAD, &self.head());
        envelope(LOG_KIND, &w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<HashChainLog, LogError> {
        let (typ, body) = open_envelope(bytes)?;
        if typ != LOG_KIND {
            return Err(WireError::UnexpectedType {
                expected: LOG_KIND,
                found: typ,
            }
            .into());
        }
        let mut r = TlvReader::new(body);
        let anchor: LogHead = r.array(field::ANCHOR)?;
        let mut log = HashChainLog {
            anchor,
            entries: Vec::new(),
            heads: Vec::new(),
        };
        while r.peek_type() == Some(field::KIND) {
            let kind = r.str(field::KIND)?.to_string();
            let payload = r.expect(field::PAYLOAD)?.to_vec();
            let salt = r.array(field::SALT)?;
            let entry = LogEntry { kind, payload, salt };
            log.heads.push(chain(&log.head(), &entry));
            log.entries.push(entry);
        }
        let stored: LogHead = r.array(field::HEAD)?;
        r.finish()?;
        if stored != log.head() {
            return Err(LogError::BrokenChain);
        }
        Ok(log)
    }
}

/// Recompute the chain of a stored log and compare it with a head obtained
/// out of band (for instance from a signed check-out record).
pub fn verify_chain(bytes: &[u8], trusted_head: &LogHead) -> Result<HashChainLog, LogError> {
    let log = HashChainLog::decode(bytes)?;
    if log.head() != *trusted_head {
        return Err(LogError::HeadMismatch);
    }
    Ok(log)
}

/// A contiguous run of entries submitted in a dispute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogSlice {
    pub prev: LogHead,
    pub entries: Vec<LogEntry>,
}

impl LogSlice {
    /// Head after each entry.
    pub fn heads(&self) -> Vec<LogHead> {
        let mut prev = self.prev;
        self.entries
            .iter()
            .map(|e| {
                prev = chain(&prev, e);
                prev
            })
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.bytes(field::ANCHOR, &self.prev);
        for e in &self.entries {
            w.str(field::KIND, &e.kind).bytes(field::PAYLOAD, &e.payload).bytes(field::SALT, &e.salt);
        }
        envelope(LOG_KIND + 1, &w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<LogSlice, LogError> {
        let (typ, body) = open_envelope(bytes)?;
        if typ != LOG_KIND + 1 {
            return Err(WireError::UnexpectedType {
                expected: LOG_KIND + 1,
                found: typ,
            }
            .into());
        }
        let mut r = TlvReader::new(body);
        let prev = r.array(field::ANCHOR)?;
        let mut entries = Vec::new();
        while !r.is_empty() {
            let kind = r.str(field::KIND)?.to_string();
            let payload = r.expect(field::PAYLOAD)?.to_vec();
            let salt = r.array(field::SALT)?;
            entries.push(LogEntry { kind, payload, salt });
        }
        r.finish()?;
        Ok(LogSlice { prev, entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sample(n: usize, seed: u64) -> HashChainLog {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut log = HashChainLog::new(&mut rng);
        for i in 0..n {
            log.append(if i % 2 == 0 { "checkin" } else { "checkout" }, vec![i as u8; i % 7], &mut rng);
        }
        log
    }

    #[test]
    fn round_trip_verifies_against_own_head() {
        let log = sample(12, 1);
        let back = verify_chain(&log.encode(), &log.head()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn heads_never_repeat_even_for_identical_events() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut log = HashChainLog::new(&mut rng);
        let heads: std::collections::BTreeSet<_> =
            (0..200).map(|_| log.append("checkin", b"same".to_vec(), &mut rng)).collect();
        assert_eq!(heads.len(), 200);
    }

    #[test]
    fn slice_heads_match_log_heads() {
        let log = sample(9, 3);
        let slice = log.slice(3, 5).unwrap();
        assert_eq!(slice.heads(), vec![*log.head_at(3).unwrap(), *log.head_at(4).unwrap(), *log.head_at(5).unwrap()]);
        assert_eq!(LogSlice::decode(&slice.encode()).unwrap(), slice);
        let mut tampered = slice.clone();
        tampered.entries[1].payload.push(1);
        assert_ne!(tampered.heads()[2], slice.heads()[2]);
        assert!(log.slice(5, 9).is_err());
    }

    #[test]
    fn stale_trusted_head_is_rejected() {
        let mut log = sample(4, 4);
        let old = log.head();
        log.append("checkin", vec![], &mut ChaCha20Rng::seed_from_u64(5));
        assert_eq!(verify_chain(&log.encode(), &old), Err(LogError::HeadMismatch));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn any_single_bit_flip_is_detected(n in 1usize..8, seed in any::<u64>(), pick in any::<prop::sample::Index>(), bit in 0u8..8) {
            let log = sample(n, seed);
            let mut bytes = log.encode();
            let i = pick.index(bytes.len());
            bytes[i] ^= 1 << bit;
            prop_assert!(verify_chain(&bytes, &log.head()).is_err());
        }
    }
}
