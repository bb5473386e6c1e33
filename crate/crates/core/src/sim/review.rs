//! Offline review of a run's trace: linkability per coalition, anonymity
//! of final credit values, the blindness cross-check and log-head reuse.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::trace::{body, field};
use crate::audit::{anonymity_sets, coalition_link, AnonymityReport, Attr, Coalition, Knowledge, LinkKind, LinkOptions, LinkReport};

pub struct Review {
    pub links: Vec<LinkReport>,
    pub anonymity: AnonymityReport,
    /// (pairs checked, pairs witnessed) from the run's blindness line.
    pub blindness: Option<(usize, usize)>,
    /// Log heads bound to more than one credit token.
    pub repeated_heads: Vec<[u8; 32]>,
}

/// Every non-empty subset of the three roles.
pub fn coalitions() -> Vec<Coalition> {
    let roles = ["PSP", "PTO", "PTC"];
    (1..8u8)
        .map(|mask| {
            Coalition(
                roles
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, r)| *r)
                    .collect(),
            )
        })
        .collect()
}

/// Heads that appear next to two different credit seqnos.
pub fn repeated_heads(k: &Knowledge) -> Vec<[u8; 32]> {
    let mut owners: BTreeMap<[u8; 32], BTreeSet<[u8; 16]>> = BTreeMap::new();
    for t in &k.tuples {
        let cs = t.attrs.iter().find_map(|a| match a {
            Attr::CreditSeq(s) => Some(*s),
            _ => None,
        });
        for a in &t.attrs {
            if let (Attr::LogHead(h), Some(cs)) = (a, cs) {
                owners.entry(*h).or_default().insert(cs);
            }
        }
    }
    owners.into_iter().filter(|(_, s)| s.len() > 1).map(|(h, _)| h).collect()
}

pub fn review(trace: &str) -> Result<Review, String> {
    let k = Knowledge::from_trace(trace)?;
    let links = coalitions()
        .iter()
        .map(|c| coalition_link(&k, c, &LinkOptions::default()))
        .collect();
    let mut finals = Vec::new();
    let mut blindness = None;
    for line in trace.lines() {
        let b = body(line);
        if let Some(rest) = b.strip_prefix("FINAL ") {
            if let Some(v) = field(rest, "credit").and_then(|v| v.parse().ok()) {
                finals.push(v);
            }
        } else if let Some(rest) = b.strip_prefix("BLINDNESS ") {
            let n = |key| field(rest, key).and_then(|v| v.parse().ok()).unwrap_or(0);
            blindness = Some((n("pairs"), n("witnessed")));
        }
    }
    Ok(Review {
        links,
        anonymity: anonymity_sets(finals),
        blindness,
        repeated_heads: repeated_heads(&k),
    })
}

impl Review {
    pub fn leaks(&self) -> usize {
        self.links.iter().map(|r| r.count(LinkKind::ProtocolLeak)).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.leaks() == 0 && self.repeated_heads.is_empty() && self.blindness.is_none_or(|(p, w)| p == w)
    }
}

impl fmt::Display for Review {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.links {
            writeln!(
                f,
                "LINKS coalition={} leak={} value={} timing={} chains={}",
                r.coalition,
                r.count(LinkKind::ProtocolLeak),
                r.count(LinkKind::ValueCorrelation),
                r.count(LinkKind::Timing),
                r.chains.len()
            )?;
            for l in &r.links {
                writeln!(f, "  {} user={} trip={} via={} correct={}", l.kind.name(), l.user, l.trip, l.via, l.correct)?;
            }
        }
        write!(f, "{}", self.anonymity)?;
        match self.blindness {
            Some((p, w)) => writeln!(f, "BLINDNESS pairs={p} witnessed={w}")?,
            None => writeln!(f, "BLINDNESS not recorded")?,
        }
        writeln!(f, "HEADS repeated={}", self.repeated_heads.len())?;
        for h in &self.repeated_heads {
            writeln!(f, "  head={}", hex::encode(h))?;
        }
        writeln!(f, "VERDICT {}", if self.is_clean() { "clean" } else { "violation" })
    }
}
