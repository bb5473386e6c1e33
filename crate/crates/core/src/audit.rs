//! Executable privacy model.
//!
//! Instrumented protocol code calls [`Knowledge::record`] wherever a party
//! observes a set of linked values. [`coalition_link`] joins a coalition's
//! tuples on shared identifiers and reports which (user, trip) pairs become
//! derivable, separating protocol leaks from value correlations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use sha2::{Digest, Sha256};

use crate::crypto::{schnorr_sign, GroupParams, KeyPair, Scalar};
use crate::pbs::{self, BlindingFactors, PublicPart, SecretMessage, SignerView};
use crate::tokens::{Cents, LogHead, Seqno};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    Psp,
    Pto(String),
    Ptc,
}

impl Party {
    pub fn role(&self) -> &'static str {
        match self {
            Party::Psp => "PSP",
            Party::Pto(_) => "PTO",
            Party::Ptc => "PTC",
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Pto(name) => write!(f, "PTO:{name}"),
            other => f.write_str(other.role()),
        }
    }
}

impl FromStr for Party {
    type Err = String;

    fn from_str(s: &str) -> Result<Party, String> {
        match s {
            "PSP" => Ok(Party::Psp),
            "PTC" => Ok(Party::Ptc),
            _ => s
                .strip_prefix("PTO:")
                .map(|n| Party::Pto(n.to_string()))
                .ok_or_else(|| format!("unknown party {s}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attr {
    User(String),
    Addr(String),
    Fare(Cents),
    Trip(String),
    ReceiptSeq(Seqno),
    TicketSeq(Seqno),
    CreditSeq(Seqno),
    CreditIn(Cents),
    CreditOut(Cents),
    TopupValue(Cents),
    Location(String),
    Time(u64),
    LogHead(LogHead),
}

impl Attr {
    /// Identifiers join tuples directly; everything else only correlates.
    pub fn is_identifier(&self) -> bool {
        matches!(
            self,
            Attr::User(_)
                | Attr::Addr(_)
                | Attr::ReceiptSeq(_)
                | Attr::TicketSeq(_)
                | Attr::CreditSeq(_)
                | Attr::LogHead(_)
        )
    }

    fn is_quasi(&self) -> bool {
        matches!(self, Attr::Fare(_) | Attr::TopupValue(_))
    }
}

impl fmt::Display for Attr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn h(b: &[u8]) -> String {
            hex::encode(b)
        }
        match self {
            Attr::User(u) => write!(f, "user={u}"),
            Attr::Addr(a) => write!(f, "addr={a}"),
            Attr::Fare(v) => write!(f, "fare={v}"),
            Attr::Trip(t) => write!(f, "trip={t}"),
            Attr::ReceiptSeq(s) => write!(f, "rseq={}", h(s)),
            Attr::TicketSeq(s) => write!(f, "tseq={}", h(s)),
            Attr::CreditSeq(s) => write!(f, "cseq={}", h(s)),
            Attr::CreditIn(v) => write!(f, "credit_in={v}"),
            Attr::CreditOut(v) => write!(f, "credit_out={v}"),
            Attr::TopupValue(v) => write!(f, "topup={v}"),
            Attr::Location(l) => write!(f, "loc={l}"),
            Attr::Time(t) => write!(f, "time={t}"),
            Attr::LogHead(hd) => write!(f, "head={}", h(hd)),
        }
    }
}

impl FromStr for Attr {
    type Err = String;

    fn from_str(s: &str) -> Result<Attr, String> {
        let bad = || format!("bad attribute {s}");
        let (k, v) = s.split_once('=').ok_or_else(bad)?;
        let money = || v.parse::<Cents>().map_err(|_| bad());
        let seq = || -> Result<Seqno, String> { hex::decode(v).ok().and_then(|b| b.try_into().ok()).ok_or_else(bad) };
        Ok(match k {
            "user" => Attr::User(v.into()),
            "addr" => Attr::Addr(v.into()),
            "fare" => Attr::Fare(money()?),
            "trip" => Attr::Trip(v.into()),
            "rseq" => Attr::ReceiptSeq(seq()?),
            "tseq" => Attr::TicketSeq(seq()?),
            "cseq" => Attr::CreditSeq(seq()?),
            "credit_in" => Attr::CreditIn(money()?),
            "credit_out" => Attr::CreditOut(money()?),
            "topup" => Attr::TopupValue(money()?),
            "loc" => Attr::Location(v.into()),
            "time" => Attr::Time(v.parse().map_err(|_| bad())?),
            "head" => Attr::LogHead(hex::decode(v).ok().and_then(|b| b.try_into().ok()).ok_or_else(bad)?),
            _ => return Err(bad()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeTuple {
    pub party: Party,
    pub at: u64,
    pub attrs: Vec<Attr>,
}

impl fmt::Display for KnowledgeTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "party={} at={}", self.party, self.at)?;
        for a in &self.attrs {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

impl FromStr for KnowledgeTuple {
    type Err = String;

    fn from_str(s: &str) -> Result<KnowledgeTuple, String> {
        let mut parts = s.split_whitespace();
        let party = parts
            .next()
            .and_then(|p| p.strip_prefix("party="))
            .ok_or_else(|| format!("missing party in {s}"))?
            .parse()?;
        let at = parts
            .next()
            .and_then(|p| p.strip_prefix("at="))
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| format!("missing time in {s}"))?;
        let attrs = parts.map(str::parse).collect::<Result<_, _>>()?;
        Ok(KnowledgeTuple { party, at, attrs })
    }
}

/// Every party's observations plus the scenario ground truth.
#[derive(Clone, Debug, Default)]
pub struct Knowledge {
    pub tuples: Vec<KnowledgeTuple>,
    /// (user, trip) pairs that actually happened.
    pub ground: BTreeSet<(String, String)>,
}

impl Knowledge {
    pub fn record(&mut self, party: Party, at: u64, attrs: Vec<Attr>) -> &KnowledgeTuple {
        self.tuples.push(KnowledgeTuple { party, at, attrs });
        self.tuples.last().expect("just pushed")
    }

    pub fn truth(&mut self, user: &str, trip: &str) {
        self.ground.insert((user.to_string(), trip.to_string()));
    }

    pub fn of<'a>(&'a self, party: &'a Party) -> impl Iterator<Item = &'a KnowledgeTuple> + 'a {
        self.tuples.iter().filter(move |t| &t.party == party)
    }

    /// Rebuild from `KNOW` and `GROUND` trace lines.
    pub fn from_trace(trace: &str) -> Result<Knowledge, String> {
        let mut k = Knowledge::default();
        for line in trace.lines() {
            let body = line.split_once("] ").map_or(line, |(_, rest)| rest);
            if let Some(t) = body.strip_prefix("KNOW ") {
                k.tuples.push(t.parse()?);
            } else if let Some(g) = body.strip_prefix("GROUND ") {
                let mut user = None;
                let mut trip = None;
                for p in g.split_whitespace() {
                    if let Some(u) = p.strip_prefix("user=") {
                        user = Some(u);
                    } else if let Some(t) = p.strip_prefix("trip=") {
                        trip = Some(t);
                    }
                }
                match (user, trip) {
                    (Some(u), Some(t)) => k.truth(u, t),
                    _ => return Err(format!("bad ground line {g}")),
                }
            }
        }
        Ok(k)
    }
}

/// Roles forming a coalition; a `PTO` role includes every operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coalition(pub BTreeSet<&'static str>);

impl Coalition {
    pub fn all() -> Coalition {
        Coalition(["PSP", "PTO", "PTC"].into_iter().collect())
    }

    pub fn contains(&self, party: &Party) -> bool {
        self.0.contains(party.role())
    }
}

impl FromStr for Coalition {
    type Err = String;

    fn from_str(s: &str) -> Result<Coalition, String> {
        let mut roles = BTreeSet::new();
        for r in s.split(',').map(str::trim) {
            roles.insert(match r {
                "PSP" => "PSP",
                "PTO" => "PTO",
                "PTC" => "PTC",
                other => return Err(format!("unknown role {other}")),
            });
        }
        Ok(Coalition(roles))
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v: Vec<&str> = self.0.iter().copied().collect();
        f.write_str(&v.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkKind {
    ProtocolLeak,
    ValueCorrelation,
    Timing,
}

impl LinkKind {
    pub fn name(self) -> &'static str {
        match self {
            LinkKind::ProtocolLeak => "leak",
            LinkKind::ValueCorrelation => "value",
            LinkKind::Timing => "timing",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Link {
    pub kind: LinkKind,
    pub user: String,
    pub trip: String,
    pub via: String,
    /// Whether the pair is in the ground truth.
    pub correct: bool,
}

/// Two trips tied together by a unique credit value handed from one to the next.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChainLink {
    pub from: String,
    pub to: String,
    pub value: Cents,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkOptions {
    /// Join tuples observed within this many ticks of each other.
    pub timing_window: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkReport {
    pub coalition: Coalition,
    pub links: Vec<Link>,
    pub chains: Vec<ChainLink>,
}

impl LinkReport {
    pub fn count(&self, kind: LinkKind) -> usize {
        self.links.iter().filter(|l| l.kind == kind).count()
    }
}

impl fmt::Display for LinkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "LINKS coalition={}", self.coalition)?;
        for l in &self.links {
            writeln!(
                f,
                "{} user={} trip={} via={} correct={}",
                l.kind.name(),
                l.user,
                l.trip,
                l.via,
                if l.correct { "yes" } else { "no" }
            )?;
        }
        for c in &self.chains {
            writeln!(f, "chain from={} to={} value={}", c.from, c.to, c.value)?;
        }
        writeln!(
            f,
            "links leak={} value={} timing={} chain={}",
            self.count(LinkKind::ProtocolLeak),
            self.count(LinkKind::ValueCorrelation),
            self.count(LinkKind::Timing),
            self.chains.len()
        )
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut cur = i;
        while self.0[cur] != root {
            let next = self.0[cur];
            self.0[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[derive(Default)]
struct Component {
    users: BTreeSet<String>,
    trips: BTreeSet<String>,
    quasi: BTreeSet<Attr>,
    credit_in: BTreeSet<Cents>,
    credit_out: BTreeSet<Cents>,
}

fn components(tuples: &[&KnowledgeTuple], uf: &mut UnionFind) -> BTreeMap<usize, Component> {
    let mut out: BTreeMap<usize, Component> = BTreeMap::new();
    for (i, t) in tuples.iter().enumerate() {
        let c = out.entry(uf.find(i)).or_default();
        for a in &t.attrs {
            match a {
                Attr::User(u) => {
                    c.users.insert(u.clone());
                }
                Attr::Trip(tr) => {
                    c.trips.insert(tr.clone());
                }
                Attr::CreditIn(v) => {
                    c.credit_in.insert(*v);
                }
                Attr::CreditOut(v) => {
                    c.credit_out.insert(*v);
                }
                q if q.is_quasi() => {
                    c.quasi.insert(q.clone());
                }
                _ => {}
            }
        }
    }
    out
}

fn direct_links(comps: &BTreeMap<usize, Component>) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for c in comps.values() {
        // a component naming several users is ambiguous, not a link
        if c.users.len() == 1 {
            let user = c.users.iter().next().expect("one user");
            for t in &c.trips {
                out.insert((user.clone(), t.clone()));
            }
        }
    }
    out
}

/// Join the coalition's tuples and report every derivable (user, trip) pair.
pub fn coalition_link(knowledge: &Knowledge, coalition: &Coalition, opts: &LinkOptions) -> LinkReport {
    let tuples: Vec<&KnowledgeTuple> = knowledge.tuples.iter().filter(|t| coalition.contains(&t.party)).collect();
    let mut uf = UnionFind::new(tuples.len());
    let mut first: BTreeMap<&Attr, usize> = BTreeMap::new();
    for (i, t) in tuples.iter().enumerate() {
        for a in t.attrs.iter().filter(|a| a.is_identifier()) {
            match first.get(a) {
                Some(&j) => uf.union(i, j),
                None => {
                    first.insert(a, i);
                }
            }
        }
    }
    let comps = components(&tuples, &mut uf);
    let correct = |u: &str, t: &str| knowledge.ground.contains(&(u.to_string(), t.to_string()));

    let mut links = Vec::new();
    let leaks = direct_links(&comps);
    for (u, t) in &leaks {
        links.push(Link {
            kind: LinkKind::ProtocolLeak,
            user: u.clone(),
            trip: t.clone(),
            via: "identifiers".into(),
            correct: correct(u, t),
        });
    }

    // a quasi value seen with exactly one user and exactly one trip
    let mut by_value: BTreeMap<&Attr, (BTreeSet<&String>, BTreeSet<&String>)> = BTreeMap::new();
    for c in comps.values() {
        for q in &c.quasi {
            let slot = by_value.entry(q).or_default();
            slot.0.extend(c.users.iter());
            slot.1.extend(c.trips.iter());
        }
    }
    let mut valued = BTreeSet::new();
    for (q, (users, trips)) in &by_value {
        if users.len() == 1 && trips.len() == 1 {
            let (u, t) = ((*users.iter().next().unwrap()).clone(), (*trips.iter().next().unwrap()).clone());
            if !leaks.contains(&(u.clone(), t.clone())) && valued.insert((u.clone(), t.clone())) {
                links.push(Link {
                    kind: LinkKind::ValueCorrelation,
                    correct: correct(&u, &t),
                    user: u,
                    trip: t,
                    via: q.to_string(),
                });
            }
        }
    }

    if let Some(window) = opts.timing_window {
        let mut order: Vec<usize> = (0..tuples.len()).collect();
        order.sort_by_key(|&i| tuples[i].at);
        for w in order.windows(2) {
            if tuples[w[1]].at - tuples[w[0]].at <= window {
                uf.union(w[0], w[1]);
            }
        }
        let timed = direct_links(&components(&tuples, &mut uf));
        for (u, t) in timed {
            if !leaks.contains(&(u.clone(), t.clone())) && !valued.contains(&(u.clone(), t.clone())) {
                links.push(Link {
                    kind: LinkKind::Timing,
                    correct: correct(&u, &t),
                    user: u,
                    trip: t,
                    via: format!("window={window}"),
                });
            }
        }
    }

    let mut chains = Vec::new();
    let mut outs: BTreeMap<Cents, Vec<&Component>> = BTreeMap::new();
    let mut ins: BTreeMap<Cents, Vec<&Component>> = BTreeMap::new();
    for c in comps.values() {
        for v in &c.credit_out {
            outs.entry(*v).or_default().push(c);
        }
        for v in c.credit_in.difference(&c.credit_out) {
            ins.entry(*v).or_default().push(c);
        }
    }
    for (v, from) in &outs {
        // the component that issued v also saw it as input when v was its own
        // starting value; only a single distinct successor links
        let to: Vec<&&Component> = ins
            .get(v)
            .map(|cs| cs.iter().filter(|c| !std::ptr::eq(**c, from[0])).collect())
            .unwrap_or_default();
        if from.len() == 1 && to.len() == 1 {
            for a in &from[0].trips {
                for b in &to[0].trips {
                    chains.push(ChainLink {
                        from: a.clone(),
                        to: b.clone(),
                        value: *v,
                    });
                }
            }
        }
    }
    links.sort();
    chains.sort();
    LinkReport {
        coalition: coalition.clone(),
        links,
        chains,
    }
}

/// Users grouped by an observable value such as their current credit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnonymityReport {
    pub population: usize,
    pub sets: BTreeMap<Cents, usize>,
}

impl AnonymityReport {
    pub fn nonempty(&self) -> usize {
        self.sets.len()
    }

    /// Population divided by the number of non-empty sets.
    pub fn mean_per_set(&self) -> f64 {
        if self.sets.is_empty() {
            0.0
        } else {
            self.population as f64 / self.sets.len() as f64
        }
    }

    /// Size of the set an average user sits in.
    pub fn mean_experienced(&self) -> f64 {
        if self.population == 0 {
            return 0.0;
        }
        let sq: f64 = self.sets.values().map(|&n| (n * n) as f64).sum();
        sq / self.population as f64
    }

    pub fn smallest(&self) -> usize {
        self.sets.values().copied().min().unwrap_or(0)
    }

    pub fn largest(&self) -> usize {
        self.sets.values().copied().max().unwrap_or(0)
    }

    /// How many sets have each size.
    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for &n in self.sets.values() {
            *h.entry(n).or_default() += 1;
        }
        h
    }
}

impl fmt::Display for AnonymityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ANONYMITY")?;
        writeln!(
            f,
            "population={} sets={} mean_per_set={:.3} mean_experienced={:.3} smallest={} largest={}",
            self.population,
            self.nonempty(),
            self.mean_per_set(),
            self.mean_experienced(),
            self.smallest(),
            self.largest()
        )?;
        for (v, n) in &self.sets {
            if self.sets.len() <= 32 {
                writeln!(f, "set value={v} size={n}")?;
            }
        }
        Ok(())
    }
}

pub fn anonymity_sets(values: impl IntoIterator<Item = Cents>) -> AnonymityReport {
    let mut r = AnonymityReport::default();
    for v in values {
        r.population += 1;
        *r.sets.entry(v).or_default() += 1;
    }
    r
}

/// Number of distinct credit values between one quantum and `max`.
pub fn credit_value_count(max: Cents, quantum: Cents) -> usize {
    (max / quantum) as usize
}

/// Credit values drawn uniformly from the quantized range `quantum..=max`.
pub fn uniform_population<R: RngCore + ?Sized>(users: usize, max: Cents, quantum: Cents, rng: &mut R) -> Vec<Cents> {
    let n = credit_value_count(max, quantum) as i64;
    (0..users).map(|_| quantum * rng.gen_range(1..=n)).collect()
}

/// One issuance as the signer saw it and the token the user later showed.
pub struct Issued {
    pub view: SignerView,
    pub secret: SecretMessage,
    pub shown: Shown,
}

/// What the verifier sees when the token is used.
pub enum Shown {
    Signature(pbs::PartiallyBlindSignature),
    /// A broken user that also reveals the blinded challenge.
    Canary(pbs::PartiallyBlindSignature, Scalar),
    /// Message-hiding only: the signer saw `H(m)` and signed it in the clear.
    Hashed([u8; 32]),
}

/// An issuance scheme under test in the blindness game.
pub trait BlindScheme {
    fn name(&self) -> &'static str;
    fn issue(&self, params: &GroupParams, key: &KeyPair, pp: &PublicPart, m: &SecretMessage, rng: &mut dyn RngCore) -> Issued;
}

pub struct Honest;
pub struct CanaryLeak;
pub struct HashOnly;

fn ao_issue(
    params: &GroupParams,
    key: &KeyPair,
    pp: &PublicPart,
    m: &SecretMessage,
    rng: &mut dyn RngCore,
) -> (SignerView, pbs::PartiallyBlindSignature, Scalar) {
    let mut ann = pbs::signer_announce(params, pp, rng);
    let factors = BlindingFactors::random(params, rng);
    let (ch, state) = pbs::user_blind_with(params, &ann.view, key.public(), pp, m, factors).expect("honest announcement");
    let im = pbs::signer_respond(params, &mut ann, key, &ch.e).expect("fresh announcement");
    let sig = pbs::user_finalize(params, key.public(), &state, &im).expect("honest response");
    let view = SignerView {
        a: ann.view.a.clone(),
        b: ann.view.b.clone(),
        e: ch.e.clone(),
        intermediate: im,
    };
    (view, sig, ch.e)
}

impl BlindScheme for Honest {
    fn name(&self) -> &'static str {
        "honest"
    }

    fn issue(&self, params: &GroupParams, key: &KeyPair, pp: &PublicPart, m: &SecretMessage, rng: &mut dyn RngCore) -> Issued {
        let (view, sig, _) = ao_issue(params, key, pp, m, rng);
        Issued {
            view,
            secret: m.clone(),
            shown: Shown::Signature(sig),
        }
    }
}

impl BlindScheme for CanaryLeak {
    fn name(&self) -> &'static str {
        "canary"
    }

    fn issue(&self, params: &GroupParams, key: &KeyPair, pp: &PublicPart, m: &SecretMessage, rng: &mut dyn RngCore) -> Issued {
        let (view, sig, e) = ao_issue(params, key, pp, m, rng);
        Issued {
            view,
            secret: m.clone(),
            shown: Shown::Canary(sig, e),
        }
    }
}

impl BlindScheme for HashOnly {
    fn name(&self) -> &'static str {
        "hash-only"
    }

    fn issue(&self, params: &GroupParams, key: &KeyPair, pp: &PublicPart, m: &SecretMessage, rng: &mut dyn RngCore) -> Issued {
        let digest: [u8; 32] = Sha256::digest(m.as_bytes()).into();
        let mut signed = pp.encode();
        signed.extend_from_slice(&digest);
        let sig = schnorr_sign(params, key, &signed, rng);
        // the signer's transcript is the plain signature over the digest
        let view = SignerView {
            a: params.g_pow(&sig.s),
            b: params.g_pow(&sig.c),
            e: sig.c.clone(),
            intermediate: pbs::IntermediateSignature {
                r: sig.s.clone(),
                c: sig.c.clone(),
                s: sig.s.clone(),
                d: sig.c,
            },
        };
        Issued {
            view,
            secret: m.clone(),
            shown: Shown::Hashed(digest),
        }
    }
}

/// Best-effort distinguisher: `Some(true)` when the shown token provably came
/// from `view`, `Some(false)` when it provably did not.
fn matches(params: &GroupParams, key: &KeyPair, pp: &PublicPart, view: &SignerView, shown: &Issued, seen: &[u8; 32]) -> Option<bool> {
    match &shown.shown {
        Shown::Signature(sig) => {
            pbs::blindness_witness(params, key.public(), view, sig, pp, &shown.secret).map(|_| true).or(Some(false))
        }
        Shown::Canary(_, e) => Some(e == &view.e),
        Shown::Hashed(d) => Some(d == seen),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameResult {
    pub scheme: &'static str,
    pub trials: usize,
    pub wins: usize,
}

impl GameResult {
    pub fn advantage(&self) -> f64 {
        (self.wins as f64 / self.trials as f64 - 0.5).abs()
    }
}

impl fmt::Display for GameResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "game scheme={} trials={} wins={} advantage={:.4}",
            self.scheme,
            self.trials,
            self.wins,
            self.advantage()
        )
    }
}

/// Two users with distinct secrets get the same public part signed; the
/// signatures are shown in an order fixed by a hidden coin and the signer
/// guesses the coin.
pub fn blindness_game(scheme: &dyn BlindScheme, params: &GroupParams, key: &KeyPair, trials: usize, rng: &mut dyn RngCore) -> GameResult {
    let pp = PublicPart::new("game", 360).expect("label");
    let mut wins = 0;
    for _ in 0..trials {
        let mut m = [[0u8; 16]; 2];
        rng.fill_bytes(&mut m[0]);
        rng.fill_bytes(&mut m[1]);
        let msgs = m.map(|b| SecretMessage(b.to_vec()));
        let issued: Vec<Issued> = msgs.iter().map(|mm| scheme.issue(params, key, &pp, mm, rng)).collect();
        let digests: Vec<[u8; 32]> = msgs.iter().map(|mm| Sha256::digest(mm.as_bytes()).into()).collect();
        let b = rng.gen_bool(0.5) as usize;
        let first = &issued[b];
        let guess = match (
            matches(params, key, &pp, &issued[0].view, first, &digests[0]),
            matches(params, key, &pp, &issued[1].view, first, &digests[1]),
        ) {
            (Some(true), Some(false)) => 0,
            (Some(false), Some(true)) => 1,
            _ => rng.gen_bool(0.5) as usize,
        };
        if guess == b {
            wins += 1;
        }
    }
    GameResult {
        scheme: scheme.name(),
        trials,
        wins,
    }
}

/// Check every (view, signature) cross pairing; returns (pairs, witnessed).
pub fn cross_witness(params: &GroupParams, key: &KeyPair, pp: &PublicPart, views: &[SignerView], shown: &[(SecretMessage, pbs::PartiallyBlindSignature)]) -> (usize, usize) {
    let mut ok = 0;
    for v in views {
        for (m, sig) in shown {
            if pbs::blindness_witness(params, key.public(), v, sig, pp, m).is_some() {
                ok += 1;
            }
        }
    }
    (views.len() * shown.len(), ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn seq(i: u8) -> Seqno {
        [i; 16]
    }

    /// Solution 1 style knowledge for one purchase and its inspection.
    fn ticket(k: &mut Knowledge, user: &str, fare: Cents, trip: &str, i: u8) {
        let addr = format!("10.0.0.{i}");
        k.record(Party::Psp, 1, vec![Attr::User(user.into()), Attr::Addr(addr.clone()), Attr::Fare(fare)]);
        k.record(
            Party::Pto("metro".into()),
            2,
            vec![Attr::Addr(addr), Attr::ReceiptSeq(seq(i)), Attr::Fare(fare)],
        );
        k.record(Party::Ptc, 3, vec![Attr::ReceiptSeq(seq(i)), Attr::Fare(fare)]);
        k.record(
            Party::Pto("metro".into()),
            100 + i as u64,
            vec![Attr::Trip(trip.into()), Attr::TicketSeq(seq(100 + i)), Attr::Fare(fare)],
        );
        k.truth(user, trip);
    }

    #[test]
    fn shared_fare_classes_give_no_links() {
        let mut k = Knowledge::default();
        for i in 0..10u8 {
            ticket(&mut k, &format!("u{i}"), 360, &format!("A>B@d{i}"), i);
        }
        let r = coalition_link(&k, &Coalition::all(), &LinkOptions::default());
        assert!(r.links.is_empty(), "{r}");
    }

    #[test]
    fn unique_fare_is_one_value_correlation() {
        let mut k = Knowledge::default();
        for i in 0..10u8 {
            ticket(&mut k, &format!("u{i}"), 360, &format!("A>B@d{i}"), i);
        }
        ticket(&mut k, "solo", 990, "A>Z@d0", 50);
        let r = coalition_link(&k, &Coalition::all(), &LinkOptions::default());
        assert_eq!(r.count(LinkKind::ProtocolLeak), 0);
        assert_eq!(r.count(LinkKind::ValueCorrelation), 1);
        assert_eq!(r.links[0].user, "solo");
        assert!(r.links[0].correct);
    }

    #[test]
    fn shared_identifier_is_a_protocol_leak() {
        let mut k = Knowledge::default();
        ticket(&mut k, "u", 360, "A>B@d0", 1);
        ticket(&mut k, "v", 360, "A>C@d0", 2);
        // an operator that logged the buyer address next to the ticket seqno
        k.record(Party::Pto("metro".into()), 5, vec![Attr::Addr("10.0.0.1".into()), Attr::TicketSeq(seq(101))]);
        let r = coalition_link(&k, &Coalition::all(), &LinkOptions::default());
        assert_eq!(r.count(LinkKind::ProtocolLeak), 1);
        // without the PSP no user identity is in view
        let pto_ptc: Coalition = "PTO,PTC".parse().unwrap();
        assert!(coalition_link(&k, &pto_ptc, &LinkOptions::default()).links.is_empty());
    }

    #[test]
    fn timing_window_joins_close_observations() {
        let mut k = Knowledge::default();
        k.record(Party::Psp, 10, vec![Attr::User("u".into()), Attr::Fare(360)]);
        k.record(Party::Pto("m".into()), 11, vec![Attr::Trip("A>B@d0".into()), Attr::Fare(360)]);
        k.record(Party::Psp, 50, vec![Attr::User("v".into()), Attr::Fare(360)]);
        k.record(Party::Pto("m".into()), 90, vec![Attr::Trip("A>C@d0".into()), Attr::Fare(360)]);
        let none = coalition_link(&k, &Coalition::all(), &LinkOptions::default());
        assert!(none.links.is_empty());
        let timed = coalition_link(
            &k,
            &Coalition::all(),
            &LinkOptions {
                timing_window: Some(2),
            },
        );
        assert_eq!(timed.count(LinkKind::Timing), 1);
    }

    #[test]
    fn unique_credit_value_chains_trips() {
        let mut k = Knowledge::default();
        let pto = Party::Pto("m".into());
        k.record(pto.clone(), 1, vec![Attr::CreditSeq(seq(1)), Attr::CreditIn(2500), Attr::Trip("t1".into()), Attr::CreditOut(2183)]);
        k.record(pto.clone(), 9, vec![Attr::CreditSeq(seq(2)), Attr::CreditIn(2183), Attr::Trip("t2".into()), Attr::CreditOut(1863)]);
        k.record(pto, 9, vec![Attr::CreditSeq(seq(3)), Attr::CreditIn(2500), Attr::Trip("t3".into()), Attr::CreditOut(2180)]);
        let r = coalition_link(&k, &Coalition::all(), &LinkOptions::default());
        assert_eq!(
            r.chains,
            vec![ChainLink {
                from: "t1".into(),
                to: "t2".into(),
                value: 2183
            }]
        );
    }

    #[test]
    fn tuple_lines_round_trip() {
        let t = KnowledgeTuple {
            party: Party::Pto("metro".into()),
            at: 7,
            attrs: vec![
                Attr::Addr("10.0.0.1".into()),
                Attr::ReceiptSeq(seq(3)),
                Attr::Fare(360),
                Attr::LogHead([9; 32]),
            ],
        };
        assert_eq!(t.to_string().parse::<KnowledgeTuple>().unwrap(), t);
    }

    #[test]
    fn thousand_credit_values() {
        assert_eq!(credit_value_count(10_000, 10), 1000);
    }

    #[test]
    fn degenerate_population_is_one_set() {
        let r = anonymity_sets(std::iter::repeat_n(2500, 40));
        assert_eq!(r.nonempty(), 1);
        assert_eq!(r.mean_per_set(), 40.0);
        assert_eq!(r.mean_experienced(), 40.0);
    }

    #[test]
    fn blindness_game_separates_schemes() {
        let params = GroupParams::sim_1024();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let key = keygen(&params, &mut rng);
        let honest = blindness_game(&Honest, &params, &key, 200, &mut rng);
        assert!(honest.advantage() < 0.15, "{honest}");
        let canary = blindness_game(&CanaryLeak, &params, &key, 50, &mut rng);
        assert!(canary.advantage() > 0.45, "{canary}");
        let hashed = blindness_game(&HashOnly, &params, &key, 50, &mut rng);
        assert!(hashed.advantage() > 0.45, "{hashed}");
    }

    proptest! {
        #[test]
        fn anonymity_means_are_consistent(values in prop::collection::vec(0i64..50, 1..200)) {
            let r = anonymity_sets(values.iter().map(|v| v * 10));
            prop_assert_eq!(r.sets.values().sum::<usize>(), values.len());
            prop_assert!(r.mean_experienced() + 1e-9 >= r.mean_per_set());
        }
    }
}
