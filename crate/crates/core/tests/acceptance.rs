//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when all
//! criteria pass. Pass criterion numbers as arguments to run a subset.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use blindfare::audit::{
    anonymity_sets, blindness_game, coalition_link, credit_value_count, cross_witness, uniform_population, BlindScheme,
    CanaryLeak, Coalition, Honest, LinkKind, LinkOptions, Shown,
};
use blindfare::crypto::{keygen, GroupParams};
use blindfare::devicelog::{verify_chain, HashChainLog};
use blindfare::pbs::{PublicPart, SecretMessage};
use blindfare::registry::{SeqnoRegistry, Submit, TokenKind};
use blindfare::sim::bench::{self, Phase};
use blindfare::sim::matrix::{boundaries, crash_matrix};
use blindfare::sim::workload::random_trips;
use blindfare::sim::{run, Action, FaultPlan, Group, Options, Outcome, Scenario, World};
use blindfare::tokens::{CheckinToken, Cents, CreditToken};

const DEMO: &str = include_str!("../scenarios/demo.scn");
const MATRIX: &str = include_str!("../scenarios/matrix.scn");

type Verdict = (bool, String);
type Criterion = (u8, &'static str, fn() -> Verdict);

fn body(line: &str) -> &str {
    line.split_once("] ").map_or(line, |(_, b)| b)
}

fn kv<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace().find_map(|w| w.strip_prefix(key)?.strip_prefix('='))
}

fn num(line: &str, key: &str) -> Cents {
    kv(line, key).and_then(|v| v.parse().ok()).unwrap_or(0)
}

/// Per-user credit from the trace alone: the opening value, then
/// `v' = v + topup - fare` per trip, less any shortfall, plus adjustments.
fn fold(trace: &str) -> BTreeMap<String, Cents> {
    let mut m = BTreeMap::new();
    for line in trace.lines().map(body) {
        let Some(rest) = line.strip_prefix("CREDIT ") else { continue };
        let user = kv(rest, "user").expect("user").to_string();
        let delta = match kv(rest, "op") {
            Some("open") | Some("adjust") => num(rest, "value"),
            Some("trip") => num(rest, "topup") - num(rest, "fare"),
            Some("shortfall") => -num(rest, "missing"),
            other => panic!("unknown credit op {other:?}"),
        };
        *m.entry(user).or_insert(0) += delta;
    }
    m
}

fn finals(trace: &str) -> BTreeMap<String, Cents> {
    trace
        .lines()
        .map(body)
        .filter_map(|l| l.strip_prefix("FINAL "))
        .map(|l| (kv(l, "user").expect("user").to_string(), num(l, "credit")))
        .collect()
}

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).expect("scenario parses")
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn blindness() -> Verdict {
    let t = Instant::now();
    let params = GroupParams::production();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let key = keygen(&params, &mut rng);
    let pp = PublicPart::new("credit", 2500).unwrap();
    let mut views = Vec::new();
    let mut shown = Vec::new();
    for _ in 0..100 {
        let mut m = [0u8; 16];
        rng.fill_bytes(&mut m);
        let issued = Honest.issue(&params, &key, &pp, &SecretMessage(m.to_vec()), &mut rng);
        let Shown::Signature(sig) = issued.shown else { unreachable!() };
        views.push(issued.view);
        shown.push((issued.secret, sig));
    }
    let (pairs, witnessed) = cross_witness(&params, &key, &pp, &views, &shown);
    let game = blindness_game(&Honest, &params, &key, 1000, &mut rng);
    let canary = blindness_game(&CanaryLeak, &params, &key, 50, &mut rng);
    let elapsed = t.elapsed();
    (
        pairs == 10_000 && witnessed == pairs && game.advantage() < 0.05 && elapsed < Duration::from_secs(60),
        format!(
            "witnessed {witnessed}/{pairs} pairs, honest advantage {:.4}, canary advantage {:.2}, {:.1}s",
            game.advantage(),
            canary.advantage(),
            elapsed.as_secs_f64()
        ),
    )
}

fn crash_matrices() -> Verdict {
    let t = Instant::now();
    let s = scenario(MATRIX);
    let honest = crash_matrix(&s, 1, false);
    let elapsed = t.elapsed();
    let unfired = honest.cells.iter().filter(|c| !c.fired).count();
    let failed: Vec<String> = honest
        .failures()
        .map(|c| format!("{} {} {}: {:?}", c.flow, c.step, c.action, c.violations))
        .collect();
    let mutant = crash_matrix(&s, 1, true);
    let caught = |f: &str, step: u8| {
        mutant
            .failures()
            .any(|c| c.flow == f && c.step == step && c.action == Action::CrashBeforeSend)
    };
    let expected = [("buy/receipt", 3), ("buy/ticket", 3), ("checkout/credit", 3), ("open/credit", 0)];
    let all_caught = expected.iter().all(|(f, s)| caught(f, *s));
    let mutant_only_crashes = mutant.failures().all(|c| c.action == Action::CrashBeforeSend);
    (
        failed.is_empty()
            && unfired == 0
            && honest.count("tickets") >= 25
            && honest.count("payg") >= 25
            && elapsed < Duration::from_secs(300)
            && all_caught
            && mutant_only_crashes,
        format!(
            "{} cells (tickets {}, payg {}), {} failed, {} unfired, {:.1}s; mutant fails {} cells{}",
            honest.cells.len(),
            honest.count("tickets"),
            honest.count("payg"),
            failed.len(),
            unfired,
            elapsed.as_secs_f64(),
            mutant.failures().count(),
            if failed.is_empty() { String::new() } else { format!(" {failed:?}") }
        ),
    )
}

fn conservation() -> Verdict {
    let s = scenario(&random_trips(40, 1000, 11));
    let out = run(&s, Options::default());
    let text = out.trace.text();
    let (mut paid_in, mut paid_out) = (0, 0);
    for line in text.lines().map(body) {
        let Some(e) = line.strip_prefix("LEDGER ") else { continue };
        match e.split_whitespace().next() {
            Some("payment") => paid_in += num(e, "amount"),
            Some("refund") => paid_in -= num(e, "amount"),
            Some("clawback") => paid_out -= num(e, "amount"),
            Some("payout") => {
                let items = kv(e, "items").unwrap_or("");
                paid_out += items
                    .split(',')
                    .filter_map(|i| i.split_once(':'))
                    .map(|(_, a)| a.parse::<Cents>().unwrap())
                    .sum::<Cents>();
            }
            _ => {}
        }
    }
    let outstanding: Cents = finals(&text).values().sum();
    let trips = text
        .lines()
        .map(body)
        .filter(|l| l.starts_with("TICKET ") || (l.starts_with("CREDIT ") && l.contains(" op=trip ")))
        .count();
    let unredeemed = out.report.totals.unredeemed;
    (
        trips == 1000 && out.report.is_clean() && out.is_clean() && paid_in == paid_out + unredeemed + outstanding,
        format!(
            "{trips} trips: payments {paid_in} = payouts {paid_out} + unredeemed {unredeemed} + credit {outstanding}; {} discrepancies, {} violations",
            out.report.discrepancies.len(),
            out.violations.len()
        ),
    )
}

/// Every claimant submits one seqno some number of times, in a random
/// interleaving. Exactly one claimant may win; its repeats are idempotent.
fn schedule_once(rng: &mut ChaCha20Rng, kind: TokenKind) -> bool {
    let mut reg = SeqnoRegistry::new();
    let seq = [rng.gen::<u8>(); 16];
    let claimants = rng.gen_range(2..6);
    let mut sched: Vec<usize> = (0..claimants).flat_map(|c| std::iter::repeat_n(c, rng.gen_range(1..4))).collect();
    for i in (1..sched.len()).rev() {
        sched.swap(i, rng.gen_range(0..=i));
    }
    let mut winner = None;
    for c in sched {
        match reg.submit(kind, &seq, &format!("c{c}"), 150) {
            Ok(Submit::Accepted) if winner.is_none() => winner = Some(c),
            Ok(Submit::Repeated) if winner == Some(c) => {}
            Err(_) if winner.is_some() && winner != Some(c) => {}
            _ => return false,
        }
    }
    winner.is_some()
}

fn double_spend() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let schedules = (0..1000).all(|i| schedule_once(&mut rng, if i % 2 == 0 { TokenKind::Receipt } else { TokenKind::Ticket }));

    // concurrent submitters racing on one registry
    let reg = Arc::new(Mutex::new(SeqnoRegistry::new()));
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let reg = reg.clone();
            std::thread::spawn(move || {
                (0..50)
                    .filter(|_| {
                        matches!(
                            reg.lock().unwrap().submit(TokenKind::Receipt, &[9; 16], &format!("t{i}"), 150),
                            Ok(Submit::Accepted)
                        )
                    })
                    .count()
            })
        })
        .collect();
    let threaded: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();

    // the same credit token at two gates, and duplicated delivery everywhere
    let s = scenario(DEMO);
    let mut w = World::new(&s, Options::default());
    w.act(0, "bob", &blindfare::sim::scenario::Verb::Open(2500));
    w.advance(20);
    let credit: CreditToken = w.users["bob"].wallet().credit.clone().expect("opened");
    let env = w.env.clone();
    let mut know = Default::default();
    let mut r = ChaCha20Rng::seed_from_u64(5);
    let head = [1u8; 32];
    let first = w
        .gates
        .get_mut("A")
        .unwrap()
        .checkin(&env, Some(&mut w.ptc), &credit, head, 100, &mut r, &mut know);
    let second = w
        .gates
        .get_mut("B")
        .unwrap()
        .checkin(&env, Some(&mut w.ptc), &credit, head, 101, &mut r, &mut know);
    let gates_ok = first.is_ok() && second.is_err();

    let mut dup = FaultPlan::none();
    let ws = scenario(&random_trips(12, 120, 5));
    for (f, step) in boundaries(&ws, 1) {
        dup.add(&f, step, Action::Duplicate).unwrap();
    }
    let out = run(
        &ws,
        Options {
            faults: dup,
            ..Options::default()
        },
    );
    let mut firsts: BTreeMap<String, usize> = BTreeMap::new();
    for l in out.trace.lines().iter().map(|l| body(l)) {
        if let Some(rest) = l.strip_prefix("REG ") {
            let words: Vec<&str> = rest.split_whitespace().collect();
            if words[3].starts_with("absent->") {
                *firsts.entry(format!("{} {} {}", words[0], words[1], words[2])).or_default() += 1;
            }
        }
    }
    let dup_ok = out.is_clean() && firsts.values().all(|&n| n == 1);

    // check-out of tokens the clearinghouse never saw checked in
    let key = w.ptos["metro"].key().clone();
    let mut rejected = 0;
    for i in 0..100u64 {
        let mut seq = [0u8; 16];
        r.fill_bytes(&mut seq);
        let token = CheckinToken::sign(&env.params, &key, "metro", "A", 200 + i, seq, Some(head), &mut r);
        let now = 215 + i;
        w.advance(now - w.now);
        let res = w
            .gates
            .get_mut("B")
            .unwrap()
            .checkout(&env, Some(&mut w.ptc), &token, None, head, false, now, &mut r, &mut know);
        if res.is_err() {
            rejected += 1;
        }
    }
    (
        schedules && threaded == 1 && gates_ok && dup_ok && rejected == 100,
        format!(
            "1000 schedules ok={schedules}, threads accepted {threaded}, second gate rejected={}, duplicated run clean={} with {} seqnos first-seen once, checkout without checkin rejected {rejected}/100",
            second.is_err(),
            out.is_clean(),
            firsts.len()
        ),
    )
}

fn credit_arithmetic() -> Verdict {
    let mut runs: Vec<(String, Outcome)> = Vec::new();
    runs.push(("demo".into(), run(&scenario(DEMO), Options::default())));
    runs.push(("matrix".into(), run(&scenario(MATRIX), Options::default())));
    for (f, step, a) in [
        ("checkout/credit", 3, Action::CrashAfterPersist),
        ("lazy/credit", 2, Action::Drop),
        ("dispute/credit", 4, Action::CrashBeforeSend),
        ("checkout", 1, Action::Delay(90)),
    ] {
        let opts = Options {
            faults: FaultPlan::single(f, step, a),
            ..Options::default()
        };
        runs.push((format!("matrix+{f} {step} {a}"), run(&scenario(MATRIX), opts)));
    }
    for seed in 1..=3 {
        runs.push((format!("random seed {seed}"), run(&scenario(&random_trips(20, 300, seed)), Options::default())));
    }
    let mut users = 0;
    let mut bad = Vec::new();
    for (name, out) in &runs {
        let text = out.trace.text();
        let folded = fold(&text);
        let fin = finals(&text);
        for (u, v) in &fin {
            users += 1;
            let f = folded.get(u).copied().unwrap_or(0);
            if f != *v || out.finals.get(u) != Some(v) {
                bad.push(format!("{name}: {u} fold {f} device {v}"));
            }
        }
    }
    (
        bad.is_empty() && users > 0,
        format!("{} runs, {users} users, {} mismatches {bad:?}", runs.len(), bad.len()),
    )
}

fn anonymity() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let values = credit_value_count(10_000, 10);
    let pop = uniform_population(10_000, 10_000, 10, &mut rng);
    let r = anonymity_sets(pop);
    let expect = 10_000.0 / values as f64;
    let mean = r.mean_per_set();
    (
        values == 1000 && (mean - expect).abs() <= 0.05 * expect,
        format!(
            "{values} values, per-set mean {mean:.3} (target {expect}), per-user mean {:.3}, sets {}",
            r.mean_experienced(),
            r.nonempty()
        ),
    )
}

fn ticket_population(unique: bool) -> String {
    let mut s = String::from(
        "group tiny
net station A pto metro
net station B pto metro
net station C pto metro
net station D pto metro
net link A B 8000 10 20
net link B C 5000 5 15
net link C D 9000 10 20
fares unit 150 ceiling 600
actor pto metro
actor inspector ivan metro
",
    );
    let routes: &[&str] = if unique { &["A B", "A B C", "A B C D"] } else { &["A B", "A B C"] };
    let mut buys = Vec::new();
    let mut checks = Vec::new();
    for (class, route) in routes.iter().enumerate() {
        let members = if class == 2 { 1 } else { 10 };
        for i in 0..members {
            let name = format!("p{class}x{i}");
            s.push_str(&format!("actor user {name} 10.2.{class}.{i}\n"));
            buys.push(format!("{name} buy {route}"));
            let stations: Vec<&str> = route.split(' ').collect();
            checks.push(format!("ivan inspect {name} {} {}", stations[0], stations[1]));
        }
    }
    s.push_str(&buys.join("\n"));
    s.push_str("\nclock advance 30\n");
    s.push_str(&checks.join("\n"));
    s.push_str("\nclock advance 30\nmetro settle\n");
    s
}

fn unlinkability() -> Verdict {
    let all = Coalition::all();
    let count = |unique: bool| {
        let out = run(&scenario(&ticket_population(unique)), Options::default());
        let r = coalition_link(&out.knowledge, &all, &LinkOptions::default());
        let inspected = out.trace.lines().iter().filter(|l| l.contains(" ticket ok")).count();
        (
            r.count(LinkKind::ProtocolLeak),
            r.count(LinkKind::ValueCorrelation),
            inspected,
            out.is_clean(),
        )
    };
    let (leak, value, n, clean) = count(false);
    let (uleak, uvalue, un, uclean) = count(true);
    (
        leak == 0 && value == 0 && uleak == 0 && uvalue == 1 && clean && uclean && n == 20 && un == 21,
        format!(
            "two fare classes of 10: {leak} leaks, {value} value links over {n} inspections; with one unique fare: {uleak} leaks, {uvalue} value link"
        ),
    )
}

fn latency() -> Verdict {
    let t = bench::run(Group::Production, 21, 1);
    let get = |p: Phase| t.iter().find(|x| x.phase == p).expect("phase timed");
    let checkin = get(Phase::Checkin).median();
    let lazy = get(Phase::CheckoutLazy).median();
    let eager = get(Phase::Checkout).median();
    let inspect = get(Phase::Inspect);
    let worst_inspect = *inspect.samples.iter().max().unwrap();
    (
        checkin < Duration::from_millis(300) && lazy < Duration::from_millis(300) && worst_inspect < Duration::from_secs(1),
        format!(
            "2048-bit medians: checkin {:.1}ms, lazy checkout {:.1}ms, checkout with issuance {:.1}ms, inspect {:.1}ms (max {:.1}ms)",
            ms(checkin),
            ms(lazy),
            ms(eager),
            ms(inspect.median()),
            ms(worst_inspect)
        ),
    )
}

fn log_integrity() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let mut log = HashChainLog::new(&mut rng);
    for i in 0..40 {
        let mut payload = vec![0u8; rng.gen_range(40..200)];
        rng.fill_bytes(&mut payload);
        log.append(if i % 2 == 0 { "checkin" } else { "checkout" }, payload, &mut rng);
    }
    let trusted = log.head();
    let bytes = log.encode();
    let intact = verify_chain(&bytes, &trusted).is_ok();
    let mut detected = 0;
    for _ in 0..10_000 {
        let mut m = bytes.clone();
        let bit = rng.gen_range(0..m.len() * 8);
        m[bit / 8] ^= 1 << (bit % 8);
        if verify_chain(&m, &trusted).is_err() {
            detected += 1;
        }
    }
    (
        intact && detected == 10_000,
        format!("intact log verifies={intact}, {detected}/10000 single-bit mutations detected over {} bytes", bytes.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "perfect blindness", blindness),
        (2, "crash matrix", crash_matrices),
        (3, "money conservation", conservation),
        (4, "double spend", double_spend),
        (5, "credit arithmetic", credit_arithmetic),
        (6, "anonymity sets", anonymity),
        (7, "coalition unlinkability", unlinkability),
        (8, "latency", latency),
        (9, "log integrity", log_integrity),
    ];
    let wanted: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let (pass, detail) = check();
        if !pass {
            failed += 1;
        }
        println!("criterion {id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
