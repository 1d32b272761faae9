//! Acceptance suite: one PASS/FAIL line per criterion, run sequentially so
//! the time limits measure a single check at a time.
//!
//! Criteria 2, 5 and 6 are stated for the network with the original output
//! weights, on which the circuit is not an abstraction (inputs whose pairs
//! both differ reach `Y = 1.98`). Those criteria are run as stated and fail;
//! each is followed by a companion line on `network-N-signed`. The target
//! exits nonzero only if an outcome differs from the one recorded in
//! `EXPECTED`.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use implcheck::abstraction::{
    check_abstraction_under_translation, check_constructive_abstraction, check_exact_transformation,
    check_translation, AbstractionOptions, Alignment, Cell, Renaming, Verdict, VerificationReport,
};
use implcheck::align_search::{search, SearchConfig, SearchOutcome};
use implcheck::audit::{audit, PropertySpec};
use implcheck::expr::{Expr, Semantics};
use implcheck::fixtures;
use implcheck::intervene::{check_algebra_laws, Interventional, LawCase, LawReport};
use implcheck::model::{all_boolean_inputs, Assignment, CausalModel};
use implcheck::rational::{int, Rational};
use implcheck::translate::{pull_back, translate_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criterion label and whether it is expected to pass.
const EXPECTED: &[(&str, bool)] = &[
    ("1", true),
    ("2", false),
    ("2-signed", true),
    ("3", true),
    ("4", true),
    ("5", false),
    ("5-signed", true),
    ("6", false),
    ("6-signed", true),
    ("7", true),
    ("8", true),
];

struct Outcome {
    label: &'static str,
    pass: bool,
}

fn report(outcomes: &mut Vec<Outcome>, label: &'static str, title: &str, pass: bool, elapsed: Duration, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // Written to the raw handle so the line is visible without --nocapture.
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {label:<9} {verdict}  {title} ({:.3} s): {detail}", elapsed.as_secs_f64()).unwrap();
    out.flush().unwrap();
    outcomes.push(Outcome { label, pass });
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let value = f();
    (value, start.elapsed())
}

fn bits(prefix: &str, n: u32) -> Assignment {
    (0..4)
        .map(|i| (format!("{prefix}{}", i + 1), int(((n >> (3 - i)) & 1) as i64)))
        .collect()
}

fn hard(pairs: &[(&str, i64)]) -> Interventional {
    Interventional::hard(pairs.iter().map(|(k, v)| (k.to_string(), int(*v))))
}

fn to_bool(v: &Rational) -> bool {
    *v == int(1)
}

// ---------------------------------------------------------------------------

fn criterion_1(outcomes: &mut Vec<Outcome>) {
    let m = fixtures::circuit_m();
    let (mismatches, elapsed) = timed(|| {
        let mut bad = Vec::new();
        for n in 0..16u32 {
            let a: Vec<bool> = (0..4).map(|i| (n >> (3 - i)) & 1 == 1).collect();
            let (b1, b2) = (a[0] == a[1], a[2] == a[3]);
            let c = b1 == b2;
            let run = m.run_with(&bits("A", n)).unwrap();
            if (to_bool(&run["B1"]), to_bool(&run["B2"]), to_bool(&run["C"])) != (b1, b2, c) {
                bad.push(n);
            }
        }
        bad
    });
    let pass = mismatches.is_empty() && elapsed < Duration::from_millis(100);
    report(
        outcomes,
        "1",
        "circuit run-table equals brute-force truth table",
        pass,
        elapsed,
        format!("16 inputs, {} mismatches", mismatches.len()),
    );
}

fn constructive_line(outcomes: &mut Vec<Outcome>, label: &'static str, low: &CausalModel, what: &str) {
    let m = fixtures::circuit_m();
    let (r, elapsed) = timed(|| {
        check_constructive_abstraction(
            low,
            &m,
            &fixtures::alignment_n_to_m(),
            &all_boolean_inputs(low),
            &AbstractionOptions::default(),
        )
        .unwrap()
    });
    let pass = r.passed() && elapsed < Duration::from_secs(1);
    let detail = match r.witnesses.first() {
        None => format!("{} checks, 0 failed", r.checked),
        Some(w) => format!("{} of {} checks failed; first: {}", r.failed, r.checked, w.description),
    };
    report(outcomes, label, &format!("circuit is a constructive abstraction of {what}"), pass, elapsed, detail);
}

fn criterion_3(outcomes: &mut Vec<Outcome>) {
    let (star, m) = (fixtures::circuit_m_star(), fixtures::circuit_m());
    let t = fixtures::translation_m_star_to_m();
    let ((mismatches, checks, pull_ok, family), elapsed) = timed(|| {
        let translated = translate_model(&star, &t).unwrap();
        let mut singles = Vec::new();
        for k in ["B1", "B2", "C"] {
            for v in [0, 1] {
                singles.push((k, v));
            }
        }
        let mut interventionals: Vec<Interventional> = singles.iter().map(|&(k, v)| hard(&[(k, v)])).collect();
        for &(k1, v1) in &singles {
            for &(k2, v2) in &singles {
                if k1 != k2 {
                    interventionals.push(Interventional::compose(vec![hard(&[(k1, v1)]), hard(&[(k2, v2)])]));
                }
            }
        }
        let (mut mismatches, mut checks) = (0, 0);
        for i in &interventionals {
            let (ours, theirs) = (i.apply(&translated).unwrap(), i.apply(&m).unwrap());
            for n in 0..16 {
                let x = bits("A", n);
                checks += 1;
                if ours.run_with(&x).unwrap() != theirs.run_with(&x).unwrap() {
                    mismatches += 1;
                }
            }
        }

        // Pull-backs, checked extensionally against the conjugation oracle:
        // B1 <- v becomes D1 <- v and D2 <- xnor(v, xnor(A3, A4)).
        let mut pull_ok = true;
        for v in [1, 0] {
            let low = pull_back(&t, &hard(&[("B1", v)]), &star).unwrap();
            let targets: Vec<String> = low.targets().into_iter().collect();
            pull_ok &= targets == ["D1", "D2"];
            let intervened = low.apply(&star).unwrap();
            for n in 0..16 {
                let run = intervened.run_with(&bits("A", n)).unwrap();
                let b2 = run["A3"] == run["A4"];
                let d2 = (v == 1) == b2;
                pull_ok &= run["D1"] == int(v) && to_bool(&run["D2"]) == d2;
            }
        }
        let family = check_translation(&star, &m, &t, &all_boolean_inputs(&star)).unwrap();
        (mismatches, checks, pull_ok, family)
    });
    let pass = mismatches == 0 && pull_ok && family.passed() && elapsed < Duration::from_secs(1);
    report(
        outcomes,
        "3",
        "translated recarved circuit is run-equivalent to the circuit",
        pass,
        elapsed,
        format!(
            "{checks} intervened runs, {mismatches} mismatches; pull-back of B1<-1 is {{D1<-1, D2<-xnor(A3,A4)}}: {}; \
             intervention family {} checks, {} failed",
            if pull_ok { "yes" } else { "no" },
            family.checked,
            family.failed
        ),
    );
}

fn random_targets(rng: &mut ChaCha8Rng, pool: &[String]) -> Vec<String> {
    let mut chosen: Vec<String> = pool.iter().filter(|_| rng.random_bool(0.4)).cloned().collect();
    if chosen.is_empty() {
        chosen.push(pool[rng.random_range(0..pool.len())].clone());
    }
    chosen
}

fn random_hard(rng: &mut ChaCha8Rng, targets: &[String]) -> Interventional {
    Interventional::hard(targets.iter().map(|t| (t.clone(), int(rng.random_range(0..2)))))
}

/// Each case is, in turn, a pair on disjoint targets, a pair on the same
/// targets, and an unconstrained pair.
pub fn law_cases(seed: u64, count: usize) -> Vec<LawCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let n = rng.random_range(2..=8);
            let model = fixtures::random_boolean_dag(&mut rng, n);
            let names = model.variable_names();
            let (t1, t2) = match k % 3 {
                0 => {
                    let split = rng.random_range(1..n);
                    let (left, right) = names.split_at(split);
                    (random_targets(&mut rng, left), random_targets(&mut rng, right))
                }
                1 => {
                    let t = random_targets(&mut rng, &names);
                    (t.clone(), t)
                }
                _ => (random_targets(&mut rng, &names), random_targets(&mut rng, &names)),
            };
            LawCase {
                first: random_hard(&mut rng, &t1),
                second: random_hard(&mut rng, &t2),
                model,
            }
        })
        .collect()
}

fn criterion_4(outcomes: &mut Vec<Outcome>) {
    let cases = law_cases(4, 3000);
    let (r, elapsed): (LawReport, _) = timed(|| check_algebra_laws(&cases));
    let enough = r.laws.iter().all(|l| l.checked >= 1000);
    let pass = r.pass && enough && elapsed < Duration::from_secs(10);
    let detail = r
        .laws
        .iter()
        .map(|l| format!("{} {} cases, {}", l.law, l.checked, l.counterexample.as_deref().unwrap_or("0 counterexamples")))
        .collect::<Vec<_>>()
        .join("; ");
    report(outcomes, "4", "intervention algebra laws on random DAGs", pass, elapsed, detail);
}

fn same_faces() -> PropertySpec {
    PropertySpec::new("same expression", Expr::xnor(Expr::var("A3"), Expr::var("A4")))
}

fn audit_line(outcomes: &mut Vec<Outcome>, label: &'static str, low: &CausalModel, what: &str) {
    let m = fixtures::circuit_m();
    let alignment = fixtures::alignment_n_to_m();
    let prop = same_faces();
    let inputs = all_boolean_inputs(low);
    let (r, elapsed) = timed(|| audit(low, &m, &alignment, "B2", &prop, &inputs).unwrap());
    let info = r.information.verdict == Verdict::Pass && r.information.rows.len() == 16;
    let used = r.use_.verdict == Verdict::Pass;
    let narrative = r.misrepresentation.witnesses.iter().find(|w| {
        w.input["X3"] == int(1)
            && w.input["X4"] == int(1)
            && w.vehicle_value == int(0)
            && w.property_value == int(1)
            && w.output != w.factual_output
            && w.recheck(low, &m, &alignment, "B2", &prop)
    });
    let narrative_ok = narrative.is_some_and(|w| {
        // The output must be the circuit's prediction with B2 forced to 0.
        let x: Assignment = (1..=4).map(|i| (format!("A{i}"), w.input[&format!("X{i}")].clone())).collect();
        let predicted = hard(&[("B2", 0)]).apply(&m).unwrap().run_with(&x).unwrap();
        w.output["C"] == predicted["C"]
    });
    let pass = info && used && narrative_ok && elapsed < Duration::from_secs(1);
    let detail = format!(
        "information {} on {} inputs; use {} ({} of {} interchanges failed); misrepresentation witness {}",
        if info { "passes" } else { "fails" },
        r.information.rows.len(),
        if used { "passes" } else { "fails" },
        r.use_.failed,
        r.use_.checked,
        match narrative {
            Some(w) if narrative_ok => format!(
                "at X3=X4=1 with patch {} realized at {} flips C {} -> {}",
                implcheck::model::describe_assignment(&w.patch),
                implcheck::model::describe_assignment(&w.realized_at),
                implcheck::rational::format_rational(&w.factual_output["C"]),
                implcheck::rational::format_rational(&w.output["C"])
            ),
            _ => "missing".into(),
        }
    );
    report(outcomes, label, &format!("representation audits of B2 on {what}"), pass, elapsed, detail);
}

fn search_line(outcomes: &mut Vec<Outcome>, label: &'static str, signed: bool, what: &str) {
    let m = fixtures::circuit_m();
    let mut failures = Vec::new();
    let (mut worst_evals, mut worst_time, mut worst_iia) = (0, Duration::ZERO, 1.0f64);
    let start = Instant::now();
    for seed in 0..20 {
        let low = fixtures::rotated_network(seed, signed);
        let mut config = SearchConfig::new(fixtures::hidden_layer(), fixtures::alignment_n_to_m());
        config.seed = seed;
        let (outcome, elapsed): (SearchOutcome, _) =
            timed(|| search(&low, &m, &config, &all_boolean_inputs(&low)).unwrap());
        worst_evals = worst_evals.max(outcome.evaluations);
        worst_time = worst_time.max(elapsed);
        worst_iia = worst_iia.min(outcome.score.iia);
        let ok = outcome.score.iia == 1.0
            && outcome.certified
            && outcome.evaluations <= 5000
            && elapsed <= Duration::from_secs(60);
        if !ok {
            failures.push(seed);
        }
    }
    report(
        outcomes,
        label,
        &format!("alignment search recovers planted rotations of {what}"),
        failures.is_empty(),
        start.elapsed(),
        format!(
            "20 seeds, {} failed {:?}; lowest IIA {worst_iia:.4}, most evaluations {worst_evals}, slowest seed {:.2} s",
            failures.len(),
            failures,
            worst_time.as_secs_f64()
        ),
    );
}

fn scrambled_alignment() -> Alignment {
    let cells = fixtures::alignment_n_to_m()
        .cells()
        .iter()
        .map(|c| match c.high.as_str() {
            "B1" | "B2" => {
                let (a, b) = if c.high == "B1" { ("H1_1", "H1_3") } else { ("H1_2", "H1_4") };
                Cell {
                    high: c.high.clone(),
                    low: vec![a.into(), b.into()],
                    map: Expr::eq(Expr::var(a), Expr::var(b)),
                }
            }
            _ => c.clone(),
        })
        .collect();
    Alignment::new(cells)
}

fn criterion_7(outcomes: &mut Vec<Outcome>) {
    let m = fixtures::circuit_m();
    let ((scrambled, scrambled_ok, exact, exact_ok), elapsed) = timed(|| {
        let n = fixtures::network_n_signed();
        let alignment = scrambled_alignment();
        let r = check_constructive_abstraction(&n, &m, &alignment, &all_boolean_inputs(&n), &AbstractionOptions::default())
            .unwrap();
        let scrambled_ok = !r.passed()
            && !r.witnesses.is_empty()
            && r.witnesses.iter().all(|w| w.recheck(&n, &m, &alignment, &Semantics::Exact));

        let star = fixtures::circuit_m_star();
        let tau = Renaming::positional(&star, &m);
        let settings: Vec<Interventional> = (0..16).map(|k| Interventional::hard(bits("A", k))).collect();
        let omega = |i: &Interventional| Some(i.clone());
        let e = check_exact_transformation(&star, &m, &tau, &omega, &settings, &Semantics::Exact).unwrap();
        let at_1000 = e
            .witnesses
            .iter()
            .find(|w| w.low_interventional == Interventional::hard(bits("A", 0b1000)));
        let exact_ok = !e.passed() && at_1000.is_some_and(|w| w.recheck(&star, &m, &tau, &Semantics::Exact));
        (r, scrambled_ok, e, exact_ok)
    });
    report(
        outcomes,
        "7",
        "negative controls fail with re-executable witnesses",
        scrambled_ok && exact_ok,
        elapsed,
        format!(
            "scrambled partition: {} of {} checks failed, witnesses recheck: {}; identity map from recarved circuit: \
             {} of {} inputs fail, witness at (1,0,0,0): {}",
            scrambled.failed,
            scrambled.checked,
            scrambled_ok,
            exact.failed,
            exact.checked,
            exact_ok
        ),
    );
}

fn reports_json() -> BTreeMap<&'static str, String> {
    let (n, m) = (fixtures::network_n_signed(), fixtures::circuit_m());
    let inputs = all_boolean_inputs(&n);
    let mut out = BTreeMap::new();
    let constructive: VerificationReport =
        check_constructive_abstraction(&n, &m, &fixtures::alignment_n_to_m(), &inputs, &AbstractionOptions::default())
            .unwrap();
    out.insert("constructive", json(&constructive));
    let literal = fixtures::network_n();
    out.insert(
        "audit",
        json(&audit(&literal, &m, &fixtures::alignment_n_to_m(), "B2", &same_faces(), &inputs).unwrap()),
    );
    let star = fixtures::circuit_m_star();
    out.insert(
        "translation",
        json(&check_translation(&star, &m, &fixtures::translation_m_star_to_m(), &all_boolean_inputs(&star)).unwrap()),
    );
    out.insert("laws", json(&check_algebra_laws(&law_cases(8, 300))));
    let low = fixtures::rotated_network(5, true);
    let mut config = SearchConfig::new(fixtures::hidden_layer(), fixtures::alignment_n_to_m());
    config.seed = 5;
    out.insert("search", json(&search(&low, &m, &config, &all_boolean_inputs(&low)).unwrap()));
    let t = implcheck::translate::Translation::linear_layer(
        &low,
        &fixtures::hidden_layer(),
        &fixtures::planted_matrix(5),
        &fixtures::hidden_layer(),
    )
    .unwrap();
    out.insert(
        "under-translation",
        json(
            &check_abstraction_under_translation(
                &low,
                &m,
                &t,
                &fixtures::alignment_n_to_m(),
                &all_boolean_inputs(&low),
                &AbstractionOptions::default(),
            )
            .unwrap(),
        ),
    );
    out
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap()
}

fn criterion_8(outcomes: &mut Vec<Outcome>) {
    let wide = std::thread::available_parallelism().map_or(1, |n| n.get()).max(4);
    let pool = |threads: usize| rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let (runs, elapsed) = timed(|| {
        [1, 1, wide, wide].map(|threads| pool(threads).install(reports_json))
    });
    let differing: Vec<&str> = runs[0]
        .iter()
        .filter(|(k, v)| runs[1..].iter().any(|r| r.get(*k) != Some(v)))
        .map(|(k, _)| *k)
        .collect();
    let bytes: usize = runs[0].values().map(String::len).sum();
    report(
        outcomes,
        "8",
        "reports are byte-identical across runs and thread counts",
        differing.is_empty(),
        elapsed,
        format!(
            "{} reports ({bytes} bytes) compared over 2 runs at 1 thread and 2 at {wide}; differing: {differing:?}",
            runs[0].len()
        ),
    );
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut outcomes = Vec::new();
    criterion_1(&mut outcomes);
    constructive_line(&mut outcomes, "2", &fixtures::network_n(), "network-N");
    constructive_line(&mut outcomes, "2-signed", &fixtures::network_n_signed(), "network-N-signed");
    criterion_3(&mut outcomes);
    criterion_4(&mut outcomes);
    audit_line(&mut outcomes, "5", &fixtures::network_n(), "network-N");
    audit_line(&mut outcomes, "5-signed", &fixtures::network_n_signed(), "network-N-signed");
    search_line(&mut outcomes, "6", false, "network-N");
    search_line(&mut outcomes, "6-signed", true, "network-N-signed");
    criterion_7(&mut outcomes);
    criterion_8(&mut outcomes);

    let unexpected: Vec<&str> = outcomes
        .iter()
        .filter(|o| EXPECTED.iter().find(|(l, _)| *l == o.label).map(|(_, p)| *p) != Some(o.pass))
        .map(|o| o.label)
        .collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed} of {} criteria lines pass; unexpected outcomes: {unexpected:?}", outcomes.len());
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
