//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;

use common::*;
use plural::detect::{self, AttitudeMatrix, DetectParams, FcmParams, Feature};
use plural::econ::LedgerEvent;
use plural::fabric::SocialFabric;
use plural::rank;
use plural::score::{self, BlocTally, BlocWeighting, MfParams, ScoreParams, ScoringMode, Scope};
use plural::sim::{self, aggregate_belief, MemberBelief};
use plural::{CitizenId, CommunityId, ContentId};
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

/// 1. Exposure shares against a brute-force evaluation of the equation.
fn exposure_oracle_check() -> Outcome {
    let (mut worst, mut worst_sum, mut checked) = (0.0f64, 0.0f64, 0);
    for seed in 0..100 {
        let inst = exposure_instance(1_000 + seed);
        for p in inst.fabric.citizens() {
            let got = rank::exposure_weights(p.id, &inst.fabric, &inst.book, &inst.pool).map_err(|e| e.to_string())?;
            let want = exposure_oracle(&inst, p.id.0);
            for (m, w) in &want {
                worst = worst.max((got[m] - w).abs());
            }
            worst_sum = worst_sum.max((got.values().sum::<f64>() - 1.0).abs());
            checked += 1;
        }
    }
    let detail = format!("{checked} citizen feeds over 100 instances, max |Δ| {worst:.1e}, max |Σ−1| {worst_sum:.1e}");
    if worst <= 1e-12 && worst_sum <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 2. ψ = ι·max(β, δ), exactly, on 10⁴ random inputs.
fn psi_formula() -> Outcome {
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(10_000)
    });
    let strategy = (0.0..10.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0u32..30, 0u32..30, 0u32..30, 0u32..30);
    runner
        .run(&strategy, |(iota, beta, delta, p0, n0, p1, n1)| {
            let psi = score::community_score(iota, beta, delta);
            proptest::prop_assert_eq!(psi, iota * beta.max(delta));
            let tallies = [
                BlocTally { positive: p0, negative: n0, size: 10 },
                BlocTally { positive: p1, negative: n1, size: 15 },
            ];
            let card = score::card_from_tallies(
                ContentId(0),
                Scope::Community(CommunityId(0)),
                iota,
                &tallies,
                None,
                &ScoreParams::default(),
            );
            proptest::prop_assert_eq!(card.psi, card.iota * card.beta.max(card.delta));
            Ok(())
        })
        .map(|_| "10000 cases, bitwise equal on the formula and on assembled cards".to_string())
        .map_err(|e| e.to_string())
}

fn beliefs_from_means(means: &[f64], per_bloc: usize) -> (Vec<MemberBelief>, Vec<BTreeSet<CitizenId>>) {
    let n = means.len() * per_bloc;
    let mut members = Vec::new();
    let mut blocs = Vec::new();
    for (g, &m) in means.iter().enumerate() {
        let mut bloc = BTreeSet::new();
        for k in 0..per_bloc {
            let p = CitizenId((g * per_bloc + k) as u32);
            members.push(MemberBelief { citizen: p, belief: m, standing: 1.0 / n as f64 });
            bloc.insert(p);
        }
        blocs.push(bloc);
    }
    (members, blocs)
}

/// 3. Schur-concavity of common belief, plus exact consensus.
fn schur_concavity() -> Outcome {
    let mut r = rng(3);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1_000 {
        let n = r.random_range(2..=7);
        let (x, y) = majorization_pair(&mut r, n);
        let (mx, bx) = beliefs_from_means(&x, 4);
        let (my, by) = beliefs_from_means(&y, 4);
        let ax = aggregate_belief(&mx, Some(&bx)).map_err(|e| e.to_string())?;
        let ay = aggregate_belief(&my, Some(&by)).map_err(|e| e.to_string())?;
        worst = worst.max(ax - ay);
    }
    let mut consensus_ok = true;
    for _ in 0..1_000 {
        let v: f64 = r.random_range(0.0..=1.0);
        let n = r.random_range(1..=7);
        let per = r.random_range(1..=6);
        let (m, b) = beliefs_from_means(&vec![v; n], per);
        consensus_ok &= aggregate_belief(&m, Some(&b)).map_err(|e| e.to_string())? == v;
        consensus_ok &= aggregate_belief(&m, None).map_err(|e| e.to_string())? == v;
    }
    let detail = format!("1000 majorization pairs, max b(x) − b(y) = {worst:.1e}; consensus exact: {consensus_ok}");
    if worst <= 1e-12 && consensus_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 4. Every 2-bloc rate grid point at 0.1 resolution with α = 0: unanimous
///    approval beats every content some bloc rejects, and any content both
///    blocs approve beats every content some bloc fully rejects.
fn consensus_grid() -> Outcome {
    let mut comparisons = 0;
    let mut grid = Vec::new();
    for k0 in 0..=10u32 {
        for k1 in 0..=10u32 {
            grid.push((k0, k1));
        }
    }
    let sizes_list = [(10, 10), (10, 40)];
    for (s0, s1) in sizes_list {
        for weighting in [BlocWeighting::Uniform, BlocWeighting::Penrose] {
            let beta = |k0: u32, k1: u32| {
                let t = [
                    BlocTally { positive: k0, negative: 10 - k0, size: s0 },
                    BlocTally { positive: k1, negative: 10 - k1, size: s1 },
                ];
                score::bridging_from_tallies(&t, weighting, 0.0).unwrap()
            };
            let unanimous = beta(10, 10);
            if unanimous != 1.0 {
                return Err(format!("unanimous content scored {unanimous}"));
            }
            for &(a, b) in &grid {
                if (a, b) == (10, 10) {
                    continue;
                }
                comparisons += 1;
                let other = beta(a, b);
                if !(unanimous > other) {
                    return Err(format!("({a}/10, {b}/10) scored {other} ≥ unanimous"));
                }
                if a == 0 || b == 0 {
                    for &(c, d) in grid.iter().filter(|&&(c, d)| c > 0 && d > 0) {
                        comparisons += 1;
                        if !(beta(c, d) > other) {
                            return Err(format!("({c}, {d}) does not beat rejected ({a}, {b})"));
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{comparisons} grid comparisons across uniform/√n weights and equal/unequal blocs"))
}

/// 5. MF bridging on the planted 20×6 instance.
fn mf_bridging() -> Outcome {
    let raters: BTreeSet<CitizenId> = (0..20).map(CitizenId).collect();
    let mut top = 0;
    for seed in 0..100u64 {
        let reactions = planted_mf_instance(seed);
        let params = MfParams { seed, ..MfParams::default() };
        let fit = score::bridging_mf(&reactions, &raters, &params).map_err(|e| e.to_string())?;
        let (best, best_beta) = fit.beta_raw.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let strictly = fit.beta_raw.iter().filter(|(m, _)| *m != best).all(|(_, b)| b < best_beta);
        if *best == ContentId(0) && strictly {
            top += 1;
        }
    }
    let reactions = planted_mf_instance(0);
    let oracle = mf_oracle(&reactions, MfParams::default().reg);
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let params = MfParams { seed, ..MfParams::default() };
        let fit = score::bridging_mf(&reactions, &raters, &params).map_err(|e| e.to_string())?;
        for (m, want) in &oracle {
            worst = worst.max((fit.beta_raw[m] - want).abs());
        }
    }
    let detail = format!("bridging item on top in {top}/100 seeds; max |SGD − full-batch| {worst:.4} over 10 fit seeds");
    if top >= 95 && worst <= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 6. Planted 3-bloc recovery and monotone FCM objective.
fn community_recovery() -> Outcome {
    let mut recovered = 0;
    let mut runs = 0;
    let mut monotone = true;
    let non_increasing = |h: &[f64]| h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
    for seed in 0..100u64 {
        let (rows, labels) = planted_three_blocs(500 + seed, 30);
        let cols = (0..4).map(|j| Feature::Content(ContentId(j))).collect();
        let ids: Vec<CitizenId> = (0..rows.len() as u32).map(CitizenId).collect();
        let data = AttitudeMatrix::new(ids, cols, rows).map_err(|e| e.to_string())?;
        let params = DetectParams { seed, ..DetectParams::default() };
        let found = detect::detect_communities(&data, &params).map_err(|e| e.to_string())?;
        monotone &= non_increasing(&found.partition.objective_history);
        for k in 2..=7 {
            let part = detect::fuzzy_c_means(&data, &FcmParams::new(k, seed)).map_err(|e| e.to_string())?;
            monotone &= non_increasing(&part.objective_history);
            runs += 1;
        }
        let planted: Vec<BTreeSet<CitizenId>> = (0..3)
            .map(|g| (0..labels.len()).filter(|&i| labels[i] == g).map(|i| CitizenId(i as u32)).collect())
            .collect();
        let sets: Vec<BTreeSet<CitizenId>> = found.candidates.iter().map(|c| c.members.iter().copied().collect()).collect();
        if best_matches(&planted, &sets).iter().all(|&j| j >= 0.9) {
            recovered += 1;
        }
    }
    let detail = format!("recovered in {recovered}/100 seeds; objective non-increasing on all {runs}+100 runs: {monotone}");
    if recovered >= 95 && monotone {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 7. Ledger conservation across simulation runs, and the clamp path.
fn ledger_conservation() -> Outcome {
    let scenarios = [
        ("demo", short_demo(0, 30)),
        ("exhaustion", exhaustion_scenario()),
        ("advertisers", advertiser_scenario()),
    ];
    let mut entries = 0;
    let mut clamped = false;
    for (name, config) in scenarios {
        let s = sim::run(config).map_err(|e| format!("{name}: {e}"))?;
        check_ledger(&s).map_err(|e| format!("{name}: {e}"))?;
        entries += s.ledger.entries().len();
        if name == "exhaustion" {
            clamped = s.ledger.events().iter().any(|e| matches!(e, LedgerEvent::LambdaClamped { .. }));
        }
    }
    let detail = format!("3 runs, {entries} entries balanced per round, no negative account; clamp triggered: {clamped}");
    if clamped {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 8. Simplex invariants under 10⁴ random fabric mutations.
fn simplex_invariants() -> Outcome {
    let mut r = rng(8);
    let mut fabric = SocialFabric::new();
    fabric.add_citizen();
    fabric.add_community();
    for i in 0..10_000 {
        let op = random_op(&mut r);
        apply(&mut fabric, &op);
        simplex_ok(&fabric).map_err(|e| format!("after mutation {i} ({op:?}): {e}"))?;
    }
    fabric.audit().map_err(|e| e.to_string())?;
    let edges: usize = fabric.citizens().iter().map(|p| p.memberships().len()).sum();
    Ok(format!(
        "10000 mutations, {} citizens, {} communities, {edges} memberships; audit clean",
        fabric.citizens().len(),
        fabric.communities().len()
    ))
}

/// 9. Bridging ranking against the engagement baseline on the demo.
fn depolarization() -> Outcome {
    let (mut belief, mut polar) = (0, 0);
    let mut rows = Vec::new();
    for seed in 0..10u64 {
        let mut bridging = sim::demo_scenario();
        bridging.seed = seed;
        let mut baseline = bridging.clone();
        baseline.scoring.mode = ScoringMode::Engagement;
        let b = sim::run(bridging).map_err(|e| e.to_string())?;
        let e = sim::run(baseline).map_err(|e| e.to_string())?;
        let (bm, em) = (b.metrics.last().unwrap(), e.metrics.last().unwrap());
        if bm.mean_common_belief_top_bridging > em.mean_common_belief_top_bridging {
            belief += 1;
        }
        if bm.polarization_index < em.polarization_index {
            polar += 1;
        }
        rows.push(format!(
            "{seed}:{:+.4}/{:+.4}",
            bm.mean_common_belief_top_bridging - em.mean_common_belief_top_bridging,
            bm.polarization_index - em.polarization_index
        ));
    }
    let detail = format!(
        "common belief higher in {belief}/10, polarization lower in {polar}/10 (seed:Δbelief/Δpolarization {})",
        rows.join(" ")
    );
    if belief >= 8 && polar >= 8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 10. Byte-identical metrics.csv across repeated runs and thread counts.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/demo.json");
    let run = |tag: &str, threads: Option<&str>| -> Result<Vec<u8>, String> {
        let out = dir.path().join(tag);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_plural"));
        cmd.arg("run").arg("--scenario").arg(&scenario).arg("--out").arg(&out).args(["--seed", "4"]);
        match threads {
            Some(n) => cmd.env("PLURAL_THREADS", n),
            None => cmd.env_remove("PLURAL_THREADS"),
        };
        let o = cmd.output().map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{tag}: {}", String::from_utf8_lossy(&o.stderr)));
        }
        std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())
    };
    let first = run("a", None)?;
    let second = run("b", None)?;
    let one = run("t1", Some("1"))?;
    let four = run("t4", Some("4"))?;
    let same = first == second && first == one && first == four;
    let ledgers: Vec<Vec<u8>> = ["a", "t1", "t4"]
        .iter()
        .map(|t| std::fs::read(dir.path().join(t).join("ledger.csv")).unwrap_or_default())
        .collect();
    let ledgers_same = ledgers.windows(2).all(|w| w[0] == w[1]);
    let detail = format!(
        "metrics.csv ({} bytes) identical across 2 runs and 1/4 threads: {same}; ledger.csv identical too: {ledgers_same}",
        first.len()
    );
    if same {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "exposure equation oracle", exposure_oracle_check),
        (2, "psi formula", psi_formula),
        (3, "Schur-concave common belief", schur_concavity),
        (4, "group-aware consensus grid", consensus_grid),
        (5, "matrix-factorization bridging", mf_bridging),
        (6, "community recovery", community_recovery),
        (7, "ledger conservation", ledger_conservation),
        (8, "standing/devotion simplex", simplex_invariants),
        (9, "directional depolarization", depolarization),
        (10, "determinism", determinism),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    println!("acceptance: {}/10 passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
