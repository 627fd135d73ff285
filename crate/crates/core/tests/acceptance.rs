//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egb::answer::extract_answer;
use egb::harness::synthetic::{build_synthetic_suite, SpikeProfile, SuiteSpec, SyntheticSuite};
use egb::harness::{grade, report_json, run_benchmark, sweep, BenchOptions, SweepAxis};
use egb::lm::{ProfileModel, ProfilePlan, Slot, StepBoundaryRule};
use egb::prob::{entropy, varentropy};
use egb::search::{
    dedup, expand_step, rank_candidates, run_search_with, Beam, CandidatePool, SamplerState,
};
use egb::seed::lane_seed;
use egb::trace::{build_trace, render_svg, write_records, RenderOptions};
use egb::verify::{CountingVerifier, HashVerifier};
use egb::{
    Executor, Method, ModelContext, SearchConfig, SearchResult, SequenceModel, TokenDistribution,
    Verifier,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration) -> Result<String, String> {
    let took = started.elapsed();
    check(took < limit, || format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(format!("{took:.2?}"))
}

fn search(prompt: &str, cfg: &SearchConfig, model: &dyn SequenceModel, verifier: &dyn Verifier) -> SearchResult {
    run_search_with(prompt, cfg, model, verifier, &Executor::sequential()).expect("search runs")
}

/// Beams with wall-clock latencies zeroed, for exact comparison.
fn untimed(beams: &[Beam]) -> Vec<Beam> {
    let mut beams = beams.to_vec();
    for b in &mut beams {
        for s in &mut b.steps {
            s.score.latency_ms = 0.0;
        }
    }
    beams
}

fn profile_model(seed: u64, fork_rate: f64, low_rate: f64, n_steps: usize) -> ProfileModel {
    ProfileModel::new(
        "profile",
        8,
        4,
        n_steps,
        seed,
        ProfilePlan::Random {
            fork_rate,
            low_rate,
            max_arity: 4,
            context_sensitive: true,
        },
    )
    .expect("valid profile")
}

// 1. Entropy and varentropy against naive summation.
fn entropy_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v = rng.gen_range(2..=64);
        let weights: Vec<f64> = (0..v)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        let Ok(dist) = TokenDistribution::from_weights(weights) else {
            continue;
        };
        let p = dist.probs();
        let mut h = 0.0;
        for &x in p {
            if x > 0.0 {
                h -= x * x.log2();
            }
        }
        let mut var = 0.0;
        for &x in p {
            if x > 0.0 {
                let d = -x.log2() - h;
                var += x * d * d;
            }
        }
        let eh = (entropy(&dist) - h).abs();
        let ev = (varentropy(&dist) - var).abs();
        worst = worst.max(eh).max(ev);
        check(eh <= 1e-9 && ev <= 1e-9, || format!("V={v}: entropy err {eh:e}, varentropy err {ev:e}"))?;
    }
    for v in 2..=64usize {
        let u = TokenDistribution::uniform(v);
        check(entropy(&u) == (v as f64).log2(), || {
            format!("uniform V={v}: {} != {}", entropy(&u), (v as f64).log2())
        })?;
        for i in [0, v - 1] {
            let o = TokenDistribution::one_hot(v, i);
            check(entropy(&o) == 0.0 && varentropy(&o) == 0.0, || format!("one-hot V={v} not 0"))?;
        }
    }
    let t = within(started, Duration::from_secs(1))?;
    Ok(format!("max abs err {worst:.1e}, {t}"))
}

// 2. Pool size bound.
fn pool_bound() -> Outcome {
    let started = Instant::now();
    let sizes = [2usize, 4, 8];
    let mut steps_checked = 0;
    for run in 0..200u64 {
        let k = sizes[(run % 3) as usize];
        let w = sizes[((run / 3) % 3) as usize];
        let model = profile_model(run, 0.3, 0.3, 4);
        let cfg = SearchConfig {
            tau: [0.3, 0.8, 1.2][(run % 3) as usize],
            beam_size: k,
            beam_width: w,
            max_steps: 8,
            seed: run,
            ..SearchConfig::default()
        };
        let r = search(&format!("run {run}"), &cfg, &model, &HashVerifier::new(run));
        for s in &r.steps {
            let u = s.uncertain;
            check(s.pool_size == s.certain + w * u, || {
                format!("run {run} step {}: |P|={} != {} + {w}*{u}", s.step, s.pool_size, s.certain)
            })?;
            check(s.pool_size <= k + (w - 1) * u, || {
                format!("run {run} step {}: |P|={} > K+(W-1)|U| = {}", s.step, s.pool_size, k + (w - 1) * u)
            })?;
            check(k + (w - 1) * u <= k * w, || format!("run {run} step {}: bound exceeds KW", s.step))?;
            steps_checked += 1;
        }
    }
    let t = within(started, Duration::from_secs(30))?;
    Ok(format!("{steps_checked} steps, {t}"))
}

// 3. Endpoint equivalences.
fn endpoints() -> Outcome {
    let started = Instant::now();
    for i in 0..50u64 {
        // Every filler position has some entropy, so each step forks.
        let model = profile_model(100 + i, 0.25, 0.75, 4);
        let verifier = HashVerifier::new(i);
        let prompt = format!("problem {i}");
        let egb0 = SearchConfig {
            tau: 0.0,
            beam_size: 3,
            beam_width: 3,
            max_steps: 8,
            seed: 7 * i,
            ..SearchConfig::default()
        };
        let bs = SearchConfig {
            method: Method::BeamSearch,
            ..egb0.clone()
        };
        let a = search(&prompt, &egb0, &model, &verifier);
        let b = search(&prompt, &bs, &model, &verifier);
        check(untimed(&a.all_beams) == untimed(&b.all_beams), || format!("problem {i}: tau=0 beams differ"))?;
        check(a.per_step_pool_sizes == b.per_step_pool_sizes, || format!("problem {i}: pool sizes differ"))?;
        check(a.total_model_calls == b.total_model_calls, || format!("problem {i}: model calls differ"))?;

        let inf = SearchConfig {
            tau: f64::INFINITY,
            ..egb0.clone()
        };
        let r = search(&prompt, &inf, &model, &verifier);
        check(r.branch_event_count() == 0, || format!("problem {i}: branch events at tau=inf"))?;
        check(r.all_beams.len() == 3, || format!("problem {i}: {} beams", r.all_beams.len()))?;
        for beam in &r.all_beams {
            let std_cfg = SearchConfig {
                method: Method::Standard,
                tau: f64::INFINITY,
                beam_size: 1,
                beam_width: 1,
                seed: lane_seed(inf.seed, beam.lane),
                ..inf.clone()
            };
            let s = search(&prompt, &std_cfg, &model, &verifier);
            check(s.best_beam.ctx.token_ids() == beam.ctx.token_ids(), || {
                format!("problem {i}: lane {} differs from standard decoding", beam.lane)
            })?;
            let sv: Vec<f64> = s.best_beam.steps.iter().map(|x| x.score.value).collect();
            let bv: Vec<f64> = beam.steps.iter().map(|x| x.score.value).collect();
            check(sv == bv, || format!("problem {i}: lane {} scores differ", beam.lane))?;
        }
        let lanes: BTreeSet<usize> = r.all_beams.iter().map(|b| b.lane).collect();
        check(lanes.len() == 3, || format!("problem {i}: lanes {lanes:?}"))?;
    }
    let t = within(started, Duration::from_secs(30))?;
    Ok(format!("50 problems, {t}"))
}

// 4. Rollback minimality.
fn rollback_minimality() -> Outcome {
    let started = Instant::now();
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 64,
            failure_persistence: None,
            ..PropConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let strategy = (any::<u64>(), 0.0f64..0.6, 0.0f64..0.4, 0.05f64..2.5, 2usize..5);
    let branch_points = std::cell::Cell::new(0usize);
    let result = runner.run(&strategy, |(seed, fork_rate, low_rate, tau, w)| {
        let model = profile_model(seed, fork_rate, low_rate, 3);
        let cfg = SearchConfig {
            tau,
            beam_size: 3,
            beam_width: w,
            max_steps: 6,
            seed,
            ..SearchConfig::default()
        };
        let exec = Executor::sequential();
        let verifier = HashVerifier::new(seed);
        let mut beams = vec![Beam::root(ModelContext::from_prompt(&model, "P").unwrap(), false)];
        for step in 1..=cfg.max_steps {
            if beams.iter().all(|b| b.finished) {
                break;
            }
            let pool = expand_step(&beams, &cfg, &model, step, &exec).unwrap();
            for c in pool.entries.iter().filter(|c| !c.passthrough) {
                // Independent first-exceedance scan.
                let first = c.events.iter().position(|e| e.prediction.entropy() > tau);
                match (c.t_star, first) {
                    (Some(t), Some(f)) => prop_assert_eq!(t, f),
                    (None, None) => {}
                    other => return Err(TestCaseError::fail(format!("t* mismatch {other:?}"))),
                }
                if let Some(t) = c.t_star {
                    prop_assert_eq!(c.states[t], SamplerState::BranchPoint);
                    for sibling in pool.entries.iter().filter(|s| s.source_beam == c.source_beam) {
                        prop_assert_eq!(sibling.t_star, Some(t));
                        let a: Vec<u32> = sibling.events[..t].iter().map(|e| e.token_id).collect();
                        let b: Vec<u32> = c.events[..t].iter().map(|e| e.token_id).collect();
                        prop_assert_eq!(a, b);
                    }
                    if c.branch == 0 {
                        branch_points.set(branch_points.get() + 1);
                    }
                }
            }
            let pool = dedup(pool, &beams);
            let ranking = rank_candidates(&pool, &beams, &cfg, &verifier, step, &exec).unwrap();
            let selection = egb::search::select(&pool, &ranking, cfg.beam_size);
            beams = selection.build_beams(&pool, &ranking, &beams);
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let t = within(started, Duration::from_secs(10))?;
    Ok(format!("64 profiles, {} branch points, {t}", branch_points.get()))
}

// 5. Dedup contract.
fn dedup_contract() -> Outcome {
    let model = profile_model(5, 0.0, 0.0, 3);
    let cfg = SearchConfig {
        tau: 1.0,
        beam_size: 1,
        beam_width: 1,
        ..SearchConfig::default()
    };
    let exec = Executor::sequential();
    let root = Beam::root(ModelContext::from_prompt(&model, "P").unwrap(), false);
    let beams = vec![root];
    let base = expand_step(&beams, &cfg, &model, 1, &exec).map_err(|e| e.to_string())?;
    let original = base.entries[0].clone();
    for k in [1usize, 2, 5, 9] {
        let mut entries = Vec::new();
        for j in 0..k {
            let mut c = original.clone();
            c.branch = j;
            entries.push(c);
        }
        let pool = CandidatePool {
            entries,
            generated: k,
            ..CandidatePool::default()
        };
        let pool = dedup(pool, &beams);
        check(pool.entries.len() == 1, || format!("k={k}: {} survivors", pool.entries.len()))?;
        check(pool.dedup_removed == k - 1, || format!("k={k}: removed {}", pool.dedup_removed))?;
        check(pool.entries[0].branch == 0, || format!("k={k}: first copy did not survive"))?;
        let verifier = CountingVerifier::new(HashVerifier::new(1));
        rank_candidates(&pool, &beams, &cfg, &verifier, 1, &exec).map_err(|e| e.to_string())?;
        check(verifier.calls() == 1, || format!("k={k}: {} verifier calls", verifier.calls()))?;
    }
    Ok("k in {1,2,5,9}".into())
}

fn rescue_suite() -> SyntheticSuite {
    build_synthetic_suite(&SuiteSpec {
        n_problems: 10,
        fork_depth: 3,
        spike_profile: SpikeProfile {
            fork_arity: 2,
            correct_mass: 0.5,
            background: 0.0,
        },
        extra_steps: 1,
        seed: 3,
    })
    .expect("suite builds")
}

/// Every (leaf text, answer) reachable from `prompt`.
fn enumerate_leaves(model: &dyn SequenceModel, prompt: &str) -> Vec<(String, String)> {
    let rule = StepBoundaryRule::default();
    let mut leaves = Vec::new();
    let mut stack = vec![ModelContext::from_prompt(model, prompt).unwrap()];
    while let Some(ctx) = stack.pop() {
        if rule.is_terminal(ctx.text()) {
            let text = ctx.generated_text().to_string();
            let answer = extract_answer(&text, &rule.terminal_markers);
            leaves.push((text, answer));
            continue;
        }
        let pred = model.next_distribution(&ctx).unwrap();
        for (i, p) in pred.dist.probs().iter().enumerate() {
            if *p > 0.0 {
                let id = pred.token_at(i);
                let mut next = ctx.clone();
                next.push(id, &model.token_text(id).unwrap());
                stack.push(next);
            }
        }
    }
    leaves
}

// 6. Synthetic rescue.
fn synthetic_rescue() -> Outcome {
    let started = Instant::now();
    let suite = rescue_suite();
    let egb_cfg = SearchConfig {
        tau: 0.5,
        beam_size: 4,
        beam_width: 2,
        max_steps: 12,
        seed: 11,
        ..SearchConfig::default()
    };
    let mut egb_correct = 0;
    for p in &suite.problems {
        let leaves = enumerate_leaves(&suite.model, &p.prompt);
        check(leaves.len() == 8, || format!("{}: {} leaves, expected 2^3", p.id, leaves.len()))?;
        let gold: Vec<&(String, String)> = leaves.iter().filter(|(_, a)| grade(a, &p.gold_answer)).collect();
        check(gold.len() == 1, || format!("{}: {} correct leaves", p.id, gold.len()))?;
        let r = search(&p.prompt, &egb_cfg, &suite.model, &suite.verifier);
        if grade(&r.answer, &p.gold_answer) {
            egb_correct += 1;
        }
        check(r.best_beam.ctx.generated_text() == gold[0].0, || {
            format!("{}: best beam is not the correct leaf", p.id)
        })?;
    }
    let egb_acc = egb_correct as f64 / suite.problems.len() as f64;
    check(egb_acc == 1.0, || format!("EGB accuracy {egb_acc}"))?;

    let mut std_correct = 0;
    for s in 0..500u64 {
        let p = &suite.problems[(s % 10) as usize];
        let cfg = SearchConfig {
            seed: s,
            max_steps: 12,
            ..SearchConfig::for_method(Method::Standard)
        };
        let r = search(&p.prompt, &cfg, &suite.model, &suite.verifier);
        if grade(&r.answer, &p.gold_answer) {
            std_correct += 1;
        }
    }
    let std_acc = std_correct as f64 / 500.0;
    check((0.06..=0.22).contains(&std_acc), || format!("standard accuracy {std_acc} outside [0.06, 0.22]"))?;
    let t = within(started, Duration::from_secs(120))?;
    Ok(format!("EGB 1.0, standard {std_acc:.3} (expected 0.125), {t}"))
}

// 7. Token and verifier savings when half the beam-steps are certain.
fn efficiency() -> Outcome {
    let started = Instant::now();
    let (k, w) = (4usize, 4usize);
    let model = ProfileModel::new(
        "alternating",
        10,
        4,
        6,
        9,
        ProfilePlan::Alternating {
            fork_arity: 8,
            certain: Slot::Fork(2),
        },
    )
    .unwrap();
    let verifier = HashVerifier::new(4);
    let base = SearchConfig {
        tau: 1.5,
        beam_size: k,
        beam_width: w,
        max_steps: 10,
        ..SearchConfig::default()
    };
    let (mut egb_tokens, mut bs_tokens, mut egb_ver, mut bs_ver) = (0, 0, 0, 0);
    for i in 0..10u64 {
        let prompt = format!("q{i}");
        let egb_cfg = SearchConfig { seed: i, ..base.clone() };
        let bs_cfg = SearchConfig {
            seed: i,
            method: Method::BeamSearch,
            tau: 0.0,
            ..base.clone()
        };
        let a = search(&prompt, &egb_cfg, &model, &verifier);
        let b = search(&prompt, &bs_cfg, &model, &verifier);
        egb_tokens += a.total_tokens_generated;
        bs_tokens += b.total_tokens_generated;
        egb_ver += a.total_verifier_calls;
        bs_ver += b.total_verifier_calls;
    }
    let ratio = egb_tokens as f64 / bs_tokens as f64;
    check(4 * egb_tokens <= 3 * bs_tokens, || {
        format!("EGB tokens {egb_tokens} > 0.75 x beam search {bs_tokens} (ratio {ratio:.3})")
    })?;
    check(egb_ver < bs_ver, || format!("verifier calls {egb_ver} !< {bs_ver}"))?;
    let t = within(started, Duration::from_secs(30))?;
    Ok(format!(
        "tokens {egb_tokens}/{bs_tokens} = {ratio:.3} (steady state {:.3}), verifier {egb_ver}/{bs_ver}, {t}",
        (1 + w) as f64 / (2 * w) as f64
    ))
}

fn small_suite(n: usize) -> SyntheticSuite {
    build_synthetic_suite(&SuiteSpec {
        n_problems: n,
        fork_depth: 2,
        spike_profile: SpikeProfile {
            fork_arity: 4,
            correct_mass: 0.4,
            background: 0.0,
        },
        extra_steps: 1,
        seed: 5,
    })
    .unwrap()
}

fn expected_budget(cfg: &SearchConfig) -> usize {
    match cfg.method {
        Method::SelfConsistency => cfg.beam_size,
        _ => cfg.beam_size * cfg.beam_width,
    }
}

// 8. Budget accounting.
fn budget_accounting() -> Outcome {
    let suite = small_suite(3);
    let opts = BenchOptions::default();
    let base = SearchConfig {
        max_steps: 8,
        ..SearchConfig::default()
    };
    let mut checked = 0;
    let mut run = |cfg: &SearchConfig, axis: SweepAxis, values: &[f64]| -> Result<Vec<egb::harness::RunReport>, String> {
        let outcomes = sweep(&suite.problems, cfg, axis, values, &suite.model, &suite.verifier, &opts)
            .map_err(|e| e.to_string())?;
        let reports: Vec<_> = outcomes.into_iter().map(|o| o.report).collect();
        for r in &reports {
            check(r.aggregate.total_budget == expected_budget(&r.config), || {
                format!("{} {:?}: budget {} for config {:?}", r.method, r.sweep, r.aggregate.total_budget, r.config)
            })?;
            checked += 1;
        }
        Ok(reports)
    };
    let sc = SearchConfig::for_method(Method::SelfConsistency);
    let reports = run(&sc, SweepAxis::Budget, &[2.0, 4.0, 8.0, 16.0, 32.0])?;
    for (r, b) in reports.iter().zip([2, 4, 8, 16, 32]) {
        check(r.aggregate.total_budget == b && r.method == "self_consistency", || {
            format!("self-consistency budget {} for {b} samples", r.aggregate.total_budget)
        })?;
    }
    for method in [Method::Egb, Method::BeamSearch] {
        let cfg = SearchConfig {
            method,
            ..base.clone()
        };
        let mut cfg = cfg;
        cfg.apply_method();
        let reports = run(&cfg, SweepAxis::Budget, &[4.0, 8.0, 16.0])?;
        for (r, b) in reports.iter().zip([4, 8, 16]) {
            check(r.aggregate.total_budget == b, || format!("{method} budget {} != {b}", r.aggregate.total_budget))?;
        }
    }
    let reports = run(&base, SweepAxis::K, &[2.0, 4.0, 8.0])?;
    let means: Vec<f64> = reports.iter().map(|r| r.aggregate.mean_candidates).collect();
    check(means.windows(2).all(|m| m[0] <= m[1]), || format!("mean candidates not monotone: {means:?}"))?;
    let reports = run(&base, SweepAxis::Tau, &[0.0, 1.5, f64::INFINITY])?;
    let methods: Vec<&str> = reports.iter().map(|r| r.method.as_str()).collect();
    check(methods == ["beam_search", "egb", "self_consistency"], || format!("labels {methods:?}"))?;
    Ok(format!("{checked} reports"))
}

fn bench_bytes(workers: usize) -> (String, Vec<u8>) {
    let suite = small_suite(6);
    let cfg = SearchConfig {
        seed: 42,
        max_steps: 8,
        ..SearchConfig::default()
    };
    let opts = BenchOptions {
        exec: Executor::with_workers(workers),
        collect_traces: true,
        ..BenchOptions::default()
    };
    let outcome = run_benchmark(&suite.problems, &cfg, &suite.model, &suite.verifier, &opts).unwrap();
    let mut traces = Vec::new();
    for (id, records) in &outcome.traces {
        traces.extend_from_slice(id.as_bytes());
        traces.push(b'\n');
        write_records(records, &mut traces).unwrap();
    }
    (report_json(&outcome.report), traces)
}

// 9. Determinism across reruns and worker counts.
fn determinism() -> Outcome {
    let (r1, t1) = bench_bytes(1);
    let (r4, t4) = bench_bytes(4);
    let (r4b, t4b) = bench_bytes(4);
    check(r1 == r4 && r4 == r4b, || "report JSON differs between runs".into())?;
    check(t1 == t4 && t4 == t4b, || "trace bytes differ between runs".into())?;
    check(!t1.is_empty(), || "no traces collected".into())?;
    Ok(format!("{} report bytes, {} trace bytes", r1.len(), t1.len()))
}

// 10. Trace fidelity.
fn trace_fidelity() -> Outcome {
    let mut events = 0;
    for seed in 0..20u64 {
        let model = profile_model(seed, 0.3, 0.3, 4);
        let cfg = SearchConfig {
            tau: 1.0,
            beam_size: 3,
            beam_width: 3,
            max_steps: 8,
            seed,
            ..SearchConfig::default()
        };
        let r = search("trace", &cfg, &model, &HashVerifier::new(seed));
        let records = build_trace(&r);
        for beam in &r.all_beams {
            let expected: Vec<(usize, usize)> =
                beam.branch_events.iter().map(|e| (e.step_index, e.token_position)).collect();
            let got: Vec<(usize, usize)> = records
                .iter()
                .filter(|x| x.beam_id == beam.id && x.branched)
                .map(|x| (x.step_index, x.token_position))
                .collect();
            check(expected == got, || format!("seed {seed} beam {}: {expected:?} vs {got:?}", beam.id))?;
            events += expected.len();
        }
        for x in &records {
            check(x.branched == (x.sampler_state == SamplerState::BranchPoint), || {
                format!("seed {seed}: branched flag and sampler state disagree")
            })?;
        }
        let opts = RenderOptions {
            threshold: Some(cfg.tau),
            ..RenderOptions::default()
        };
        let a = render_svg(&records, &opts).map_err(|e| e.to_string())?;
        let b = render_svg(&build_trace(&r), &opts).map_err(|e| e.to_string())?;
        check(a == b, || format!("seed {seed}: SVG not byte-stable"))?;
        let markers = a.matches(r#"class="branch-marker""#).count();
        let branched = records.iter().filter(|x| x.branched).count();
        check(markers == branched, || format!("seed {seed}: {markers} markers for {branched} branch points"))?;
    }
    check(events > 0, || "no branch events exercised".into())?;
    Ok(format!("{events} branch events"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("entropy oracle", entropy_oracle),
        ("pool-size bound", pool_bound),
        ("tau endpoint equivalence", endpoints),
        ("rollback minimality", rollback_minimality),
        ("dedup contract", dedup_contract),
        ("synthetic rescue", synthetic_rescue),
        ("efficiency", efficiency),
        ("budget accounting", budget_accounting),
        ("determinism", determinism),
        ("trace fidelity", trace_fidelity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
