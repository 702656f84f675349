//! Per-module invariants as seeded checks. Each check draws its own inputs
//! from the seed and returns a description of the first violation.

use std::collections::BTreeSet;

use psmscan::action_log::{parse_action_log, ActionLog, CascadeParams, CascadeSet, LogFormat, Timestamp};
use psmscan::causal::{CausalModel, CausalityVector};
use psmscan::classify::{knn_classify, threshold_predict, C2dc, FeatureRow, Label, LabeledUser, ThresholdRule};
use psmscan::community::{cohesion_test, louvain, CoPostGraph, CommunityPartition, LouvainOptions};
use psmscan::decay::{decay_vectors, window_sequence, DecayConfig, Span, WindowGrid};
use psmscan::eval::{prefix_subsets, rank_auc, timeliness, Confusion, TimelinessConfig};
use psmscan::features::{labeled_users, FeatureSpec};
use psmscan::synth::{generate, SynthConfig, SynthDataset};
use psmscan::Metric;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::small_case;

pub type Check = fn(u64) -> Result<(), String>;

/// `(module, invariant, check)` for every listed invariant.
pub const ALL: &[(&str, &str, Check)] = &[
    ("action_log", "dedup idempotence", dedup_idempotence),
    ("action_log", "canonical ordering", canonical_ordering),
    ("action_log", "key users at phi=0.5 <= ceil(size/2)", key_user_bound),
    ("action_log", "restrict composes as intersection", restrict_composition),
    ("action_log", "viral set monotone in theta", viral_monotone),
    ("causal_engine", "oracle equivalence", causal_oracle),
    ("causal_engine", "score bounds", score_bounds),
    ("causal_engine", "support monotone in interval", support_monotone),
    (
        "causal_engine",
        "prima facie <= key <= participants",
        prima_facie_nesting,
    ),
    ("causal_engine", "thread-count determinism", causal_determinism),
    ("causal_engine", "equal weights reduce wnb to nb", equal_weights_reduce),
    (
        "decay_engine",
        "sigma=0 single window reduces to plain score",
        decay_reduction,
    ),
    ("decay_engine", "window weights in (0,1], increasing", window_weights),
    ("decay_engine", "shift invariance", decay_shift_invariance),
    ("community_graph", "graph symmetric without self-loops", graph_symmetry),
    (
        "community_graph",
        "modularity non-decreasing per level",
        louvain_monotone,
    ),
    ("community_graph", "same seed gives same partition", louvain_stability),
    ("community_graph", "cohesion sample sizes", cohesion_sizes),
    ("classification", "threshold monotonicity", threshold_monotone),
    (
        "classification",
        "knn invariant to training order",
        knn_order_invariance,
    ),
    (
        "classification",
        "single-community c2dc equals knn",
        single_community_c2dc,
    ),
    ("classification", "scores in [0,1]", score_range),
    ("evaluation", "metric identities", metric_identities),
    ("evaluation", "auc invariant to monotone maps", auc_monotone_invariance),
    ("evaluation", "timeliness monotone", timeliness_monotone),
    ("evaluation", "prefix subsets nested and cut", prefix_nesting),
    ("synth_generator", "size tail slope", size_tail_slope),
    ("synth_generator", "psm rho_u exceeds normals", psm_rho_exceeds),
    (
        "synth_generator",
        "generated logs are well formed",
        synth_logs_well_formed,
    ),
];

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt)
}

/// A few hundred users with planted structure, fast enough to run per seed.
pub fn mid_synth(seed: u64) -> SynthDataset {
    generate(&mid_config(seed)).expect("valid config")
}

pub fn mid_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_users: 300,
        n_messages: 1_200,
        n_communities: 6,
        max_cascade_size: 60,
        seed,
        ..SynthConfig::default()
    }
}

/// Every index agrees with the action list and every ordering rule holds.
pub fn check_log(log: &ActionLog) -> Result<(), String> {
    let actions = log.actions();
    ensure(actions.iter().all(|a| a.time >= 0), || "negative timestamp".into())?;
    ensure(
        actions
            .windows(2)
            .all(|w| (w[0].time, w[0].user, w[0].message) <= (w[1].time, w[1].user, w[1].message)),
        || "actions not in canonical order".into(),
    )?;
    let by_user: usize = (0..log.n_users() as u32).map(|u| log.user_action_count(u)).sum();
    let by_message: usize = (0..log.vocab().n_messages() as u32)
        .map(|m| log.message_actions(m).count())
        .sum();
    ensure(by_user == log.len() && by_message == log.len(), || {
        format!("index totals {by_user}/{by_message} for {} actions", log.len())
    })?;
    for m in 0..log.vocab().n_messages() as u32 {
        let acts: Vec<_> = log.message_actions(m).collect();
        ensure(acts.iter().all(|a| a.message == m), || {
            format!("message index {m} inconsistent")
        })?;
        ensure(
            acts.windows(2).all(|w| (w[0].time, w[0].user) < (w[1].time, w[1].user)),
            || format!("message {m} not strictly ordered by (time, user)"),
        )?;
    }
    for u in 0..log.n_users() as u32 {
        ensure(log.user_actions(u).all(|a| a.user == u), || {
            format!("user index {u} inconsistent")
        })?;
    }
    Ok(())
}

fn dedup_idempotence(seed: u64) -> Result<(), String> {
    let log = small_case(seed).log();
    let mut csv = Vec::new();
    log.write_csv(&mut csv).map_err(|e| e.to_string())?;
    let again = parse_action_log(csv.as_slice(), LogFormat::Csv, true).map_err(|e| e.to_string())?;
    ensure(again == log, || "re-parsed log differs".into())?;
    for u in 0..log.n_users() as u32 {
        ensure(log.user_actions(u).eq(again.user_actions(u)), || {
            format!("user index of {u} differs")
        })?;
    }
    check_log(&again)
}

fn cascades_jsonl(records: &[(String, String, Timestamp)], params: CascadeParams) -> Vec<u8> {
    let log = ActionLog::from_records(records.iter().cloned(), true).unwrap();
    let set = CascadeSet::extract(&log, params).unwrap();
    let mut out = Vec::new();
    set.write_jsonl(&mut out).unwrap();
    out
}

fn canonical_ordering(seed: u64) -> Result<(), String> {
    let case = small_case(seed);
    let mut shuffled = case.records.clone();
    shuffled.shuffle(&mut rng(seed, 1));
    ensure(
        cascades_jsonl(&case.records, case.params) == cascades_jsonl(&shuffled, case.params),
        || "row order changed the serialized cascades".into(),
    )
}

fn key_user_bound(seed: u64) -> Result<(), String> {
    let case = small_case(seed);
    let params = CascadeParams {
        phi: 0.5,
        ..case.params
    };
    let set = CascadeSet::extract(&case.log(), params).unwrap();
    for c in set.cascades() {
        ensure(c.key_users().len() <= c.size().div_ceil(2), || {
            format!("{} key users in a cascade of {}", c.key_users().len(), c.size())
        })?;
    }
    Ok(())
}

fn restrict_composition(seed: u64) -> Result<(), String> {
    let log = small_case(seed).log();
    let mut r = rng(seed, 2);
    let mut interval = || {
        let a = r.random_range(-2..=32);
        let b = r.random_range(a..=34);
        (a, b)
    };
    let (i1, i2) = (interval(), interval());
    let nested = log.restrict(i1.0, i1.1).unwrap().restrict(i2.0, i2.1).unwrap();
    let (lo, hi) = (i1.0.max(i2.0), i1.1.min(i2.1));
    let direct = if lo <= hi {
        log.restrict(lo, hi).unwrap()
    } else {
        log.restrict(i64::MAX, i64::MAX).unwrap()
    };
    ensure(nested == direct, || {
        format!("restrict {i1:?} then {i2:?} differs from the intersection")
    })
}

fn viral_monotone(seed: u64) -> Result<(), String> {
    let log = small_case(seed).log();
    let mut r = rng(seed, 3);
    let t1 = r.random_range(1..=5);
    let t2 = r.random_range(t1..=6);
    let viral = |theta| -> BTreeSet<u32> {
        let set = CascadeSet::extract(&log, CascadeParams { theta, phi: 0.5 }).unwrap();
        set.viral().iter().copied().collect()
    };
    ensure(viral(t2).is_subset(&viral(t1)), || {
        format!("viral({t2}) not within viral({t1})")
    })
}

fn causal_oracle(seed: u64) -> Result<(), String> {
    // Offset so these seeds differ from the 200 used by the dedicated test.
    let bad = super::oracle_mismatches(10_000 + seed, 1e-12);
    ensure(bad.is_empty(), || bad.join("; "))
}

fn score_bounds(seed: u64) -> Result<(), String> {
    let case = small_case(seed);
    let log = case.log();
    let set = CascadeSet::extract(&log, case.params).unwrap();
    let model = CausalModel::new(&set, case.causal()).unwrap();
    let cap = 1.0 / case.alpha - 1.0;
    for v in model.vectors(None) {
        if let Some(km) = v.get(Metric::Km) {
            ensure((-1.0..=1.0).contains(&km), || format!("km {km} outside [-1, 1]"))?;
        }
        if let Some(rel) = v.get(Metric::Rel) {
            ensure(rel.is_finite() && rel <= cap + 1e-9, || {
                format!("rel {rel} outside (-inf, {cap}]")
            })?;
        }
    }
    Ok(())
}

fn support_monotone(seed: u64) -> Result<(), String> {
    let case = small_case(seed);
    let log = case.log();
    let mut r = rng(seed, 4);
    let a = r.random_range(0..=15);
    let b = r.random_range(a..=30);
    let (c, d) = (r.random_range(0..=a), r.random_range(b..=31));
    let stats_in = |lo, hi| {
        let slice = log.restrict(lo, hi).unwrap();
        let set = CascadeSet::extract(&slice, case.params).unwrap();
        let model = CausalModel::new(&set, case.causal()).unwrap();
        let n = log.n_users() as u32;
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    out.push(model.pair_stats(i, j).unwrap().support_ij);
                }
            }
        }
        out
    };
    let (inner, outer) = (stats_in(a, b), stats_in(c, d));
    ensure(inner.iter().zip(&outer).all(|(x, y)| x <= y), || {
        format!("support shrank when [{a},{b}] grew to [{c},{d}]")
    })
}

fn prima_facie_nesting(seed: u64) -> Result<(), String> {
    let case = small_case(seed);
    let set = CascadeSet::extract(&case.log(), case.params).unwrap();
    let model = CausalModel::new(&set, case.causal()).unwrap();
    for (c, pf) in set.cascades().iter().zip(model.all_prima_facie()) {
        let key: BTreeSet<u32> = c.key_users().iter().map(|p| p.0).collect();
        let all: BTreeSet<u32> = c.participants.iter().map(|p| p.0).collect();
        ensure(pf.iter().all(|u| key.contains(u)) && key.is_subset(&all), || {
            format!("nesting broken for message {}", c.message)
        })?;
    }
    Ok(())
}

fn bits(vectors: &[CausalityVector]) -> Vec<[Option<u64>; 4]> {
    vectors.iter().map(|v| v.values.map(|x| x.map(f64::to_bits))).collect()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

fn causal_determinism(seed: u64) -> Result<(), String> {
    let data = mid_synth(seed);
    let spec = FeatureSpec {
        params: data.cascade_params(),
        ..FeatureSpec::default()
    };
    let run = |threads| in_pool(threads, || bits(&spec.compute(&data.log, data.timeline).unwrap()));
    ensure(run(1) == run(3), || "vectors differ between 1 and 3 threads".into())
}

pub fn equal_weights_reduce(seed: u64) -> Result<(), String> {
    let case = small_case(seed);
    let set = CascadeSet::extract(&case.log(), case.params).unwrap();
    let model = CausalModel::new(&set, case.causal()).unwrap();
    let weight = rng(seed, 14).random_range(0.5..50.0);
    for u in 0..case.log().n_users() as u32 {
        let nb = model.epsilon_nb(u).ok().map(f64::to_bits);
        let wnb = model.epsilon_wnb_with(u, |_| weight).ok().map(f64::to_bits);
        ensure(nb == wnb, || {
            format!("user {u}: nb {nb:?} vs wnb {wnb:?} with weight {weight}")
        })?;
    }
    Ok(())
}

pub fn decay_reduction(seed: u64) -> Result<(), String> {
    let case = small_case(seed);
    let log = case.log();
    let (t_min, t_max) = log.time_span().unwrap();
    let delta = t_max - t_min + 1;
    let config = DecayConfig {
        delta: Span(delta),
        sigma: 0.0,
        ..DecayConfig::default()
    };
    let decayed = decay_vectors(
        &log,
        (t_max - delta, t_max + delta),
        case.params,
        case.causal(),
        &config,
    )
    .map_err(|e| e.to_string())?;
    let plain = psmscan::causal::causality_vectors(&log, None, case.params, case.causal()).unwrap();
    ensure(bits(&decayed) == bits(&plain), || "xi differs from eps".into())
}

fn window_weights(seed: u64) -> Result<(), String> {
    let mut r = rng(seed, 5);
    let t0 = r.random_range(0..1_000_000);
    let t = t0 + r.random_range(2..400) * 86_400;
    let config = DecayConfig {
        delta: Span(r.random_range(1..=20) * 86_400),
        sigma: r.random_range(0.0001..0.5),
        grid: if r.random_bool(0.5) {
            WindowGrid::FullWindows
        } else {
            WindowGrid::IncludeFinal
        },
        ..DecayConfig::default()
    };
    let Ok(seq) = window_sequence(t0, t, &config) else {
        return Ok(());
    };
    let w: Vec<f64> = seq.points.iter().map(|&p| seq.weight(p, config.sigma)).collect();
    ensure(w.iter().all(|&x| x > 0.0 && x <= 1.0), || {
        format!("weight outside (0, 1]: {w:?}")
    })?;
    ensure(w.windows(2).all(|p| p[0] < p[1]), || {
        format!("weights not increasing: {w:?}")
    })
}

fn decay_shift_invariance(seed: u64) -> Result<(), String> {
    let case = small_case(seed);
    let log = case.log();
    let (t_min, t_max) = log.time_span().unwrap();
    let delta = super::decay_delta(seed, t_max - t_min);
    let config = DecayConfig {
        delta: Span(delta),
        sigma: 500.0,
        ..DecayConfig::default()
    };
    let shift = rng(seed, 6).random_range(1..10_000_000);
    let run = |log: &ActionLog, offset| {
        decay_vectors(
            log,
            (t_min + offset, t_max + offset),
            case.params,
            case.causal(),
            &config,
        )
        .map(|v| bits(&v))
    };
    let shifted = log.shifted(shift).unwrap();
    match (run(&log, 0), run(&shifted, shift)) {
        (Ok(a), Ok(b)) => ensure(a == b, || format!("shift by {shift} changed xi")),
        (Err(_), Err(_)) => Ok(()),
        _ => Err("shift changed definedness".into()),
    }
}

fn graph_symmetry(seed: u64) -> Result<(), String> {
    let graph = CoPostGraph::build(&mid_synth(seed).log);
    for v in 0..graph.n_vertices() {
        for (w, weight) in graph.neighbors(v) {
            ensure(w != v, || format!("self-loop at {v}"))?;
            ensure(graph.weight(w, v) == Some(weight), || {
                format!("edge {v}-{w} not symmetric")
            })?;
        }
    }
    Ok(())
}

fn partition(seed: u64) -> (CoPostGraph, CommunityPartition) {
    let graph = CoPostGraph::build(&mid_synth(seed).log);
    let p = louvain(
        &graph,
        LouvainOptions {
            seed,
            ..LouvainOptions::default()
        },
    );
    (graph, p)
}

fn louvain_monotone(seed: u64) -> Result<(), String> {
    let (_, p) = partition(seed);
    let q = &p.level_modularity;
    ensure(q.windows(2).all(|w| w[1] >= w[0] - 1e-12), || {
        format!("modularity decreased: {q:?}")
    })?;
    ensure((-0.5..=1.0).contains(&p.modularity), || {
        format!("modularity {}", p.modularity)
    })
}

fn louvain_stability(seed: u64) -> Result<(), String> {
    let (graph, p) = partition(seed);
    let again = louvain(
        &graph,
        LouvainOptions {
            seed,
            ..LouvainOptions::default()
        },
    );
    ensure(p == again, || "partition changed between identical runs".into())
}

fn cohesion_sizes(seed: u64) -> Result<(), String> {
    let (_, p) = partition(seed);
    if p.k < 2 {
        return Ok(());
    }
    let mut r = rng(seed, 7);
    let features: Vec<[f64; 4]> = (0..p.assignment.len())
        .map(|_| std::array::from_fn(|_| r.random_range(0.0..1.0)))
        .collect();
    let t = cohesion_test(&p, &features, seed, 0.01).map_err(|e| e.to_string())?;
    let n_a: usize = p.sizes().iter().map(|&s| s * s.saturating_sub(1) / 2).sum();
    ensure(
        t.n_a == n_a && t.v_a.len() == n_a && t.n_b == p.assignment.len() && t.v_b.len() == t.n_b,
        || format!("sizes {} {} vs expected {n_a} {}", t.n_a, t.n_b, p.assignment.len()),
    )
}

fn random_rows(seed: u64, n: usize) -> Vec<LabeledUser> {
    let mut r = rng(seed, 8);
    (0..n)
        .map(|u| {
            // Coarse grid so that distance ties occur.
            let values = std::array::from_fn(|_| r.random_range(0..5) as f64 * 0.25);
            let mask = std::array::from_fn(|_| r.random_bool(0.9));
            let label = if r.random_bool(0.3) { Label::Psm } else { Label::Normal };
            LabeledUser {
                row: FeatureRow {
                    user: u as u32,
                    values,
                    mask,
                },
                label,
            }
        })
        .collect()
}

fn threshold_monotone(seed: u64) -> Result<(), String> {
    let rows = random_rows(seed, 60);
    let mut r = rng(seed, 9);
    let base = ThresholdRule {
        km: r.random_range(0.0..1.0),
        rel: r.random_range(0.0..10.0),
        nb: r.random_range(0.0..1.0),
        wnb: r.random_range(0.0..1.0),
    };
    let bump = r.random_range(0.0..0.5);
    let raised = ThresholdRule {
        km: base.km + bump,
        rel: base.rel + bump,
        nb: base.nb + bump,
        wnb: base.wnb + bump,
    };
    for s in &rows {
        for m in Metric::ALL {
            let (lo, hi) = (
                threshold_predict(&s.row, &base, m),
                threshold_predict(&s.row, &raised, m),
            );
            ensure(!(lo.predicted == Label::Normal && hi.predicted == Label::Psm), || {
                format!("raising {m} threshold flipped user {} to PSM", s.user())
            })?;
        }
    }
    Ok(())
}

fn knn_order_invariance(seed: u64) -> Result<(), String> {
    let rows = random_rows(seed, 40);
    let (queries, training) = rows.split_at(10);
    let mut shuffled = training.to_vec();
    shuffled.shuffle(&mut rng(seed, 10));
    let k = 1 + (seed % 12) as usize;
    for q in queries {
        let a = knn_classify(&q.row, training, k).unwrap();
        let b = knn_classify(&q.row, &shuffled, k).unwrap();
        ensure(a == b, || {
            format!("prediction for {} depends on training order", q.user())
        })?;
    }
    Ok(())
}

pub fn single_community_c2dc(seed: u64) -> Result<(), String> {
    let rows = random_rows(seed, 50);
    let partition = CommunityPartition {
        vertices: (0..50).collect(),
        assignment: vec![0; 50],
        k: 1,
        modularity: 0.0,
        level_modularity: vec![0.0],
    };
    let model = C2dc::from_partition(partition);
    let (queries, training) = rows.split_at(15);
    let queries: Vec<FeatureRow> = queries.iter().map(|q| q.row).collect();
    let k = 1 + (seed % 10) as usize;
    for (q, c) in queries.iter().zip(model.classify(&queries, training, k)) {
        let c = c.map_err(|e| e.to_string())?;
        let g = knn_classify(q, training, k).unwrap();
        ensure(
            c.predicted == g.predicted && c.score.to_bits() == g.score.to_bits(),
            || format!("user {}: c2dc {c:?} vs knn {g:?}", q.user),
        )?;
    }
    Ok(())
}

fn score_range(seed: u64) -> Result<(), String> {
    let rows = random_rows(seed, 40);
    let mut r = rng(seed, 11);
    let rule = ThresholdRule {
        km: r.random_range(0.1..1.0),
        rel: r.random_range(0.1..10.0),
        nb: r.random_range(0.1..1.0),
        wnb: r.random_range(0.1..1.0),
    };
    let (queries, training) = rows.split_at(10);
    for q in queries {
        for m in Metric::ALL {
            let p = threshold_predict(&q.row, &rule, m);
            let crossed = if p.predicted.is_psm() { 1.0 } else { 0.0 };
            ensure((0.0..=1.0).contains(&p.score) && p.score >= crossed, || {
                format!("threshold score {} for {:?}", p.score, p.predicted)
            })?;
        }
        let p = knn_classify(&q.row, training, 7).unwrap();
        ensure((0.0..=1.0).contains(&p.score), || format!("knn score {}", p.score))?;
    }
    Ok(())
}

fn metric_identities(seed: u64) -> Result<(), String> {
    let mut r = rng(seed, 12);
    let mut c = Confusion::default();
    for _ in 0..r.random_range(1..200) {
        let p = if r.random_bool(0.4) { Label::Psm } else { Label::Normal };
        let a = if r.random_bool(0.3) { Label::Psm } else { Label::Normal };
        c.add(p, a);
    }
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ensure(
        c.precision() == precision && c.recall() == recall && c.f1() == f1 && c.total() == c.tp + c.fp + c.tn + c.fn_,
        || format!("identities fail for {c:?}"),
    )
}

fn auc_monotone_invariance(seed: u64) -> Result<(), String> {
    let mut r = rng(seed, 13);
    let scored: Vec<(f64, Label)> = (0..r.random_range(2..80))
        .map(|_| {
            let label = if r.random_bool(0.4) { Label::Psm } else { Label::Normal };
            (r.random_range(0..20) as f64 / 20.0, label)
        })
        .collect();
    let mapped: Vec<(f64, Label)> = scored.iter().map(|&(s, l)| (s.exp() * 3.0 - 1.0, l)).collect();
    ensure(rank_auc(&scored) == rank_auc(&mapped), || {
        "AUC changed under a monotone map".into()
    })
}

fn timeliness_monotone(seed: u64) -> Result<(), String> {
    let data = mid_synth(seed);
    let spec = FeatureSpec {
        params: data.cascade_params(),
        ..FeatureSpec::default()
    };
    let classifier = psmscan::classify::ClassifierSpec::Knn {
        k: 5,
        scaling: Default::default(),
    };
    let report = timeliness(
        &data.log,
        Some(data.timeline),
        &data.truth,
        &spec,
        &classifier,
        &TimelinessConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut remaining = report.cohort_psm as u64;
    let mut caught = 0;
    for row in &report.periods {
        let next = remaining.checked_sub(row.tp).ok_or("more TPs than cohort PSMs")?;
        ensure(next <= remaining, || "remaining increased".into())?;
        remaining = next;
        caught += row.tp;
    }
    ensure(caught + report.remaining == report.cohort_psm as u64, || {
        format!(
            "{caught} caught + {} remaining != {}",
            report.remaining, report.cohort_psm
        )
    })
}

fn prefix_nesting(seed: u64) -> Result<(), String> {
    let data = mid_synth(seed);
    let subsets = prefix_subsets(&data.log, None, &[10.0, 20.0, 30.0, 40.0, 50.0]).map_err(|e| e.to_string())?;
    for pair in subsets.windows(2) {
        let small: BTreeSet<_> = pair[0]
            .log
            .actions()
            .iter()
            .map(|a| (a.user, a.message, a.time))
            .collect();
        let large: BTreeSet<_> = pair[1]
            .log
            .actions()
            .iter()
            .map(|a| (a.user, a.message, a.time))
            .collect();
        ensure(small.is_subset(&large), || {
            format!("subset {} not within {}", pair[0].fraction, pair[1].fraction)
        })?;
    }
    let half = &subsets[4];
    ensure(half.log.actions().iter().all(|a| a.time <= half.end), || {
        "action after the 50% cut".into()
    })
}

/// Least-squares slope of log density against log size over logarithmic
/// bins, skipping the bin cut by the size cap.
pub fn tail_slope(sizes: &[usize], min: usize, max: usize) -> f64 {
    let mut points = Vec::new();
    let mut lo = min;
    while lo * 2 <= max + 1 {
        let hi = lo * 2;
        let count = sizes.iter().filter(|&&s| s >= lo && s < hi).count();
        if count > 0 {
            let density = count as f64 / (hi - lo) as f64;
            let centre = ((lo * (hi - 1)) as f64).sqrt();
            points.push((centre.ln(), density.ln()));
        }
        lo = hi;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn size_tail_slope(seed: u64) -> Result<(), String> {
    let cfg = SynthConfig {
        n_users: 1_000,
        n_messages: 5_000,
        n_communities: 10,
        seed,
        ..SynthConfig::default()
    };
    let data = generate(&cfg).unwrap();
    let set = CascadeSet::extract(&data.log, data.cascade_params()).unwrap();
    let sizes: Vec<usize> = set.cascades().iter().map(|c| c.size()).collect();
    let slope = tail_slope(&sizes, cfg.min_cascade_size, cfg.max_cascade_size);
    ensure((slope + cfg.size_exponent).abs() <= 0.3, || {
        format!("slope {slope:.3} vs -{}", cfg.size_exponent)
    })
}

/// Mean key-user virality rate of each class, over users with a defined rate.
pub fn mean_rho_by_class(data: &SynthDataset) -> (f64, f64) {
    let set = CascadeSet::extract(&data.log, data.cascade_params()).unwrap();
    let model = CausalModel::new(&set, Default::default()).unwrap();
    let (mut psm, mut normal) = (Vec::new(), Vec::new());
    for (u, label) in data.truth.iter() {
        if let Ok(r) = model.user_rho(u) {
            if label.is_psm() {
                psm.push(r)
            } else {
                normal.push(r)
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&psm), mean(&normal))
}

fn psm_rho_exceeds(seed: u64) -> Result<(), String> {
    let (psm, normal) = mean_rho_by_class(&mid_synth(seed));
    ensure(psm > normal, || {
        format!("mean rho_u psm {psm:.3} <= normal {normal:.3}")
    })
}

fn synth_logs_well_formed(seed: u64) -> Result<(), String> {
    let data = mid_synth(seed);
    check_log(&data.log)?;
    let mut pairs = BTreeSet::new();
    ensure(
        data.log.actions().iter().all(|a| pairs.insert((a.user, a.message))),
        || "duplicate (user, message) pair".into(),
    )?;
    ensure(data.truth.len() == data.log.n_users(), || {
        "truth does not cover every user".into()
    })?;
    let samples = labeled_users(
        &data.log,
        &FeatureSpec::default().compute(&data.log, data.timeline).unwrap(),
        &data.truth,
    );
    ensure(!samples.is_empty(), || "no labeled active users".into())?;
    Ok(())
}
