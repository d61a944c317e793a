//! Release gates. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any gate fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write as _;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine as _;
use common::{p, schema_errors};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use xmc_core::bundle::FixtureBundle;
use xmc_core::cache::{Cache, DiskCache, MemoryCache, DEFAULT_TTL};
use xmc_core::clock::{Clock, ManualClock};
use xmc_core::entity::{classify_entity, EntityType, EventList, KbId, KbRecord, Language};
use xmc_core::eval::{
    auc, run_evaluation, sample_tampered, verification_accuracy, Catalog, CatalogEntity, Dataset, EvalError, EvalOptions, ParentClassMode,
    TamperingStrategy,
};
use xmc_core::features::{cluster_majority_mean, ClusterConfig, EmbeddingVector, FixtureTable, Linkage, Providers};
use xmc_core::geo::{haversine_km, Coordinate};
use xmc_core::scoring::{AnalyzeOptions, Engine, EngineConfig};
use xmc_core::synth::{write_demo_bundle, write_person_eval_world, DemoDocument};
use xmc_service::jobs::{read_journal, JournalRecord};
use xmc_service::{AnalysisRequest, JobState, JobStore, Pipeline};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let gates: Vec<(&str, fn() -> Check)> = vec![
        ("metric oracles", metric_oracles),
        ("clustering oracle", clustering_oracle),
        ("geometry", geometry),
        ("strategy correctness", strategy_correctness),
        ("hermetic end-to-end", hermetic_end_to_end),
        ("determinism", determinism),
        ("cache ttl", cache_ttl),
        ("typing truth table", typing_truth_table),
        ("service contract", service_contract),
    ];
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for (name, gate) in gates {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(gate)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => writeln!(out, "PASS  {name} ({secs:.2} s): {detail}").unwrap(),
            Err(detail) => {
                failed += 1;
                writeln!(out, "FAIL  {name} ({secs:.2} s): {detail}").unwrap();
            }
        }
    }
    writeln!(out, "SKIP  live end-to-end (informational): needs a feature server plus annotation and search keys").unwrap();
    out.flush().unwrap();
    if failed > 0 {
        eprintln!("{failed} acceptance gate(s) failed");
        std::process::exit(1);
    }
}

// ---- metrics ----

fn pair_count_auc(u: &[f64], t: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in u {
        for &b in t {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (u.len() * t.len()) as f64
}

fn metric_oracles() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut with_ties = 0;
    for trial in 0..500 {
        let coarse = trial % 2 == 0;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| if coarse { f64::from(rng.random_range(0..12u8)) / 11.0 } else { rng.random_range(-1.0..1.0) }).collect()
        };
        let nu = 1 + (trial * 7919) % 200;
        let nt = 1 + (trial * 104_729) % 200;
        let u = draw(nu);
        let t = draw(nt);
        let got = auc(&u, &t).map_err(|e| e.to_string())?;
        let want = pair_count_auc(&u, &t);
        ensure!((got - want).abs() <= 1e-12, "trial {trial}: auc {got} vs pair count {want}");

        let n = nu.min(nt);
        let pairs: Vec<(f64, f64)> = u[..n].iter().copied().zip(t[..n].iter().copied()).collect();
        let va = verification_accuracy(&pairs).map_err(|e| e.to_string())?;
        let direct = pairs.iter().filter(|(a, b)| a > b).count() as f64 / n as f64;
        ensure!(va == direct, "trial {trial}: va {va} vs direct count {direct}");

        let mut all: Vec<f64> = u.iter().chain(&t).copied().collect();
        all.sort_by(f64::total_cmp);
        let tie_free = all.windows(2).all(|w| w[0] != w[1]);
        if tie_free {
            let back = auc(&t, &u).map_err(|e| e.to_string())?;
            ensure!((got + back - 1.0).abs() <= 1e-12, "trial {trial}: auc(U,T)+auc(T,U) = {}", got + back);
        } else {
            with_ties += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("500 list pairs ({with_ties} with ties), |auc - pair count| <= 1e-12, VA exact, complement holds"))
}

// ---- clustering ----

fn linkage_distance(points: &[Vec<f64>], a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    let d = |i: usize, j: usize| 1.0 - points[i].iter().zip(&points[j]).map(|(x, y)| x * y).sum::<f64>();
    let all: Vec<f64> = a.iter().flat_map(|&i| b.iter().map(move |&j| d(i, j))).collect();
    match linkage {
        Linkage::Single => all.iter().copied().fold(f64::INFINITY, f64::min),
        Linkage::Complete => all.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Linkage::Average => all.iter().sum::<f64>() / all.len() as f64,
    }
}

fn intra(points: &[Vec<f64>], c: &[usize]) -> f64 {
    if c.len() < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    let mut n = 0;
    for (k, &i) in c.iter().enumerate() {
        for &j in &c[k + 1..] {
            s += 1.0 - points[i].iter().zip(&points[j]).map(|(x, y)| x * y).sum::<f64>();
            n += 1;
        }
    }
    s / f64::from(n)
}

fn lex_min<'a>(points: &'a [Vec<f64>], c: &[usize]) -> &'a [f64] {
    c.iter().map(|&i| points[i].as_slice()).min_by(|a, b| a.iter().zip(*b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)).unwrap()
}

/// Naive agglomeration over explicit clusters, recomputing every linkage
/// distance from the raw points at each step.
fn brute_force_majority(points: &[Vec<f64>], config: &ClusterConfig) -> (BTreeSet<usize>, Vec<f64>) {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let d = linkage_distance(points, &clusters[a], &clusters[b], config.linkage);
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((a, b, d));
                }
            }
        }
        match best {
            Some((a, b, d)) if d <= config.threshold => {
                let moved = clusters.remove(b);
                clusters[a].extend(moved);
            }
            _ => break,
        }
    }
    let majority = clusters
        .iter()
        .min_by(|x, y| {
            y.len()
                .cmp(&x.len())
                .then(intra(points, x).total_cmp(&intra(points, y)))
                .then_with(|| {
                    let (lx, ly) = (lex_min(points, x), lex_min(points, y));
                    lx.iter().zip(ly).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
                })
        })
        .unwrap();
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for &m in majority {
        for (s, x) in mean.iter_mut().zip(&points[m]) {
            *s += x / majority.len() as f64;
        }
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    (majority.iter().copied().collect(), mean.iter().map(|x| x / norm).collect())
}

fn clustering_oracle() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc105);
    let mut merged_trials = 0;
    for trial in 0..1000 {
        let n = rng.random_range(1..=8);
        let dim = rng.random_range(2..=6);
        let centers: Vec<Vec<f64>> = (0..rng.random_range(1..=3)).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let noise = rng.random_range(0.01..0.5);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c = &centers[rng.random_range(0..centers.len())];
                let v: Vec<f64> = c.iter().map(|x| x + rng.random_range(-noise..noise)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        let linkage = [Linkage::Single, Linkage::Complete, Linkage::Average][rng.random_range(0..3)];
        let config = ClusterConfig { linkage, threshold: rng.random_range(0.05..1.2) };
        let vectors: Vec<EmbeddingVector> = points.iter().map(|v| EmbeddingVector::normalized(v.clone(), "acceptance").unwrap()).collect();
        let exact: Vec<Vec<f64>> = vectors.iter().map(|v| v.values().to_vec()).collect();

        let got = cluster_majority_mean(&vectors, &config).map_err(|e| e.to_string())?;
        let (members, mean) = brute_force_majority(&exact, &config);
        let got_members: BTreeSet<usize> = got.members.iter().copied().collect();
        ensure!(got_members == members, "trial {trial}: members {got_members:?} vs oracle {members:?} ({config:?})");
        let diff = got.mean.values().iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure!(diff <= 1e-9, "trial {trial}: mean differs by {diff}");
        if got.members.len() > 1 {
            merged_trials += 1;
        }

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<EmbeddingVector> = perm.iter().map(|&i| vectors[i].clone()).collect();
        let again = cluster_majority_mean(&shuffled, &config).map_err(|e| e.to_string())?;
        let mapped: BTreeSet<usize> = again.members.iter().map(|&m| perm[m]).collect();
        ensure!(mapped == got_members, "trial {trial}: permutation changed members");
        ensure!(again.mean == got.mean, "trial {trial}: permutation changed the mean");
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("1000 trials of <= 8 vectors ({merged_trials} with multi-member majorities) match the brute-force oracle and are permutation invariant"))
}

// ---- geometry ----

fn law_of_cosines_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dl = (b.1 - a.1).to_radians();
    let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
    6371.0 * c.acos()
}

fn geometry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e0);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let a = (rng.random_range(-90.0..=90.0), rng.random_range(-180.0..=180.0));
        let b = (rng.random_range(-90.0..=90.0), rng.random_range(-180.0..=180.0));
        let h = haversine_km(Coordinate::new(a.0, a.1).unwrap(), Coordinate::new(b.0, b.1).unwrap());
        let o = law_of_cosines_km(a, b);
        let rel = (h - o).abs() / o;
        ensure!(rel <= 0.005, "pair {i}: haversine {h} vs law of cosines {o}");
        worst = worst.max(rel);
    }
    let anti = haversine_km(Coordinate::new(0.0, 0.0).unwrap(), Coordinate::new(0.0, 180.0).unwrap());
    ensure!((anti - 20015.1).abs() <= 0.1, "antipodal distance {anti}");
    let poles = haversine_km(Coordinate::new(90.0, 0.0).unwrap(), Coordinate::new(-90.0, 0.0).unwrap());
    ensure!((poles - 20015.1).abs() <= 0.1, "pole to pole {poles}");
    Ok(format!("100 pairs, worst relative deviation {worst:.2e}; antipodal {anti:.3} km"))
}

// ---- strategies ----

fn id(s: impl Into<String>) -> KbId {
    KbId::new(s).unwrap()
}

/// 200 persons, 200 locations and 100 events, with a few entities that
/// have no admissible confounder under the attribute-matched strategies.
fn synthetic_catalog(rng: &mut ChaCha8Rng) -> Catalog {
    let countries = ["Q30", "Q183", "Q142", "Q38"];
    let genders = ["Q6581097", "Q6581072"];
    let anchors = [(52.5, 13.4), (48.9, 2.35), (40.7, -74.0), (35.7, 139.7)];
    let location_types = ["Q515", "Q3957", "Q532"];
    let event_classes = ["Q1656682", "Q175331", "Q132241", "Q18608583", "Q198"];
    let mut entities = Vec::new();
    for i in 0..200 {
        let mut e = CatalogEntity::new(id(format!("Q{}", 100_000 + i)), EntityType::Person, format!("Person {i}"));
        e.country_of_citizenship = Some(id(countries[rng.random_range(0..countries.len())]));
        e.gender = Some(id(genders[rng.random_range(0..genders.len())]));
        match i {
            0 => e.country_of_citizenship = Some(id("Q999001")),
            1 => e.gender = Some(id("Q999002")),
            2 => e.country_of_citizenship = None,
            _ => {}
        }
        entities.push(e);
    }
    for i in 0..200 {
        let mut e = CatalogEntity::new(id(format!("Q{}", 200_000 + i)), EntityType::Location, format!("Place {i}"));
        let (lat, lon) = anchors[rng.random_range(0..anchors.len())];
        let spread = [0.1, 1.0, 5.0, 15.0][rng.random_range(0..4)];
        e.coordinate = Some(Coordinate::normalized(lat + rng.random_range(-spread..spread), lon + rng.random_range(-spread..spread)).unwrap());
        e.location_type = Some(id(location_types[rng.random_range(0..location_types.len())]));
        if i == 0 {
            e.coordinate = Some(Coordinate::new(-77.85, 166.67).unwrap());
            e.location_type = Some(id("Q999003"));
        }
        entities.push(e);
    }
    for i in 0..100 {
        let mut e = CatalogEntity::new(id(format!("Q{}", 300_000 + i)), EntityType::Event, format!("Event {i}"));
        e.instance_of = vec![id(event_classes[rng.random_range(0..event_classes.len())])];
        if rng.random_bool(0.3) {
            e.subclass_of = vec![id(event_classes[rng.random_range(0..event_classes.len())])];
        }
        if i == 0 {
            e.instance_of = vec![id("Q999004")];
            e.subclass_of.clear();
        }
        entities.push(e);
    }
    Catalog::new(entities)
}

/// Independent statement of each strategy's constraint.
fn oracle_admits(s: &TamperingStrategy, o: &CatalogEntity, c: &CatalogEntity) -> bool {
    if o.kb_id == c.kb_id || c.entity_type != s.entity_type() {
        return false;
    }
    let eq = |a: &Option<KbId>, b: &Option<KbId>| matches!((a, b), (Some(x), Some(y)) if x == y);
    match *s {
        TamperingStrategy::RandomPerson | TamperingStrategy::RandomLocation | TamperingStrategy::RandomEvent => true,
        TamperingStrategy::PsC => eq(&o.country_of_citizenship, &c.country_of_citizenship),
        TamperingStrategy::PsG => eq(&o.gender, &c.gender),
        TamperingStrategy::PsCG => eq(&o.country_of_citizenship, &c.country_of_citizenship) && eq(&o.gender, &c.gender),
        TamperingStrategy::GcdBand { min_km, max_km, same_type } => {
            let (Some(a), Some(b)) = (o.coordinate, c.coordinate) else { return false };
            let d = haversine_km(a, b);
            min_km <= d && d < max_km && (!same_type || eq(&o.location_type, &c.location_type))
        }
        TamperingStrategy::EsP => {
            let parents = |e: &CatalogEntity| -> BTreeSet<KbId> { e.parent_classes.iter().chain(&e.instance_of).chain(&e.subclass_of).cloned().collect() };
            !parents(o).is_disjoint(&parents(c))
        }
    }
}

fn strategy_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57a7);
    let catalog = synthetic_catalog(&mut rng);
    ensure!(catalog.len() == 500, "catalog has {} entities", catalog.len());
    let mode = ParentClassMode::Union;
    let mut exhausted_total = 0;
    for strategy in TamperingStrategy::table() {
        let originals: Vec<&CatalogEntity> = catalog.entities().iter().filter(|e| e.entity_type == strategy.entity_type()).collect();
        let mut draws = 0;
        for _ in 0..1000 {
            let original = originals[rng.random_range(0..originals.len())];
            let eligible = catalog.entities().iter().filter(|c| oracle_admits(&strategy, original, c)).count();
            match sample_tampered(original, &strategy, &catalog, mode, &mut rng) {
                Ok(c) => {
                    ensure!(oracle_admits(&strategy, original, c), "{strategy}: {} drawn for {} violates the constraint", c.kb_id, original.kb_id);
                    draws += 1;
                }
                Err(EvalError::SamplingExhausted { .. }) => {
                    ensure!(eligible == 0, "{strategy}: exhausted for {} although {eligible} confounders exist", original.kb_id);
                }
                Err(e) => return Err(format!("{strategy}: {e}")),
            }
        }
        for original in &originals {
            let eligible = catalog.entities().iter().filter(|c| oracle_admits(&strategy, original, c)).count();
            let got = sample_tampered(original, &strategy, &catalog, mode, &mut rng);
            ensure!(
                matches!(got, Err(EvalError::SamplingExhausted { .. })) == (eligible == 0),
                "{strategy}: {} has {eligible} confounders but sampling returned {:?}",
                original.kb_id,
                got.map(|c| c.kb_id.clone())
            );
            if eligible == 0 {
                exhausted_total += 1;
            }
        }
        ensure!(draws > 0, "{strategy}: no successful draws");
    }
    ensure!(exhausted_total >= 5, "catalog exercises only {exhausted_total} exhaustion cases");
    Ok(format!("10 strategies x 1000 draws satisfy their predicates; exhaustion matched the oracle on {exhausted_total} entity/strategy cases"))
}

// ---- end-to-end ----

fn eval_world(root: &Path, inverted: bool) -> Result<(f64, f64, usize), String> {
    let world = write_person_eval_world(root, 10, 0, inverted).map_err(|e| e.to_string())?;
    let dataset = Dataset::load(&world.dataset).map_err(|e| e.to_string())?;
    let catalog = Catalog::load(&world.catalog).map_err(|e| e.to_string())?;
    let providers = FixtureTable::load(&world.fixtures).map_err(|e| e.to_string())?.into_providers();
    let run = run_evaluation(&dataset, &catalog, &TamperingStrategy::RandomPerson, &providers, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let m = run.metrics.ok_or("no scored documents")?;
    Ok((m.verification_accuracy, m.auc, run.pairs.len()))
}

fn hermetic_end_to_end() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (va, auc, n) = eval_world(&dir.path().join("straight"), false)?;
    ensure!(n == 10, "{n} scored documents");
    ensure!(va == 1.0 && auc == 1.0, "VA {va}, AUC {auc}; expected 1.00 and 1.00");
    let (iva, iauc, _) = eval_world(&dir.path().join("inverted"), true)?;
    ensure!(iva == 0.0 && iauc == 0.0, "inverted VA {iva}, AUC {iauc}; expected 0.00 and 0.00");
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.2} s");
    Ok(format!("10 documents: VA {va:.2} AUC {auc:.2}; inverted VA {iva:.2} AUC {iauc:.2}"))
}

// ---- determinism ----

fn xmc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_xmc")).args(args).env_remove("XMC_LOG").output().expect("xmc runs")
}

fn hash_mock_engine(demo: &DemoDocument) -> Engine {
    let bundle = FixtureBundle::load(&demo.bundle).unwrap();
    let clock = Arc::new(ManualClock::new(1_700_000_000));
    let cache = Arc::new(MemoryCache::new(clock.clone(), 1024));
    bundle.engine(Providers::hash_mock(128), clock, cache, EngineConfig::default())
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let world = write_person_eval_world(&dir.path().join("world"), 10, 2, false).map_err(|e| e.to_string())?;
    let evaluate = |out: &str| {
        let out_dir = dir.path().join(out);
        let o = xmc(&[
            "evaluate",
            "--dataset",
            p(&world.dataset),
            "--catalog",
            p(&world.catalog),
            "--strategy",
            "random-person",
            "--seed",
            "42",
            "--backend",
            "fixture",
            "--fixtures",
            p(&world.fixtures),
            "--out",
            p(&out_dir),
        ]);
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        std::fs::read(out_dir.join("run.json")).map_err(|e| e.to_string())
    };
    let (a, b) = (evaluate("a")?, evaluate("b")?);
    ensure!(a == b, "run.json differs between identical evaluate runs");
    let run: Value = serde_json::from_slice(&a).map_err(|e| e.to_string())?;
    let errors = schema_errors("EvaluationRun", &run);
    ensure!(errors.is_empty(), "run.json violates the schema: {errors:?}");

    let demo = write_demo_bundle(&dir.path().join("demo")).map_err(|e| e.to_string())?;
    let report = |engine: &Engine| engine.score_document("demo", &demo.text, Some(&demo.image), &AnalyzeOptions::default()).unwrap();
    let (r1, r2) = (report(&hash_mock_engine(&demo)), report(&hash_mock_engine(&demo)));
    let bits = |r: &xmc_core::scoring::DocumentReport| -> Vec<u64> {
        r.scores.values().flat_map(|s| s.value.into_iter().chain(s.breakdown.iter().map(|b| b.similarity))).map(f64::to_bits).collect()
    };
    ensure!(bits(&r1) == bits(&r2) && serde_json::to_vec(&r1).unwrap() == serde_json::to_vec(&r2).unwrap(), "hash-mock scores differ between engines");

    let text = dir.path().join("story.txt");
    let image = dir.path().join("photo.png");
    std::fs::write(&text, &demo.text).unwrap();
    std::fs::write(&image, &demo.image).unwrap();
    let analyze = || xmc(&["analyze", "--text-file", p(&text), "--image", p(&image), "--bundle", p(&demo.bundle), "--backend", "hash-mock"]).stdout;
    let (o1, o2) = (analyze(), analyze());
    ensure!(!o1.is_empty() && o1 == o2, "analyze output differs between processes");
    Ok(format!("evaluate run.json byte-identical ({} bytes); hash-mock scores bit-identical in-process and across processes", a.len()))
}

// ---- cache ----

fn cache_ttl() -> Check {
    let t0 = 1_700_000_000;
    let hit_at = Duration::from_secs(23 * 3600 + 59 * 60);
    let miss_at = Duration::from_secs(24 * 3600 + 60);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clock = Arc::new(ManualClock::new(t0));
    let caches: Vec<(&str, Box<dyn Cache>)> = vec![
        ("memory", Box::new(MemoryCache::new(clock.clone(), 16))),
        ("disk", Box::new(DiskCache::open(dir.path().join("cache"), clock.clone(), 16).map_err(|e| e.to_string())?)),
    ];
    for (name, cache) in &caches {
        clock.set(t0);
        cache.put("refset:Q1:5", b"payload", DEFAULT_TTL);
        clock.set(t0 + hit_at.as_secs());
        ensure!(cache.get("refset:Q1:5").as_deref() == Some(&b"payload"[..]), "{name} cache missed at +23h59m");
        clock.set(t0 + miss_at.as_secs());
        ensure!(cache.get("refset:Q1:5").is_none(), "{name} cache hit at +24h01m");
    }

    clock.set(t0);
    let c: Arc<dyn Clock> = clock.clone();
    let demo = write_demo_bundle(&dir.path().join("demo")).map_err(|e| e.to_string())?;
    let (store, _) = JobStore::open(&dir.path().join("jobs"), c, DEFAULT_TTL).map_err(|e| e.to_string())?;
    let store = Arc::new(store);
    let pipeline = Pipeline::new(Arc::new(hash_mock_engine(&demo)), store.clone());
    let request = demo_request(&demo);
    let (first, _) = store.submit(request.clone(), Some(&demo.image)).map_err(|e| e.to_string())?;
    let (inflight, dedup) = store.submit(request.clone(), Some(&demo.image)).map_err(|e| e.to_string())?;
    ensure!(dedup && inflight == first, "in-flight duplicate got a new job");
    ensure!(pipeline.run(&first).map_err(|e| e.to_string())? == JobState::Done, "job did not finish");
    clock.set(t0 + hit_at.as_secs());
    let (again, dedup) = store.submit(request.clone(), Some(&demo.image)).map_err(|e| e.to_string())?;
    ensure!(dedup && again == first, "duplicate at +23h59m got a new job");
    clock.set(t0 + miss_at.as_secs());
    let (fresh, dedup) = store.submit(request, Some(&demo.image)).map_err(|e| e.to_string())?;
    ensure!(!dedup && fresh != first, "duplicate at +24h01m reused the expired job");
    Ok("memory and disk caches hit at +23h59m and miss at +24h01m; duplicate analysis reuses the job id within the TTL only".into())
}

fn demo_request(demo: &DemoDocument) -> AnalysisRequest {
    AnalysisRequest {
        text: demo.text.clone(),
        image_sha256: Some(format!("{:x}", demo.image.len())),
        types: EntityType::ALL.into_iter().collect(),
        language: Language::En,
        entity: None,
    }
}

// ---- typing ----

fn typing_truth_table() -> Check {
    let events = EventList::new([id("Q7")]);
    let mut rows = 0;
    for human in [false, true] {
        for listed in [false, true] {
            for coordinate in [false, true] {
                let record = KbRecord {
                    kb_id: id(if listed { "Q7" } else { "Q8" }),
                    label: "x".into(),
                    instance_of: if human { vec![id("Q5")] } else { vec![id("Q515")] },
                    coordinate: coordinate.then(|| Coordinate::new(1.0, 2.0).unwrap()),
                    parent_classes: Vec::new(),
                    depiction: None,
                    country_of_citizenship: None,
                    gender: None,
                    description: None,
                    sitelink: None,
                };
                let expected = if human {
                    Some(EntityType::Person)
                } else if listed {
                    Some(EntityType::Event)
                } else if coordinate {
                    Some(EntityType::Location)
                } else {
                    None
                };
                let got = classify_entity(&record, &events);
                ensure!(got == expected, "human={human} listed={listed} coordinate={coordinate}: {got:?}, expected {expected:?}");
                rows += 1;
            }
        }
    }
    Ok(format!("{rows}/8 precedence cases: human -> person, listed event -> event, coordinate -> location, otherwise discarded"))
}

// ---- service ----

struct Server {
    child: Child,
    base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server(dir: &Path) -> Result<Server, String> {
    write_demo_bundle(&dir.join("bundle")).map_err(|e| e.to_string())?;
    let port = std::net::TcpListener::bind("127.0.0.1:0").and_then(|l| l.local_addr()).map_err(|e| e.to_string())?.port();
    let config = dir.join("xmc.toml");
    std::fs::write(&config, format!("listen = \"127.0.0.1:{port}\"\ndata_dir = \"data\"\nworkers = 2\n[sources]\nbundle = \"bundle\"\n"))
        .map_err(|e| e.to_string())?;
    let child = Command::new(env!("CARGO_BIN_EXE_xmc"))
        .args(["serve", "--config", p(&config)])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let server = Server { child, base: format!("http://127.0.0.1:{port}") };
    let deadline = Instant::now() + Duration::from_secs(20);
    while http(&server.base, "GET", "/healthz", None).is_err() {
        if Instant::now() > deadline {
            return Err("server did not start".into());
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    Ok(server)
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(Duration::from_secs(10))).build().into()
}

fn http(base: &str, method: &str, path: &str, body: Option<&Value>) -> Result<(u16, Value), String> {
    let url = format!("{base}{path}");
    let agent = agent();
    let resp = match (method, body) {
        ("POST", Some(b)) => agent.post(&url).header("content-type", "application/json").send(b.to_string()),
        _ => agent.get(&url).call(),
    };
    let mut resp = resp.map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
    Ok((status, serde_json::from_str(&text).unwrap_or(Value::Null)))
}

fn validated(schema: &str, v: &Value, seen: &mut usize) -> Result<(), String> {
    let errors = schema_errors(schema, v);
    *seen += 1;
    if errors.is_empty() {
        Ok(())
    } else {
        Err(format!("{schema} response violates the schema: {errors:?}"))
    }
}

fn rank(state: &str) -> usize {
    ["queued", "linking", "crawling", "scoring", "done", "failed"].iter().position(|s| *s == state).unwrap_or(usize::MAX)
}

fn service_contract() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = start_server(dir.path())?;
    let mut validations = 0;
    let (_, health) = http(&server.base, "GET", "/healthz", None)?;
    validated("Health", &health, &mut validations)?;

    let demo = write_demo_bundle(&dir.path().join("query")).map_err(|e| e.to_string())?;
    let image_b64 = base64::engine::general_purpose::STANDARD.encode(&demo.image);
    let mut ids = Vec::new();
    for types in [json!(["person"]), json!(["location"]), json!(["event"]), json!(["person", "location", "event"])] {
        let body = json!({"text": demo.text, "image_base64": image_b64, "types": types});
        let (status, accepted) = http(&server.base, "POST", "/v1/analyze", Some(&body))?;
        ensure!(status == 202, "analyze returned {status}: {accepted}");
        validated("AnalyzeAccepted", &accepted, &mut validations)?;
        let (status, dup) = http(&server.base, "POST", "/v1/analyze", Some(&body))?;
        ensure!(status == 200 && dup["job_id"] == accepted["job_id"], "duplicate analyze returned {status}: {dup}");
        ids.push(accepted["job_id"].as_str().unwrap_or_default().to_string());
    }

    let pollers: Vec<_> = (0..8)
        .map(|i| {
            let id = ids[i % ids.len()].clone();
            let base = server.base.clone();
            std::thread::spawn(move || -> Result<(Vec<String>, Vec<Value>), String> {
                let mut states = Vec::new();
                let mut snapshots = Vec::new();
                let deadline = Instant::now() + Duration::from_secs(30);
                loop {
                    let (status, job) = http(&base, "GET", &format!("/v1/jobs/{id}"), None)?;
                    if status != 200 {
                        return Err(format!("poll returned {status}"));
                    }
                    let state = job["state"].as_str().unwrap_or_default().to_string();
                    if states.last() != Some(&state) {
                        states.push(state.clone());
                        snapshots.push(job);
                    }
                    if state == "done" || state == "failed" {
                        return Ok((states, snapshots));
                    }
                    if Instant::now() > deadline {
                        return Err(format!("job {id} stuck in {state}"));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
            })
        })
        .collect();
    let mut transitions = 0;
    for poller in pollers {
        let (states, snapshots) = poller.join().map_err(|_| "poller panicked")??;
        ensure!(states.windows(2).all(|w| rank(&w[0]) < rank(&w[1])), "non-monotone states {states:?}");
        ensure!(states.last().map(String::as_str) == Some("done"), "job ended {states:?}");
        transitions += states.len();
        for s in &snapshots {
            validated("AnalysisJob", s, &mut validations)?;
        }
    }

    let (status, card) = http(&server.base, "GET", &format!("/v1/entities/{}/card", demo.person), None)?;
    ensure!(status == 200, "card returned {status}");
    validated("EntityCard", &card, &mut validations)?;
    let (status, listing) = http(&server.base, "GET", &format!("/v1/entities/{}/references", demo.person), None)?;
    ensure!(status == 200, "references returned {status}: {listing}");
    validated("ReferenceListing", &listing, &mut validations)?;
    for path in ["/v1/jobs/ffffffffffffffffffffffffffffffff", "/v1/entities/Q4242/references", "/v1/entities/not%20an%20id/card"] {
        let (status, err) = http(&server.base, "GET", path, None)?;
        ensure!(status >= 400, "{path} returned {status}");
        validated("Error", &err, &mut validations)?;
    }
    let (status, err) = http(&server.base, "POST", "/v1/analyze", Some(&json!({"text": ""})))?;
    ensure!(status == 400, "empty analyze returned {status}");
    validated("Error", &err, &mut validations)?;
    drop(server);

    let resumed = crash_resume(dir.path())?;
    Ok(format!(
        "{} jobs polled by 8 threads saw monotone states ({transitions} observed); {validations} responses schema-valid; {resumed}",
        ids.len()
    ))
}

fn crash_resume(dir: &Path) -> Result<String, String> {
    let demo = write_demo_bundle(&dir.join("resume-bundle")).map_err(|e| e.to_string())?;
    let data = dir.join("resume-data");
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(1_700_000_000));
    let id = {
        let (store, _) = JobStore::open(&data, clock.clone(), DEFAULT_TTL).map_err(|e| e.to_string())?;
        let store = Arc::new(store);
        let (id, _) = store.submit(demo_request(&demo), Some(&demo.image)).map_err(|e| e.to_string())?;
        let pipeline = Pipeline::new(Arc::new(hash_mock_engine(&demo)), store.clone());
        while pipeline.step(&id).map_err(|e| e.to_string())? != JobState::Crawling {}
        id
    };
    let (store, unfinished) = JobStore::open(&data, clock, DEFAULT_TTL).map_err(|e| e.to_string())?;
    ensure!(unfinished == vec![id.clone()], "unfinished after restart: {unfinished:?}");
    ensure!(store.state(&id) == Some(JobState::Crawling), "restarted in {:?}", store.state(&id));
    store.mark_resumed(&id).map_err(|e| e.to_string())?;
    let store = Arc::new(store);
    let state = Pipeline::new(Arc::new(hash_mock_engine(&demo)), store.clone()).run(&id).map_err(|e| e.to_string())?;
    ensure!(state == JobState::Done, "resumed job ended {state}");
    let journal = read_journal(&store.journal_path()).map_err(|e| e.to_string())?;
    let linking = journal.iter().filter(|r| matches!(r, JournalRecord::Transition { state: JobState::Linking, .. })).count();
    ensure!(linking == 1, "linking ran {linking} times");
    Ok("crashed job resumed at crawling without re-linking".into())
}
