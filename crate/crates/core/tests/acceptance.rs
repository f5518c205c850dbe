//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use agentic_auv::agent::{validate, Agent, ReasonerBinding, SafetyLimits};
use agentic_auv::bus::Bus;
use agentic_auv::experiments::{diagnostics, interpretation, navrepair, negotiation, planning, recovery, tuning};
use agentic_auv::planner::{astar, planner_spec, Cell, GridMap, PerceptionParams};
use agentic_auv::scenario::{replay_file, run_scenario, ScenarioConfig};
use agentic_auv::topics::{standard_registry, PLAN_PATH};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn diagnostics_criterion() -> Outcome {
    let seeds = [1, 2, 3, 4, 5];
    let rows = diagnostics::run_table(&seeds, &ReasonerBinding::Template).map_err(|e| e.to_string())?;
    let correct = rows.iter().filter(|r| r.correct).count();
    let mut transitions = Vec::new();
    for &s in &seeds {
        transitions.push(diagnostics::run_transition(s, &[2, 3], 20, 50, 70).map_err(|e| e.to_string())?);
    }
    let flips = transitions.iter().filter(|t| t.within(10)).count();
    check(
        correct == 25 && rows.len() == 25 && flips == transitions.len(),
        format!(
            "{correct}/{} diagnoses correct, transition within 10 samples on {flips}/{} seeds",
            rows.len(),
            transitions.len()
        ),
    )
}

fn negotiation_criterion() -> Outcome {
    let rows = negotiation::run_all(&[1, 2, 3, 4, 5]).map_err(|e| e.to_string())?;
    let clear = rows.iter().filter(|r| r.min_clearance > 0.0).count();
    let tight: Vec<f64> = rows
        .iter()
        .filter(|r| r.scenario == "tight_corridor")
        .map(|r| r.min_clearance)
        .collect();
    let tight_ok = tight.iter().any(|&d| d > 0.0 && d < 0.5);
    let yields_ok = rows.iter().all(|r| r.one_yield_per_conflict());
    let conflicts: usize = rows.iter().map(|r| r.conflicts).sum();
    let yields: usize = rows.iter().map(|r| r.yields).sum();
    check(
        rows.len() == 40 && clear == 40 && tight_ok && yields_ok,
        format!(
            "{clear}/{} runs with clearance > 0, tight corridor min {:.2} m, {yields} yields for {conflicts} conflicts",
            rows.len(),
            tight.iter().cloned().fold(f64::INFINITY, f64::min)
        ),
    )
}

fn recovery_criterion() -> Outcome {
    let rows = recovery::run_matrix(&[1, 2, 3]).map_err(|e| e.to_string())?;
    let faster = rows.iter().filter(|r| r.faster).count();
    let means = recovery::means(&rows);
    let means_up = means.windows(2).all(|w| w[1].1 > w[0].1 && w[1].2 > w[0].2);
    check(
        rows.len() == 18 && faster == 18 && recovery::monotone(&rows) && means_up,
        format!(
            "{faster}/{} faster with memory, monotone per run {}, means {}",
            rows.len(),
            recovery::monotone(&rows),
            means
                .iter()
                .map(|(d, a, b)| format!("{d}m {a:.1}->{b:.1}s"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn tuning_criterion() -> Outcome {
    let (_, summaries, _) = tuning::run_all(&ReasonerBinding::Template).map_err(|e| e.to_string())?;
    let pass = summaries
        .iter()
        .filter(|s| s.passes() && s.converged_at.is_some_and(|e| e <= 6) && s.relevance_monotone && s.words_monotone)
        .count();
    let standard: Vec<_> = summaries.iter().filter(|s| s.scene == 1).collect();
    let first_ok = !standard.is_empty()
        && standard
            .iter()
            .all(|s| s.first_relevance <= 20.0 && s.first_words >= 30);
    let s0 = standard.first().ok_or("no standard-scene runs")?;
    check(
        summaries.len() == 20 && pass == 20 && first_ok,
        format!(
            "{pass}/{} converge by episode 6, standard scene episode 1: {:.1}% relevance, {} words",
            summaries.len(),
            s0.first_relevance,
            s0.first_words
        ),
    )
}

fn navrepair_criterion() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let seeds: Vec<u64> = (1..=10).collect();
    let rows = navrepair::run_seeds(&seeds, dir.path()).map_err(|e| e.to_string())?;
    let within = rows
        .iter()
        .filter(|r| r.kf_error <= 0.5 * r.dead_reckoning_error)
        .count();
    let suites = navrepair::synth_suites(dir.path()).map_err(|e| e.to_string())?;
    let green = |kind: &str| {
        suites
            .iter()
            .any(|s| s.kind == kind && s.deployed && s.tests_passed == s.tests_total && s.tests_total > 0)
    };
    check(
        within >= 9 && green("averaging") && green("dual_odom"),
        format!(
            "filter error <= 50% of dead reckoning on {within}/10 seeds, suites {}",
            suites
                .iter()
                .map(|s| format!("{} {}/{}", s.kind, s.tests_passed, s.tests_total))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

/// Plain Dijkstra over 8-connected moves without corner cutting.
fn dijkstra(map: &GridMap, s: Cell, g: Cell) -> Option<f64> {
    let (w, h) = (map.width, map.height);
    let mut dist = vec![f64::INFINITY; w * h];
    let mut done = vec![false; w * h];
    dist[s.1 * w + s.0] = 0.0;
    loop {
        let mut best: Option<usize> = None;
        for i in 0..w * h {
            if !done[i] && dist[i].is_finite() && best.is_none_or(|b| dist[i] < dist[b]) {
                best = Some(i);
            }
        }
        let i = best?;
        done[i] = true;
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        if (x as usize, y as usize) == g {
            return Some(dist[i]);
        }
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let free = |a: i64, b: i64| map.is_free((a as usize, b as usize));
                if !free(nx, ny) || (dx != 0 && dy != 0 && (!free(x + dx, y) || !free(x, y + dy))) {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                let c = if dx != 0 && dy != 0 { 2f64.sqrt() } else { 1.0 };
                if dist[i] + c < dist[j] {
                    dist[j] = dist[i] + c;
                }
            }
        }
    }
}

fn planner_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    for _ in 0..50 {
        let mut m = GridMap::new(10, 10, 1.0).map_err(|e| e.to_string())?;
        for c in m.cells().collect::<Vec<_>>() {
            if rng.random_bool(0.25) {
                m.set(c, true);
            }
        }
        let s = (rng.random_range(0..10), rng.random_range(0..10));
        let g = (rng.random_range(0..10), rng.random_range(0..10));
        m.set(s, false);
        m.set(g, false);
        let got = astar(&m, s, g, 0, None).ok().map(|p| p.cell_cost());
        let want = dijkstra(&m, s, g);
        if match (got, want) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-9,
            (None, None) => true,
            _ => false,
        } {
            agree += 1;
        }
    }
    let zero = planning::zero_noise_matches_baseline().map_err(|e| e.to_string())?;
    let zero_ok = zero.iter().all(|(_, a, b)| a == b);
    let seeds = [1, 2, 3, 4, 5];
    let rows = planning::run_grid(&PerceptionParams::default(), &seeds).map_err(|e| e.to_string())?;
    let per_map = planning::summarize(&rows);
    let rates_ok = per_map.iter().all(|m| (0.4..=1.0).contains(&m.success_rate));
    let sweep = planning::miss_sweep(&seeds).map_err(|e| e.to_string())?;
    let sweep_ok = sweep.windows(2).all(|w| w[1].1 <= w[0].1);
    check(
        agree == 50 && zero_ok && rates_ok && sweep_ok,
        format!(
            "A* = Dijkstra on {agree}/50 maps, zero-noise = baseline on {}/{} maps, per-map success {}, miss sweep {}",
            zero.iter().filter(|(_, a, b)| a == b).count(),
            zero.len(),
            per_map
                .iter()
                .map(|m| format!("{} {:.0}%", m.map_id, 100.0 * m.success_rate))
                .collect::<Vec<_>>()
                .join(" "),
            sweep
                .iter()
                .map(|(p, r)| format!("{p}:{:.0}%", 100.0 * r))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn interpretation_criterion() -> Outcome {
    let rows = interpretation::run_all(1).map_err(|e| e.to_string())?;
    let matched = rows.iter().filter(|r| r.expected_match).count();
    let planned = rows.iter().filter(|r| r.fully_planned()).count();
    let direct = rows
        .iter()
        .find(|r| r.prompt == "Inspect goal 2")
        .ok_or("prompt missing")?;
    let direct_ok = direct.expected_match && direct.planned_collisions >= 1;
    check(
        rows.len() == 10 && matched == 10 && planned == 10 && direct_ok,
        format!(
            "{matched}/{} graphs match, {planned} fully planned, \"Inspect goal 2\" planned collisions {}",
            rows.len(),
            direct.planned_collisions
        ),
    )
}

/// Mutated plan replies: valid, out of limits, wrong types, broken JSON.
fn fuzz_reply(rng: &mut ChaCha8Rng) -> String {
    let num = |rng: &mut ChaCha8Rng| -> String {
        match rng.random_range(0..8) {
            0 => "1e309".into(),
            1 => "-0.0".into(),
            2 => "\"3\"".into(),
            3 => "null".into(),
            _ => format!("{:.3}", rng.random_range(-15.0..15.0)),
        }
    };
    let n = rng.random_range(0..5);
    let pts: Vec<String> = (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                format!("[{}, {}]", num(rng), num(rng))
            } else {
                format!(r#"{{"x": {}, "y": {}, "z": {}}}"#, num(rng), num(rng), num(rng))
            }
        })
        .collect();
    let mut body = format!(r#"{{"waypoints": [{}], "speed": {}}}"#, pts.join(", "), num(rng));
    match rng.random_range(0..10) {
        0 => body = format!("```json\n{body}\n```"),
        1 => body.truncate(rng.random_range(0..body.len().max(1))),
        2 => {
            let i = rng.random_range(0..body.len());
            let mut bytes = body.into_bytes();
            bytes[i] = rng.random_range(0x20..0x7f);
            body = String::from_utf8_lossy(&bytes).into_owned();
        }
        3 => body = body.replace("\"speed\"", "\"velocity\""),
        4 => body = format!("Here is the plan: {body}"),
        5 => body = body.replacen('}', r#", "extra": true}"#, 1),
        _ => {}
    }
    body
}

fn safety_criterion() -> Outcome {
    const N: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let replies: Vec<String> = (0..N).map(|_| fuzz_reply(&mut rng)).collect();
    let limits = SafetyLimits::tank(10.0, 6.0, 5.0, 1.0);
    let mut bus = Bus::new(standard_registry(), 0);
    let spec = planner_spec("planner", ReasonerBinding::Playback(replies), limits, 0.3);
    let mut agent = Agent::instantiate(&mut bus, spec).map_err(|e| e.to_string())?;
    let schema = bus.registry().topic_schema(PLAN_PATH).ok_or("no plan schema")?.clone();
    let (mut published, mut invalid, mut crashes) = (0, 0, 0);
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut unlabelled = 0;
    for _ in 0..N {
        let out = match catch_unwind(AssertUnwindSafe(|| agent.step(&[], None))) {
            Ok(o) => o,
            Err(_) => {
                crashes += 1;
                continue;
            }
        };
        for m in &out.outbox {
            published += 1;
            if validate(&m.payload, &schema, &limits).is_err() || bus.publish(m.clone()).is_err() {
                invalid += 1;
            }
        }
        for e in &out.events {
            match e.payload["kind"].as_str() {
                Some(k @ ("syntax" | "schema" | "limit")) => *labels.entry(k.into()).or_default() += 1,
                _ => unlabelled += 1,
            }
        }
        if out.outbox.len() + out.events.len() != 1 {
            unlabelled += 1;
        }
    }
    let blocked: usize = labels.values().sum();
    check(
        invalid == 0 && crashes == 0 && unlabelled == 0 && published + blocked == N,
        format!("{N} replies: {published} published ({invalid} invalid), {blocked} blocked {labels:?}, {unlabelled} unlabelled, {crashes} crashes"),
    )
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap_or_default();
                out.insert(p.strip_prefix(dir).unwrap_or(&p).to_path_buf(), bytes);
            }
        }
    }
    out
}

fn determinism_criterion() -> Outcome {
    let mut identical = 0;
    let mut traces = 0;
    let mut replayed = 0;
    let names = ["world.toml", "negotiation.toml", "diagnostics.toml"];
    for name in names {
        let config = ScenarioConfig::load(&scenarios_dir().join(name)).map_err(|e| e.to_string())?;
        let (a, b) = (
            tempfile::tempdir().map_err(|e| e.to_string())?,
            tempfile::tempdir().map_err(|e| e.to_string())?,
        );
        run_scenario(&config, a.path()).map_err(|e| e.to_string())?;
        run_scenario(&config, b.path()).map_err(|e| e.to_string())?;
        let (ta, tb) = (tree(a.path()), tree(b.path()));
        if ta == tb {
            identical += 1;
        }
        for p in ta
            .keys()
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl") && p.starts_with("traces"))
        {
            traces += 1;
            if replay_file(&a.path().join(p)).map_err(|e| e.to_string())?.matched {
                replayed += 1;
            }
        }
    }
    check(
        identical == names.len() && traces > 0 && replayed == traces,
        format!("{identical}/{} scenarios byte-identical across reruns, {replayed}/{traces} traces replay to the recorded inbox digests", names.len()),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("diagnostics", diagnostics_criterion),
        ("negotiation", negotiation_criterion),
        ("recovery", recovery_criterion),
        ("tuning", tuning_criterion),
        ("nav repair", navrepair_criterion),
        ("planner", planner_criterion),
        ("interpretation", interpretation_criterion),
        ("safety parser", safety_criterion),
        ("determinism", determinism_criterion),
    ];
    let started = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let (verdict, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{verdict} {}. {name}: {detail} ({:.1} s)",
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "{}/{} criteria passed in {:.1} s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
