//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or exceeds its time limit.

mod support;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use autopilot_core::events::{EventBus, VecSink};
use autopilot_core::file::{paginate, FileOp, FileRegistry, OpResult};
use autopilot_core::kernel::{Kernel, KernelConfig, KernelError, PerceptionRequest, TaskEnv, TaskStatus};
use autopilot_core::memory::{
    merge_rankings, Extractor, MemorySource, MemoryStore, RecordMeta, RetrievalQuery, RuleExtractor,
};
use autopilot_core::policy::ScriptedPolicy;
use autopilot_core::prompt::{condense_trajectory, Trajectory, Turn, OBS_OMITTED};
use autopilot_core::state::{Limits, TaskId};
use autopilot_core::tokenizer::ReferenceTokenizer;
use autopilot_core::web::{
    dedup, interactive_pairs, load_tasks, observe_snapshot, prune_viewport, resolve, AXSnapshot, SimWeb, Targeting,
    DEFAULT_OBSERVATION_BUDGET,
};
use autopilot_gateway::{GatewayConfig, Store};
use autopilot_plan::{PlanRuntime, Value};
use axum::http::StatusCode;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    support::fixtures()
}

fn scored(items: &[(&str, f64)]) -> Vec<(String, f64)> {
    items.iter().map(|(d, s)| (d.to_string(), *s)).collect()
}

fn merge_golden() -> Outcome {
    let a = scored(&[("A", 0.8), ("B", 0.7)]);
    let b = scored(&[("B", 0.9), ("C", 0.6)]);
    let got = merge_rankings([&a, &b, &[], &[]], None).pairs();
    let want = scored(&[("B", 0.9), ("A", 0.8), ("C", 0.6)]);
    ensure!(got == want, "got {got:?}");
    ensure!(format!("{got:?}") == format!("{want:?}"), "formatting differs");
    Ok(format!("{got:?}"))
}

fn decomposition_golden() -> Outcome {
    let props = RuleExtractor
        .extract("The Yellow River is in China and has a length of 5,464 km.")
        .map_err(|e| e.to_string())?;
    let got: Vec<(&str, &str, &str)> =
        props.iter().map(|p| (p.text.as_str(), p.concept.as_str(), p.perspective.as_str())).collect();
    let want = vec![
        ("The Yellow River is in China", "Yellow River", "country"),
        ("The length of Yellow River is 5,464 km", "Yellow River", "length"),
    ];
    ensure!(got == want, "got {got:?}");
    Ok("2 propositions: (Yellow River, country), (Yellow River, length)".into())
}

/// Max score per doc; ties broken by the first list reaching it, then doc id.
fn merge_oracle(lists: &[Vec<(String, f64)>]) -> Vec<(String, f64)> {
    let mut best: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (m, list) in lists.iter().enumerate() {
        for (d, s) in list {
            let e = best.entry(d.clone()).or_insert((f64::NEG_INFINITY, usize::MAX));
            if *s > e.0 || (*s == e.0 && m < e.1) {
                *e = (*s, m);
            }
        }
    }
    let mut v: Vec<_> = best.into_iter().collect();
    v.sort_by(|(da, (sa, ma)), (db, (sb, mb))| sb.partial_cmp(sa).unwrap().then(ma.cmp(mb)).then(da.cmp(db)));
    v.into_iter().map(|(d, (s, _))| (d, s)).collect()
}

fn merge_properties() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let cases = 1000;
    for case in 0..cases {
        let lists: Vec<Vec<(String, f64)>> = (0..4)
            .map(|_| {
                let mut ids = BTreeMap::new();
                for _ in 0..rng.random_range(0..8) {
                    ids.insert(rng.random_range(0..12u8), rng.random_range(0..=10u8));
                }
                ids.into_iter().map(|(d, s)| (format!("D{d}"), f64::from(s) / 10.0)).collect()
            })
            .collect();
        let got = merge_rankings([&lists[0], &lists[1], &lists[2], &lists[3]], None).pairs();
        let ids: HashSet<&String> = got.iter().map(|(d, _)| d).collect();
        ensure!(ids.len() == got.len(), "case {case}: duplicate ids");
        ensure!(got.windows(2).all(|w| w[0].1 >= w[1].1), "case {case}: not sorted");
        for (d, s) in &got {
            let max = lists.iter().flatten().filter(|(x, _)| x == d).map(|(_, s)| *s).fold(f64::MIN, f64::max);
            ensure!(*s == max, "case {case}: {d} scored {s}, max is {max}");
        }
        ensure!(got == merge_oracle(&lists), "case {case}: differs from oracle");
    }
    Ok(format!("{cases}/{cases} instances match the oracle"))
}

const NAMES: &[&str] = &["Alice", "Bob", "Carol", "Dmitri", "Elena", "Farah", "Goro", "Hana", "Ivan", "Jun"];
const PLACES: &[&str] = &["Seattle", "Lagos", "Oslo", "Lima", "Kyoto", "Quebec", "Tunis", "Perth", "Riga", "Cusco"];
const WORDS: &[&str] = &[
    "apples", "trains", "music", "painting", "rivers", "coffee", "chess", "sailing", "poetry", "tea", "mountains",
    "bread", "cycling", "gardens", "stars", "puzzles", "weaving", "lanterns", "maps", "kites",
];

fn meta(user: &str) -> RecordMeta {
    RecordMeta { timestamp: "2024-03-01T10:00:00Z".into(), source: MemorySource::Note, user_id: user.into() }
}

fn retrieval_round_trip() -> Outcome {
    let mut rng = StdRng::seed_from_u64(42);
    let store = MemoryStore::default();
    let docs: Vec<String> = (0..100)
        .map(|i| {
            let (a, p) = (NAMES[i % 10], PLACES[i / 10]);
            let w: Vec<&str> = (0..4).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            format!("{a} lives in {p}. {a} enjoys {} and {} near {} {}, item {i}.", w[0], w[1], w[2], w[3])
        })
        .collect();
    let ids: Vec<String> = docs.iter().map(|d| store.ingest(d, meta("u")).map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    let mut firsts = 0;
    for (id, text) in ids.iter().zip(&docs) {
        let q = RetrievalQuery::from_text(text, 5, store.embedder());
        firsts += usize::from(store.retrieve(&q, "u").entries.first().map(|e| &e.doc_id) == Some(id));
        let qc: BTreeSet<&str> = q.concepts.iter().map(String::as_str).collect();
        let mut expect: Vec<(String, f64)> = store
            .snapshot("u")
            .iter()
            .filter_map(|r| {
                let mentioned: BTreeSet<&str> =
                    r.propositions.iter().flat_map(|p| p.mentioned_concepts.iter().map(String::as_str)).collect();
                let shared = qc.intersection(&mentioned).count();
                (shared > 0).then(|| (r.doc_id.clone(), shared as f64 / qc.len() as f64))
            })
            .collect();
        expect.sort_by(|(da, a), (db, b)| b.partial_cmp(a).unwrap().then(da.cmp(db)));
        ensure!(store.match_lists(&q, "u", None).concept_hard == expect, "concept_hard differs for {id}");
    }
    ensure!(firsts == 100, "self-query ranked first {firsts}/100");
    Ok("self-query first 100/100, concept_hard equals set scan".into())
}

fn simweb_suite() -> Outcome {
    let web = SimWeb::from_dir(fixtures().join("simweb")).map_err(|e| e.to_string())?;
    let tasks = load_tasks(fixtures().join("simweb_tasks.json")).map_err(|e| e.to_string())?;
    ensure!(tasks.len() == 10, "{} tasks", tasks.len());
    let mut passed = 0;
    for t in &tasks {
        let o = t.run(&web, Targeting::RoleName);
        ensure!(o.passed(), "{} failed: {:?}", t.name, o.failures);
        passed += 1;
    }
    let controls: Vec<_> = tasks.iter().filter(|t| t.coordinates_must_fail).collect();
    ensure!(!controls.is_empty(), "no negative control");
    for t in &controls {
        ensure!(!t.run(&web, Targeting::Coordinates).passed(), "{} passed under coordinate targeting", t.name);
    }
    Ok(format!("{passed}/10 tasks, {} negative control(s) fail under coordinates", controls.len()))
}

fn observation_pipeline() -> Outcome {
    let mut paths: Vec<_> = std::fs::read_dir(fixtures().join("ax"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    ensure!(paths.len() >= 20, "only {} snapshots", paths.len());
    for p in &paths {
        let name = p.display();
        let s = AXSnapshot::from_json(&std::fs::read_to_string(p).unwrap()).map_err(|e| format!("{name}: {e}"))?;
        let pruned = prune_viewport(&s);
        let once = dedup(&pruned);
        ensure!(dedup(&once) == once, "{name}: dedup not idempotent");
        ensure!(interactive_pairs(&once.root) == interactive_pairs(&pruned.root), "{name}: interactive pair lost");
        let (tree, obs) = observe_snapshot(&s, DEFAULT_OBSERVATION_BUDGET);
        ensure!(obs.token_count <= DEFAULT_OBSERVATION_BUDGET, "{name}: {} tokens", obs.token_count);
        let mut seen = HashSet::new();
        for (t, id) in obs.targets.iter().zip(&obs.node_ids) {
            ensure!(seen.insert(t.clone()), "{name}: {t} printed twice");
            let node = resolve(&tree, t).map_err(|e| format!("{name}: {t}: {e}"))?;
            ensure!(&node.node_id == id, "{name}: {t} resolves to {}", node.node_id);
        }
    }
    Ok(format!("{0}/{0} snapshots", paths.len()))
}

fn state_caching() -> Outcome {
    let rt = PlanRuntime::default();
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    rt.register_action("fetch", move |_: &[Value]| {
        c.fetch_add(1, Ordering::SeqCst);
        Ok(Value::list(vec![Value::Int(3), Value::Int(4)]))
    })
    .map_err(|e| e.to_string())?;
    let s = rt.create_session();
    let steps = ["data = fetch('x')\nn = len(data)", "total = sum(data)", "avg = total / n"];
    let mut executed = 0;
    for step in steps {
        let r = rt.execute(&s, step).map_err(|e| e.to_string())?;
        ensure!(r.is_ok(), "step failed: {step}");
        executed += r.statements_executed;
    }
    ensure!(executed == 4, "{executed} statements executed for 4 written");
    ensure!(calls.load(Ordering::SeqCst) == 1, "fetch ran {} times", calls.load(Ordering::SeqCst));
    ensure!(rt.get(&s, "avg").unwrap() == Some(Value::Float(3.5)), "wrong avg");

    let setup = "xs = [0]\ncount = 0";
    let write = |i: usize, j: usize| format!("xs.append({})\ncount = count + {i}", i * 100 + j);
    let rt = Arc::new(PlanRuntime::default());
    let root = rt.create_session();
    rt.execute(&root, setup).map_err(|e| e.to_string())?;
    let branches: Vec<_> = (0..8).map(|_| rt.branch(&root).unwrap()).collect();
    let handles: Vec<_> = branches
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, b)| {
            let rt = rt.clone();
            std::thread::spawn(move || (0..25).all(|j| rt.execute(&b, &write(i, j)).is_ok_and(|r| r.is_ok())))
        })
        .collect();
    for h in handles {
        ensure!(h.join().unwrap(), "concurrent write failed");
    }
    for (i, b) in branches.iter().enumerate() {
        let serial = PlanRuntime::default();
        let sr = serial.create_session();
        serial.execute(&sr, setup).unwrap();
        let sb = serial.branch(&sr).unwrap();
        for j in 0..25 {
            serial.execute(&sb, &write(i, j)).unwrap();
        }
        ensure!(rt.bindings(b).unwrap() == serial.bindings(&sb).unwrap(), "branch {i} differs from serial");
    }
    let fresh = PlanRuntime::default();
    let fs = fresh.create_session();
    fresh.execute(&fs, setup).unwrap();
    ensure!(rt.bindings(&root).unwrap() == fresh.bindings(&fs).unwrap(), "root namespace changed");
    Ok("4 statements executed once each, 8 branches match serial".into())
}

fn recursion() -> Outcome {
    let policy = Arc::new(ScriptedPolicy::new([
        r#"Action: PerceiveWeb(instruction="weather in Seattle", url="sim://weather/")"#,
        r#"Action: MemoryRead("Seattle")"#,
        r#"Action: Stop("Seattle: 14°C, light rain")"#,
        r#"Action: FinalAnswer("14°C and raining")"#,
    ]));
    let web = SimWeb::from_dir(fixtures().join("simweb")).map_err(|e| e.to_string())?;
    let kernel = Kernel::builder(policy.clone())
        .config(KernelConfig { limits: Limits { max_depth: 3, ..Limits::default() }, ..KernelConfig::default() })
        .web(Arc::new(web))
        .build();
    kernel.memory().ingest("Alice lives in Seattle.", meta("alice")).map_err(|e| e.to_string())?;
    let sink = Arc::new(VecSink::new());
    let env = TaskEnv::new("alice", "chat-1", kernel.runtime().create_session()).with_events(EventBus::new(sink.clone()));
    let out = kernel.run(&env, "Should I bring an umbrella?");
    ensure!(out.status == TaskStatus::Completed, "status {:?}", out.status);
    ensure!(out.trace.max_depth() == 2, "max depth {}", out.trace.max_depth());
    let web_task = out.trace.children().next().ok_or("no web child")?;
    let mem_task = web_task.children().next().ok_or("no memory grandchild")?;
    ensure!(web_task.kind == "web" && mem_task.kind == "memory", "kinds {} / {}", web_task.kind, mem_task.kind);
    ensure!(policy.prompts()[2].contains("Alice lives in Seattle"), "memory not visible to the browse step");

    let mut ctx = kernel.root_context("deep");
    for i in 0..3 {
        ctx = ctx.child(TaskId(format!("c{i}")), "deeper").ok_or("child refused early")?;
    }
    let before = sink.events().len();
    let err = kernel.spawn_perception(&env, &ctx, PerceptionRequest::MemoryRead("q".into()));
    ensure!(
        matches!(err, Err(KernelError::DepthExceeded { depth: 4, max_depth: 3 })),
        "depth 4 not refused: {:?}",
        err.map(|r| r.summary)
    );
    ensure!(sink.events().len() == before, "refused task emitted events");
    Ok("depth 2 reached, depth 4 refused".into())
}

fn condensation() -> Outcome {
    let tok = ReferenceTokenizer;
    let obs = |i: usize| Turn::observation(format!("observation {i}: ") + &"lorem ipsum dolor ".repeat(40));
    let t = Trajectory::new(vec![
        Turn::system("rules"),
        obs(1),
        Turn::policy("Action: Click(role=\"link\", name=\"A\")"),
        obs(2),
        Turn::policy("Action: Click(role=\"link\", name=\"B\")"),
        obs(3),
        Turn::policy("Action: Scroll(direction=\"down\")"),
        obs(4),
    ]);
    let mut expect = t.clone();
    expect.turns[1].content = OBS_OMITTED.into();
    expect.turns[3].content = OBS_OMITTED.into();
    let budget = expect.token_count(&tok);
    let once = condense_trajectory(&t, budget, &tok).map_err(|e| e.to_string())?;
    ensure!(once == expect, "condensed trajectory differs");
    ensure!(condense_trajectory(&once, budget, &tok).map_err(|e| e.to_string())? == once, "not idempotent");
    Ok(format!("budget {budget}: oldest two observations omitted"))
}

fn file_perception() -> Outcome {
    let mut rng = StdRng::seed_from_u64(9);
    let pieces = ["alpha", "Beta", " ", "\n", "\n\n", "é", "漢字", "HTML", "x"];
    for case in 0..50 {
        let doc: String = (0..rng.random_range(0..600)).map(|_| pieces[rng.random_range(0..pieces.len())]).collect();
        let size = rng.random_range(20..400);
        let pages = paginate(&doc, size);
        ensure!(pages.concat() == doc, "case {case}: pagination lost text");
        ensure!(pages.iter().all(|p| !p.is_empty() && p.chars().count() <= size), "case {case}: bad page");
    }

    let alphabet: Vec<char> = "aAbBéÉ \n".chars().collect();
    let files = FileRegistry::default();
    for case in 0..200 {
        let hay: String = (0..rng.random_range(1..300)).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let term: String = (0..rng.random_range(1..4)).map(|_| alphabet[rng.random_range(0..alphabet.len() - 1)]).collect();
        let expect = hay.to_lowercase().matches(&term.to_lowercase()).count();
        let id = files.load("u", "s", hay.as_bytes(), "r.txt").map_err(|e| e.to_string())?;
        let h = files.get("u", &id).ok_or("file vanished")?;
        let got = h.lock().operate(&FileOp::CountOccurrences { term: term.clone() }).map_err(|e| e.to_string())?;
        ensure!(got == OpResult::Count(expect), "case {case}: {term:?} counted {got:?}, expected {expect}");
    }

    let policy = Arc::new(ScriptedPolicy::new([
        r#"Action: PerceiveFile(instruction="How often does HTML appear?")"#,
        "Action: ExecutePlan()\n```plan\nn = file_count(\"file-000001\", \"HTML\")\nprint(n)\n```",
        r#"Action: FinalAnswer("5")"#,
        r#"Action: FinalAnswer("HTML appears 5 times.")"#,
    ]));
    let kernel = Kernel::new(policy.clone());
    let doc = "Intro to HTML.\n\nMost pages are written in html, styled with CSS.\n\n\
               The HTML spec is long. XHTML is a stricter variant.\n\nAppendix: Html entities.";
    kernel.files().load("alice", "chat-1", doc.as_bytes(), "web.txt").map_err(|e| e.to_string())?;
    let env = TaskEnv::new("alice", "chat-1", kernel.runtime().create_session());
    let out = kernel.run(&env, "How many times does HTML appear in the document?");
    ensure!(out.status == TaskStatus::Completed, "status {:?}", out.status);
    ensure!(policy.prompts()[2].contains("Output:\n5"), "count was not 5");
    Ok("50 lossless paginations, 200/200 counts, HTML = 5".into())
}

fn gateway() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
    rt.block_on(async {
        use support::*;

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let db = dir.path().join("gw.db");
        let raw = r#"[{"role":"user","content":"q"},  {"content":"a","role":"assistant","w":1.50}]"#;
        let (token, feedback_id) = {
            let app = app_with(Arc::new(Store::open(&db).unwrap()), answering(), GatewayConfig::default());
            let token = user(&app, "ada");
            let sid = session(&app, &token).await;
            ensure!(message(&app, &token, &sid, "hello").await.status == StatusCode::OK, "message failed");
            let body = format!(r#"{{"session_id":"{sid}","turn_index":1,"original_messages":{raw},"edited_response":"hi"}}"#);
            let r = call(&app.router, "POST", "/feedback", Some(&token), &body).await;
            ensure!(r.status == StatusCode::CREATED, "feedback: {}", r.text());
            (token, r.json()["feedback_id"].as_str().unwrap().to_string())
        };
        let app = app_with(Arc::new(Store::open(&db).unwrap()), answering(), GatewayConfig::default());
        let r = call(&app.router, "GET", &format!("/feedback/{feedback_id}"), Some(&token), "").await;
        ensure!(r.status == StatusCode::OK && r.text().contains(raw), "feedback not durable: {}", r.text());

        let slow = autopilot_core::policy::ScriptedPolicy::from_fn(|_, i| {
            std::thread::sleep(Duration::from_millis(300));
            Some(format!("Action: FinalAnswer(\"{i}\")"))
        });
        let app = app_with(Arc::new(Store::open_in_memory().unwrap()), slow, GatewayConfig::default());
        let token = user(&app, "ada");
        let sid = session(&app, &token).await;
        let (a, b) = tokio::join!(message(&app, &token, &sid, "one"), message(&app, &token, &sid, "two"));
        let conflicts = [a.status, b.status].iter().filter(|s| **s == StatusCode::CONFLICT).count();
        let oks = [a.status, b.status].iter().filter(|s| **s == StatusCode::OK).count();
        ensure!((conflicts, oks) == (1, 1), "statuses {} / {}", a.status, b.status);

        let app = support::app();
        let mut owned = Vec::new();
        for name in ["ada", "bob", "cy", "dee"] {
            let token = user(&app, name);
            let sid = session(&app, &token).await;
            message(&app, &token, &sid, &format!("{name} says hello")).await;
            let uri = format!("/sessions/{sid}/files?filename={name}.txt");
            let file = send(&app.router, request("POST", &uri, Some(&token), format!("{name} private notes"))).await.json()
                ["file_id"]
                .as_str()
                .unwrap()
                .to_string();
            let body = json!({"session_id": sid, "turn_index": 1, "suggestion": name}).to_string();
            let fb = call(&app.router, "POST", "/feedback", Some(&token), &body).await.json()["feedback_id"]
                .as_str()
                .unwrap()
                .to_string();
            owned.push((name, token, sid, file, fb));
        }
        let mut probes = 0;
        for (i, (_, token, ..)) in owned.iter().enumerate() {
            let memories = call(&app.router, "GET", "/memories", Some(token), "").await.text();
            for (j, (other, _, sid, file, fb)) in owned.iter().enumerate() {
                if i == j {
                    continue;
                }
                for uri in [format!("/sessions/{sid}"), format!("/files/{file}"), format!("/feedback/{fb}")] {
                    let r = call(&app.router, "GET", &uri, Some(token), "").await;
                    ensure!(r.status == StatusCode::NOT_FOUND, "user {i} reached {uri}: {}", r.status);
                    probes += 1;
                }
                ensure!(!memories.contains(&format!("{other} says hello")), "user {i} sees {other}'s memory");
                probes += 1;
            }
        }
        Ok(format!("feedback durable, one 409 of 2, {probes} cross-user probes with 0 leaks"))
    })
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { name: "memory merge golden", limit: secs(1), run: merge_golden },
        Criterion { name: "proposition decomposition golden", limit: secs(1), run: decomposition_golden },
        Criterion { name: "merge property suite", limit: secs(10), run: merge_properties },
        Criterion { name: "retrieval round-trip", limit: secs(30), run: retrieval_round_trip },
        Criterion { name: "simweb end-to-end", limit: secs(60), run: simweb_suite },
        Criterion { name: "observation pipeline", limit: None, run: observation_pipeline },
        Criterion { name: "state caching economy", limit: None, run: state_caching },
        Criterion { name: "recursion depth", limit: None, run: recursion },
        Criterion { name: "trajectory condensation", limit: None, run: condensation },
        Criterion { name: "file perception", limit: None, run: file_perception },
        Criterion { name: "gateway durability, conflicts, isolation", limit: None, run: gateway },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {:<42} {:>9.3}s  {detail}", c.name, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<42} {:>9.3}s  {why}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
