use std::path::PathBuf;
use std::sync::Arc;

use autopilot_core::events::{EventBody, EventBus, VecSink};
use autopilot_core::kernel::{CancelToken, Kernel, KernelConfig, KernelError, PerceptionRequest, TaskEnv, TaskStatus};
use autopilot_core::policy::ScriptedPolicy;
use autopilot_core::state::{FragmentSource, Limits, ObservedState, TaskId};
use autopilot_core::web::SimWeb;
use autopilot_core::file::FileRegistry;
use proptest::prelude::*;

struct Rig {
    kernel: Kernel,
    env: TaskEnv,
    policy: Arc<ScriptedPolicy>,
    sink: Arc<VecSink>,
}

fn simweb() -> Arc<SimWeb> {
    Arc::new(SimWeb::from_dir(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/simweb")).unwrap())
}

fn rig_with(policy: ScriptedPolicy, limits: Limits) -> Rig {
    let policy = Arc::new(policy);
    let kernel = Kernel::builder(policy.clone())
        .config(KernelConfig { limits, ..KernelConfig::default() })
        .web(simweb())
        .build();
    let sink = Arc::new(VecSink::new());
    let ns = kernel.runtime().create_session();
    let env = TaskEnv::new("alice", "chat-1", ns).with_events(EventBus::new(sink.clone()));
    Rig { kernel, env, policy, sink }
}

fn rig(script: &[&str]) -> Rig {
    rig_with(ScriptedPolicy::new(script.iter().copied()), Limits::default())
}

fn limits(max_depth: u32, max_steps: u32) -> Limits {
    Limits { max_depth, max_steps, ..Limits::default() }
}

#[test]
fn immediate_answer() {
    let r = rig(&[r#"Action: FinalAnswer("OK")"#]);
    let out = r.kernel.run(&r.env, "say OK");
    assert_eq!(out.status, TaskStatus::Completed);
    assert_eq!(out.answer, "OK");
    assert_eq!(out.trace.records.len(), 1);
    assert_eq!(out.trace.decision_kinds(), vec!["final_answer"]);
    assert_eq!(r.policy.calls(), 1);
}

#[test]
fn step_limit_forces_a_summary() {
    let p = ScriptedPolicy::from_fn(|prompt, _| {
        Some(if prompt.contains("step limit is reached") {
            r#"FinalAnswer("partial")"#.into()
        } else {
            "Action: ExecutePlan()\n```plan\nx = 1\n```".into()
        })
    });
    let r = rig_with(p, limits(3, 3));
    let out = r.kernel.run(&r.env, "loop forever");
    assert_eq!(out.status, TaskStatus::StepLimit);
    assert_eq!(out.answer, "partial");
    assert_eq!(out.trace.decision_kinds(), vec!["execute_plan", "execute_plan", "execute_plan", "final_answer"]);
    assert_eq!(r.policy.calls(), 4);
}

#[test]
fn malformed_outputs_are_reported_then_retried() {
    let r = rig(&["I think the answer is 4", "Action: Dance()", r#"Action: FinalAnswer("4")"#]);
    let out = r.kernel.run(&r.env, "2+2?");
    assert_eq!(out.status, TaskStatus::Completed);
    assert_eq!(out.state.count(FragmentSource::ErrorReport), 2);
    assert_eq!(out.trace.records[0].attempts, 3);
}

#[test]
fn retry_budget_exhaustion_is_an_error() {
    let r = rig(&["nope", "nope", "nope", r#"FinalAnswer("late")"#]);
    let out = r.kernel.run(&r.env, "x");
    assert_eq!(out.status, TaskStatus::Error);
    assert_eq!(out.trace.decision_kinds(), vec!["malformed_decision"]);
    assert_eq!(r.policy.calls(), 3);
    assert!(r.sink.events().iter().any(|e| matches!(e.body, EventBody::Error { fatal: true, .. })));
}

#[test]
fn plan_state_is_cached_across_steps() {
    let r = rig(&[
        "Action: ExecutePlan()\n```plan\nprices = [3, 4, 5]\n```",
        "Action: ExecutePlan()\n```plan\ntotal = sum(prices)\nprint(total)\n```",
        r#"Action: FinalAnswer("12")"#,
    ]);
    let out = r.kernel.run(&r.env, "add prices");
    assert_eq!(out.status, TaskStatus::Completed);
    let second = &r.policy.prompts()[2];
    assert!(second.contains("total"), "digest should list cached bindings");
    assert!(out.state.fragments().iter().any(|f| f.content.contains("Output:\n12")));
}

#[test]
fn recursion_reaches_memory_through_the_web() {
    let r = rig(&[
        r#"Action: PerceiveWeb(instruction="weather in Seattle", url="sim://weather/")"#,
        r#"Action: MemoryRead("Seattle")"#,
        r#"Action: Stop("Seattle: 14°C, light rain")"#,
        r#"Action: FinalAnswer("14°C and raining")"#,
    ]);
    r.kernel
        .memory()
        .ingest("Alice lives in Seattle.", autopilot_core::memory::RecordMeta {
            timestamp: "t".into(),
            source: autopilot_core::memory::MemorySource::Note,
            user_id: "alice".into(),
        })
        .unwrap();
    let out = r.kernel.run(&r.env, "Should I bring an umbrella?");
    assert_eq!(out.status, TaskStatus::Completed);
    assert_eq!(out.trace.max_depth(), 2);
    let web = out.trace.children().next().unwrap();
    assert_eq!(web.kind, "web");
    let mem = web.children().next().unwrap();
    assert_eq!((mem.kind.as_str(), mem.depth), ("memory", 2));
    assert!(mem.answer.contains("Alice lives in Seattle"));
    assert!(r.policy.prompts()[2].contains("Alice lives in Seattle"));
    assert_eq!(out.state.count(FragmentSource::WebObservation), 1);
}

#[test]
fn perception_below_max_depth_is_refused() {
    let r = rig_with(ScriptedPolicy::new(Vec::<String>::new()), limits(3, 5));
    let root = r.kernel.root_context("x");
    let mut ctx = root.clone();
    for i in 0..3 {
        ctx = ctx.child(TaskId(format!("c{i}")), "deeper").unwrap();
    }
    assert_eq!(ctx.depth, 3);
    let err = r.kernel.spawn_perception(&r.env, &ctx, PerceptionRequest::MemoryRead("q".into())).unwrap_err();
    assert_eq!(err, KernelError::DepthExceeded { depth: 4, max_depth: 3 });
    assert!(r.sink.events().is_empty());
}

#[test]
fn nested_chain_stops_at_depth_three() {
    let script = [
        r#"Action: PerceiveFile(instruction="summarize", file="file-000001")"#,
        r#"Action: PerceiveFile(instruction="look closer", file="file-000001")"#,
        r#"Action: PerceiveWeb(instruction="check weather", url="sim://weather/")"#,
        r#"Action: MemoryRead("Seattle")"#,
        r#"Action: Stop("rainy")"#,
        r#"Action: FinalAnswer("two")"#,
        r#"Action: FinalAnswer("one")"#,
        r#"Action: FinalAnswer("done")"#,
    ];
    let r = rig_with(ScriptedPolicy::new(script), limits(3, 5));
    r.kernel.files().load("alice", "chat-1", b"Notes about Seattle weather.", "notes.txt").unwrap();
    let out = r.kernel.run(&r.env, "go deep");
    assert_eq!(out.status, TaskStatus::Completed);
    assert_eq!(out.trace.max_depth(), 3);
    let prompts = r.policy.prompts();
    assert!(prompts[4].contains("depth limit"), "{}", prompts[4]);
    let events = r.sink.events();
    assert!(events.iter().all(|e| e.depth <= 3));
    assert!(!events.iter().any(|e| matches!(e.body, EventBody::PerceptionStarted { .. }) && e.depth > 3));
}

#[test]
fn events_are_ordered_and_every_task_finishes() {
    let r = rig(&[
        r#"Action: PerceiveWeb(instruction="weather", url="sim://weather/")"#,
        r#"Action: Stop("Seattle: 14°C")"#,
        "Action: ExecutePlan()\n```plan\nprint(1)\n```",
        r#"Action: FinalAnswer("done")"#,
    ]);
    let out = r.kernel.run(&r.env, "weather");
    let events = r.sink.events();
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
    }
    let started: Vec<_> = events.iter().filter(|e| e.kind() == "perception_started").map(|e| e.task_id.clone()).collect();
    for t in &started {
        let s = events.iter().position(|e| &e.task_id == t && e.kind() == "perception_started").unwrap();
        let f = events.iter().position(|e| &e.task_id == t && e.kind() == "final_answer").unwrap();
        assert!(s < f);
    }
    let last = events.last().unwrap();
    assert_eq!((last.task_id.as_str(), last.kind()), (out.task_id.0.as_str(), "final_answer"));
    let kinds: Vec<_> = events.iter().map(|e| e.kind()).collect();
    for k in ["perception_started", "observation", "plan_generated", "action_executed", "final_answer"] {
        assert!(kinds.contains(&k), "{k} missing from {kinds:?}");
    }
    let json = last.to_json();
    assert!(json.contains("\"type\":\"final_answer\"") && json.contains("\"seq\""));
}

#[test]
fn file_count_through_a_plan() {
    let r = rig(&[
        r#"Action: PerceiveFile(instruction="How often does HTML appear?")"#,
        "Action: ExecutePlan()\n```plan\nn = file_count(\"file-000001\", \"HTML\")\nprint(n)\n```",
        r#"Action: FinalAnswer("5")"#,
        r#"Action: FinalAnswer("HTML appears 5 times.")"#,
    ]);
    let doc = "HTML is markup. Browsers parse html.\n\nXHTML differs from HTML5.\n\nNothing here.\n\nThe end: Html.";
    r.kernel.files().load("alice", "chat-1", doc.as_bytes(), "guide.md").unwrap();
    let out = r.kernel.run(&r.env, "count HTML");
    assert_eq!(out.status, TaskStatus::Completed);
    let file_task = out.trace.children().next().unwrap();
    assert_eq!(file_task.kind, "file");
    assert!(r.policy.prompts()[2].contains("Output:\n5"));
    assert_eq!(out.state.count(FragmentSource::FileObservation), 1);
}

#[test]
fn other_users_files_are_invisible() {
    let r = rig(&[r#"Action: PerceiveFile(instruction="read", file="file-000001")"#, r#"Action: FinalAnswer("none")"#]);
    r.kernel.files().load("bob", "chat-9", b"secret", "s.txt").unwrap();
    let out = r.kernel.run(&r.env, "peek");
    assert_eq!(out.state.count(FragmentSource::ErrorReport), 1);
    assert!(!out.state.fragments().iter().any(|f| f.content.contains("secret")));
}

#[test]
fn cancelled_before_start() {
    let r = rig(&[r#"FinalAnswer("x")"#]);
    let cancel = CancelToken::new();
    cancel.cancel();
    let out = r.kernel.run(&r.env.clone().with_cancel(cancel), "x");
    assert_eq!(out.status, TaskStatus::Cancelled);
    assert_eq!(r.policy.calls(), 0);
}

#[test]
fn file_registry_drops_session_data() {
    let files = FileRegistry::default();
    let id = files.load("u", "s1", b"alpha beta", "a.txt").unwrap();
    files.load("u", "s2", b"gamma", "b.txt").unwrap();
    assert_eq!(files.index().len("u"), 2);
    assert_eq!(files.close_session("s1"), 1);
    assert!(files.get("u", &id).is_none());
    assert_eq!(files.index().len("u"), 1);
}

const MOVES: &[&str] = &[
    r#"Action: FinalAnswer("ok")"#,
    "Action: ExecutePlan()\n```plan\nx = 1\n```",
    "garbage",
    r#"Action: MemoryRead("Seattle")"#,
    r#"Action: MemoryWrite("Bob likes tea")"#,
    r#"Action: PerceiveWeb(instruction="look", url="sim://news/")"#,
    r#"Action: Click(role="link", name="World")"#,
    r#"Action: Stop("seen")"#,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tasks_terminate_within_the_call_bound(
        choices in prop::collection::vec(0usize..MOVES.len(), 1..200),
        max_depth in 0u32..4,
        max_steps in 1u32..5,
    ) {
        let script: Vec<String> = choices.iter().map(|&i| MOVES[i].to_string()).collect();
        let p = ScriptedPolicy::from_fn(move |_, i| Some(script[i % script.len()].clone()));
        let r = rig_with(p, limits(max_depth, max_steps));
        let out = r.kernel.run(&r.env, "explore");
        let per_task = u64::from(max_steps) * 3 + 1;
        let mut total = 0u64;
        let mut ok = true;
        out.trace.walk(&mut |t, parent| {
            total += u64::from(t.policy_calls);
            ok &= u64::from(t.policy_calls) <= per_task && t.depth <= max_depth;
            if let Some(p) = parent {
                ok &= t.depth == p.depth + 1;
            }
        });
        prop_assert!(ok);
        prop_assert_eq!(total, r.policy.calls() as u64);
        let events = r.sink.events();
        prop_assert_eq!(events.last().map(|e| e.kind()), Some("final_answer"));
    }
}

#[test]
fn root_run_task_respects_depth_on_entry() {
    let r = rig(&[r#"FinalAnswer("x")"#]);
    let mut ctx = r.kernel.root_context("x");
    ctx.depth = 9;
    let out = r.kernel.run_task(&r.env, ctx, ObservedState::with_user_input("x"));
    assert_eq!(out.status, TaskStatus::DepthLimit);
    assert_eq!(r.policy.calls(), 0);
}
