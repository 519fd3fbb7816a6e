use std::path::PathBuf;

use autopilot_core::web::{load_tasks, SimWeb, Targeting};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[test]
fn all_tasks_pass_with_role_name_targeting() {
    let web = SimWeb::from_dir(fixtures().join("simweb")).unwrap();
    let tasks = load_tasks(fixtures().join("simweb_tasks.json")).unwrap();
    assert_eq!(tasks.len(), 10);
    for t in &tasks {
        let o = t.run(&web, Targeting::RoleName);
        assert!(o.passed(), "{}: {:?}\n{}", t.name, o.failures, o.last_observation);
    }
}

#[test]
fn coordinate_clicks_hit_the_overlay() {
    let web = SimWeb::from_dir(fixtures().join("simweb")).unwrap();
    let tasks = load_tasks(fixtures().join("simweb_tasks.json")).unwrap();
    let marked: Vec<_> = tasks.iter().filter(|t| t.coordinates_must_fail).collect();
    assert!(!marked.is_empty());
    for t in marked {
        let o = t.run(&web, Targeting::Coordinates);
        assert!(!o.passed(), "{} should fail under coordinate clicks", t.name);
    }
}
