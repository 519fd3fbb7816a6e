//! Serializing a pruned tree into a budgeted text observation, and
//! resolving role+name targets against it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ax::{dedup, prune_viewport, AXNode, AXSnapshot};
use crate::decision::Target;
use crate::tokenizer::{count_tokens, Tokenizer};

pub const DEFAULT_OBSERVATION_BUDGET: usize = 4_000;

const MAX_NAME_CHARS: usize = 160;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrollPosition {
    pub page: u32,
    pub of: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub url: String,
    pub title: String,
    pub lines: Vec<String>,
    /// `node_ids[i]` is the node printed on `lines[i]`.
    pub node_ids: Vec<String>,
    /// `targets[i]` is the role+name (and ordinal) printed on `lines[i]`.
    pub targets: Vec<Target>,
    pub scroll_position: ScrollPosition,
    pub truncated: Option<String>,
    pub token_count: usize,
}

impl Observation {
    pub fn header(&self) -> String {
        format!(
            "URL: {}\nTitle: {}\nScroll: page {} of {}",
            self.url, self.title, self.scroll_position.page, self.scroll_position.of
        )
    }

    pub fn render(&self) -> String {
        let mut out = self.header();
        for l in &self.lines {
            out.push('\n');
            out.push_str(l);
        }
        if let Some(t) = &self.truncated {
            out.push('\n');
            out.push_str(t);
        }
        out
    }
}

pub fn scroll_position(s: &AXSnapshot) -> ScrollPosition {
    let vh = s.viewport.h.max(1.0);
    let of = (s.content_height() / vh).ceil().max(1.0) as u32;
    let page = ((s.viewport.scroll_y.max(0.0) / vh).floor() as u32 + 1).min(of);
    ScrollPosition { page, of }
}

fn clean_name(name: &str) -> String {
    let flat: String = name.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() > MAX_NAME_CHARS {
        let mut s: String = flat.chars().take(MAX_NAME_CHARS).collect();
        s.push('…');
        s
    } else {
        flat
    }
}

/// The tree an observation is printed from: viewport filter, then dedup.
pub fn observed_tree(snapshot: &AXSnapshot) -> AXSnapshot {
    dedup(&prune_viewport(snapshot))
}

/// Renders an already pruned and deduplicated tree.
pub fn serialize(tree: &AXSnapshot, budget: usize, tok: &dyn Tokenizer) -> Observation {
    let mut totals: HashMap<(String, String), usize> = HashMap::new();
    tree.root.walk(&mut |n, d| {
        if d > 0 {
            *totals.entry((n.role.clone(), clean_name(&n.name))).or_default() += 1;
        }
    });
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut lines = Vec::new();
    let mut node_ids = Vec::new();
    let mut targets = Vec::new();
    tree.root.walk(&mut |n, d| {
        if d == 0 {
            return;
        }
        let name = clean_name(&n.name);
        let key = (n.role.clone(), name.clone());
        let ordinal = {
            let c = seen.entry(key.clone()).or_default();
            *c += 1;
            *c
        };
        let mut line = format!("{}[{}] {} '{}'", "  ".repeat(d - 1), lines.len(), n.role, name);
        let dup = totals[&key] > 1;
        if dup {
            line.push_str(&format!(" #{ordinal}"));
        }
        targets.push(Target { role: n.role.clone(), name, nth: dup.then_some(ordinal) });
        if let Some(v) = &n.value {
            line.push_str(&format!(" value='{}'", clean_name(v)));
        }
        for s in n.states.iter().filter(|s| s.as_str() != "focusable") {
            line.push(' ');
            line.push_str(s);
        }
        lines.push(line);
        node_ids.push(n.node_id.clone());
    });

    let mut obs = Observation {
        url: tree.url.clone(),
        title: tree.title.clone(),
        lines,
        node_ids,
        targets,
        scroll_position: scroll_position(tree),
        truncated: None,
        token_count: 0,
    };
    let header = tok.count(&obs.header());
    let body: usize = obs.lines.iter().map(|l| tok.count(l)).sum();
    if header + body > budget {
        let total = obs.lines.len();
        let marker_for = |hidden: usize| format!("… truncated: {hidden} more elements not shown; scroll to see more");
        let mut used = header;
        let mut keep = 0;
        for l in &obs.lines {
            let c = tok.count(l);
            if used + c + tok.count(&marker_for(total - keep - 1)) > budget {
                break;
            }
            used += c;
            keep += 1;
        }
        obs.lines.truncate(keep);
        obs.node_ids.truncate(keep);
        obs.targets.truncate(keep);
        obs.truncated = Some(marker_for(total - keep));
    }
    obs.token_count = tok.count(&obs.render());
    obs
}

/// Full pipeline: viewport filter, dedup, serialize.
pub fn observe_snapshot(snapshot: &AXSnapshot, budget: usize) -> (AXSnapshot, Observation) {
    let tree = observed_tree(snapshot);
    let obs = serialize(&tree, budget, &crate::tokenizer::ReferenceTokenizer);
    (tree, obs)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("no element matches {0}")]
    NotFound(Target),
    #[error("{count} elements match {target}; add nth=<k> to pick one")]
    Ambiguous { target: Target, count: usize },
}

/// Resolves a target to a node id among the nodes printed from `tree`.
pub fn resolve<'a>(tree: &'a AXSnapshot, target: &Target) -> Result<&'a AXNode, ResolveError> {
    let want = clean_name(&target.name);
    let mut matches = Vec::new();
    tree.root.walk(&mut |n, d| {
        if d > 0 && n.role == target.role && clean_name(&n.name) == want {
            matches.push(n);
        }
    });
    match (matches.len(), target.nth) {
        (0, _) => Err(ResolveError::NotFound(target.clone())),
        (_, Some(k)) => matches.get(k - 1).copied().ok_or_else(|| ResolveError::NotFound(target.clone())),
        (1, None) => Ok(matches[0]),
        (count, None) => Err(ResolveError::Ambiguous { target: target.clone(), count }),
    }
}

pub fn token_count(obs: &Observation) -> usize {
    count_tokens(&obs.render())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::web::ax::{Rect, Viewport, AX_SCHEMA};

    fn snap(children: Vec<AXNode>, height: f64) -> AXSnapshot {
        AXSnapshot {
            schema: AX_SCHEMA.into(),
            url: "sim://t/".into(),
            title: "T".into(),
            viewport: Viewport { w: 800.0, h: 600.0, scroll_x: 0.0, scroll_y: 0.0 },
            root: AXNode::new("root", "document", "T", Rect::new(0.0, 0.0, 800.0, height)).with_children(children),
        }
    }

    fn at(id: &str, role: &str, name: &str, y: f64) -> AXNode {
        AXNode::new(id, role, name, Rect::new(10.0, y, 100.0, 20.0))
    }

    #[test]
    fn visible_only() {
        let mut nodes = vec![at("a", "link", "A", 0.0), at("b", "link", "B", 100.0), at("c", "link", "C", 500.0)];
        for i in 0..5 {
            nodes.push(at(&format!("off{i}"), "link", "Off", 700.0 + 50.0 * i as f64));
        }
        let (_, obs) = observe_snapshot(&snap(nodes, 2000.0), 4000);
        assert_eq!(obs.lines.len(), 3);
        assert_eq!(obs.lines[0], "[0] link 'A'");
        assert_eq!(obs.scroll_position, ScrollPosition { page: 1, of: 4 });
        assert!(obs.render().contains("Scroll: page 1 of 4"));
    }

    #[test]
    fn duplicates_get_ordinals_and_resolve() {
        let (tree, obs) = observe_snapshot(&snap(vec![at("a", "button", "OK", 0.0), at("b", "button", "OK", 30.0)], 600.0), 4000);
        assert_eq!(obs.lines, vec!["[0] button 'OK' #1", "[1] button 'OK' #2"]);
        assert_eq!(resolve(&tree, &obs.targets[1]).unwrap().node_id, "b");
        assert_eq!(
            resolve(&tree, &Target::new("button", "OK")),
            Err(ResolveError::Ambiguous { target: Target::new("button", "OK"), count: 2 })
        );
    }

    #[test]
    fn truncation_respects_budget() {
        let nodes: Vec<_> = (0..400).map(|i| at(&format!("n{i}"), "link", &format!("Item number {i}"), 1.0)).collect();
        let (_, obs) = observe_snapshot(&snap(nodes, 600.0), 300);
        assert!(obs.token_count <= 300, "{}", obs.token_count);
        assert!(obs.truncated.as_deref().unwrap().contains("more elements"));
        assert_eq!(obs.lines.len(), obs.node_ids.len());
    }

    #[test]
    fn value_annotation() {
        let mut tb = at("q", "textbox", "Search", 0.0).with_state("editable");
        tb.value = Some("it's".into());
        let (_, obs) = observe_snapshot(&snap(vec![tb], 600.0), 4000);
        assert_eq!(obs.lines[0], "[0] textbox 'Search' value='it's' editable");
        assert_eq!(obs.targets[0], Target::new("textbox", "Search"));
    }
}
