//! Accessibility snapshots (`ax/v1`), viewport pruning and node dedup.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub const AX_SCHEMA: &str = "ax/v1";

/// Version of the dedup rule set applied by [`dedup`].
pub const DEDUP_RULES: &str = "dedup/v1";

/// Roles whose (role, name) pairs dedup must preserve.
pub const INTERACTIVE_ROLES: &[&str] = &[
    "button", "link", "textbox", "checkbox", "combobox", "searchbox", "radio", "menuitem", "option",
    "tab", "switch", "slider", "spinbutton",
];

const WRAPPER_ROLES: &[&str] = &["generic", "group", "none"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Open-interval overlap: rectangles that only touch do not intersect.
    pub fn intersects(&self, o: &Rect) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AXNode {
    pub node_id: String,
    pub role: String,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub bbox: Rect,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub states: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<AXNode>,
}

impl AXNode {
    pub fn new(node_id: impl Into<String>, role: impl Into<String>, name: impl Into<String>, bbox: Rect) -> Self {
        Self {
            node_id: node_id.into(),
            role: role.into(),
            name: name.into(),
            value: None,
            bbox,
            states: BTreeSet::new(),
            children: Vec::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<AXNode>) -> Self {
        self.children = children;
        self
    }

    pub fn with_state(mut self, state: &str) -> Self {
        self.states.insert(state.to_string());
        self
    }

    pub fn is_hidden(&self) -> bool {
        self.states.contains("hidden")
    }

    pub fn is_interactive(&self) -> bool {
        INTERACTIVE_ROLES.contains(&self.role.as_str())
            || self.states.iter().any(|s| s == "focusable" || s == "editable")
    }

    /// Pre-order walk over this node and its descendants.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a AXNode, usize)) {
        fn go<'a>(n: &'a AXNode, depth: usize, f: &mut dyn FnMut(&'a AXNode, usize)) {
            f(n, depth);
            for c in &n.children {
                go(c, depth + 1, f);
            }
        }
        go(self, 0, f);
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_, _| n += 1);
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub scroll_x: f64,
    #[serde(default)]
    pub scroll_y: f64,
}

impl Viewport {
    pub fn rect(&self) -> Rect {
        Rect::new(self.scroll_x, self.scroll_y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AXSnapshot {
    #[serde(default = "ax_schema")]
    pub schema: String,
    pub url: String,
    #[serde(default)]
    pub title: String,
    pub viewport: Viewport,
    /// The document node; every other node is a descendant.
    #[serde(rename = "nodes")]
    pub root: AXNode,
}

fn ax_schema() -> String {
    AX_SCHEMA.into()
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("invalid snapshot JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported snapshot schema {0}")]
    Schema(String),
    #[error("duplicate node id {0}")]
    DuplicateId(String),
    #[error("node {0} has a non-finite bounding box")]
    BadBox(String),
}

impl AXSnapshot {
    pub fn from_json(json: &str) -> Result<Self, SnapshotError> {
        let s: Self = serde_json::from_str(json)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn validate(&self) -> Result<(), SnapshotError> {
        if self.schema != AX_SCHEMA {
            return Err(SnapshotError::Schema(self.schema.clone()));
        }
        let mut seen = BTreeSet::new();
        let mut err = None;
        self.root.walk(&mut |n, _| {
            if err.is_some() {
                return;
            }
            let b = n.bbox;
            if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
                err = Some(SnapshotError::BadBox(n.node_id.clone()));
            } else if !seen.insert(n.node_id.as_str()) {
                err = Some(SnapshotError::DuplicateId(n.node_id.clone()));
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Height of the whole document, taken from the root's box.
    pub fn content_height(&self) -> f64 {
        self.root.bbox.h.max(self.viewport.h)
    }

    pub fn find(&self, node_id: &str) -> Option<&AXNode> {
        let mut hit = None;
        self.root.walk(&mut |n, _| {
            if hit.is_none() && n.node_id == node_id {
                hit = Some(n);
            }
        });
        hit
    }
}

/// Keeps nodes that are not hidden and whose box intersects the viewport,
/// plus their ancestors. Hidden nodes take their whole subtree with them.
/// The root is always kept.
pub fn prune_viewport(snapshot: &AXSnapshot) -> AXSnapshot {
    fn keep(n: &AXNode, view: &Rect) -> Option<AXNode> {
        if n.is_hidden() {
            return None;
        }
        let children: Vec<AXNode> = n.children.iter().filter_map(|c| keep(c, view)).collect();
        if children.is_empty() && !n.bbox.intersects(view) {
            return None;
        }
        Some(AXNode { children, ..n.clone() })
    }
    let view = snapshot.viewport.rect();
    let children = snapshot.root.children.iter().filter_map(|c| keep(c, &view)).collect();
    AXSnapshot { root: AXNode { children, ..snapshot.root.clone() }, ..snapshot.clone() }
}

/// Removes nodes that carry no unique semantic information:
///
/// (a) wrapper nodes (`generic`, `group`, `none`) with an empty name are
///     replaced by their children;
/// (b) in a single-child chain where parent and child share a non-empty
///     name, a non-interactive leaf child is dropped, otherwise a
///     non-interactive parent is replaced by its child.
///
/// Interactive nodes are never removed and siblings are never merged. The
/// result is a fixpoint, so `dedup(dedup(t)) == dedup(t)`.
pub fn dedup(snapshot: &AXSnapshot) -> AXSnapshot {
    let mut root = snapshot.root.clone();
    root.children = dedup_children(std::mem::take(&mut root.children));
    AXSnapshot { root, ..snapshot.clone() }
}

fn dedup_children(children: Vec<AXNode>) -> Vec<AXNode> {
    children.into_iter().flat_map(dedup_node).collect()
}

fn dedup_node(mut n: AXNode) -> Vec<AXNode> {
    n.children = dedup_children(std::mem::take(&mut n.children));
    loop {
        if WRAPPER_ROLES.contains(&n.role.as_str()) && n.name.trim().is_empty() && !n.is_interactive() {
            return n.children;
        }
        if n.children.len() != 1 || n.name.trim().is_empty() || n.children[0].name != n.name {
            return vec![n];
        }
        let child = &n.children[0];
        if child.children.is_empty() && !child.is_interactive() {
            n.children.clear();
        } else if !n.is_interactive() {
            n = n.children.pop().expect("one child");
        } else {
            return vec![n];
        }
    }
}

/// Multiset of (role, name) over interactive nodes, sorted.
pub fn interactive_pairs(root: &AXNode) -> Vec<(String, String)> {
    let mut out = Vec::new();
    root.walk(&mut |n, _| {
        if INTERACTIVE_ROLES.contains(&n.role.as_str()) {
            out.push((n.role.clone(), n.name.clone()));
        }
    });
    out.sort();
    out
}
