//! SimWeb: an in-process, deterministic website engine driven by
//! declarative `simweb/v1` fixtures.
//!
//! A site is a set of pages keyed by URL (without query string). Each page
//! lists elements with a parent, role, accessible name and box. Clicks run
//! small operations: navigate (with `{field}` templates filled from form
//! values or query parameters), toggle visibility, toggle a state, or set a
//! value. Per-session state (form values, toggles, scroll, history) never
//! leaks between sessions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ax::{AXNode, AXSnapshot, Rect, Viewport, AX_SCHEMA};
use super::session::{BrowserDriver, WebEnvironment, WebError};
use crate::decision::Direction;

pub const SIMWEB_SCHEMA: &str = "simweb/v1";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid simweb fixture: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read fixture {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("fixture problem: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Navigate(String),
    ToggleHidden(Vec<String>),
    ToggleState { id: String, state: String },
    SetValue { id: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub role: String,
    #[serde(default)]
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default)]
    pub z: i32,
    #[serde(default)]
    pub states: Vec<String>,
    #[serde(default)]
    pub hidden: bool,
    #[serde(default)]
    pub value: Option<String>,
    #[serde(default)]
    pub href: Option<String>,
    #[serde(default)]
    pub on_click: Vec<Op>,
    /// Only present when every listed query parameter equals the value
    /// (case-insensitive).
    #[serde(default)]
    pub when: BTreeMap<String, String>,
}

impl Element {
    fn editable(&self) -> bool {
        self.states.iter().any(|s| s == "editable") || matches!(self.role.as_str(), "textbox" | "searchbox" | "combobox")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub title: String,
    #[serde(default)]
    pub height: Option<f64>,
    pub elements: Vec<Element>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSite {
    pub schema: String,
    pub name: String,
    pub start_url: String,
    pub viewport: Viewport,
    pub pages: BTreeMap<String, Page>,
}

impl SimSite {
    pub fn from_json(json: &str) -> Result<Self, FixtureError> {
        let site: Self = serde_json::from_str(json)?;
        site.validate()?;
        Ok(site)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|source| FixtureError::Io { path: p.display().to_string(), source })?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<(), FixtureError> {
        if self.schema != SIMWEB_SCHEMA {
            return Err(FixtureError::Invalid(format!("schema must be {SIMWEB_SCHEMA}, got {}", self.schema)));
        }
        if !self.pages.contains_key(strip_query(&self.start_url)) {
            return Err(FixtureError::Invalid(format!("start_url {} has no page", self.start_url)));
        }
        for (url, page) in &self.pages {
            let mut ids = HashSet::new();
            for e in &page.elements {
                if e.id == "root" || !ids.insert(e.id.as_str()) {
                    return Err(FixtureError::Invalid(format!("{url}: duplicate or reserved id {}", e.id)));
                }
            }
            for e in &page.elements {
                if let Some(p) = &e.parent {
                    if !ids.contains(p.as_str()) {
                        return Err(FixtureError::Invalid(format!("{url}: {} has unknown parent {p}", e.id)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn origin(&self) -> &str {
        origin(&self.start_url)
    }

    pub fn open(self: &Arc<Self>) -> SimWebDriver {
        SimWebDriver::new(self.clone())
    }
}

fn origin(url: &str) -> &str {
    let after = url.find("://").map_or(0, |i| i + 3);
    match url[after..].find('/') {
        Some(i) => &url[..after + i],
        None => url,
    }
}

fn strip_query(url: &str) -> &str {
    url.split_once('?').map_or(url, |(u, _)| u)
}

pub fn encode_component(s: &str) -> String {
    let mut out = String::new();
    for b in s.trim().bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            b' ' => out.push('+'),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

pub fn decode_component(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => out.push(b' '),
            b'%' if i + 2 < bytes.len() => {
                match std::str::from_utf8(&bytes[i + 1..i + 3]).ok().and_then(|h| u8::from_str_radix(h, 16).ok()) {
                    Some(v) => {
                        out.push(v);
                        i += 2;
                    }
                    None => out.push(b'%'),
                }
            }
            b => out.push(b),
        }
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn query_params(url: &str) -> BTreeMap<String, String> {
    let Some((_, q)) = url.split_once('?') else { return BTreeMap::new() };
    q.split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            (decode_component(k), decode_component(v))
        })
        .collect()
}

#[derive(Debug, Clone)]
struct PageState {
    url: String,
    params: BTreeMap<String, String>,
    values: HashMap<String, String>,
    toggled_hidden: HashSet<String>,
    toggled_states: HashMap<String, BTreeSet<String>>,
    scroll_y: f64,
}

impl PageState {
    fn new(url: &str) -> Self {
        Self {
            url: url.to_string(),
            params: query_params(url),
            values: HashMap::new(),
            toggled_hidden: HashSet::new(),
            toggled_states: HashMap::new(),
            scroll_y: 0.0,
        }
    }
}

/// One browsing session over a [`SimSite`].
pub struct SimWebDriver {
    site: Arc<SimSite>,
    current: PageState,
    history: Vec<PageState>,
    actions: usize,
}

impl SimWebDriver {
    pub fn new(site: Arc<SimSite>) -> Self {
        let current = PageState::new(&site.start_url);
        Self { site, current, history: Vec::new(), actions: 0 }
    }

    pub fn url(&self) -> &str {
        &self.current.url
    }

    /// Number of driver operations performed so far.
    pub fn actions(&self) -> usize {
        self.actions
    }

    /// Current value of a form field on the current page.
    pub fn value_of(&self, id: &str) -> Option<String> {
        let page = self.page()?;
        let el = page.elements.iter().find(|e| e.id == id)?;
        self.current.values.get(id).cloned().or_else(|| el.value.clone())
    }

    fn page(&self) -> Option<&Page> {
        self.site.pages.get(strip_query(&self.current.url))
    }

    fn present(&self, e: &Element) -> bool {
        e.when.iter().all(|(k, v)| self.current.params.get(k).is_some_and(|p| p.trim().eq_ignore_ascii_case(v.trim())))
    }

    /// Expands `{key}` from form values, then query parameters. Values
    /// placed after the `?` of a URL are percent-encoded.
    fn fill(&self, template: &str) -> String {
        expand(template, |key, in_query| {
            let v = self.value_of(key).or_else(|| self.current.params.get(key).cloned()).unwrap_or_default();
            if in_query { encode_component(&v) } else { v }
        })
    }

    fn is_hidden(&self, page: &Page, e: &Element) -> bool {
        let mut cur = Some(e);
        while let Some(el) = cur {
            if el.hidden != self.current.toggled_hidden.contains(&el.id) {
                return true;
            }
            cur = el.parent.as_ref().and_then(|p| page.elements.iter().find(|x| &x.id == p));
        }
        false
    }

    fn states_of(&self, e: &Element) -> BTreeSet<String> {
        let mut s: BTreeSet<String> = e.states.iter().cloned().collect();
        if let Some(t) = self.current.toggled_states.get(&e.id) {
            for st in t {
                if !s.remove(st) {
                    s.insert(st.clone());
                }
            }
        }
        s
    }

    fn page_height(&self, page: &Page) -> f64 {
        let bottom = page
            .elements
            .iter()
            .filter(|e| self.present(e))
            .map(|e| e.bbox[1] + e.bbox[3])
            .fold(0.0, f64::max);
        page.height.unwrap_or(bottom).max(self.site.viewport.h)
    }

    fn not_found_snapshot(&self) -> AXSnapshot {
        let vp = self.viewport();
        let heading = AXNode::new("nf", "heading", "Page not found", Rect::new(0.0, 0.0, vp.w, 40.0));
        AXSnapshot {
            schema: AX_SCHEMA.into(),
            url: self.current.url.clone(),
            title: "Not Found".into(),
            viewport: vp,
            root: AXNode::new("root", "document", "Not Found", Rect::new(0.0, 0.0, vp.w, vp.h)).with_children(vec![heading]),
        }
    }

    fn viewport(&self) -> Viewport {
        Viewport { scroll_y: self.current.scroll_y, scroll_x: 0.0, ..self.site.viewport }
    }

    fn go(&mut self, url: &str) -> Result<(), WebError> {
        if origin(url) != self.site.origin() {
            return Err(WebError::Navigation(format!("{url} is outside {}", self.site.origin())));
        }
        let next = PageState::new(url);
        self.history.push(std::mem::replace(&mut self.current, next));
        Ok(())
    }

    fn element(&self, id: &str) -> Result<Element, WebError> {
        let page = self.page().ok_or_else(|| WebError::Navigation("no such page".into()))?;
        page.elements
            .iter()
            .find(|e| e.id == id && self.present(e) && !self.is_hidden(page, e))
            .cloned()
            .ok_or_else(|| WebError::Navigation(format!("element {id} is not on the page")))
    }

    fn activate(&mut self, e: &Element) -> Result<(), WebError> {
        if e.role == "checkbox" || e.role == "switch" {
            let t = self.current.toggled_states.entry(e.id.clone()).or_default();
            if !t.remove("checked") {
                t.insert("checked".into());
            }
        }
        let mut ops = e.on_click.clone();
        if let Some(h) = &e.href {
            ops.push(Op::Navigate(h.clone()));
        }
        for op in ops {
            match op {
                Op::Navigate(t) => {
                    let url = self.fill(&t);
                    return self.go(&url);
                }
                Op::ToggleHidden(ids) => {
                    for id in ids {
                        if !self.current.toggled_hidden.remove(&id) {
                            self.current.toggled_hidden.insert(id);
                        }
                    }
                }
                Op::ToggleState { id, state } => {
                    let t = self.current.toggled_states.entry(id).or_default();
                    if !t.remove(&state) {
                        t.insert(state);
                    }
                }
                Op::SetValue { id, value } => {
                    let v = self.fill(&value);
                    self.current.values.insert(id, v);
                }
            }
        }
        Ok(())
    }
}

impl BrowserDriver for SimWebDriver {
    fn snapshot(&mut self) -> Result<AXSnapshot, WebError> {
        let Some(page) = self.page() else { return Ok(self.not_found_snapshot()) };
        let vp = self.viewport();
        let present: Vec<&Element> = page.elements.iter().filter(|e| self.present(e)).collect();
        let ids: HashSet<&str> = present.iter().map(|e| e.id.as_str()).collect();
        let mut children: HashMap<Option<&str>, Vec<&Element>> = HashMap::new();
        for e in &present {
            let parent = e.parent.as_deref().filter(|p| ids.contains(p));
            children.entry(parent).or_default().push(e);
        }
        fn build(s: &SimWebDriver, page: &Page, e: &Element, children: &HashMap<Option<&str>, Vec<&Element>>) -> AXNode {
            let [x, y, w, h] = e.bbox;
            let mut node = AXNode::new(e.id.clone(), e.role.clone(), s.fill_name(&e.name), Rect::new(x, y, w, h));
            node.states = s.states_of(e);
            if s.is_hidden(page, e) {
                node.states.insert("hidden".into());
            }
            if e.editable() || e.value.is_some() {
                node.value = Some(s.current.values.get(&e.id).cloned().or_else(|| e.value.clone()).unwrap_or_default());
            }
            node.children = children
                .get(&Some(e.id.as_str()))
                .map(|cs| cs.iter().map(|c| build(s, page, c, children)).collect())
                .unwrap_or_default();
            node
        }
        let top = children.get(&None).map(|cs| cs.iter().map(|c| build(self, page, c, &children)).collect()).unwrap_or_default();
        let height = self.page_height(page);
        Ok(AXSnapshot {
            schema: AX_SCHEMA.into(),
            url: self.current.url.clone(),
            title: page.title.clone(),
            viewport: vp,
            root: AXNode::new("root", "document", page.title.clone(), Rect::new(0.0, 0.0, vp.w, height)).with_children(top),
        })
    }

    fn click(&mut self, node_id: &str) -> Result<(), WebError> {
        self.actions += 1;
        let e = self.element(node_id)?;
        self.activate(&e)
    }

    fn click_at(&mut self, x: f64, y: f64) -> Result<(), WebError> {
        self.actions += 1;
        let page = self.page().ok_or_else(|| WebError::Navigation("no such page".into()))?;
        let hit = page
            .elements
            .iter()
            .enumerate()
            .filter(|(_, e)| self.present(e) && !self.is_hidden(page, e))
            .filter(|(_, e)| Rect::new(e.bbox[0], e.bbox[1], e.bbox[2], e.bbox[3]).contains(x, y))
            .max_by_key(|(i, e)| (e.z, *i))
            .map(|(_, e)| e.clone());
        match hit {
            Some(e) => self.activate(&e),
            None => Ok(()),
        }
    }

    fn type_text(&mut self, node_id: &str, text: &str) -> Result<(), WebError> {
        self.actions += 1;
        let e = self.element(node_id)?;
        if !e.editable() {
            return Err(WebError::NotEditable(format!("{} '{}'", e.role, e.name)));
        }
        self.current.values.insert(e.id.clone(), text.to_string());
        Ok(())
    }

    fn scroll(&mut self, direction: Direction) -> Result<(), WebError> {
        self.actions += 1;
        let vh = self.site.viewport.h;
        let max = self.page().map_or(0.0, |p| (self.page_height(p) - vh).max(0.0));
        let delta = if direction == Direction::Down { vh } else { -vh };
        self.current.scroll_y = (self.current.scroll_y + delta).clamp(0.0, max);
        Ok(())
    }

    fn go_back(&mut self) -> Result<(), WebError> {
        self.actions += 1;
        self.current = self.history.pop().ok_or(WebError::NoHistory)?;
        Ok(())
    }

    fn navigate(&mut self, url: &str) -> Result<(), WebError> {
        self.actions += 1;
        self.go(url)
    }

    fn start_url(&self) -> String {
        self.site.start_url.clone()
    }

    fn settle_time(&self) -> Duration {
        Duration::ZERO
    }
}

impl SimWebDriver {
    fn fill_name(&self, name: &str) -> String {
        expand(name, |key, _| self.current.params.get(key).cloned().unwrap_or_default())
    }
}

fn expand(template: &str, mut lookup: impl FnMut(&str, bool) -> String) -> String {
    let query_at = template.find('?');
    let mut out = String::new();
    let mut pos = 0;
    while let Some(open) = template[pos..].find('{').map(|o| o + pos) {
        let Some(close) = template[open..].find('}').map(|c| c + open) else { break };
        out.push_str(&template[pos..open]);
        out.push_str(&lookup(&template[open + 1..close], query_at.is_some_and(|q| q < open)));
        pos = close + 1;
    }
    out.push_str(&template[pos..]);
    out
}

/// A set of SimWeb sites; sessions open on the site whose origin matches.
#[derive(Debug, Clone, Default)]
pub struct SimWeb {
    sites: Vec<Arc<SimSite>>,
}

impl SimWeb {
    pub fn new(sites: Vec<SimSite>) -> Self {
        Self { sites: sites.into_iter().map(Arc::new).collect() }
    }

    pub fn add(&mut self, site: SimSite) {
        self.sites.push(Arc::new(site));
    }

    /// Loads every `*.json` fixture in a directory.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let dir = dir.as_ref();
        let rd = std::fs::read_dir(dir).map_err(|source| FixtureError::Io { path: dir.display().to_string(), source })?;
        let mut paths: Vec<_> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
        paths.sort();
        let sites = paths.iter().map(SimSite::from_file).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(sites))
    }

    pub fn sites(&self) -> &[Arc<SimSite>] {
        &self.sites
    }

    pub fn site(&self, name: &str) -> Option<&Arc<SimSite>> {
        self.sites.iter().find(|s| s.name == name)
    }
}

impl WebEnvironment for SimWeb {
    fn open(&self, url: Option<&str>) -> Result<Box<dyn BrowserDriver>, WebError> {
        let site = match url {
            None => self.sites.first(),
            Some(u) => self.sites.iter().find(|s| s.origin() == origin(u)),
        }
        .ok_or_else(|| WebError::Navigation(format!("no site serves {}", url.unwrap_or("<default>"))))?;
        let mut d = SimWebDriver::new(site.clone());
        if let Some(u) = url {
            if strip_query(u) != strip_query(&site.start_url) || u != site.start_url {
                d.current = PageState::new(u);
            }
        }
        Ok(Box::new(d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_coding() {
        assert_eq!(encode_component("red shoes & co"), "red+shoes+%26+co");
        assert_eq!(decode_component("red+shoes+%26+co"), "red shoes & co");
        assert_eq!(query_params("sim://a/s?q=x+y&n=2")["q"], "x y");
    }

    #[test]
    fn origin_of_urls() {
        assert_eq!(origin("sim://shop/a/b?x=1"), "sim://shop");
        assert_eq!(origin("sim://shop"), "sim://shop");
    }
}
