//! Proposition extractors.
//!
//! [`RuleExtractor`] is a deterministic, English-only decomposition used in
//! tests and offline deployments. [`LlmExtractor`] asks a policy model to
//! do the same job with a fixed prompt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::Policy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("extractor failed: {0}")]
pub struct ExtractorFailure(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropositionDraft {
    pub text: String,
    pub concept: String,
    pub perspective: String,
    pub mentioned_concepts: Vec<String>,
}

pub trait Extractor: Send + Sync {
    fn extract(&self, text: &str) -> Result<Vec<PropositionDraft>, ExtractorFailure>;
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize_concept(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "my", "your", "his", "her", "its", "our",
    "their", "i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them",
];

const VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "has", "have", "had", "does", "do", "did", "can",
    "could", "will", "would", "should", "may", "might", "must", "shall", "flows", "flow", "lives",
    "live", "lived", "likes", "like", "liked", "loves", "love", "works", "work", "worked", "owns",
    "own", "contains", "contain", "costs", "cost", "runs", "run", "became", "becomes", "wrote",
    "writes", "made", "makes", "moved", "moves", "studied", "studies", "prefers", "prefer",
    "visited", "visits", "founded", "joined", "uses", "use", "used", "lies", "lie", "spans", "span",
    "borders", "includes", "include", "plays", "play", "played",
];

const COPULAS: &[&str] = &["is", "are", "was", "were", "be", "been"];

const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "of", "to", "from", "by", "with", "for", "near", "into", "over", "under",
    "about", "since", "during",
];

const COUNTRIES: &[&str] = &[
    "china", "india", "japan", "france", "germany", "italy", "spain", "canada", "mexico", "brazil",
    "egypt", "russia", "australia", "england", "usa", "united states", "united kingdom", "korea",
    "vietnam", "peru", "chile", "argentina", "kenya", "nigeria", "sweden", "norway", "poland",
    "greece", "turkey", "iran", "iraq", "thailand", "indonesia", "portugal", "ireland",
    "netherlands", "belgium", "switzerland", "austria", "finland", "denmark", "mongolia", "nepal",
];

fn strip_edges(w: &str) -> &str {
    w.trim_matches(|c: char| !c.is_alphanumeric())
}

fn is_verb(w: &str) -> bool {
    VERBS.contains(&strip_edges(w).to_lowercase().as_str())
}

fn is_capitalized(w: &str) -> bool {
    let w = strip_edges(w);
    w.chars().next().is_some_and(char::is_uppercase)
}

fn strip_determiners(words: &[&str]) -> String {
    let start = words
        .iter()
        .position(|w| !DETERMINERS.contains(&strip_edges(w).to_lowercase().as_str()))
        .unwrap_or(words.len());
    words[start..].iter().map(|w| strip_edges(w)).collect::<Vec<_>>().join(" ")
}

/// Maximal runs of capitalized words, with leading determiners and
/// pronouns removed. Runs that become empty are dropped.
pub fn capitalized_phrases(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    let mut flush = |run: &mut Vec<&str>| {
        let p = strip_determiners(run);
        if !p.is_empty() {
            out.push(p);
        }
        run.clear();
    };
    for w in text.split_whitespace() {
        let ends_run = w.ends_with([',', ';', ':', '.', '!', '?', ')']);
        if is_capitalized(w) && !strip_edges(w).chars().all(|c| c.is_ascii_digit()) {
            run.push(w);
        } else {
            flush(&mut run);
            continue;
        }
        if ends_run {
            flush(&mut run);
        }
    }
    flush(&mut run);
    out
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        let boundary = matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if boundary {
            let s = cur.trim().trim_end_matches(['.', '!', '?']).trim().to_string();
            if !s.is_empty() {
                out.push(s);
            }
            cur.clear();
        }
    }
    let s = cur.trim().to_string();
    if !s.is_empty() {
        out.push(s);
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleExtractor;

impl RuleExtractor {
    fn clauses(sentence: &str) -> Vec<String> {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        let Some(verb_at) = words.iter().position(|w| is_verb(w)) else {
            return vec![sentence.to_string()];
        };
        let subject = words[..verb_at].join(" ");
        let mut out = Vec::new();
        let mut start = 0;
        let mut i = verb_at + 1;
        while i + 1 < words.len() {
            let w = words[i].to_lowercase();
            if (w == "and" || w == "but") && is_verb(words[i + 1]) {
                out.push(words[start..i].join(" "));
                start = i + 1;
            }
            i += 1;
        }
        out.push(words[start..].join(" "));
        out.into_iter()
            .enumerate()
            .map(|(n, c)| if n == 0 || subject.is_empty() { c } else { format!("{subject} {c}") })
            .collect()
    }

    fn concept_of(words: &[&str], subject_end: usize) -> String {
        let best = capitalized_phrases(&words.join(" "))
            .into_iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                let ka = a.split_whitespace().count();
                let kb = b.split_whitespace().count();
                ka.cmp(&kb).then(ib.cmp(ia))
            })
            .map(|(_, p)| p);
        best.unwrap_or_else(|| strip_determiners(&words[..subject_end]))
    }

    fn proposition(clause: &str) -> PropositionDraft {
        let words: Vec<&str> = clause.split_whitespace().collect();
        let verb_at = words.iter().position(|w| is_verb(w)).unwrap_or(words.len());
        let concept = Self::concept_of(&words, verb_at);

        // "<X> has a <attr> of <V>"  =>  "The <attr> of <X> is <V>"
        let lower: Vec<String> = words.iter().map(|w| strip_edges(w).to_lowercase()).collect();
        if verb_at + 3 < words.len()
            && matches!(lower[verb_at].as_str(), "has" | "have" | "had")
            && matches!(lower[verb_at + 1].as_str(), "a" | "an")
        {
            if let Some(of) = lower[verb_at + 2..].iter().position(|w| w == "of").map(|p| p + verb_at + 2) {
                if of > verb_at + 2 && of + 1 < words.len() {
                    let attr = words[verb_at + 2..of].join(" ");
                    let value = words[of + 1..].join(" ");
                    let copula = if lower[verb_at] == "had" { "was" } else { "is" };
                    let text = format!("The {attr} of {concept} {copula} {value}");
                    return Self::finish(text, concept, normalize_concept(&attr));
                }
            }
        }

        let perspective = Self::perspective(&words, &lower, verb_at);
        Self::finish(clause.to_string(), concept, perspective)
    }

    fn perspective(words: &[&str], lower: &[String], verb_at: usize) -> String {
        // "The <attr> of X is ..."
        if lower.first().is_some_and(|w| w == "the") {
            if let Some(of) = lower.iter().position(|w| w == "of") {
                if of > 1 && of < verb_at {
                    return lower[1..of].join(" ");
                }
            }
        }
        // locative "in <Place>"
        for i in verb_at..words.len().saturating_sub(1) {
            if lower[i] == "in" && is_capitalized(words[i + 1]) {
                let place: Vec<&str> =
                    words[i + 1..].iter().take_while(|w| is_capitalized(w)).copied().collect();
                let place = normalize_concept(&strip_determiners(&place));
                return if COUNTRIES.contains(&place.as_str()) { "country".into() } else { "location".into() };
            }
        }
        if verb_at >= words.len() {
            return String::new();
        }
        if COPULAS.contains(&lower[verb_at].as_str()) {
            let complement: Vec<&String> = lower[verb_at + 1..]
                .iter()
                .take_while(|w| !PREPOSITIONS.contains(&w.as_str()))
                .filter(|w| !DETERMINERS.contains(&w.as_str()))
                .collect();
            if let Some(head) = complement.last() {
                return head.to_string();
            }
        }
        let v = &lower[verb_at];
        v.strip_suffix("es").filter(|s| s.ends_with("ss") || s.ends_with("sh") || s.ends_with("ch")).or_else(|| v.strip_suffix('s')).unwrap_or(v).to_string()
    }

    fn finish(text: String, concept: String, perspective: String) -> PropositionDraft {
        let mut mentioned: Vec<String> = Vec::new();
        let mut add = |c: &str| {
            let n = normalize_concept(c);
            if !n.is_empty() && !mentioned.contains(&n) {
                mentioned.push(n);
            }
        };
        add(&concept);
        for p in capitalized_phrases(&text) {
            add(&p);
        }
        PropositionDraft { text, concept, perspective, mentioned_concepts: mentioned }
    }
}

impl Extractor for RuleExtractor {
    fn extract(&self, text: &str) -> Result<Vec<PropositionDraft>, ExtractorFailure> {
        let props: Vec<PropositionDraft> = split_sentences(text)
            .iter()
            .flat_map(|s| Self::clauses(s))
            .filter(|c| !c.trim().is_empty())
            .map(|c| Self::proposition(&c))
            .collect();
        if props.is_empty() {
            return Err(ExtractorFailure("no propositions found".into()));
        }
        Ok(props)
    }
}

pub const EXTRACTION_PROMPT: &str = "Decompose the document below into propositions. A proposition is \
a semantically complete sentence that does not depend on other sentences and contains no compound \
statements. For each proposition give its key concept, the perspective (aspect) of the concept it \
addresses, and every concept it mentions. Answer with a JSON array only, where each item is \
{\"text\": ..., \"concept\": ..., \"perspective\": ..., \"mentioned_concepts\": [...]}.\n\nDocument:\n";

/// Extractor backed by a policy model.
pub struct LlmExtractor<P> {
    policy: P,
}

impl<P: Policy> LlmExtractor<P> {
    pub fn new(policy: P) -> Self {
        Self { policy }
    }
}

impl<P: Policy> Extractor for LlmExtractor<P> {
    fn extract(&self, text: &str) -> Result<Vec<PropositionDraft>, ExtractorFailure> {
        let raw = self.policy.complete(&format!("{EXTRACTION_PROMPT}{text}")).map_err(|e| ExtractorFailure(e.to_string()))?;
        let start = raw.find('[').ok_or_else(|| ExtractorFailure("no JSON array in output".into()))?;
        let end = raw.rfind(']').ok_or_else(|| ExtractorFailure("no JSON array in output".into()))?;
        let mut props: Vec<PropositionDraft> =
            serde_json::from_str(&raw[start..=end]).map_err(|e| ExtractorFailure(e.to_string()))?;
        for p in &mut props {
            p.mentioned_concepts = p.mentioned_concepts.iter().map(|c| normalize_concept(c)).collect();
        }
        Ok(props)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_split() {
        assert_eq!(split_sentences("A is 5.4 km. B is here! Ok?"), vec!["A is 5.4 km", "B is here", "Ok"]);
    }

    #[test]
    fn phrases() {
        assert_eq!(capitalized_phrases("The Yellow River is in China"), vec!["Yellow River", "China"]);
        assert_eq!(capitalized_phrases("I live in Seattle"), vec!["Seattle"]);
    }

    #[test]
    fn no_split_on_noun_conjunction() {
        let p = RuleExtractor.extract("Tom and Jerry are friends.").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].perspective, "friends");
    }

    #[test]
    fn locative_perspective() {
        let p = RuleExtractor.extract("Alice lives in Seattle.").unwrap();
        assert_eq!((p[0].concept.as_str(), p[0].perspective.as_str()), ("Alice", "location"));
        assert_eq!(p[0].mentioned_concepts, vec!["alice", "seattle"]);
    }

    #[test]
    fn llm_extractor_parses_json() {
        let policy = crate::policy::ScriptedPolicy::new([r#"Here: [{"text": "X is Y", "concept": "X", "perspective": "identity", "mentioned_concepts": ["X  Thing"]}]"#]);
        let p = LlmExtractor::new(policy).extract("X is Y").unwrap();
        assert_eq!(p[0].mentioned_concepts, vec!["x thing"]);
    }
}
