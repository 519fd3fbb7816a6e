use autopilot_core::file::{
    FileConfig, FileError, FileOp, FileRegistry, NavTarget, OpResult, ReadRequest,
};
use autopilot_core::memory::MemoryStore;
use autopilot_core::file::ExtractorRegistry;
use autopilot_core::prompt::OBS_OMITTED;
use lopdf::content::{Content, Operation};
use lopdf::{dictionary, Document, Object, Stream};
use std::sync::Arc;

fn pdf(pages: &[&str]) -> Vec<u8> {
    let mut doc = Document::with_version("1.5");
    let pages_id = doc.new_object_id();
    let font_id = doc.add_object(dictionary! { "Type" => "Font", "Subtype" => "Type1", "BaseFont" => "Courier" });
    let resources_id = doc.add_object(dictionary! { "Font" => dictionary! { "F1" => font_id } });
    let mut kids: Vec<Object> = Vec::new();
    for text in pages {
        let content = Content {
            operations: vec![
                Operation::new("BT", vec![]),
                Operation::new("Tf", vec!["F1".into(), 12.into()]),
                Operation::new("Td", vec![72.into(), 700.into()]),
                Operation::new("Tj", vec![Object::string_literal(*text)]),
                Operation::new("ET", vec![]),
            ],
        };
        let content_id = doc.add_object(Stream::new(dictionary! {}, content.encode().unwrap()));
        let page_id = doc.add_object(dictionary! { "Type" => "Page", "Parent" => pages_id, "Contents" => content_id });
        kids.push(page_id.into());
    }
    let count = kids.len() as i64;
    doc.objects.insert(
        pages_id,
        Object::Dictionary(dictionary! {
            "Type" => "Pages",
            "Kids" => kids,
            "Count" => count,
            "Resources" => resources_id,
            "MediaBox" => vec![0.into(), 0.into(), 595.into(), 842.into()],
        }),
    );
    let catalog_id = doc.add_object(dictionary! { "Type" => "Catalog", "Pages" => pages_id });
    doc.trailer.set("Root", catalog_id);
    let mut out = Vec::new();
    doc.save_to(&mut out).unwrap();
    out
}

fn small_pages() -> FileRegistry {
    FileRegistry::new(
        Arc::new(MemoryStore::default().with_prefix("file")),
        ExtractorRegistry::default(),
        FileConfig { page_size: 120, read_budget: 4000 },
    )
}

#[test]
fn html_counted_five_times() {
    let doc = "Intro to HTML.\n\nMost pages are written in html, styled with CSS.\n\n\
               The HTML spec is long. XHTML is a stricter variant.\n\nAppendix: Html entities.";
    let files = FileRegistry::default();
    let id = files.load("u", "s", doc.as_bytes(), "web.txt").unwrap();
    let h = files.get("u", &id).unwrap();
    assert_eq!(h.lock().operate(&FileOp::CountOccurrences { term: "HTML".into() }).unwrap(), OpResult::Count(5));
}

#[test]
fn pdf_pages_are_extracted_and_cited() {
    let first = format!("The first page mentions otters. {}", "River notes. ".repeat(5));
    let second = format!("The second page mentions beavers. {}", "Dam notes. ".repeat(5));
    let bytes = pdf(&[first.as_str(), second.as_str()]);
    let files = small_pages();
    let id = files.load("u", "s", &bytes, "animals.pdf").unwrap();
    let meta = files.meta("u", &id).unwrap();
    assert_eq!(meta.media_type, "application/pdf");
    let h = files.get("u", &id).unwrap();
    let h = h.lock();
    assert!(h.text().contains("otters") && h.text().contains("beavers"));
    let OpResult::Hits { hits, .. } = h.operate(&FileOp::FindTerm { term: "beavers".into() }).unwrap() else { panic!() };
    let page = hits[0].page;
    assert!(h.citation(page).contains("pdf p. 2"), "{}", h.citation(page));
}

#[test]
fn find_reports_page_relative_offsets() {
    let text = "alpha ".repeat(30) + "\n\nomega marks the spot";
    let files = small_pages();
    let id = files.load("u", "s", text.as_bytes(), "a.txt").unwrap();
    let h = files.get("u", &id).unwrap();
    let h = h.lock();
    let OpResult::Hits { hits, capped } = h.operate(&FileOp::FindTerm { term: "OMEGA".into() }).unwrap() else { panic!() };
    assert!(!capped);
    assert_eq!(hits.len(), 1);
    assert!(h.pages[hits[0].page][hits[0].char_offset..].starts_with("omega"));
}

#[test]
fn navigation_is_bounded() {
    let files = small_pages();
    let id = files.load("u", "s", "word ".repeat(100).as_bytes(), "w.txt").unwrap();
    let h = files.get("u", &id).unwrap();
    let mut h = h.lock();
    let n = h.page_count();
    assert!(n > 2);
    assert!(matches!(h.navigate(NavTarget::Prev), Err(FileError::RangeOutOfBounds { .. })));
    h.navigate(NavTarget::Page(n - 1)).unwrap();
    assert!(h.navigate(NavTarget::Next).is_err());
    assert_eq!(h.current_page, n - 1);
    assert!(matches!(
        h.operate(&FileOp::ExtractRange { start: 0, end: n }),
        Err(FileError::RangeOutOfBounds { .. })
    ));
}

#[test]
fn search_stays_inside_one_file() {
    let files = small_pages();
    let a = files.load("u", "s", b"Lighthouses guide ships along rocky coasts.", "a.txt").unwrap();
    files.load("u", "s", b"Lighthouses guide ships along rocky coasts too.", "b.txt").unwrap();
    let h = files.get("u", &a).unwrap();
    let hits = h.lock().search("lighthouses guide ships", 5);
    assert_eq!(hits.len(), 1);
}

#[test]
fn read_condenses_oldest_pages_first() {
    let text: String = (0..6).map(|i| format!("Section {i}. ") + &"filler words here ".repeat(5) + "\n\n").collect();
    let files = small_pages();
    let id = files.load("u", "s", text.as_bytes(), "long.txt").unwrap();
    let h = files.get("u", &id).unwrap();
    let h = h.lock();
    let last = h.page_count() - 1;
    let full = h.read(&ReadRequest::Range { start: 0, end: last }, 100_000).unwrap();
    assert!(full.passages.iter().all(|p| !p.omitted));
    let tight = h.read(&ReadRequest::Range { start: 0, end: last }, full.token_count / 2).unwrap();
    assert!(tight.passages[0].omitted);
    assert_eq!(tight.passages[0].content, OBS_OMITTED);
    assert!(!tight.passages[last].omitted);
    assert!(matches!(h.read(&ReadRequest::Range { start: 0, end: last }, 3), Err(FileError::BudgetUnsatisfiable { .. })));
}

#[test]
fn unsupported_media_types_are_rejected() {
    let files = FileRegistry::default();
    let err = files.load("u", "s", &[0x89, b'P', b'N', b'G'], "x.png").unwrap_err();
    assert_eq!(err, FileError::UnsupportedMediaType("image/png".into()));
}
