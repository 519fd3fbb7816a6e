//! Text extractors: bytes in, plain text (plus original page offsets) out.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("unsupported media type {0}")]
    Unsupported(String),
    #[error("extraction failed: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted {
    pub text: String,
    /// Char offset at which each source page starts, for formats that have
    /// pages. Empty otherwise.
    pub page_map: Vec<usize>,
}

pub trait FileExtractor: Send + Sync {
    fn media_types(&self) -> &[&'static str];
    fn extract(&self, bytes: &[u8]) -> Result<Extracted, ExtractError>;
}

pub struct PlainTextExtractor;

impl FileExtractor for PlainTextExtractor {
    fn media_types(&self) -> &[&'static str] {
        &["text/plain", "text/markdown", "text/csv", "application/json"]
    }

    fn extract(&self, bytes: &[u8]) -> Result<Extracted, ExtractError> {
        let text = std::str::from_utf8(bytes).map_err(|e| ExtractError::Failed(format!("not UTF-8: {e}")))?;
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        Ok(Extracted { text: text.to_string(), page_map: Vec::new() })
    }
}

pub struct PdfExtractor;

impl FileExtractor for PdfExtractor {
    fn media_types(&self) -> &[&'static str] {
        &["application/pdf"]
    }

    fn extract(&self, bytes: &[u8]) -> Result<Extracted, ExtractError> {
        let pages = pdf_extract::extract_text_from_mem_by_pages(bytes).map_err(|e| ExtractError::Failed(e.to_string()))?;
        let mut text = String::new();
        let mut page_map = Vec::with_capacity(pages.len());
        let mut chars = 0;
        for (i, p) in pages.iter().enumerate() {
            if i > 0 {
                text.push_str("\n\n");
                chars += 2;
            }
            page_map.push(chars);
            let p = p.trim_matches('\n');
            text.push_str(p);
            chars += p.chars().count();
        }
        Ok(Extracted { text, page_map })
    }
}

/// Guesses a media type from the content and the file name.
pub fn sniff_media_type(bytes: &[u8], filename: &str) -> String {
    if bytes.starts_with(b"%PDF-") {
        return "application/pdf".into();
    }
    let ext = filename.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).unwrap_or_default();
    match ext.as_str() {
        "pdf" => "application/pdf",
        "txt" | "text" | "log" | "" => "text/plain",
        "md" | "markdown" => "text/markdown",
        "csv" => "text/csv",
        "json" => "application/json",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "docx" => "application/vnd.openxmlformats-officedocument.wordprocessingml.document",
        _ => "application/octet-stream",
    }
    .into()
}

#[derive(Clone)]
pub struct ExtractorRegistry {
    extractors: Vec<Arc<dyn FileExtractor>>,
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        Self { extractors: vec![Arc::new(PlainTextExtractor), Arc::new(PdfExtractor)] }
    }
}

impl ExtractorRegistry {
    pub fn empty() -> Self {
        Self { extractors: Vec::new() }
    }

    pub fn register(&mut self, extractor: Arc<dyn FileExtractor>) {
        self.extractors.insert(0, extractor);
    }

    pub fn for_media_type(&self, media_type: &str) -> Option<Arc<dyn FileExtractor>> {
        self.extractors.iter().find(|e| e.media_types().contains(&media_type)).cloned()
    }
}
