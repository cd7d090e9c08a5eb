//! `<title>` / `<meta name="description">` extraction.

use chrono::{DateTime, Utc};
use scraper::{Html, Selector};

use super::IngestError;
use crate::model::collapse_whitespace;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageMeta {
    pub title: String,
    pub description: String,
    /// `article:published_time` when the page declares one.
    pub published_at: Option<DateTime<Utc>>,
}

fn looks_binary(bytes: &[u8]) -> bool {
    const MAGIC: &[&[u8]] = &[b"%PDF", b"\x89PNG", b"GIF8", b"\xFF\xD8\xFF", b"PK\x03\x04"];
    if MAGIC.iter().any(|m| bytes.starts_with(m)) {
        return true;
    }
    let head = &bytes[..bytes.len().min(4096)];
    if head.contains(&0) {
        return true;
    }
    let decoded = String::from_utf8_lossy(head);
    let replaced = decoded.chars().filter(|&c| c == char::REPLACEMENT_CHARACTER).count();
    replaced * 10 > decoded.chars().count().max(1)
}

/// Extracts title and description from an HTML document.
///
/// Falls back to `og:title` / `og:description` (then `twitter:*`) when the
/// plain tags are missing. Malformed markup never fails; only input that is
/// not text at all yields [`IngestError::NotHtml`].
pub fn extract_meta(html: &[u8]) -> Result<PageMeta, IngestError> {
    if looks_binary(html) {
        return Err(IngestError::NotHtml);
    }
    let text = String::from_utf8_lossy(html);
    let doc = Html::parse_document(&text);
    let title_sel = Selector::parse("title").expect("static selector");
    let meta_sel = Selector::parse("meta").expect("static selector");

    let mut title = doc
        .select(&title_sel)
        .next()
        .map(|t| collapse_whitespace(&t.text().collect::<String>()))
        .unwrap_or_default();

    let mut metas: Vec<(String, String)> = Vec::new();
    for el in doc.select(&meta_sel) {
        let v = el.value();
        let key = v.attr("name").or_else(|| v.attr("property"));
        if let (Some(key), Some(content)) = (key, v.attr("content")) {
            metas.push((key.trim().to_ascii_lowercase(), collapse_whitespace(content)));
        }
    }
    let lookup = |keys: &[&str]| {
        keys.iter().find_map(|k| {
            metas
                .iter()
                .find(|(name, content)| name == k && !content.is_empty())
                .map(|(_, c)| c.clone())
        })
    };

    if title.is_empty() {
        title = lookup(&["og:title", "twitter:title"]).unwrap_or_default();
    }
    let description = lookup(&["description", "og:description", "twitter:description"]).unwrap_or_default();
    let published_at = lookup(&["article:published_time", "og:published_time"])
        .and_then(|t| DateTime::parse_from_rfc3339(&t).ok())
        .map(|t| t.with_timezone(&Utc));

    Ok(PageMeta {
        title,
        description,
        published_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_tags() {
        let m = extract_meta(br#"<title>T</title><meta name="description" content="D">"#).unwrap();
        assert_eq!((m.title.as_str(), m.description.as_str()), ("T", "D"));
    }

    #[test]
    fn og_fallback() {
        let m = extract_meta(br#"<html><head><meta property="og:description" content="From OG"></head></html>"#).unwrap();
        assert_eq!(m.title, "");
        assert_eq!(m.description, "From OG");
    }

    #[test]
    fn entities_decoded() {
        let m = extract_meta(b"<title>A &amp; B</title><meta name='Description' content='x &lt; y'>").unwrap();
        assert_eq!(m.title, "A & B");
        assert_eq!(m.description, "x < y");
    }

    #[test]
    fn malformed_html_never_fails() {
        for doc in [&b""[..], b"<title>unclosed", b"<<<>>>", b"<meta content=>", b"plain text"] {
            let m = extract_meta(doc).unwrap();
            let _ = (m.title, m.description);
        }
        assert_eq!(extract_meta(b"<title>unclosed").unwrap().title, "unclosed");
    }

    #[test]
    fn binary_rejected() {
        assert!(matches!(extract_meta(b"%PDF-1.7 \x00\x01"), Err(IngestError::NotHtml)));
        assert!(matches!(extract_meta(&[0xff, 0xfe, 0x00, 0x41]), Err(IngestError::NotHtml)));
    }

    #[test]
    fn published_time() {
        let m = extract_meta(
            br#"<meta property="article:published_time" content="2024-05-24T06:30:00+05:30"><title>x</title>"#,
        )
        .unwrap();
        assert_eq!(m.published_at.unwrap().to_rfc3339(), "2024-05-24T01:00:00+00:00");
    }
}
