//! URL normalization and registrable-domain helpers.

use url::Url;

const TRACKING_PARAMS: &[&str] = &[
    "fbclid", "gclid", "dclid", "msclkid", "mc_cid", "mc_eid", "igshid", "ref", "ref_src", "_ga", "amp",
];

fn is_tracking_param(name: &str) -> bool {
    let name = name.to_ascii_lowercase();
    name.starts_with("utm_") || TRACKING_PARAMS.contains(&name.as_str())
}

/// Canonical form of a URL used for deduplication and article ids.
///
/// The host is lowercased, default ports and fragments are removed and
/// tracking query parameters are stripped. Unparseable input is returned
/// trimmed and lowercased.
pub fn normalize_url(raw: &str) -> String {
    let Ok(mut url) = Url::parse(raw.trim()) else {
        return raw.trim().to_lowercase();
    };
    url.set_fragment(None);
    let kept: Vec<(String, String)> = url
        .query_pairs()
        .filter(|(k, _)| !is_tracking_param(k))
        .map(|(k, v)| (k.into_owned(), v.into_owned()))
        .collect();
    if kept.is_empty() {
        url.set_query(None);
    } else {
        url.query_pairs_mut().clear().extend_pairs(kept);
    }
    url.to_string()
}

/// Lowercased host of a URL, or the input itself when it is already a host.
pub fn host(url_or_host: &str) -> Option<String> {
    let trimmed = url_or_host.trim();
    let host = if trimmed.contains("://") {
        Url::parse(trimmed).ok()?.host_str()?.to_string()
    } else {
        trimmed.split(['/', ':']).next()?.to_string()
    };
    let host = host.trim_end_matches('.').to_lowercase();
    (!host.is_empty()).then_some(host)
}

/// Registrable domain (public suffix plus one label) for a URL or host.
///
/// Hosts without a recognizable suffix, such as IP addresses or single
/// labels, are returned unchanged.
pub fn registrable_domain(url_or_host: &str) -> Option<String> {
    let host = host(url_or_host)?;
    Some(psl::domain_str(&host).map(str::to_string).unwrap_or(host))
}

/// Syntactic validity check for blocklist entries.
pub fn is_valid_domain(domain: &str) -> bool {
    !domain.is_empty()
        && domain.len() <= 253
        && domain.split('.').all(|label| {
            !label.is_empty()
                && label.len() <= 63
                && !label.starts_with('-')
                && !label.ends_with('-')
                && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
        })
}
