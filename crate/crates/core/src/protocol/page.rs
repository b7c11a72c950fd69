//! The modeled login page and the tiny script dialect the modeled browser
//! understands.
//!
//! Two statement forms are recognized inside the page's `<script>` element:
//!
//! ```text
//! setCookie("NAME", fingerprint(), TTL)       set NAME = d=<device>&t=<now>&ttl=TTL
//! onchange("FIELD", leak("NAME", "KEY"))      on input to FIELD, add KEY=<value> to NAME
//! ```
//!
//! Anything else in the script is inert.

use std::sync::OnceLock;

use regex::Regex;

pub const ID_FIELD: &str = "iVoteID";
pub const PIN_FIELD: &str = "PIN";
pub const PROFILE_COOKIE: &str = "__utmvc";
pub const FINGERPRINT_COOKIE: &str = "visid_incap";
pub const DEFAULT_PROFILE_TTL_SECS: u64 = 20;

const SCRIPT_OPEN: &str = "<script>";
const SCRIPT_CLOSE: &str = "</script>";

/// Profiling script as the mitigation provider ships it: unminified.
pub const PROFILING_SCRIPT: &str = r#"
/*
 * Client classification. Collects a coarse device profile and hands it
 * back on the next few requests so the edge can tell browsers from bots.
 */
(function () {
    var ttl = 20;

    // device profile: plugins, screen, timezone, fonts
    var profile = fingerprint();

    setCookie("__utmvc", fingerprint(), 20);
})();
"#;

pub fn login_page() -> String {
    format!(
        "<!DOCTYPE html>\n<html>\n<head><title>iVote - Log in</title></head>\n<body>\n\
<form id=\"login\" method=\"post\" action=\"/vote-encoder/login\">\n\
<label for=\"{ID_FIELD}\">iVote Number</label>\n<input type=\"text\" id=\"{ID_FIELD}\" name=\"{ID_FIELD}\">\n\
<label for=\"{PIN_FIELD}\">PIN</label>\n<input type=\"password\" id=\"{PIN_FIELD}\" name=\"{PIN_FIELD}\">\n\
<button type=\"submit\">Log in</button>\n</form>\n\
{SCRIPT_OPEN}{PROFILING_SCRIPT}{SCRIPT_CLOSE}\n</body>\n</html>\n"
    )
}

/// Byte range of the script body inside `html`, if there is one.
pub fn script_range(html: &str) -> Option<std::ops::Range<usize>> {
    let start = html.find(SCRIPT_OPEN)? + SCRIPT_OPEN.len();
    let len = html[start..].find(SCRIPT_CLOSE)?;
    Some(start..start + len)
}

pub fn script_of(html: &str) -> Option<&str> {
    script_range(html).map(|r| &html[r])
}

pub fn has_field(html: &str, field: &str) -> bool {
    html.contains(&format!("id=\"{field}\""))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptEffect {
    SetProfileCookie { name: String, ttl_secs: u64 },
    Leak { field: String, cookie: String, key: String },
}

fn set_cookie_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"setCookie\(\s*"([A-Za-z0-9_]+)"\s*,\s*fingerprint\(\)\s*,\s*(\d+)\s*\)"#).unwrap())
}

fn leak_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"onchange\(\s*"([A-Za-z0-9_]+)"\s*,\s*leak\(\s*"([A-Za-z0-9_]+)"\s*,\s*"([A-Za-z0-9_]+)"\s*\)\s*\)"#).unwrap()
    })
}

/// Statements in `script` the browser will act on, in source order.
pub fn effects(script: &str) -> Vec<ScriptEffect> {
    let mut found: Vec<(usize, ScriptEffect)> = Vec::new();
    for c in set_cookie_re().captures_iter(script) {
        let Ok(ttl_secs) = c[2].parse() else { continue };
        found.push((
            c.get(0).unwrap().start(),
            ScriptEffect::SetProfileCookie {
                name: c[1].to_owned(),
                ttl_secs,
            },
        ));
    }
    for c in leak_re().captures_iter(script) {
        found.push((
            c.get(0).unwrap().start(),
            ScriptEffect::Leak {
                field: c[1].to_owned(),
                cookie: c[2].to_owned(),
                key: c[3].to_owned(),
            },
        ));
    }
    found.sort_by_key(|(pos, _)| *pos);
    found.into_iter().map(|(_, e)| e).collect()
}

/// Strips `/* */` and `//` comments and collapses whitespace that is not
/// inside a string literal.
pub fn minify(script: &str) -> String {
    let mut out = String::with_capacity(script.len());
    let bytes = script.as_bytes();
    let mut i = 0;
    let mut in_str = false;
    let mut pending_space = false;
    while i < bytes.len() {
        let c = bytes[i];
        if in_str {
            out.push(c as char);
            if c == b'"' {
                in_str = false;
            }
            i += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i = script[i + 2..].find("*/").map_or(bytes.len(), |e| i + 2 + e + 2);
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            i = script[i..].find('\n').map_or(bytes.len(), |e| i + e);
            continue;
        }
        if c.is_ascii_whitespace() {
            pending_space = true;
            i += 1;
            continue;
        }
        if pending_space {
            let prev = out.as_bytes().last().copied();
            if prev.is_some_and(is_word) && is_word(c) {
                out.push(' ');
            }
            pending_space = false;
        }
        if c == b'"' {
            in_str = true;
        }
        out.push(c as char);
        i += 1;
    }
    out
}

fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_has_fields_and_script() {
        let page = login_page();
        assert!(has_field(&page, ID_FIELD));
        assert!(has_field(&page, PIN_FIELD));
        assert_eq!(script_of(&page), Some(PROFILING_SCRIPT));
    }

    #[test]
    fn stock_script_only_sets_profile_cookie() {
        assert_eq!(
            effects(PROFILING_SCRIPT),
            vec![ScriptEffect::SetProfileCookie {
                name: PROFILE_COOKIE.into(),
                ttl_secs: 20
            }]
        );
    }

    #[test]
    fn leak_statements_parse() {
        let s =
            r#"setCookie("__utmvc",fingerprint(),20);onchange("iVoteID",leak("__utmvc","id"));onchange( "PIN" , leak("__utmvc","pin") )"#;
        let e = effects(s);
        assert_eq!(e.len(), 3);
        assert_eq!(
            e[2],
            ScriptEffect::Leak {
                field: "PIN".into(),
                cookie: "__utmvc".into(),
                key: "pin".into()
            }
        );
    }

    #[test]
    fn minify_keeps_behavior() {
        let m = minify(PROFILING_SCRIPT);
        assert!(m.len() < PROFILING_SCRIPT.len() / 2);
        assert_eq!(effects(&m), effects(PROFILING_SCRIPT));
        assert!(m.contains("var ttl=20;"));
        assert_eq!(minify(r#"a  =  "x  // y" // z"#), r#"a="x  // y""#);
    }
}
