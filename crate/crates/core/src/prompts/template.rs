use std::collections::BTreeSet;
use std::path::PathBuf;

use super::{Family, Prompt};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("{family:?} template: missing `[{section}]` section")]
    MissingSection { family: Family, section: &'static str },
    #[error("{family:?} template: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { family: Family, name: String },
    #[error("{family:?} template: required placeholder {{{name}}} missing from user part")]
    MissingPlaceholder { family: Family, name: String },
    #[error("cannot read template {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

/// A validated template, pre-split into literal text and placeholder slots.
///
/// Source format: any preamble (ignored), then a `[system]` line, the system
/// text, a `[user]` line and the user text. Placeholders are `{name}` with
/// `name` made of lowercase letters and underscores; other braces are literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub family: Family,
    pub system_text: String,
    pub user_text: String,
    system: Vec<Segment>,
    user: Vec<Segment>,
}

fn segments(text: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        lit.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            if !lit.is_empty() {
                out.push(Segment::Text(std::mem::take(&mut lit)));
            }
            out.push(Segment::Slot(after[..name_len].to_string()));
            rest = &after[name_len + 1..];
        } else {
            lit.push('{');
            rest = after;
        }
    }
    lit.push_str(rest);
    if !lit.is_empty() {
        out.push(Segment::Text(lit));
    }
    out
}

fn slots(segs: &[Segment]) -> BTreeSet<&str> {
    segs.iter()
        .filter_map(|s| match s {
            Segment::Slot(n) => Some(n.as_str()),
            Segment::Text(_) => None,
        })
        .collect()
}

/// (start of the header line, start of the text after it)
fn section(src: &str, header: &str) -> Option<(usize, usize)> {
    let mut offset = 0;
    for line in src.split_inclusive('\n') {
        if line.trim_end() == header {
            return Some((offset, offset + line.len()));
        }
        offset += line.len();
    }
    None
}

impl PromptTemplate {
    pub fn parse(family: Family, src: &str) -> Result<Self, TemplateError> {
        let (_, sys_start) = section(src, "[system]").ok_or(TemplateError::MissingSection {
            family,
            section: "system",
        })?;
        let body = &src[sys_start..];
        let (sys_end, user_start) = section(body, "[user]").ok_or(TemplateError::MissingSection {
            family,
            section: "user",
        })?;
        let system_text = body[..sys_end].trim().to_string();
        let user_text = body[user_start..].trim().to_string();
        Self::new(family, system_text, user_text)
    }

    pub fn new(family: Family, system_text: String, user_text: String) -> Result<Self, TemplateError> {
        let system = segments(&system_text);
        let user = segments(&user_text);
        let allowed: BTreeSet<&str> = family.placeholders().iter().copied().collect();
        for name in slots(&system).union(&slots(&user)) {
            if !allowed.contains(name) {
                return Err(TemplateError::UnknownPlaceholder {
                    family,
                    name: name.to_string(),
                });
            }
        }
        let present = slots(&user);
        if let Some(missing) = allowed.iter().find(|n| !present.contains(*n)) {
            return Err(TemplateError::MissingPlaceholder {
                family,
                name: missing.to_string(),
            });
        }
        Ok(PromptTemplate {
            family,
            system_text,
            user_text,
            system,
            user,
        })
    }

    /// Single-pass substitution; substituted values are never re-scanned.
    pub fn render(&self, values: &[(&str, &str)]) -> Prompt {
        let fill = |segs: &[Segment]| {
            let mut out = String::new();
            for s in segs {
                match s {
                    Segment::Text(t) => out.push_str(t),
                    Segment::Slot(name) => {
                        let v = values
                            .iter()
                            .find(|(k, _)| k == name)
                            .map(|(_, v)| *v)
                            .unwrap_or_else(|| panic!("no value for {{{name}}}"));
                        out.push_str(v);
                    }
                }
            }
            out
        };
        Prompt {
            family: Some(self.family),
            system: fill(&self.system),
            user: fill(&self.user),
        }
    }
}
