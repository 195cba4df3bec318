use serde_json::Value;

use super::GatewayError;

/// Expected top-level shape of a structured reply.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Any,
    Array,
    /// An object carrying at least these fields.
    Object(Vec<String>),
}

impl Shape {
    pub fn object(fields: &[&str]) -> Shape {
        Shape::Object(fields.iter().map(|f| f.to_string()).collect())
    }

    fn check(&self, v: &Value) -> Result<(), GatewayError> {
        match self {
            Shape::Any => Ok(()),
            Shape::Array if v.is_array() => Ok(()),
            Shape::Array => Err(GatewayError::ShapeMismatch { missing: vec!["<array>".into()] }),
            Shape::Object(fields) => {
                let obj = v.as_object().ok_or_else(|| GatewayError::ShapeMismatch { missing: fields.clone() })?;
                let missing: Vec<String> = fields.iter().filter(|f| !obj.contains_key(f.as_str())).cloned().collect();
                if missing.is_empty() {
                    Ok(())
                } else {
                    Err(GatewayError::ShapeMismatch { missing })
                }
            }
        }
    }
}

/// Drops commas that directly precede `}` or `]`, outside string literals.
fn strip_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_str = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                out.push(c);
            }
            ',' => {
                let next = chars[i + 1..].iter().find(|n| !n.is_whitespace());
                if !matches!(next, Some('}') | Some(']')) {
                    out.push(c);
                }
            }
            _ => out.push(c),
        }
    }
    out
}

/// Byte offset one past the bracket closing the one at `start`.
fn matching_close(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (off, c) in text[start..].char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + off + c.len_utf8());
                }
            }
            _ => {}
        }
    }
    None
}

fn fenced_blocks(content: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = content;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(0, |n| n + 1);
        let Some(close) = after[body_start..].find("```") else {
            break;
        };
        out.push(&after[body_start..body_start + close]);
        rest = &after[body_start + close + 3..];
    }
    out
}

fn first_document(text: &str) -> Option<Value> {
    for (i, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        if let Some(end) = matching_close(text, i) {
            let candidate = strip_trailing_commas(&text[i..end]);
            if let Ok(v) = serde_json::from_str::<Value>(&candidate) {
                return Some(v);
            }
        }
    }
    None
}

/// Pulls the first JSON document out of a model reply, tolerating code
/// fences, prose around the document and trailing commas.
pub fn extract_structured(content: &str, expected: &Shape) -> Result<Value, GatewayError> {
    let doc = fenced_blocks(content)
        .into_iter()
        .find_map(first_document)
        .or_else(|| first_document(content))
        .ok_or(GatewayError::NoDocument)?;
    expected.check(&doc)?;
    Ok(doc)
}
