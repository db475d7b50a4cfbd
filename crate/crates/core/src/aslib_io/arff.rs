//! Minimal ARFF reader and writer covering what ASlib scenarios use:
//! `@relation`, `@attribute` (numeric, string, nominal) and dense `@data`.

use std::fmt::Write as _;

use super::AslibError;

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeKind {
    Numeric,
    Text,
    Nominal(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArffValue {
    Number(f64),
    Text(String),
    Missing,
}

impl ArffValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            ArffValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ArffValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArffData {
    pub relation: String,
    pub attributes: Vec<Attribute>,
    pub rows: Vec<Vec<ArffValue>>,
}

impl ArffData {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn attribute_names(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    if s.len() >= 2 && ((s.starts_with('\'') && s.ends_with('\'')) || (s.starts_with('"') && s.ends_with('"'))) {
        &s[1..s.len() - 1]
    } else {
        s
    }
}

/// Splits on commas outside single or double quotes.
fn split_fields(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match quote {
            Some(q) if c == '\\' => {
                if let Some(&n) = chars.peek() {
                    if n == q || n == '\\' {
                        cur.push(n);
                        chars.next();
                        continue;
                    }
                }
                cur.push(c);
            }
            Some(q) if c == q => {
                quote = None;
                cur.push(c);
            }
            Some(_) => cur.push(c),
            None if c == '\'' || c == '"' => {
                quote = Some(c);
                cur.push(c);
            }
            None if c == ',' => fields.push(std::mem::take(&mut cur)),
            None => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Splits `@attribute name type`, where the name may be quoted.
fn split_attribute(rest: &str, line: usize) -> Result<(String, String), AslibError> {
    let rest = rest.trim();
    let malformed = || AslibError::Malformed {
        line,
        message: format!("bad attribute declaration: {rest}"),
    };
    let (name, ty) = if let Some(q) = rest.chars().next().filter(|c| *c == '\'' || *c == '"') {
        let end = rest[1..].find(q).ok_or_else(malformed)? + 1;
        (rest[1..end].to_string(), rest[end + 1..].trim().to_string())
    } else {
        let mut it = rest.splitn(2, char::is_whitespace);
        let name = it.next().ok_or_else(malformed)?.to_string();
        (name, it.next().unwrap_or("").trim().to_string())
    };
    if ty.is_empty() {
        return Err(malformed());
    }
    Ok((name, ty))
}

fn parse_kind(ty: &str) -> AttributeKind {
    if ty.starts_with('{') {
        let inner = ty.trim_start_matches('{').trim_end_matches('}');
        AttributeKind::Nominal(split_fields(inner).iter().map(|s| unquote(s).to_string()).collect())
    } else {
        match ty.to_ascii_lowercase().as_str() {
            "numeric" | "real" | "integer" => AttributeKind::Numeric,
            _ => AttributeKind::Text,
        }
    }
}

pub fn parse_arff(text: &str) -> Result<ArffData, AslibError> {
    let mut relation = String::new();
    let mut attributes = Vec::new();
    let mut rows = Vec::new();
    let mut in_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !in_data && line.starts_with('@') {
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("@relation") {
                relation = unquote(&line["@relation".len()..]).to_string();
            } else if lower.starts_with("@attribute") {
                let (name, ty) = split_attribute(&line["@attribute".len()..], line_no)?;
                attributes.push(Attribute {
                    name,
                    kind: parse_kind(&ty),
                });
            } else if lower.starts_with("@data") {
                in_data = true;
            } else {
                return Err(AslibError::Malformed {
                    line: line_no,
                    message: format!("unknown directive {line}"),
                });
            }
            continue;
        }
        if !in_data {
            return Err(AslibError::DataBeforeHeader { line: line_no });
        }
        let fields = split_fields(line);
        if fields.len() != attributes.len() {
            return Err(AslibError::ArityMismatch {
                line: line_no,
                expected: attributes.len(),
                found: fields.len(),
            });
        }
        let row = fields
            .iter()
            .zip(&attributes)
            .map(|(f, attr)| {
                let f = f.trim();
                if f == "?" {
                    return Ok(ArffValue::Missing);
                }
                match attr.kind {
                    AttributeKind::Numeric => {
                        unquote(f)
                            .parse::<f64>()
                            .map(ArffValue::Number)
                            .map_err(|_| AslibError::MalformedValue {
                                key: attr.name.clone(),
                                value: f.to_string(),
                                line: Some(line_no),
                            })
                    }
                    _ => Ok(ArffValue::Text(unquote(f).to_string())),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(ArffData {
        relation,
        attributes,
        rows,
    })
}

fn needs_quotes(s: &str) -> bool {
    s.is_empty()
        || s == "?"
        || s.chars()
            .any(|c| matches!(c, ',' | ' ' | '\'' | '"' | '{' | '}' | '%' | '\t'))
}

fn quote(s: &str) -> String {
    if needs_quotes(s) {
        format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
    } else {
        s.to_string()
    }
}

pub fn write_arff(data: &ArffData) -> String {
    let mut out = String::new();
    writeln!(out, "@RELATION {}", quote(&data.relation)).unwrap();
    out.push('\n');
    for a in &data.attributes {
        let ty = match &a.kind {
            AttributeKind::Numeric => "NUMERIC".to_string(),
            AttributeKind::Text => "STRING".to_string(),
            AttributeKind::Nominal(vals) => {
                format!("{{{}}}", vals.iter().map(|v| quote(v)).collect::<Vec<_>>().join(","))
            }
        };
        writeln!(out, "@ATTRIBUTE {} {}", quote(&a.name), ty).unwrap();
    }
    out.push_str("\n@DATA\n");
    for row in &data.rows {
        let fields: Vec<String> = row
            .iter()
            .map(|v| match v {
                ArffValue::Number(x) => format!("{x}"),
                ArffValue::Text(s) => quote(s),
                ArffValue::Missing => "?".to_string(),
            })
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
