//! Text formats for invariants: canonical JSON, newline-delimited JSON
//! streams, and XML.
//!
//! JSON nodes are objects tagged by `"op"` with their fields in a fixed
//! order. Canonical output has a single space after every `:` and no other
//! whitespace. A document wraps the root node:
//!
//! ```text
//! {"version": "gridspace-inv/1","root": {"op": "TRUE"}}
//! ```
//!
//! The XML form uses the lowercased constructor name as element name, atom
//! fields as attributes and sub-formulas as child elements in order:
//!
//! ```text
//! <invariant version="gridspace-inv/1"><true/></invariant>
//! ```

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::invariant::{
    format_decimal, parse_decimal, Area, Interval, Invariant, Point, Quantity, Volume, OP_NAMES,
};

pub const FORMAT_VERSION: &str = "gridspace-inv/1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("parse error at {line}:{column}: {reason}")]
    Parse { line: usize, column: usize, reason: String },
    #[error("unknown op {0:?}")]
    UnknownOp(String),
    #[error("version mismatch: expected {FORMAT_VERSION:?}, found {0:?}")]
    VersionMismatch(String),
}

impl FormatError {
    fn parse(line: usize, column: usize, reason: impl Into<String>) -> Self {
        FormatError::Parse {
            line,
            column,
            reason: reason.into(),
        }
    }
}

struct CanonicalFormatter;

impl serde_json::ser::Formatter for CanonicalFormatter {
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        writer.write_all(b": ")
    }
}

fn to_canonical<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, CanonicalFormatter);
    value.serialize(&mut ser).expect("invariants always serialize");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[derive(Serialize)]
struct DocOut<'a> {
    version: &'a str,
    root: &'a Invariant,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocIn {
    #[allow(dead_code)]
    version: String,
    root: Invariant,
}

/// Canonical JSON text of a single node, without the document wrapper.
pub fn to_json_node(inv: &Invariant) -> String {
    to_canonical(inv)
}

/// Canonical JSON document.
pub fn serialize_json(inv: &Invariant) -> String {
    to_canonical(&DocOut {
        version: FORMAT_VERSION,
        root: inv,
    })
}

/// Parses a JSON document or a bare node. Whitespace is free; keys may come
/// in any order.
pub fn parse_json(text: &str) -> Result<Invariant, FormatError> {
    let value: Value = serde_json::from_str(text).map_err(json_error)?;
    let is_doc = value.get("op").is_none() && value.get("version").is_some();
    if is_doc {
        match value.get("version") {
            Some(Value::String(v)) if v == FORMAT_VERSION => {}
            Some(other) => {
                let found = other.as_str().map_or_else(|| other.to_string(), str::to_string);
                return Err(FormatError::VersionMismatch(found));
            }
            None => unreachable!(),
        }
        if let Some(root) = value.get("root") {
            check_ops(root)?;
        }
        serde_json::from_str::<DocIn>(text).map(|d| d.root).map_err(json_error)
    } else {
        check_ops(&value)?;
        serde_json::from_str::<Invariant>(text).map_err(json_error)
    }
}

fn json_error(e: serde_json::Error) -> FormatError {
    FormatError::parse(e.line(), e.column(), e.to_string())
}

fn check_ops(value: &Value) -> Result<(), FormatError> {
    match value {
        Value::Object(map) => {
            if let Some(Value::String(op)) = map.get("op") {
                if !OP_NAMES.contains(&op.as_str()) {
                    return Err(FormatError::UnknownOp(op.clone()));
                }
            }
            map.values().try_for_each(check_ops)
        }
        Value::Array(items) => items.iter().try_for_each(check_ops),
        _ => Ok(()),
    }
}

/// One canonical node per line.
pub fn write_ndjson(items: &[Invariant]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&to_json_node(item));
        out.push('\n');
    }
    out
}

/// Parses a newline-delimited stream; blank lines are skipped. Error line
/// numbers refer to the stream.
pub fn parse_ndjson(text: &str) -> Result<Vec<Invariant>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            parse_json(line).map_err(|e| match e {
                FormatError::Parse { column, reason, .. } => FormatError::Parse {
                    line: i + 1,
                    column,
                    reason,
                },
                other => other,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// XML

fn xml_escape(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\t' => out.push_str("&#9;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

/// Escapes text for use inside an XML attribute or element.
pub fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    xml_escape(s, &mut out);
    out
}

fn element_name(inv: &Invariant) -> String {
    inv.op_name().to_ascii_lowercase()
}

fn attributes(inv: &Invariant) -> Vec<(&'static str, String)> {
    match inv {
        Invariant::TimePoint { t } => vec![("t", t.to_string())],
        Invariant::TimeInterval(i) => vec![("t1", i.start().to_string()), ("t2", i.end().to_string())],
        Invariant::Owner { tag } | Invariant::Event { tag } => vec![("tag", tag.clone())],
        Invariant::OccupyPoint(p) => vec![("x", p.x.to_string()), ("y", p.y.to_string())],
        Invariant::OccupyBox(b) => vec![
            ("x1", b.x1().to_string()),
            ("y1", b.y1().to_string()),
            ("x2", b.x2().to_string()),
            ("y2", b.y2().to_string()),
        ],
        Invariant::Occupy3DBox(v) => ["x1", "y1", "z1", "x2", "y2", "z2"]
            .into_iter()
            .zip(v.corners())
            .map(|(k, c)| (k, c.to_string()))
            .collect(),
        Invariant::Edge { source, target } => vec![("source", source.clone()), ("target", target.clone())],
        Invariant::Transition { source, event, target } => vec![
            ("source", source.clone()),
            ("event", event.clone()),
            ("target", target.clone()),
        ],
        Invariant::Quantity(q) => vec![
            ("kind", q.kind.clone()),
            ("value", format_decimal(q.value())),
            ("unit", q.unit.clone()),
        ],
        _ => Vec::new(),
    }
}

fn children(inv: &Invariant) -> Vec<&Invariant> {
    match inv {
        Invariant::And { left, right } | Invariant::Or { left, right } => vec![left, right],
        Invariant::Not { inner } => vec![inner],
        Invariant::Implies { guard, body } => vec![guard, body],
        Invariant::BigAnd { items } => items.iter().collect(),
        _ => Vec::new(),
    }
}

fn write_xml_node(inv: &Invariant, out: &mut String) {
    let name = element_name(inv);
    out.push('<');
    out.push_str(&name);
    for (key, value) in attributes(inv) {
        out.push(' ');
        out.push_str(key);
        out.push_str("=\"");
        xml_escape(&value, out);
        out.push('"');
    }
    let kids = children(inv);
    if kids.is_empty() {
        out.push_str("/>");
        return;
    }
    out.push('>');
    for kid in kids {
        write_xml_node(kid, out);
    }
    out.push_str("</");
    out.push_str(&name);
    out.push('>');
}

/// Canonical XML document: no declaration, no insignificant whitespace.
pub fn serialize_xml(inv: &Invariant) -> String {
    let mut out = format!("<invariant version=\"{FORMAT_VERSION}\">");
    write_xml_node(inv, &mut out);
    out.push_str("</invariant>");
    out
}

/// Parses an XML document. Whitespace between elements is ignored.
pub fn parse_xml(text: &str) -> Result<Invariant, FormatError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        FormatError::parse(pos.row as usize, pos.col as usize, e.to_string())
    })?;
    let root = doc.root_element();
    let pos_of = |node: roxmltree::Node| {
        let p = doc.text_pos_at(node.range().start);
        (p.row as usize, p.col as usize)
    };
    if root.tag_name().name() != "invariant" {
        let (l, c) = pos_of(root);
        return Err(FormatError::parse(
            l,
            c,
            format!("expected root element <invariant>, found <{}>", root.tag_name().name()),
        ));
    }
    match root.attribute("version") {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(FormatError::VersionMismatch(other.to_string())),
        None => {
            let (l, c) = pos_of(root);
            return Err(FormatError::parse(l, c, "missing version attribute on <invariant>"));
        }
    }
    let kids = element_children(&root, &pos_of)?;
    match kids.as_slice() {
        [single] => xml_node(*single, &pos_of),
        _ => {
            let (l, c) = pos_of(root);
            Err(FormatError::parse(
                l,
                c,
                format!("<invariant> must have exactly one child element, found {}", kids.len()),
            ))
        }
    }
}

type PosFn<'a> = dyn Fn(roxmltree::Node) -> (usize, usize) + 'a;

fn element_children<'a, 'input>(
    node: &roxmltree::Node<'a, 'input>,
    pos_of: &PosFn,
) -> Result<Vec<roxmltree::Node<'a, 'input>>, FormatError> {
    let mut out = Vec::new();
    for child in node.children() {
        if child.is_element() {
            out.push(child);
        } else if child.is_text() && !child.text().unwrap_or("").trim().is_empty() {
            let (l, c) = pos_of(child);
            return Err(FormatError::parse(
                l,
                c,
                format!("unexpected text inside <{}>", node.tag_name().name()),
            ));
        }
    }
    Ok(out)
}

fn xml_node(node: roxmltree::Node, pos_of: &PosFn) -> Result<Invariant, FormatError> {
    let name = node.tag_name().name();
    let (line, col) = pos_of(node);
    let err = |reason: String| FormatError::parse(line, col, reason);
    let op = OP_NAMES
        .iter()
        .find(|op| op.to_ascii_lowercase() == name)
        .ok_or_else(|| FormatError::UnknownOp(name.to_string()))?;

    let expected: &[&str] = match *op {
        "TimePoint" => &["t"],
        "TimeInterval" => &["t1", "t2"],
        "Owner" | "Event" => &["tag"],
        "OccupyPoint" => &["x", "y"],
        "OccupyBox" => &["x1", "y1", "x2", "y2"],
        "Occupy3DBox" => &["x1", "y1", "z1", "x2", "y2", "z2"],
        "Edge" => &["source", "target"],
        "Transition" => &["source", "event", "target"],
        "Quantity" => &["kind", "value", "unit"],
        _ => &[],
    };
    for attr in node.attributes() {
        if !expected.contains(&attr.name()) {
            return Err(err(format!("unexpected attribute {:?} on <{name}>", attr.name())));
        }
    }
    let text = |key: &str| -> Result<String, FormatError> {
        node.attribute(key)
            .map(str::to_string)
            .ok_or_else(|| err(format!("missing attribute {key:?} on <{name}>")))
    };
    let int = |key: &str| -> Result<i64, FormatError> {
        let raw = text(key)?;
        raw.parse::<i64>()
            .map_err(|_| err(format!("attribute {key:?} on <{name}> is not an integer: {raw:?}")))
    };

    let kids = element_children(&node, pos_of)?;
    let arity = |n: usize| -> Result<Vec<Invariant>, FormatError> {
        if kids.len() != n {
            return Err(err(format!("<{name}> expects {n} child element(s), found {}", kids.len())));
        }
        kids.iter().map(|k| xml_node(*k, pos_of)).collect()
    };
    let pair = |n| -> Result<(Box<Invariant>, Box<Invariant>), FormatError> {
        let mut v = arity(n)?;
        let right = v.pop().expect("two children");
        let left = v.pop().expect("two children");
        Ok((Box::new(left), Box::new(right)))
    };

    Ok(match *op {
        "AND" => {
            let (left, right) = pair(2)?;
            Invariant::And { left, right }
        }
        "OR" => {
            let (left, right) = pair(2)?;
            Invariant::Or { left, right }
        }
        "IMPLIES" => {
            let (guard, body) = pair(2)?;
            Invariant::Implies { guard, body }
        }
        "NOT" => Invariant::not(arity(1)?.pop().expect("one child")),
        "BIGAND" => Invariant::BigAnd {
            items: kids.iter().map(|k| xml_node(*k, pos_of)).collect::<Result<_, _>>()?,
        },
        leaf => {
            arity(0)?;
            match leaf {
                "TRUE" => Invariant::True,
                "FALSE" => Invariant::False,
                "TimePoint" => Invariant::TimePoint { t: int("t")? },
                "TimeInterval" => Invariant::TimeInterval(
                    Interval::new(int("t1")?, int("t2")?).map_err(|e| err(e.to_string()))?,
                ),
                "Owner" => Invariant::Owner { tag: text("tag")? },
                "Event" => Invariant::Event { tag: text("tag")? },
                "OccupyPoint" => Invariant::OccupyPoint(Point::new(int("x")?, int("y")?)),
                "OccupyBox" => Invariant::OccupyBox(Area::new(int("x1")?, int("y1")?, int("x2")?, int("y2")?)),
                "Occupy3DBox" => Invariant::Occupy3DBox(Volume::new(
                    int("x1")?,
                    int("y1")?,
                    int("z1")?,
                    int("x2")?,
                    int("y2")?,
                    int("z2")?,
                )),
                "Edge" => Invariant::Edge {
                    source: text("source")?,
                    target: text("target")?,
                },
                "Transition" => Invariant::Transition {
                    source: text("source")?,
                    event: text("event")?,
                    target: text("target")?,
                },
                "Quantity" => {
                    let raw = text("value")?;
                    let value = parse_decimal(&raw).ok_or_else(|| err(format!("invalid decimal {raw:?}")))?;
                    Invariant::Quantity(Quantity::new(text("kind")?, value, text("unit")?).map_err(|e| err(e.to_string()))?)
                }
                other => unreachable!("unhandled op {other}"),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn area_of_impact() -> Invariant {
        Invariant::implies(
            Invariant::and(Invariant::time_interval(3, 9).unwrap(), Invariant::owner("AreaOfImpact")),
            Invariant::occupy_box(145, 4056, 1536, 2609),
        )
    }

    #[test]
    fn true_node_and_document() {
        assert_eq!(to_json_node(&Invariant::True), r#"{"op": "TRUE"}"#);
        assert_eq!(
            serialize_json(&Invariant::True),
            r#"{"version": "gridspace-inv/1","root": {"op": "TRUE"}}"#
        );
        assert_eq!(parse_json(r#"{"op": "TRUE"}"#).unwrap(), Invariant::True);
        assert_eq!(parse_json(r#"{"op":"TRUE"}"#).unwrap(), Invariant::True);
        assert_eq!(
            serialize_xml(&Invariant::True),
            r#"<invariant version="gridspace-inv/1"><true/></invariant>"#
        );
        assert_eq!(
            parse_xml(r#"<invariant version="gridspace-inv/1"><true/></invariant>"#).unwrap(),
            Invariant::True
        );
    }

    #[test]
    fn canonical_key_order() {
        let text = to_json_node(&area_of_impact());
        assert_eq!(
            text,
            concat!(
                r#"{"op": "IMPLIES","guard": {"op": "AND","left": {"op": "TimeInterval","t1": 3,"t2": 9},"#,
                r#""right": {"op": "Owner","tag": "AreaOfImpact"}},"#,
                r#""body": {"op": "OccupyBox","x1": 145,"y1": 2609,"x2": 1536,"y2": 4056}}"#
            )
        );
        let q = Invariant::quantity("load_kw", 12.5, "kW").unwrap();
        assert_eq!(
            to_json_node(&q),
            r#"{"op": "Quantity","kind": "load_kw","value": "12.5","unit": "kW"}"#
        );
    }

    #[test]
    fn area_of_impact_round_trips() {
        let inv = area_of_impact();
        assert_eq!(parse_json(&serialize_json(&inv)).unwrap(), inv);
        assert_eq!(parse_xml(&serialize_xml(&inv)).unwrap(), inv);
    }

    #[test]
    fn unordered_box_is_normalized_on_parse() {
        let inv = parse_json(r#"{"op":"OccupyBox","x1":5,"y1":9,"x2":2,"y2":3}"#).unwrap();
        assert_eq!(inv, Invariant::occupy_box(2, 3, 5, 9));
        assert_eq!(inv.normalize(), inv);
    }

    #[test]
    fn relaxed_whitespace_and_key_order() {
        let text = "{\n  \"t2\" : 9 ,\n  \"op\" : \"TimeInterval\",\n  \"t1\":3\n}\n";
        assert_eq!(parse_json(text).unwrap(), Invariant::time_interval(3, 9).unwrap());
    }

    #[test]
    fn json_errors() {
        assert_eq!(
            parse_json(r#"{"op": "XOR", "left": {"op": "TRUE"}}"#),
            Err(FormatError::UnknownOp("XOR".into()))
        );
        assert_eq!(
            parse_json(r#"{"op": "AND", "left": {"op": "TRUE"}, "right": {"op": "Nope"}}"#),
            Err(FormatError::UnknownOp("Nope".into()))
        );
        assert_eq!(
            parse_json(r#"{"version": "gridspace-inv/2", "root": {"op": "TRUE"}}"#),
            Err(FormatError::VersionMismatch("gridspace-inv/2".into()))
        );
        let err = parse_json("{\"op\": \"TRUE\",\n  oops}").unwrap_err();
        assert!(matches!(err, FormatError::Parse { line: 2, .. }), "{err:?}");
        assert!(matches!(
            parse_json(r#"{"op": "OccupyPoint", "x": 1}"#),
            Err(FormatError::Parse { .. })
        ));
        assert!(matches!(
            parse_json(r#"{"op": "OccupyPoint", "x": 1, "y": 2, "z": 3}"#),
            Err(FormatError::Parse { .. })
        ));
        assert!(matches!(
            parse_json(r#"{"op": "TimeInterval", "t1": 5, "t2": 1}"#),
            Err(FormatError::Parse { .. })
        ));
        assert!(matches!(
            parse_json(r#"{"op": "Quantity", "kind": "k", "value": 3.5, "unit": "u"}"#),
            Err(FormatError::Parse { .. })
        ));
        assert!(matches!(
            parse_json(r#"{"op": "Quantity", "kind": "k", "value": "1e9", "unit": "u"}"#),
            Err(FormatError::Parse { .. })
        ));
    }

    #[test]
    fn ndjson_stream() {
        let items = vec![area_of_impact(), Invariant::owner("x"), Invariant::point(1, 2)];
        let text = write_ndjson(&items);
        assert_eq!(text.lines().count(), 3);
        assert_eq!(parse_ndjson(&format!("{text}\n\n")).unwrap(), items);
        let bad = format!("{}not json\n", write_ndjson(&items[..1]));
        assert!(matches!(parse_ndjson(&bad), Err(FormatError::Parse { line: 2, .. })));
    }

    #[test]
    fn xml_errors() {
        let err = parse_xml(r#"<invariant version="gridspace-inv/1"><anb></invariant>"#).unwrap_err();
        assert!(matches!(&err, FormatError::Parse { reason, .. } if reason.contains("anb")), "{err:?}");
        assert_eq!(
            parse_xml(r#"<invariant version="gridspace-inv/1"><anb/></invariant>"#),
            Err(FormatError::UnknownOp("anb".into()))
        );
        assert_eq!(
            parse_xml(r#"<invariant version="v0"><true/></invariant>"#),
            Err(FormatError::VersionMismatch("v0".into()))
        );
        for bad in [
            r#"<invariant version="gridspace-inv/1"><and><true/></and></invariant>"#,
            r#"<invariant version="gridspace-inv/1"><occupypoint x="1"/></invariant>"#,
            r#"<invariant version="gridspace-inv/1"><occupypoint x="1" y="b"/></invariant>"#,
            r#"<invariant version="gridspace-inv/1"><true/><true/></invariant>"#,
            r#"<invariant version="gridspace-inv/1"><true a="1"/></invariant>"#,
            r#"<invariant version="gridspace-inv/1">text<true/></invariant>"#,
            r#"<root version="gridspace-inv/1"><true/></root>"#,
        ] {
            assert!(matches!(parse_xml(bad), Err(FormatError::Parse { .. })), "{bad}");
        }
    }

    #[test]
    fn xml_whitespace_and_escaping() {
        let inv = Invariant::and(Invariant::owner("a<b>&\"c'\n\t"), Invariant::event("e"));
        let text = serialize_xml(&inv);
        assert_eq!(parse_xml(&text).unwrap(), inv);
        let pretty = "<invariant version=\"gridspace-inv/1\">\n  <and>\n    <owner tag=\"a\"/>\n    <event tag=\"e\"/>\n  </and>\n</invariant>\n";
        assert_eq!(
            parse_xml(pretty).unwrap(),
            Invariant::and(Invariant::owner("a"), Invariant::event("e"))
        );
    }
}
