//! Configurations: multisets of objects and messages.
//!
//! Elements are kept in canonical (derived `Ord`) order, so multiset equality
//! is plain vector equality and iteration order is reproducible.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::{format_rational, parse_rational, LogicalTime, Rational};

/// Attribute and message-argument values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    Num(#[serde(with = "crate::time::rational_serde")] Rational),
    Id(String),
    Str(String),
    List(Vec<Value>),
    Conf(Configuration),
}

impl Value {
    pub fn num(r: Rational) -> Self {
        Value::Num(r)
    }

    pub fn time(t: LogicalTime) -> Self {
        Value::Num(t.value())
    }

    pub fn id(s: impl Into<String>) -> Self {
        Value::Id(s.into())
    }

    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn as_num(&self) -> Option<Rational> {
        match self {
            Value::Num(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_time(&self) -> Option<LogicalTime> {
        self.as_num().and_then(|r| LogicalTime::new(r).ok())
    }

    pub fn as_id(&self) -> Option<&str> {
        match self {
            Value::Id(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_conf(&self) -> Option<&Configuration> {
        match self {
            Value::Conf(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(r) => f.write_str(&format_rational(r)),
            Value::Id(s) => f.write_str(s),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    v.fmt(f)?;
                }
                f.write_str("]")
            }
            Value::Conf(c) => write!(f, "{{{c}}}"),
        }
    }
}

pub type Attributes = BTreeMap<String, Value>;

/// `< id : class | attr : value, ... >`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelObject {
    pub id: String,
    pub class: String,
    pub attrs: Attributes,
}

impl ModelObject {
    pub fn new(id: impl Into<String>, class: impl Into<String>) -> Self {
        ModelObject {
            id: id.into(),
            class: class.into(),
            attrs: Attributes::new(),
        }
    }

    pub fn with(mut self, name: &str, value: Value) -> Self {
        self.attrs.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.attrs.get(name)
    }

    pub fn set(&mut self, name: &str, value: Value) {
        self.attrs.insert(name.to_string(), value);
    }

    pub fn time_attr(&self, name: &str) -> Option<LogicalTime> {
        self.get(name).and_then(Value::as_time)
    }

    pub fn num_attr(&self, name: &str) -> Option<Rational> {
        self.get(name).and_then(Value::as_num)
    }
}

impl fmt::Display for ModelObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "< {} : {} |", self.id, self.class)?;
        for (i, (k, v)) in self.attrs.iter().enumerate() {
            let sep = if i == 0 { " " } else { ", " };
            write!(f, "{sep}{k} : {v}")?;
        }
        f.write_str(" >")
    }
}

/// Message classification with respect to the external world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Internal,
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Message {
    pub name: String,
    pub args: Vec<Value>,
    pub dir: Direction,
}

impl Message {
    pub fn new(name: impl Into<String>, args: Vec<Value>, dir: Direction) -> Self {
        Message {
            name: name.into(),
            args,
            dir,
        }
    }

    pub fn internal(name: impl Into<String>, args: Vec<Value>) -> Self {
        Message::new(name, args, Direction::Internal)
    }

    pub fn incoming(name: impl Into<String>, args: Vec<Value>) -> Self {
        Message::new(name, args, Direction::In)
    }

    pub fn outgoing(name: impl Into<String>, args: Vec<Value>) -> Self {
        Message::new(name, args, Direction::Out)
    }

    pub fn is_external(&self) -> bool {
        self.dir != Direction::Internal
    }

    /// First argument when it names an object.
    pub fn target(&self) -> Option<&str> {
        self.args.first().and_then(Value::as_id)
    }

    /// Parse `name arg1 arg2 ...`. Rational-looking tokens become numbers,
    /// double-quoted tokens strings, everything else identifiers.
    pub fn parse_text(text: &str, dir: Direction) -> Option<Message> {
        let mut tokens = text.split_whitespace();
        let name = tokens.next()?;
        let args = tokens
            .map(|tok| {
                if tok.len() >= 2 && tok.starts_with('"') && tok.ends_with('"') {
                    Value::Str(tok[1..tok.len() - 1].to_string())
                } else if let Ok(r) = parse_rational(tok) {
                    Value::Num(r)
                } else {
                    Value::Id(tok.to_string())
                }
            })
            .collect();
        Some(Message::new(name, args, dir))
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                a.fmt(f)?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Element {
    Object(ModelObject),
    Message(Message),
}

impl Element {
    pub fn as_object(&self) -> Option<&ModelObject> {
        match self {
            Element::Object(o) => Some(o),
            Element::Message(_) => None,
        }
    }

    pub fn as_message(&self) -> Option<&Message> {
        match self {
            Element::Message(m) => Some(m),
            Element::Object(_) => None,
        }
    }
}

impl From<ModelObject> for Element {
    fn from(o: ModelObject) -> Self {
        Element::Object(o)
    }
}

impl From<Message> for Element {
    fn from(m: Message) -> Self {
        Element::Message(m)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Object(o) => o.fmt(f),
            Element::Message(m) => m.fmt(f),
        }
    }
}

/// A multiset of objects and messages. `none` is [`Configuration::default`].
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Element>", into = "Vec<Element>")]
pub struct Configuration {
    elements: Vec<Element>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_elements(elements: impl IntoIterator<Item = Element>) -> Self {
        let mut elements: Vec<Element> = elements.into_iter().collect();
        elements.sort();
        Configuration { elements }
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn insert(&mut self, e: impl Into<Element>) {
        let e = e.into();
        let at = self.elements.partition_point(|x| x <= &e);
        self.elements.insert(at, e);
    }

    /// Multiset union.
    pub fn union(mut self, other: Configuration) -> Configuration {
        if other.is_empty() {
            return self;
        }
        self.elements.extend(other.elements);
        self.elements.sort();
        self
    }

    pub fn objects(&self) -> impl Iterator<Item = &ModelObject> {
        self.elements.iter().filter_map(Element::as_object)
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.elements.iter().filter_map(Element::as_message)
    }

    pub fn object(&self, id: &str) -> Option<&ModelObject> {
        self.objects().find(|o| o.id == id)
    }

    /// Remove the elements at `indices` (any order) and add `produced`.
    pub fn rewrite(&self, indices: &[usize], produced: Vec<Element>) -> Configuration {
        let mut kept: Vec<Element> = self
            .elements
            .iter()
            .enumerate()
            .filter(|(i, _)| !indices.contains(i))
            .map(|(_, e)| e.clone())
            .collect();
        kept.extend(produced);
        Configuration::from_elements(kept)
    }

    /// Duplicate object ids, if any.
    pub fn duplicate_ids(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        let mut dups = Vec::new();
        for o in self.objects() {
            if !seen.insert(o.id.as_str()) {
                dups.push(o.id.clone());
            }
        }
        dups
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serializes")
    }
}

impl From<Vec<Element>> for Configuration {
    fn from(v: Vec<Element>) -> Self {
        Configuration::from_elements(v)
    }
}

impl From<Configuration> for Vec<Element> {
    fn from(c: Configuration) -> Self {
        c.elements
    }
}

impl FromIterator<Element> for Configuration {
    fn from_iter<I: IntoIterator<Item = Element>>(iter: I) -> Self {
        Configuration::from_elements(iter)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.elements.is_empty() {
            return f.write_str("none");
        }
        for (i, e) in self.elements.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            e.fmt(f)?;
        }
        Ok(())
    }
}
