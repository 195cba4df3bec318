//! Tool specifications: parsing, argument validation, output-name
//! flattening and structural signatures.
//!
//! The document format is the familiar function-calling layout:
//!
//! ```json
//! {"name": "...", "description": "...",
//!  "parameters": {"type": "object", "properties": {...}, "required": [...]},
//!  "results":    {"type": "object", "properties": {...}}}
//! ```
//!
//! `date` and `date-time` are modelled as their own type tags even though the
//! documents spell them as `{"type": "string", "format": "date"}`.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

pub type Properties = IndexMap<String, ParamSchema>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("malformed tool document: {0}")]
    Parse(String),
    #[error("invalid tool document at `{path}`: {message}")]
    Invariant { path: String, message: String },
}

impl SchemaError {
    fn invariant(path: impl Into<String>, message: impl Into<String>) -> Self {
        SchemaError::Invariant { path: path.into(), message: message.into() }
    }

    /// Dotted path of the offending element, when the error has one.
    pub fn path(&self) -> Option<&str> {
        match self {
            SchemaError::Invariant { path, .. } => Some(path),
            SchemaError::Parse(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TypeTag {
    String,
    Integer,
    Number,
    Boolean,
    Object,
    Array,
    Date,
    DateTime,
}

impl TypeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            TypeTag::String => "string",
            TypeTag::Integer => "integer",
            TypeTag::Number => "number",
            TypeTag::Boolean => "boolean",
            TypeTag::Object => "object",
            TypeTag::Array => "array",
            TypeTag::Date => "date",
            TypeTag::DateTime => "date-time",
        }
    }

    pub fn is_complex(self) -> bool {
        matches!(self, TypeTag::Object | TypeTag::Array)
    }

    fn from_document(ty: &str, format: Option<&str>) -> Option<TypeTag> {
        Some(match (ty, format) {
            ("string", Some("date")) | ("date", _) => TypeTag::Date,
            ("string", Some("date-time")) | ("date-time", _) | ("datetime", _) => TypeTag::DateTime,
            ("string", _) => TypeTag::String,
            ("integer", _) => TypeTag::Integer,
            ("number", _) => TypeTag::Number,
            ("boolean", _) => TypeTag::Boolean,
            ("object", _) => TypeTag::Object,
            ("array", _) => TypeTag::Array,
            _ => return None,
        })
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One parameter or result field.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSchema {
    pub type_tag: TypeTag,
    pub description: String,
    pub enum_values: Option<Vec<String>>,
    pub default_value: Option<Value>,
    pub format_hint: Option<String>,
    /// Present iff `type_tag` is `Object`; may be empty for free-form objects.
    pub children: Option<Properties>,
    /// Required child names of an object parameter.
    pub required_children: Vec<String>,
    /// Present iff `type_tag` is `Array`.
    pub item_schema: Option<Box<ParamSchema>>,
}

impl ParamSchema {
    pub fn scalar(type_tag: TypeTag) -> Self {
        assert!(!type_tag.is_complex(), "use ParamSchema::object/array");
        ParamSchema {
            type_tag,
            description: String::new(),
            enum_values: None,
            default_value: None,
            format_hint: match type_tag {
                TypeTag::Date => Some("date".into()),
                TypeTag::DateTime => Some("date-time".into()),
                _ => None,
            },
            children: None,
            required_children: Vec::new(),
            item_schema: None,
        }
    }

    pub fn string() -> Self {
        Self::scalar(TypeTag::String)
    }

    pub fn object(children: Properties) -> Self {
        ParamSchema {
            type_tag: TypeTag::Object,
            description: String::new(),
            enum_values: None,
            default_value: None,
            format_hint: None,
            children: Some(children),
            required_children: Vec::new(),
            item_schema: None,
        }
    }

    pub fn array(items: ParamSchema) -> Self {
        ParamSchema {
            type_tag: TypeTag::Array,
            description: String::new(),
            enum_values: None,
            default_value: None,
            format_hint: None,
            children: None,
            required_children: Vec::new(),
            item_schema: Some(Box::new(items)),
        }
    }

    pub fn with_description(mut self, d: impl Into<String>) -> Self {
        self.description = d.into();
        self
    }

    pub fn with_enum<I, S>(mut self, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.enum_values = Some(values.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_default(mut self, v: Value) -> Self {
        self.default_value = Some(v);
        self
    }

    pub fn is_enum(&self) -> bool {
        self.enum_values.is_some()
    }

    /// Parses a standalone parameter schema document.
    pub fn from_doc(v: &Value) -> Result<ParamSchema, SchemaError> {
        Self::from_value(v, "")
    }

    fn from_value(v: &Value, path: &str) -> Result<ParamSchema, SchemaError> {
        let obj = v.as_object().ok_or_else(|| SchemaError::invariant(path, "parameter schema must be an object"))?;
        let format = obj.get("format").and_then(Value::as_str);
        let ty = match obj.get("type") {
            Some(Value::String(s)) => s.as_str(),
            // Untyped schemas with properties are objects, with items are arrays.
            None if obj.contains_key("properties") => "object",
            None if obj.contains_key("items") => "array",
            None if obj.contains_key("enum") => "string",
            _ => return Err(SchemaError::invariant(path, "missing or non-string `type`")),
        };
        let type_tag = TypeTag::from_document(ty, format)
            .ok_or_else(|| SchemaError::invariant(path, format!("unknown type `{ty}`")))?;
        let description = obj.get("description").and_then(Value::as_str).unwrap_or_default().to_string();
        let enum_values = match obj.get("enum") {
            None | Some(Value::Null) => None,
            Some(Value::Array(items)) => {
                if items.is_empty() {
                    return Err(SchemaError::invariant(path, "`enum` must not be empty"));
                }
                Some(items.iter().map(scalar_text).collect())
            }
            Some(_) => return Err(SchemaError::invariant(path, "`enum` must be a list")),
        };
        let format_hint = match type_tag {
            TypeTag::Date => Some("date".to_string()),
            TypeTag::DateTime => Some("date-time".to_string()),
            _ => format.map(str::to_string),
        };
        let (children, required_children) = if type_tag == TypeTag::Object {
            let props = match obj.get("properties") {
                Some(p) => parse_properties(p, path)?,
                None => Properties::new(),
            };
            let req = parse_required(obj.get("required"), path)?;
            for r in &req {
                if !props.contains_key(r) {
                    return Err(SchemaError::invariant(
                        format!("{path}.{r}"),
                        format!("required name `{r}` is not among the properties"),
                    ));
                }
            }
            (Some(props), req)
        } else {
            (None, Vec::new())
        };
        let item_schema = if type_tag == TypeTag::Array {
            let items = match obj.get("items") {
                Some(i) => ParamSchema::from_value(i, &format!("{path}[]"))?,
                // `"items"` omitted: treat as free-form strings.
                None => ParamSchema::string(),
            };
            Some(Box::new(items))
        } else {
            None
        };
        let schema = ParamSchema {
            type_tag,
            description,
            enum_values,
            default_value: obj.get("default").filter(|d| !d.is_null()).cloned(),
            format_hint,
            children,
            required_children,
            item_schema,
        };
        if let Some(d) = &schema.default_value {
            let mut violations = Vec::new();
            check_value(&schema, d, path, &mut violations);
            if let Some(v) = violations.first() {
                return Err(SchemaError::invariant(
                    path,
                    format!("default does not satisfy the schema: {}", v.message),
                ));
            }
        }
        Ok(schema)
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        let (ty, format) = match self.type_tag {
            TypeTag::Date => ("string", Some("date")),
            TypeTag::DateTime => ("string", Some("date-time")),
            t => (t.as_str(), self.format_hint.as_deref()),
        };
        m.insert("type".into(), Value::String(ty.into()));
        if let Some(f) = format {
            m.insert("format".into(), Value::String(f.into()));
        }
        if !self.description.is_empty() {
            m.insert("description".into(), Value::String(self.description.clone()));
        }
        if let Some(e) = &self.enum_values {
            m.insert("enum".into(), Value::Array(e.iter().cloned().map(Value::String).collect()));
        }
        if let Some(d) = &self.default_value {
            m.insert("default".into(), d.clone());
        }
        if let Some(children) = &self.children {
            if !children.is_empty() {
                m.insert("properties".into(), properties_to_value(children));
            }
            if !self.required_children.is_empty() {
                m.insert("required".into(), string_list(&self.required_children));
            }
        }
        if let Some(items) = &self.item_schema {
            m.insert("items".into(), items.to_value());
        }
        Value::Object(m)
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn string_list(items: &[String]) -> Value {
    Value::Array(items.iter().cloned().map(Value::String).collect())
}

fn parse_properties(v: &Value, path: &str) -> Result<Properties, SchemaError> {
    let obj = v.as_object().ok_or_else(|| SchemaError::invariant(path, "`properties` must be an object"))?;
    let mut out = Properties::new();
    for (name, schema) in obj {
        let child_path = if path.is_empty() { name.clone() } else { format!("{path}.{name}") };
        out.insert(name.clone(), ParamSchema::from_value(schema, &child_path)?);
    }
    Ok(out)
}

fn parse_required(v: Option<&Value>, path: &str) -> Result<Vec<String>, SchemaError> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => {
            let mut out: Vec<String> = Vec::new();
            for item in items {
                let s =
                    item.as_str().ok_or_else(|| SchemaError::invariant(path, "`required` entries must be strings"))?;
                if !out.iter().any(|x| x == s) {
                    out.push(s.to_string());
                }
            }
            Ok(out)
        }
        Some(_) => Err(SchemaError::invariant(path, "`required` must be a list")),
    }
}

fn properties_to_value(props: &Properties) -> Value {
    Value::Object(props.iter().map(|(k, v)| (k.clone(), v.to_value())).collect())
}

fn identifier_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z][a-z0-9_]*$").unwrap())
}

pub fn is_identifier(name: &str) -> bool {
    identifier_re().is_match(name)
}

/// A single tool: name, description, input parameters and result schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Properties,
    pub required: Vec<String>,
    pub results: Properties,
    /// Unknown top-level fields from the source document.
    pub metadata: Map<String, Value>,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        ToolSpec {
            name: name.into(),
            description: description.into(),
            parameters: Properties::new(),
            required: Vec::new(),
            results: Properties::new(),
            metadata: Map::new(),
        }
    }

    pub fn param(mut self, name: &str, schema: ParamSchema, required: bool) -> Self {
        self.parameters.insert(name.to_string(), schema);
        if required && !self.required.iter().any(|r| r == name) {
            self.required.push(name.to_string());
        }
        self
    }

    pub fn result(mut self, name: &str, schema: ParamSchema) -> Self {
        self.results.insert(name.to_string(), schema);
        self
    }

    pub fn is_required(&self, param: &str) -> bool {
        self.required.iter().any(|r| r == param)
    }

    pub fn from_value(v: &Value) -> Result<ToolSpec, SchemaError> {
        let obj = v.as_object().ok_or_else(|| SchemaError::Parse("tool document must be an object".into()))?;
        // Accept the common `{"type":"function","function":{...}}` envelope.
        if let (Some(Value::Object(inner)), None) = (obj.get("function"), obj.get("name")) {
            return ToolSpec::from_value(&Value::Object(inner.clone()));
        }
        let name = obj
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| SchemaError::invariant("name", "missing tool name"))?
            .to_string();
        if !is_identifier(&name) {
            return Err(SchemaError::invariant("name", format!("`{name}` does not match [a-z][a-z0-9_]*")));
        }
        let description = obj.get("description").and_then(Value::as_str).unwrap_or_default().to_string();
        let (parameters, mut required) = match obj.get("parameters") {
            None | Some(Value::Null) => (Properties::new(), Vec::new()),
            Some(p) => split_object_schema(p, "parameters")?,
        };
        for r in parse_required(obj.get("required"), "required")? {
            if !required.contains(&r) {
                required.push(r);
            }
        }
        for r in &required {
            if !parameters.contains_key(r) {
                return Err(SchemaError::invariant(
                    format!("required.{r}"),
                    format!("required parameter `{r}` is not among the parameters"),
                ));
            }
        }
        for pname in parameters.keys() {
            if pname.is_empty() {
                return Err(SchemaError::invariant("parameters", "empty parameter name"));
            }
        }
        let results = match obj.get("results").or_else(|| obj.get("returns")) {
            None | Some(Value::Null) => Properties::new(),
            Some(r) => split_object_schema(r, "results")?.0,
        };
        let metadata = obj
            .iter()
            .filter(|(k, _)| {
                !matches!(k.as_str(), "name" | "description" | "parameters" | "required" | "results" | "returns")
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(ToolSpec { name, description, parameters, required, results, metadata })
    }

    pub fn to_value(&self) -> Value {
        let mut params = Map::new();
        params.insert("type".into(), Value::String("object".into()));
        params.insert("properties".into(), properties_to_value(&self.parameters));
        params.insert("required".into(), string_list(&self.required));
        let mut results = Map::new();
        results.insert("type".into(), Value::String("object".into()));
        results.insert("properties".into(), properties_to_value(&self.results));
        let mut m = Map::new();
        m.insert("name".into(), Value::String(self.name.clone()));
        m.insert("description".into(), Value::String(self.description.clone()));
        m.insert("parameters".into(), Value::Object(params));
        m.insert("results".into(), Value::Object(results));
        for (k, v) in &self.metadata {
            m.insert(k.clone(), v.clone());
        }
        Value::Object(m)
    }

    /// Compact single-line document.
    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }

    /// Returns a copy with a different name (used by schema masking).
    pub fn renamed(&self, name: &str) -> ToolSpec {
        let mut t = self.clone();
        t.name = name.to_string();
        t
    }
}

impl Serialize for ToolSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ToolSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        ToolSpec::from_value(&v).map_err(serde::de::Error::custom)
    }
}

/// Splits `{"type":"object","properties":{..},"required":[..]}` (or a bare
/// property map) into its properties and required list.
fn split_object_schema(v: &Value, path: &str) -> Result<(Properties, Vec<String>), SchemaError> {
    let obj = v.as_object().ok_or_else(|| SchemaError::invariant(path, "must be an object schema"))?;
    if obj.contains_key("properties") || obj.get("type").and_then(Value::as_str) == Some("object") {
        let props = match obj.get("properties") {
            Some(p) => parse_properties(p, path)?,
            None => Properties::new(),
        };
        let req = parse_required(obj.get("required"), path)?;
        Ok((props, req))
    } else {
        Ok((parse_properties(v, path)?, Vec::new()))
    }
}

/// Parses one tool document.
pub fn parse_tool_spec(text: &str) -> Result<ToolSpec, SchemaError> {
    let v: Value = serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
    ToolSpec::from_value(&v)
}

/// Ordered collection of tools for one domain; names are unique.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolPool {
    pub domain: String,
    pub tools: Vec<ToolSpec>,
}

impl ToolPool {
    pub fn new(domain: impl Into<String>) -> Self {
        ToolPool { domain: domain.into(), tools: Vec::new() }
    }

    pub fn from_tools(domain: impl Into<String>, tools: Vec<ToolSpec>) -> Result<Self, SchemaError> {
        let mut pool = ToolPool::new(domain);
        for t in tools {
            pool.push(t)?;
        }
        Ok(pool)
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn push(&mut self, tool: ToolSpec) -> Result<(), SchemaError> {
        if self.contains(&tool.name) {
            return Err(SchemaError::invariant("name", format!("duplicate tool name `{}` in pool", tool.name)));
        }
        self.tools.push(tool);
        Ok(())
    }

    /// Replaces the tool with the same name in place, keeping its position.
    pub fn replace(&mut self, tool: ToolSpec) -> bool {
        match self.tools.iter_mut().find(|t| t.name == tool.name) {
            Some(slot) => {
                *slot = tool;
                true
            }
            None => false,
        }
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.name.as_str())
    }

    /// One tool document per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tools {
            out.push_str(&t.to_json());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(domain: &str, text: &str) -> Result<Self, SchemaError> {
        let mut pool = ToolPool::new(domain);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let tool = parse_tool_spec(line).map_err(|e| match e {
                SchemaError::Parse(m) => SchemaError::Parse(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
            pool.push(tool)?;
        }
        Ok(pool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MissingRequired,
    UnknownParam,
    TypeMismatch,
    EnumViolation,
    // Plan-level checks share the report type.
    UnknownTool,
    BadMarker,
    ForwardReference,
    UnknownOutput,
    PartitionCoverage,
    StepOrder,
    ClarificationPairing,
    UnprovidedParam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport { ok: violations.is_empty(), violations }
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn kinds(&self) -> Vec<ViolationKind> {
        self.violations.iter().map(|v| v.kind).collect()
    }
}

fn date_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{4}-\d{2}-\d{2}$").unwrap())
}

fn date_time_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?$").unwrap())
}

fn join_path(base: &str, name: &str) -> String {
    if base.is_empty() {
        name.to_string()
    } else {
        format!("{base}.{name}")
    }
}

fn push(out: &mut Vec<Violation>, path: &str, kind: ViolationKind, message: String) {
    out.push(Violation { path: path.to_string(), kind, message });
}

fn type_matches(tag: TypeTag, v: &Value) -> bool {
    match tag {
        TypeTag::String => v.is_string(),
        TypeTag::Integer => v.is_i64() || v.is_u64(),
        TypeTag::Number => v.is_number(),
        TypeTag::Boolean => v.is_boolean(),
        TypeTag::Object => v.is_object(),
        TypeTag::Array => v.is_array(),
        TypeTag::Date => v.as_str().is_some_and(|s| date_re().is_match(s)),
        TypeTag::DateTime => v.as_str().is_some_and(|s| date_time_re().is_match(s)),
    }
}

/// Recursive single-value check against a schema.
fn check_value(schema: &ParamSchema, v: &Value, path: &str, out: &mut Vec<Violation>) {
    if !type_matches(schema.type_tag, v) {
        push(out, path, ViolationKind::TypeMismatch, format!("expected {}, got {}", schema.type_tag, json_kind(v)));
        return;
    }
    if let Some(allowed) = &schema.enum_values {
        let text = scalar_text(v);
        if !allowed.contains(&text) {
            push(out, path, ViolationKind::EnumViolation, format!("`{text}` is not one of {allowed:?}"));
        }
    }
    match schema.type_tag {
        TypeTag::Object => {
            let children = schema.children.as_ref().expect("object schema has children");
            // Free-form objects (no declared properties) accept anything.
            if !children.is_empty() {
                check_object(children, &schema.required_children, v.as_object().unwrap(), path, false, out);
            }
        }
        TypeTag::Array => {
            let items = schema.item_schema.as_ref().expect("array schema has items");
            for (i, item) in v.as_array().unwrap().iter().enumerate() {
                check_value(items, item, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

fn check_object(
    props: &Properties,
    required: &[String],
    args: &Map<String, Value>,
    base: &str,
    all_required: bool,
    out: &mut Vec<Violation>,
) {
    for (name, schema) in props {
        let path = join_path(base, name);
        match args.get(name) {
            Some(v) => check_value(schema, v, &path, out),
            None if all_required || required.iter().any(|r| r == name) => {
                push(out, &path, ViolationKind::MissingRequired, format!("required parameter `{name}` is missing"))
            }
            None => {}
        }
    }
    for name in args.keys() {
        if !props.contains_key(name) {
            push(
                out,
                &join_path(base, name),
                ViolationKind::UnknownParam,
                format!("`{name}` is not declared by the schema"),
            );
        }
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_f64() => "number",
        Value::Number(_) => "integer",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Validates call arguments against a tool's input schema. Type checks are
/// strict: `"5"` is not an integer.
pub fn validate_call_args(tool: &ToolSpec, args: &Map<String, Value>) -> ValidationReport {
    let mut out = Vec::new();
    check_object(&tool.parameters, &tool.required, args, "", false, &mut out);
    ValidationReport::from_violations(out)
}

/// Validates a simulated tool result: every declared top-level result field
/// must be present and conform, and nothing undeclared may appear.
pub fn validate_result(tool: &ToolSpec, result: &Map<String, Value>) -> ValidationReport {
    let mut out = Vec::new();
    check_object(&tool.results, &[], result, "", true, &mut out);
    ValidationReport::from_violations(out)
}

/// Validates a single value against a schema.
pub fn validate_value(schema: &ParamSchema, v: &Value) -> ValidationReport {
    let mut out = Vec::new();
    check_value(schema, v, "", &mut out);
    ValidationReport::from_violations(out)
}

fn collect_names(props: &Properties, out: &mut BTreeSet<String>) {
    for (name, schema) in props {
        out.insert(name.clone());
        collect_nested(schema, out);
    }
}

fn collect_nested(schema: &ParamSchema, out: &mut BTreeSet<String>) {
    if let Some(children) = &schema.children {
        collect_names(children, out);
    }
    if let Some(items) = &schema.item_schema {
        collect_nested(items, out);
    }
}

/// Every property name appearing anywhere in the results, nested names
/// included as bare names.
pub fn flatten_output_names(tool: &ToolSpec) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    collect_names(&tool.results, &mut out);
    out
}

/// `(bare name, schema)` for every result property, nested ones included, in
/// document order. A bare name may appear more than once.
pub fn flatten_output_params(tool: &ToolSpec) -> Vec<(String, &ParamSchema)> {
    fn walk<'a>(props: &'a Properties, out: &mut Vec<(String, &'a ParamSchema)>) {
        for (name, schema) in props {
            out.push((name.clone(), schema));
            if let Some(c) = &schema.children {
                walk(c, out);
            }
            if let Some(items) = &schema.item_schema {
                if let Some(c) = &items.children {
                    walk(c, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(&tool.results, &mut out);
    out
}

/// Leaf output paths such as `ticket_id` or `tickets[].ticket_id`.
pub fn output_leaf_paths(tool: &ToolSpec) -> Vec<String> {
    fn walk(props: &Properties, prefix: &str, out: &mut Vec<String>) {
        for (name, schema) in props {
            let here = if prefix.is_empty() { name.clone() } else { format!("{prefix}.{name}") };
            match schema.type_tag {
                TypeTag::Object if schema.children.as_ref().is_some_and(|c| !c.is_empty()) => {
                    walk(schema.children.as_ref().unwrap(), &here, out)
                }
                TypeTag::Array
                    if schema.item_schema.as_ref().and_then(|i| i.children.as_ref()).is_some_and(|c| !c.is_empty()) =>
                {
                    let items = schema.item_schema.as_ref().unwrap();
                    walk(items.children.as_ref().unwrap(), &format!("{here}[]"), out)
                }
                _ => out.push(here),
            }
        }
    }
    let mut out = Vec::new();
    walk(&tool.results, "", &mut out);
    out
}

fn signature_entries(props: &Properties, prefix: &str, out: &mut Vec<String>) {
    for (name, schema) in props {
        let path = join_path(prefix, name);
        out.push(format!("{path}:{}", schema.type_tag));
        if let Some(c) = &schema.children {
            signature_entries(c, &path, out);
        }
        if let Some(items) = &schema.item_schema {
            out.push(format!("{path}[]:{}", items.type_tag));
            if let Some(c) = &items.children {
                signature_entries(c, &format!("{path}[]"), out);
            }
        }
    }
}

/// Canonical structural signature: sorted parameter and result names with
/// their types. Descriptions, enums, defaults and field order do not matter.
pub fn dedup_signature(tool: &ToolSpec) -> String {
    let mut params = Vec::new();
    signature_entries(&tool.parameters, "", &mut params);
    params.sort();
    let mut results = Vec::new();
    signature_entries(&tool.results, "", &mut results);
    results.sort();
    format!("in({})->out({})", params.join(","), results.join(","))
}

/// A conforming example value: the default if any, else the first enum
/// member, else a type-appropriate placeholder.
pub fn example_value(schema: &ParamSchema) -> Value {
    if let Some(d) = &schema.default_value {
        return d.clone();
    }
    if let Some(e) = schema.enum_values.as_ref().and_then(|e| e.first()) {
        return match schema.type_tag {
            TypeTag::Integer => e.parse::<i64>().map(Value::from).unwrap_or(Value::from(0)),
            TypeTag::Number => e.parse::<f64>().map(Value::from).unwrap_or(Value::from(0.0)),
            TypeTag::Boolean => Value::Bool(e == "true"),
            _ => Value::String(e.clone()),
        };
    }
    match schema.type_tag {
        TypeTag::String => Value::String("example".into()),
        TypeTag::Integer => Value::from(1),
        TypeTag::Number => Value::from(1.5),
        TypeTag::Boolean => Value::Bool(true),
        TypeTag::Date => Value::String("2025-01-01".into()),
        TypeTag::DateTime => Value::String("2025-01-01T00:00:00Z".into()),
        TypeTag::Object => {
            let mut m = Map::new();
            let children = schema.children.as_ref().unwrap();
            for (name, child) in children {
                if schema.required_children.iter().any(|r| r == name) {
                    m.insert(name.clone(), example_value(child));
                }
            }
            Value::Object(m)
        }
        TypeTag::Array => Value::Array(vec![example_value(schema.item_schema.as_ref().unwrap())]),
    }
}

/// Arguments with every required parameter filled by [`example_value`].
pub fn example_args(tool: &ToolSpec) -> Map<String, Value> {
    tool.required.iter().map(|r| (r.clone(), example_value(&tool.parameters[r]))).collect()
}
