use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::pdl::PdlDocument;

/// Key-sorted serialization with whitespace-normalized string values, so
/// argument order and spacing do not distinguish two calls.
pub fn canonical_args(args: &Map<String, Value>) -> String {
    let sorted: BTreeMap<&String, Value> = args
        .iter()
        .map(|(k, v)| {
            let v = match v {
                Value::String(s) => Value::String(s.split_whitespace().collect::<Vec<_>>().join(" ")),
                other => other.clone(),
            };
            (k, v)
        })
        .collect();
    serde_json::to_string(&sorted).expect("map serializes")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desc: Option<String>,
    #[serde(default)]
    pub request: Vec<String>,
    #[serde(default)]
    pub response: Vec<String>,
    /// Request slots that may be omitted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub optional: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    /// When present the entry answers only calls with these arguments;
    /// when absent it is a sequential entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<Map<String, Value>>,
    pub payload: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    #[serde(default)]
    pub schema: ToolSchema,
    #[serde(default)]
    pub responses: Vec<ToolResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    /// 1-based call numbers that fail with an injected error.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fail_on_calls: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
    #[error("missing required slot(s) for {tool}: {}", .slots.join(", "))]
    MissingSlot { tool: String, slots: Vec<String> },
    #[error("{tool} failed (injected failure on call {call})")]
    Injected { tool: String, call: usize },
    #[error("no configured response for {tool} with arguments {args}")]
    NoResponse { tool: String, args: String },
}

impl ToolError {
    pub fn payload(&self) -> Value {
        let kind = match self {
            ToolError::UnknownTool(_) => "UnknownTool",
            ToolError::MissingSlot { .. } => "MissingSlot",
            ToolError::Injected { .. } => "ToolFailure",
            ToolError::NoResponse { .. } => "NoResponse",
        };
        json!({"error": kind, "message": self.to_string()})
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolRegistry {
    pub tools: BTreeMap<String, ToolSpec>,
}

impl ToolRegistry {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// One entry per API node, answering every call with the response
    /// slots set to null.
    pub fn stub_for(doc: &PdlDocument) -> Self {
        let tools = doc
            .api_nodes
            .iter()
            .map(|n| {
                let payload: Map<String, Value> =
                    n.response_slots.iter().map(|s| (s.clone(), Value::Null)).collect();
                let spec = ToolSpec {
                    schema: ToolSchema {
                        desc: n.desc.clone(),
                        request: n.request_slots.clone(),
                        response: n.response_slots.clone(),
                        optional: Vec::new(),
                    },
                    default: Some(Value::Object(payload)),
                    ..ToolSpec::default()
                };
                (n.name.clone(), spec)
            })
            .collect();
        Self { tools }
    }

    /// Fills schema slots from the workflow for tools whose fixture omits
    /// them.
    pub fn with_schemas_from(mut self, doc: &PdlDocument) -> Self {
        for n in &doc.api_nodes {
            if let Some(t) = self.tools.get_mut(&n.name) {
                if t.schema.request.is_empty() && t.schema.response.is_empty() {
                    t.schema.request = n.request_slots.clone();
                    t.schema.response = n.response_slots.clone();
                }
                if t.schema.desc.is_none() {
                    t.schema.desc = n.desc.clone();
                }
            }
        }
        self
    }

    /// API nodes without a registry entry.
    pub fn missing_tools(&self, doc: &PdlDocument) -> Vec<String> {
        doc.api_nodes
            .iter()
            .filter(|n| !self.tools.contains_key(&n.name))
            .map(|n| n.name.clone())
            .collect()
    }

    /// Looks up the payload for a call. `prior_calls` is the number of
    /// earlier calls to the same tool in this session.
    pub fn execute(
        &self,
        name: &str,
        args: &Map<String, Value>,
        prior_calls: usize,
    ) -> Result<Value, ToolError> {
        let spec = self
            .tools
            .get(name)
            .ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        let missing: Vec<String> = spec
            .schema
            .request
            .iter()
            .filter(|s| !spec.schema.optional.contains(s) && !args.contains_key(*s))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(ToolError::MissingSlot {
                tool: name.to_string(),
                slots: missing,
            });
        }
        let call = prior_calls + 1;
        if spec.fail_on_calls.contains(&call) {
            return Err(ToolError::Injected {
                tool: name.to_string(),
                call,
            });
        }
        let key = canonical_args(args);
        if let Some(r) = spec
            .responses
            .iter()
            .find(|r| r.args.as_ref().is_some_and(|a| canonical_args(a) == key))
        {
            return Ok(r.payload.clone());
        }
        let sequential: Vec<&ToolResponse> = spec.responses.iter().filter(|r| r.args.is_none()).collect();
        if let Some(r) = sequential.get(prior_calls) {
            return Ok(r.payload.clone());
        }
        if let Some(d) = &spec.default {
            return Ok(d.clone());
        }
        if let Some(r) = sequential.last() {
            return Ok(r.payload.clone());
        }
        Err(ToolError::NoResponse {
            tool: name.to_string(),
            args: key,
        })
    }

    /// OpenAI function-calling schema for one tool.
    pub fn function_schema(&self, name: &str) -> Option<Value> {
        let spec = self.tools.get(name)?;
        let properties: Map<String, Value> = spec
            .schema
            .request
            .iter()
            .map(|s| (s.clone(), json!({"type": "string"})))
            .collect();
        let required: Vec<&String> = spec
            .schema
            .request
            .iter()
            .filter(|s| !spec.schema.optional.contains(s))
            .collect();
        let mut function = Map::new();
        function.insert("name".into(), json!(name));
        if let Some(d) = &spec.schema.desc {
            function.insert("description".into(), json!(d));
        }
        function.insert(
            "parameters".into(),
            json!({"type": "object", "properties": properties, "required": required}),
        );
        Some(json!({"type": "function", "function": function}))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    fn registry() -> ToolRegistry {
        ToolRegistry::from_json(
            r#"{
              "check_hospital": {
                "schema": {"request": ["hospital_name"], "response": ["hospital_exists"]},
                "responses": [
                  {"args": {"hospital_name": "Peking Union"}, "payload": {"hospital_exists": true}},
                  {"payload": {"hospital_exists": false}},
                  {"payload": {"hospital_exists": "maybe"}}
                ],
                "default": {"hospital_exists": null},
                "fail_on_calls": [5]
              }
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn canonicalization_ignores_order_and_spacing() {
        let a = args(json!({"b": "x  y", "a": 1}));
        let b = args(json!({"a": 1, "b": " x y "}));
        assert_eq!(canonical_args(&a), canonical_args(&b));
        assert_ne!(canonical_args(&a), canonical_args(&args(json!({"a": 2, "b": "x y"}))));
    }

    #[test]
    fn lookup_order() {
        let r = registry();
        let hit = args(json!({"hospital_name": "Peking  Union"}));
        let other = args(json!({"hospital_name": "Nowhere"}));
        assert_eq!(r.execute("check_hospital", &hit, 3).unwrap(), json!({"hospital_exists": true}));
        assert_eq!(r.execute("check_hospital", &other, 0).unwrap(), json!({"hospital_exists": false}));
        assert_eq!(r.execute("check_hospital", &other, 1).unwrap(), json!({"hospital_exists": "maybe"}));
        assert_eq!(r.execute("check_hospital", &other, 2).unwrap(), json!({"hospital_exists": null}));
        assert!(matches!(
            r.execute("check_hospital", &hit, 4),
            Err(ToolError::Injected { call: 5, .. })
        ));
    }

    #[test]
    fn errors() {
        let r = registry();
        let e = r.execute("check_hospital", &Map::new(), 0).unwrap_err();
        assert_eq!(
            e,
            ToolError::MissingSlot {
                tool: "check_hospital".into(),
                slots: vec!["hospital_name".into()]
            }
        );
        assert_eq!(e.payload()["error"], "MissingSlot");
        assert!(matches!(r.execute("nope", &Map::new(), 0), Err(ToolError::UnknownTool(_))));
    }

    #[test]
    fn function_schema_shape() {
        let s = registry().function_schema("check_hospital").unwrap();
        assert_eq!(s["type"], "function");
        assert_eq!(s["function"]["parameters"]["required"], json!(["hospital_name"]));
    }
}
