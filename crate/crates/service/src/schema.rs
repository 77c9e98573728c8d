//! JSON schemas of the payloads the service accepts and returns, served at
//! `/schemas/{name}`.

use serde_json::{json, Value};

fn vec3() -> Value {
    json!({ "type": "array", "items": { "type": "number" }, "minItems": 3, "maxItems": 3 })
}

pub fn label() -> Value {
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "label",
        "type": "object",
        "required": ["cloud_id", "class", "center", "size", "yaw"],
        "additionalProperties": false,
        "properties": {
            "cloud_id": { "type": "string", "minLength": 1 },
            "class": { "const": "robot" },
            "center": vec3(),
            "size": { "type": "array", "items": { "type": "number", "exclusiveMinimum": 0 }, "minItems": 3, "maxItems": 3 },
            "yaw": { "type": "number" }
        }
    })
}

pub fn transform() -> Value {
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "transform",
        "type": "object",
        "required": ["rotation", "translation"],
        "properties": {
            "rotation": { "type": "array", "items": vec3(), "minItems": 3, "maxItems": 3 },
            "translation": vec3()
        }
    })
}

pub fn detection() -> Value {
    json!({
        "title": "detection",
        "type": "object",
        "required": ["box", "score", "inference_ms"],
        "properties": {
            "box": { "$ref": "/schemas/label" },
            "score": { "type": "number", "minimum": 0, "maximum": 1 },
            "inference_ms": { "type": "number", "minimum": 0 }
        }
    })
}

pub fn calibration() -> Value {
    json!({
        "title": "calibration",
        "type": "object",
        "required": ["ar_to_map", "robot_in_ar", "box", "score"],
        "properties": {
            "ar_to_map": { "$ref": "/schemas/transform" },
            "robot_in_ar": { "$ref": "/schemas/transform" },
            "box": { "$ref": "/schemas/label" },
            "score": { "type": "number" }
        }
    })
}

pub fn error() -> Value {
    json!({
        "title": "error",
        "type": "object",
        "required": ["error"],
        "properties": {
            "error": { "type": "string" },
            "offset": { "type": "integer" },
            "fields": { "type": "array", "items": { "type": "object", "required": ["field", "reason"] } }
        }
    })
}

pub fn by_name(name: &str) -> Option<Value> {
    Some(match name {
        "label" => label(),
        "transform" => transform(),
        "detection" => detection(),
        "calibration" => calibration(),
        "error" => error(),
        _ => return None,
    })
}
