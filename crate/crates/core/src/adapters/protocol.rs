//! JSON wire format shared by the HTTP and subprocess transports.
//!
//! HTTP: `POST /<op>` with the request object as body. Subprocess: one
//! request object per line on stdin with an extra `"op"` field, one reply
//! object per line on stdout. Images and masks travel as base64 PNG.
//! Any reply may instead be `{"error": "..."}`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AdapterError, Backends, Grounding};
use crate::domain::{normalize_concept, BinaryMask, ImageRecord, MaskDimPolicy, RgbImage, ScoreVector};

pub const OPERATIONS: [&str; 5] = ["propose", "ground", "edit", "classify", "embed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub image_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRequest {
    pub image_png_b64: String,
    pub concept: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub image_png_b64: String,
    pub mask_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeReply {
    pub concepts: Vec<String>,
}

/// Either a mask, a list of instance masks (unioned on receipt) or
/// `failure: true`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundReply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_png_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks_png_b64: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReply {
    pub image_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReply {
    pub class_names: Vec<String>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReply {
    pub values: Vec<f64>,
}

pub fn encode_image(img: &RgbImage) -> Result<String, AdapterError> {
    Ok(STANDARD.encode(img.encode_png()?))
}

pub fn decode_image(b64: &str) -> Result<RgbImage, AdapterError> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| AdapterError::Protocol(format!("bad base64 image: {e}")))?;
    RgbImage::decode_png(&bytes).map_err(|e| AdapterError::Protocol(format!("bad image png: {e}")))
}

pub fn encode_mask(mask: &BinaryMask) -> Result<String, AdapterError> {
    Ok(STANDARD.encode(mask.encode_png()?))
}

pub fn decode_mask(b64: &str) -> Result<BinaryMask, AdapterError> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| AdapterError::Protocol(format!("bad base64 mask: {e}")))?;
    BinaryMask::decode_png(&bytes).map_err(|e| AdapterError::Protocol(format!("bad mask png: {e}")))
}

impl GroundReply {
    pub fn into_grounding(self) -> Result<Grounding, AdapterError> {
        if self.failure {
            return Ok(Grounding::Failure);
        }
        let mut masks = Vec::new();
        if let Some(m) = &self.mask_png_b64 {
            masks.push(decode_mask(m)?);
        }
        for m in self.masks_png_b64.iter().flatten() {
            masks.push(decode_mask(m)?);
        }
        let mut iter = masks.into_iter();
        let Some(first) = iter.next() else {
            return Err(AdapterError::Protocol("ground reply carries neither a mask nor failure".into()));
        };
        iter.try_fold(first, |acc, m| acc.union(&m))
            .map(Grounding::Mask)
            .map_err(|e| AdapterError::Protocol(format!("instance masks disagree in size: {e}")))
    }
}

impl ClassifyReply {
    pub fn into_scores(self) -> Result<ScoreVector, AdapterError> {
        ScoreVector::new(self.class_names, self.scores).map_err(|e| AdapterError::Protocol(e.to_string()))
    }
}

/// Parses a reply body, surfacing `{"error": ...}` as a backend error.
pub fn parse_reply<T: serde::de::DeserializeOwned>(op: &str, body: &str) -> Result<T, AdapterError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| AdapterError::Protocol(format!("{op}: reply is not JSON: {e}")))?;
    if let Some(err) = value.get("error") {
        return Err(AdapterError::Backend(format!("{op}: {}", err.as_str().unwrap_or(&err.to_string()))));
    }
    serde_json::from_value(value).map_err(|e| AdapterError::Protocol(format!("{op}: malformed reply: {e}")))
}

fn request_image(b64: &str, image_id: Option<&str>) -> Result<ImageRecord, AdapterError> {
    Ok(ImageRecord::new(image_id.unwrap_or("request"), decode_image(b64)?)?)
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("reply serializes")
}

/// Serves one request against `backends`. Errors become `{"error": ...}`.
pub fn dispatch(backends: &Backends, op: &str, body: Value) -> Value {
    match dispatch_inner(backends, op, body) {
        Ok(v) => v,
        Err(e) => serde_json::json!({ "error": e.to_string() }),
    }
}

fn dispatch_inner(backends: &Backends, op: &str, body: Value) -> Result<Value, AdapterError> {
    let bad = |e: serde_json::Error| AdapterError::Protocol(format!("{op}: malformed request: {e}"));
    match op {
        "propose" => {
            let req: ImageRequest = serde_json::from_value(body).map_err(bad)?;
            let img = request_image(&req.image_png_b64, req.image_id.as_deref())?;
            let concepts = backends.proposer.propose(&img)?;
            Ok(to_value(ProposeReply { concepts }))
        }
        "ground" => {
            let req: GroundRequest = serde_json::from_value(body).map_err(bad)?;
            let img = request_image(&req.image_png_b64, req.image_id.as_deref())?;
            let concept = normalize_concept(&req.concept)?;
            let reply = match backends.ground_concept(&img, &concept, MaskDimPolicy::Error)? {
                Grounding::Mask(m) => GroundReply {
                    mask_png_b64: Some(encode_mask(&m)?),
                    ..Default::default()
                },
                Grounding::Failure => GroundReply {
                    failure: true,
                    ..Default::default()
                },
            };
            Ok(to_value(reply))
        }
        "edit" => {
            let req: EditRequest = serde_json::from_value(body).map_err(bad)?;
            let img = request_image(&req.image_png_b64, req.image_id.as_deref())?;
            let mask = decode_mask(&req.mask_png_b64)?;
            let edited = backends.remove_region(&img, &mask)?;
            Ok(to_value(EditReply {
                image_png_b64: encode_image(edited.pixels())?,
            }))
        }
        "classify" => {
            let req: ImageRequest = serde_json::from_value(body).map_err(bad)?;
            let img = request_image(&req.image_png_b64, req.image_id.as_deref())?;
            let s = backends.classify(&img)?;
            Ok(to_value(ClassifyReply {
                class_names: s.class_names().to_vec(),
                scores: s.scores().to_vec(),
            }))
        }
        "embed" => {
            let req: EmbedRequest = serde_json::from_value(body).map_err(bad)?;
            let v = backends.embed_text(&req.text)?;
            Ok(to_value(EmbedReply {
                values: v.values().to_vec(),
            }))
        }
        other => Err(AdapterError::Protocol(format!(
            "unknown operation {other:?}; expected one of {OPERATIONS:?}"
        ))),
    }
}

/// Serves one subprocess-protocol line (`{"op": ..., ...}`).
pub fn dispatch_line(backends: &Backends, line: &str) -> String {
    let reply = match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(mut map)) => match map.remove("op") {
            Some(Value::String(op)) => dispatch(backends, &op, Value::Object(map)),
            _ => serde_json::json!({ "error": "request lacks a string \"op\" field" }),
        },
        Ok(_) => serde_json::json!({ "error": "request must be a JSON object" }),
        Err(e) => serde_json::json!({ "error": format!("request is not JSON: {e}") }),
    };
    reply.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_instance_masks_are_unioned() {
        let a = BinaryMask::from_fn(3, 3, |r, _| r == 0).unwrap();
        let b = BinaryMask::from_fn(3, 3, |_, c| c == 0).unwrap();
        let reply = GroundReply {
            masks_png_b64: Some(vec![encode_mask(&a).unwrap(), encode_mask(&b).unwrap()]),
            ..Default::default()
        };
        match reply.into_grounding().unwrap() {
            Grounding::Mask(m) => assert_eq!(m.count_ones(), 5),
            Grounding::Failure => panic!(),
        }
    }

    #[test]
    fn empty_ground_reply_is_a_protocol_error() {
        assert!(matches!(
            GroundReply::default().into_grounding(),
            Err(AdapterError::Protocol(_))
        ));
        let fail: GroundReply = serde_json::from_str(r#"{"failure":true}"#).unwrap();
        assert_eq!(fail.into_grounding().unwrap(), Grounding::Failure);
    }

    #[test]
    fn bad_scores_are_protocol_errors() {
        let r = ClassifyReply {
            class_names: vec!["a".into(), "b".into()],
            scores: vec![0.7, 0.7],
        };
        assert!(matches!(r.into_scores(), Err(AdapterError::Protocol(_))));
    }

    #[test]
    fn error_replies_surface_as_backend_errors() {
        let r: Result<ProposeReply, _> = parse_reply("propose", r#"{"error":"model not loaded"}"#);
        assert!(matches!(r, Err(AdapterError::Backend(m)) if m.contains("model not loaded")));
        let r: Result<ProposeReply, _> = parse_reply("propose", "not json");
        assert!(matches!(r, Err(AdapterError::Protocol(_))));
    }

    #[test]
    fn images_round_trip_through_base64_png() {
        let data = (0..4 * 5 * 3).map(|i| (i * 13 % 256) as u8).collect();
        let img = RgbImage::new(4, 5, data).unwrap();
        assert_eq!(decode_image(&encode_image(&img).unwrap()).unwrap(), img);
    }
}
