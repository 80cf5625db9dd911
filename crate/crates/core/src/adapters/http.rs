use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::{self, *};
use super::{
    with_retries, AdapterError, Classifier, ConceptProposer, Editor, EmbeddingVector, Grounder, Grounding,
    Limiter, TextEmbedder,
};
use crate::domain::{BinaryMask, ConceptLabel, ImageRecord, OperatorEndpoint, RgbImage, ScoreVector};

/// JSON-over-HTTP client for a remote operator server.
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
    max_retries: u32,
    limiter: Limiter,
}

impl HttpBackend {
    pub fn new(ep: &OperatorEndpoint) -> Result<Self, AdapterError> {
        ep.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(ep.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            base_url: ep.locator.trim_end_matches('/').to_string(),
            agent,
            max_retries: ep.max_retries,
            limiter: Limiter::new(ep.max_in_flight),
        })
    }

    fn post<Req: Serialize, Rep: DeserializeOwned>(&self, op: &str, req: &Req) -> Result<Rep, AdapterError> {
        let body = serde_json::to_string(req).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        let url = format!("{}/{op}", self.base_url);
        let _permit = self.limiter.acquire();
        let text = with_retries(self.max_retries, Duration::from_millis(50), || {
            let mut resp = self
                .agent
                .post(&url)
                .header("content-type", "application/json")
                .send(body.as_str())
                .map_err(|e| AdapterError::Transport(format!("POST {url}: {e}")))?;
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| AdapterError::Transport(format!("POST {url}: reading body: {e}")))?;
            match status {
                200..=299 => Ok(text),
                500..=599 => Err(AdapterError::Transport(format!("POST {url}: HTTP {status}"))),
                _ => match protocol::parse_reply::<serde_json::Value>(op, &text) {
                    Err(e @ AdapterError::Backend(_)) => Err(e),
                    _ => Err(AdapterError::Protocol(format!("POST {url}: HTTP {status}"))),
                },
            }
        })?;
        protocol::parse_reply(op, &text)
    }
}

impl ConceptProposer for HttpBackend {
    fn propose(&self, image: &ImageRecord) -> Result<Vec<String>, AdapterError> {
        let req = ImageRequest {
            image_png_b64: encode_image(image.pixels())?,
            image_id: Some(image.image_id().to_string()),
        };
        Ok(self.post::<_, ProposeReply>("propose", &req)?.concepts)
    }
}

impl Grounder for HttpBackend {
    fn ground(&self, image: &ImageRecord, concept: &ConceptLabel) -> Result<Grounding, AdapterError> {
        let req = GroundRequest {
            image_png_b64: encode_image(image.pixels())?,
            concept: concept.normalized_text.clone(),
            image_id: Some(image.image_id().to_string()),
        };
        self.post::<_, GroundReply>("ground", &req)?.into_grounding()
    }
}

impl Editor for HttpBackend {
    fn remove(&self, image: &ImageRecord, mask: &BinaryMask) -> Result<RgbImage, AdapterError> {
        let req = EditRequest {
            image_png_b64: encode_image(image.pixels())?,
            mask_png_b64: encode_mask(mask)?,
            image_id: Some(image.image_id().to_string()),
        };
        decode_image(&self.post::<_, EditReply>("edit", &req)?.image_png_b64)
    }
}

impl Classifier for HttpBackend {
    fn classify(&self, image: &ImageRecord) -> Result<ScoreVector, AdapterError> {
        let req = ImageRequest {
            image_png_b64: encode_image(image.pixels())?,
            image_id: Some(image.image_id().to_string()),
        };
        self.post::<_, ClassifyReply>("classify", &req)?.into_scores()
    }
}

impl TextEmbedder for HttpBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, AdapterError> {
        let req = EmbedRequest { text: text.to_string() };
        EmbeddingVector::new(self.post::<_, EmbedReply>("embed", &req)?.values)
    }
}
