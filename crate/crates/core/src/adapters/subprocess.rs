use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::protocol::{self, *};
use super::{
    with_retries, AdapterError, Classifier, ConceptProposer, Editor, EmbeddingVector, Grounder, Grounding,
    TextEmbedder,
};
use crate::domain::{BinaryMask, ConceptLabel, ImageRecord, OperatorEndpoint, RgbImage, ScoreVector};

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Running {
    fn spawn(command: &str) -> Result<Self, AdapterError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AdapterError::Transport(format!("spawning {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Long-lived child process speaking newline-delimited JSON. Requests are
/// serialized; the process is respawned after a timeout or exit.
pub struct SubprocessBackend {
    command: String,
    timeout: Duration,
    max_retries: u32,
    process: Mutex<Option<Running>>,
}

impl SubprocessBackend {
    pub fn new(ep: &OperatorEndpoint) -> Result<Self, AdapterError> {
        ep.validate()?;
        Ok(SubprocessBackend {
            command: ep.locator.clone(),
            timeout: Duration::from_secs_f64(ep.timeout_secs),
            max_retries: ep.max_retries,
            process: Mutex::new(None),
        })
    }

    fn exchange(&self, line: &str) -> Result<String, AdapterError> {
        let mut guard = self.process.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Running::spawn(&self.command)?);
        }
        let proc = guard.as_mut().unwrap();
        let written = writeln!(proc.stdin, "{line}").and_then(|_| proc.stdin.flush());
        if let Err(e) = written {
            *guard = None;
            return Err(AdapterError::Transport(format!("writing to {:?}: {e}", self.command)));
        }
        match proc.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => {
                *guard = None;
                Err(AdapterError::Transport(format!("reading from {:?}: {e}", self.command)))
            }
            Err(RecvTimeoutError::Timeout) => {
                *guard = None;
                Err(AdapterError::Transport(format!(
                    "{:?} did not reply within {:?}",
                    self.command, self.timeout
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                *guard = None;
                Err(AdapterError::Transport(format!("{:?} exited", self.command)))
            }
        }
    }

    fn call<Req: Serialize, Rep: DeserializeOwned>(&self, op: &str, req: &Req) -> Result<Rep, AdapterError> {
        let mut value = serde_json::to_value(req).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        if let Value::Object(map) = &mut value {
            map.insert("op".into(), Value::String(op.into()));
        }
        let line = value.to_string();
        let reply = with_retries(self.max_retries, Duration::from_millis(50), || self.exchange(&line))?;
        protocol::parse_reply(op, &reply)
    }
}

impl ConceptProposer for SubprocessBackend {
    fn propose(&self, image: &ImageRecord) -> Result<Vec<String>, AdapterError> {
        let req = ImageRequest {
            image_png_b64: encode_image(image.pixels())?,
            image_id: Some(image.image_id().to_string()),
        };
        Ok(self.call::<_, ProposeReply>("propose", &req)?.concepts)
    }
}

impl Grounder for SubprocessBackend {
    fn ground(&self, image: &ImageRecord, concept: &ConceptLabel) -> Result<Grounding, AdapterError> {
        let req = GroundRequest {
            image_png_b64: encode_image(image.pixels())?,
            concept: concept.normalized_text.clone(),
            image_id: Some(image.image_id().to_string()),
        };
        self.call::<_, GroundReply>("ground", &req)?.into_grounding()
    }
}

impl Editor for SubprocessBackend {
    fn remove(&self, image: &ImageRecord, mask: &BinaryMask) -> Result<RgbImage, AdapterError> {
        let req = EditRequest {
            image_png_b64: encode_image(image.pixels())?,
            mask_png_b64: encode_mask(mask)?,
            image_id: Some(image.image_id().to_string()),
        };
        decode_image(&self.call::<_, EditReply>("edit", &req)?.image_png_b64)
    }
}

impl Classifier for SubprocessBackend {
    fn classify(&self, image: &ImageRecord) -> Result<ScoreVector, AdapterError> {
        let req = ImageRequest {
            image_png_b64: encode_image(image.pixels())?,
            image_id: Some(image.image_id().to_string()),
        };
        self.call::<_, ClassifyReply>("classify", &req)?.into_scores()
    }
}

impl TextEmbedder for SubprocessBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, AdapterError> {
        let req = EmbedRequest { text: text.to_string() };
        EmbeddingVector::new(self.call::<_, EmbedReply>("embed", &req)?.values)
    }
}
