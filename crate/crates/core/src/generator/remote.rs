//! HTTP client for model hosts speaking the `poa/1` JSON protocol.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{PoaError, Result};
use crate::generator::{codec, latent_file, Backend, Image, Latent};
use crate::prf_seed::{MetaParams, Seed32};

pub const PROTO: &str = "poa/1";

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct RemoteInfo {
    pub latent_shape: [usize; 3],
    pub model_tag: String,
    pub proto: String,
}

#[derive(Clone, Debug)]
pub struct RemoteBackend {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(endpoint: &str) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(600))
            .build();
        RemoteBackend {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn info(&self) -> Result<RemoteInfo> {
        let resp = self
            .agent
            .get(&format!("{}/info", self.endpoint))
            .call()
            .map_err(map_ureq)?;
        let info: RemoteInfo = resp
            .into_json()
            .map_err(|e| PoaError::ProtocolVersionMismatch(format!("bad /info body: {e}")))?;
        if info.proto != PROTO {
            return Err(PoaError::ProtocolVersionMismatch(format!(
                "server speaks {}, client speaks {PROTO}",
                info.proto
            )));
        }
        Ok(info)
    }

    pub fn remote_generate(&self, m: &MetaParams, e_digest: &[u8; 32], seed: &Seed32) -> Result<Latent> {
        let body = json!({
            "proto": PROTO,
            "m": serde_json::to_value(m)?,
            "e_digest": hex::encode(e_digest),
            "seed": seed.to_hex(),
        });
        let latent = self.latent_call("generate", body)?;
        if latent.shape() != m.latent_shape {
            return Err(PoaError::shape(&m.latent_shape, &latent.shape()));
        }
        Ok(latent)
    }

    pub fn remote_encode(&self, png_bytes: &[u8]) -> Result<Latent> {
        self.latent_call("encode", json!({ "image_png_b64": B64.encode(png_bytes) }))
    }

    /// `kind` is `"jpeg"` (param = quality) or `"gauss"` (param = variance).
    pub fn remote_distort(&self, png_bytes: &[u8], kind: &str, param: f64) -> Result<Vec<u8>> {
        let body = json!({ "image_png_b64": B64.encode(png_bytes), "kind": kind, "param": param });
        let reply = self.post("distort", body)?;
        let text = reply
            .get("image_png_b64")
            .and_then(Value::as_str)
            .ok_or_else(|| PoaError::ProtocolVersionMismatch("reply lacks image_png_b64".into()))?;
        B64.decode(text)
            .map_err(|e| PoaError::ProtocolVersionMismatch(format!("bad base64: {e}")))
    }

    fn latent_call(&self, route: &str, body: Value) -> Result<Latent> {
        let reply = self.post(route, body)?;
        let text = reply
            .get("latent_b64")
            .and_then(Value::as_str)
            .ok_or_else(|| PoaError::ProtocolVersionMismatch("reply lacks latent_b64".into()))?;
        let bytes = B64
            .decode(text)
            .map_err(|e| PoaError::ProtocolVersionMismatch(format!("bad base64: {e}")))?;
        let (shape, data) = latent_file::from_bytes(&bytes)?;
        Latent::new(shape, data).map_err(|e| PoaError::ProtocolVersionMismatch(e.to_string()))
    }

    fn post(&self, route: &str, body: Value) -> Result<Value> {
        let resp = self
            .agent
            .post(&format!("{}/{route}", self.endpoint))
            .send_json(body)
            .map_err(map_ureq)?;
        resp.into_json()
            .map_err(|e| PoaError::ProtocolVersionMismatch(format!("bad /{route} body: {e}")))
    }
}

fn map_ureq(err: ureq::Error) -> PoaError {
    match err {
        ureq::Error::Status(code, resp) => {
            let text = resp.into_string().unwrap_or_default();
            let message = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                .unwrap_or(text);
            PoaError::BackendError(format!("HTTP {code}: {message}"))
        }
        ureq::Error::Transport(t) => PoaError::Transport(t.to_string()),
    }
}

impl Backend for RemoteBackend {
    fn selector(&self) -> String {
        format!("remote({})", self.endpoint)
    }

    fn generate(&self, m: &MetaParams, e_digest: &[u8; 32], seed: &Seed32) -> Result<Latent> {
        self.remote_generate(m, e_digest, seed)
    }

    /// Images travel as PNG with pixel values read on `[0, 1]`.
    fn encode(&self, image: &Image, latent_shape: [usize; 3]) -> Result<Latent> {
        let latent = self.remote_encode(&codec::image_to_png(image, 0.0, 1.0)?)?;
        if latent.shape() != latent_shape {
            return Err(PoaError::shape(&latent_shape, &latent.shape()));
        }
        Ok(latent)
    }

    fn decode(&self, _latent: &Latent) -> Result<Image> {
        Err(PoaError::BackendError(
            "the poa/1 protocol has no decode route".into(),
        ))
    }
}
