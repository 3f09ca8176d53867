//! HTTP JSON clients for external embedding and generation services.
//!
//! An embedding service answers `POST {url}/embed` with
//! `{"kind": "text"|"image", "data": …}` and returns `{"vector": [...]}`;
//! image bytes travel base64-encoded. A model server answers
//! `POST {url}/txt2img` and `POST {url}/img2img` and returns the URI it wrote
//! the image to.

use std::time::Duration;

use base64::Engine as _;
use edgecache::config::{BackendKind, SystemConfig};
use edgecache::dispatch::{
    Generated, GenerationResponse, GeneratorBackend, Img2ImgRequest, PayloadData, Prompt, SimulatedGenerator,
    Txt2ImgRequest,
};
use edgecache::embedding::{EmbedKind, EmbedRequest, EmbedResponse, EmbedderBackend, Embedding, Modality};
use edgecache::pipeline::Backends;
use edgecache::store::CacheEntry;
use edgecache::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

const TIMEOUT: Duration = Duration::from_secs(120);

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(TIMEOUT))
        .build()
        .into()
}

fn post_json<B: Serialize, R: DeserializeOwned>(agent: &ureq::Agent, url: &str, body: &B) -> Result<R, String> {
    let mut resp = agent.post(url).send_json(body).map_err(|e| format!("{url}: {e}"))?;
    resp.body_mut().read_json::<R>().map_err(|e| format!("{url}: {e}"))
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{path}", base.trim_end_matches('/'))
}

/// Embedder backed by a remote service.
pub struct RemoteEmbedder {
    url: String,
    dim: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, dim: usize) -> Self {
        RemoteEmbedder {
            url: url.into(),
            dim,
            agent: agent(),
        }
    }

    fn embed(&self, kind: EmbedKind, data: String) -> Result<Embedding> {
        let resp: EmbedResponse = post_json(&self.agent, &endpoint(&self.url, "embed"), &EmbedRequest { kind, data })
            .map_err(Error::Embedder)?;
        resp.into_embedding(Modality::from(kind), self.dim)
    }
}

impl EmbedderBackend for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        self.embed(EmbedKind::Text, text.to_owned())
    }

    fn embed_image(&self, content: &[u8]) -> Result<Embedding> {
        self.embed(
            EmbedKind::Image,
            base64::engine::general_purpose::STANDARD.encode(content),
        )
    }
}

/// Generator backed by a remote model server.
///
/// The server stores the image itself. Without access to the pixels, the
/// new entry's image vector is the prompt embedding.
pub struct RemoteGenerator {
    url: String,
    seed: u64,
    agent: ureq::Agent,
}

impl RemoteGenerator {
    pub fn new(url: impl Into<String>, seed: u64) -> Self {
        RemoteGenerator {
            url: url.into(),
            seed,
            agent: agent(),
        }
    }

    fn finish(prompt: &Prompt, resp: GenerationResponse, steps: u32) -> Generated {
        Generated {
            payload: PayloadData::Stored(resp.payload_uri),
            image_vec: prompt.embedding.clone().retag(Modality::Image),
            steps_executed: steps,
        }
    }
}

impl GeneratorBackend for RemoteGenerator {
    fn text_to_image(&self, prompt: &Prompt, steps: u32) -> Result<Generated> {
        let body = Txt2ImgRequest {
            prompt: prompt.text.clone(),
            steps,
            seed: self.seed,
        };
        let resp =
            post_json(&self.agent, &endpoint(&self.url, "txt2img"), &body).map_err(|message| Error::Backend {
                context: "txt2img".into(),
                message,
            })?;
        Ok(Self::finish(prompt, resp, steps))
    }

    fn image_to_image(&self, prompt: &Prompt, reference: &CacheEntry, steps: u32) -> Result<Generated> {
        let body = Img2ImgRequest {
            prompt: prompt.text.clone(),
            reference_uri: reference.payload_uri.clone(),
            strength_steps: steps,
            seed: self.seed,
        };
        let resp =
            post_json(&self.agent, &endpoint(&self.url, "img2img"), &body).map_err(|message| Error::Backend {
                context: "img2img".into(),
                message,
            })?;
        Ok(Self::finish(prompt, resp, steps))
    }

    fn measures_wall_clock(&self) -> bool {
        true
    }
}

/// Local backends with any remote service named in the configuration
/// swapped in.
pub fn backends(config: &SystemConfig) -> Result<Backends> {
    let mut b = Backends::local(config)?;
    if config.embedder.backend == BackendKind::Remote {
        let url = config.embedder.url.clone().unwrap_or_default();
        b.embedder = Box::new(RemoteEmbedder::new(url, config.dim));
    }
    if config.generator.backend == BackendKind::Remote {
        let url = config.generator.url.clone().unwrap_or_default();
        b.generator = Box::new(RemoteGenerator::new(url, config.seed));
    } else if config.embedder.backend == BackendKind::Remote {
        // The simulated generator embeds its output locally; keep it in the
        // same space as the remote embedder by reusing the prompt vector.
        b.generator = Box::new(PromptVectorGenerator(SimulatedGenerator::new(
            config.hash_embedder(),
            config.seed,
            config.steps,
        )));
    }
    Ok(b)
}

/// Simulated generation whose image vectors are the prompt embedding, for use
/// alongside an embedder whose space the hash embedder does not share.
struct PromptVectorGenerator(SimulatedGenerator);

impl GeneratorBackend for PromptVectorGenerator {
    fn text_to_image(&self, prompt: &Prompt, steps: u32) -> Result<Generated> {
        let mut g = self.0.text_to_image(prompt, steps)?;
        g.image_vec = prompt.embedding.clone().retag(Modality::Image);
        Ok(g)
    }

    fn image_to_image(&self, prompt: &Prompt, reference: &CacheEntry, steps: u32) -> Result<Generated> {
        let mut g = self.0.image_to_image(prompt, reference, steps)?;
        g.image_vec = prompt.embedding.clone().retag(Modality::Image);
        Ok(g)
    }
}
