//! Generator backends `L_m(e, s)`: the built-in DDIM surrogate with its toy
//! codec, and a client for remote model hosts.

pub mod codec;
pub mod ddim;
pub mod latent_file;
pub mod remote;
pub mod surrogate;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{PoaError, Result};
use crate::prf_seed::{self, MetaParams, Seed32};

pub use codec::ToyCodec;
pub use ddim::{ddim_step, make_schedule, Schedule};
pub use remote::RemoteBackend;
pub use surrogate::Surrogate;

macro_rules! tensor3 {
    ($name:ident) => {
        impl $name {
            pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
                let len: usize = shape.iter().product();
                if data.len() != len {
                    return Err(PoaError::ShapeMismatch {
                        expected: shape.to_vec(),
                        got: vec![data.len()],
                    });
                }
                if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
                    return Err(PoaError::Format(format!("non-finite value at index {bad}")));
                }
                Ok($name { shape, data })
            }

            pub fn zeros(shape: [usize; 3]) -> Self {
                $name {
                    shape,
                    data: vec![0.0; shape.iter().product()],
                }
            }

            pub fn shape(&self) -> [usize; 3] {
                self.shape
            }

            pub fn data(&self) -> &[f64] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [f64] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<f64> {
                self.data
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            /// SHA3-256 over the shape (LE32 each) and the f64 LE payload.
            pub fn digest(&self) -> [u8; 32] {
                let mut bytes = Vec::with_capacity(12 + 8 * self.data.len());
                for d in self.shape {
                    bytes.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in &self.data {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                prf_seed::sha3_256(&bytes)
            }

            pub fn l2_distance(&self, other: &Self) -> Result<f64> {
                if self.shape != other.shape {
                    return Err(PoaError::shape(&self.shape, &other.shape));
                }
                Ok(self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt())
            }
        }
    };
}

/// Row-major `[channels, height, width]` latent.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    shape: [usize; 3],
    data: Vec<f64>,
}

/// Row-major `[channels, height_px, width_px]` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    shape: [usize; 3],
    data: Vec<f64>,
}

tensor3!(Latent);
tensor3!(Image);

/// Prompt embedding, bound by digest. `expanded` is the surrogate's
/// conditioning vector, a pure function of the digest.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub digest: [u8; 32],
    pub expanded: Vec<f64>,
}

impl Embedding {
    pub const EXPANDED_LEN: usize = 64;

    pub fn from_digest(digest: [u8; 32]) -> Self {
        let mut expanded = vec![0.0; Self::EXPANDED_LEN];
        prf_seed::fill_gaussian(&Seed32(digest), 0, &mut expanded);
        Embedding { digest, expanded }
    }

    /// Stand-in for a text encoder: the digest of the tagged prompt text.
    pub fn from_prompt(prompt: &str) -> Self {
        let mut bytes = b"POA-prompt/1\0".to_vec();
        bytes.extend_from_slice(prompt.as_bytes());
        Self::from_digest(prf_seed::sha3_256(&bytes))
    }

    /// Embedding tensor serialization: LE32 ndim, LE32 dims, f32 LE row-major data.
    pub fn serialize_tensor(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(PoaError::ShapeMismatch {
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        let mut out = Vec::with_capacity(4 + 4 * shape.len() + 4 * data.len());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_tensor_bytes(bytes: &[u8]) -> Self {
        Self::from_digest(prf_seed::sha3_256(bytes))
    }
}

/// A realization of `L_m(e, s)` plus the image codec around it.
pub trait Backend: Send + Sync {
    /// Stable selector string, bound into adjudication seeds.
    fn selector(&self) -> String;

    /// Generates the latent whose starting point is `G(seed)`.
    fn generate(&self, m: &MetaParams, e_digest: &[u8; 32], seed: &Seed32) -> Result<Latent>;

    fn encode(&self, image: &Image, latent_shape: [usize; 3]) -> Result<Latent>;

    fn decode(&self, latent: &Latent) -> Result<Image>;
}

const SURROGATE_CACHE_LIMIT: usize = 32;

/// In-process backend: the DDIM surrogate plus the toy codec.
#[derive(Debug, Default)]
pub struct SurrogateBackend {
    pub codec: ToyCodec,
    cache: Mutex<HashMap<[u8; 32], Arc<Surrogate>>>,
}

impl SurrogateBackend {
    pub fn new(codec: ToyCodec) -> Self {
        SurrogateBackend {
            codec,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// The conditioned surrogate for `(m, e)`, built once and cached.
    pub fn surrogate(&self, m: &MetaParams, e_digest: &[u8; 32]) -> Result<Arc<Surrogate>> {
        let key = surrogate::conditioning_key(m, e_digest);
        if let Some(s) = self.cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(s));
        }
        let built = Arc::new(Surrogate::new(m, &Embedding::from_digest(*e_digest))?);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= SURROGATE_CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, Arc::clone(&built));
        Ok(built)
    }
}

impl Backend for SurrogateBackend {
    fn selector(&self) -> String {
        format!(
            "surrogate(upscale={},smoothing={})",
            self.codec.upscale, self.codec.smoothing
        )
    }

    fn generate(&self, m: &MetaParams, e_digest: &[u8; 32], seed: &Seed32) -> Result<Latent> {
        let surrogate = self.surrogate(m, e_digest)?;
        let mut start = vec![0.0; m.latent_len()];
        prf_seed::fill_gaussian(seed, 0, &mut start);
        surrogate.generate_from(start)
    }

    fn encode(&self, image: &Image, latent_shape: [usize; 3]) -> Result<Latent> {
        self.codec.encode(image, latent_shape)
    }

    fn decode(&self, latent: &Latent) -> Result<Image> {
        Ok(self.codec.decode(latent))
    }
}

/// The starting point `G(seed)` for a latent shape.
pub fn starting_point(seed: &Seed32, shape: [usize; 3]) -> Latent {
    let mut data = vec![0.0; shape.iter().product()];
    prf_seed::fill_gaussian(seed, 0, &mut data);
    Latent { shape, data }
}
