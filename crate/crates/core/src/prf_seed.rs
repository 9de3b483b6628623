//! Binding of an author identity and generation parameters to a seed, and the
//! deterministic expansion of a seed into standard-normal starting points.
//!
//! The seed is `HMAC-SHA3-256(identity, canonical(kappa))`. Expansion runs a
//! counter-mode SHA3-256 keystream (`SHA3-256(seed || LE64(counter))`) through
//! Box–Muller. Every function here is pure.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use fs2::FileExt;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha3::{Digest, Sha3_256};

use crate::error::{PoaError, Result};
use crate::hexser;

/// Name of the keyed function used for seed derivation, echoed in reports.
pub const PRF_NAME: &str = "HMAC-SHA3-256";

const KAPPA_MAGIC: &[u8; 5] = b"POAv1";

/// Counter offset reserved for sub-stream `j`: sub-streams occupy disjoint
/// counter ranges `[j << 32, (j + 1) << 32)`.
pub const SUBSTREAM_SHIFT: u32 = 32;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed32(#[serde(with = "hexser")] pub [u8; 32]);

impl Seed32 {
    pub fn from_hex(text: &str) -> Result<Self> {
        hexser::decode_fixed(text).map(Seed32).map_err(PoaError::Format)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Seed32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed32({})", self.to_hex())
    }
}

impl fmt::Display for Seed32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A registered author. `id_bytes` is the PRF key; it is public.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    #[serde(rename = "id_hex", with = "hexser")]
    pub id_bytes: [u8; 32],
    pub label: String,
    /// Unix seconds.
    pub registered_at: u64,
}

impl Identity {
    pub fn id_hex(&self) -> String {
        hex::encode(self.id_bytes)
    }
}

/// Meta-parameters `m` of a generation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub scheduler: String,
    pub timesteps: u32,
    pub latent_shape: [usize; 3],
    pub model_tag: String,
    /// Any further model settings; bound into the seed like the named fields.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl MetaParams {
    pub fn desk(latent_shape: [usize; 3], timesteps: u32) -> Self {
        MetaParams {
            scheduler: "ddim".into(),
            timesteps,
            latent_shape,
            model_tag: "toy-ddim-surrogate".into(),
            extra: BTreeMap::new(),
        }
    }

    pub fn latent_len(&self) -> usize {
        self.latent_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(PoaError::DomainError("timesteps must be positive".into()));
        }
        if self.latent_shape.contains(&0) {
            return Err(PoaError::DomainError(format!(
                "latent shape {:?} has an empty dimension",
                self.latent_shape
            )));
        }
        Ok(())
    }

    /// Sorted-key, whitespace-free JSON text.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("meta params serialize to JSON");
        canonical_json(&value)
    }
}

impl Default for MetaParams {
    fn default() -> Self {
        MetaParams::desk([4, 16, 16], 10)
    }
}

/// Serializes a JSON value with object keys sorted lexicographically (by
/// UTF-8 bytes) and no insignificant whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string key"));
                out.push(':');
                write_canonical(v, out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        leaf => out.push_str(&serde_json::to_string(leaf).expect("leaf value")),
    }
}

/// Generation parameters `κ = ⟨m, e, r⟩`. The embedding is bound by digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub m: MetaParams,
    #[serde(with = "hexser")]
    pub e_digest: [u8; 32],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_ref: Option<String>,
    #[serde(with = "hexser")]
    pub r: [u8; 16],
}

impl Kappa {
    pub fn new(m: MetaParams, e_digest: [u8; 32], r: [u8; 16]) -> Self {
        Kappa {
            m,
            e_digest,
            e_ref: None,
            r,
        }
    }

    /// Checks `e_digest` against the referenced embedding file, if any.
    pub fn verify_embedding(&self) -> Result<()> {
        let Some(path) = &self.e_ref else {
            return Ok(());
        };
        let bytes = std::fs::read(path)?;
        let digest = sha3_256(&bytes);
        if digest != self.e_digest {
            return Err(PoaError::Format(format!(
                "embedding {path} hashes to {}, kappa records {}",
                hex::encode(digest),
                hex::encode(self.e_digest)
            )));
        }
        Ok(())
    }
}

/// `"POAv1" || LE32(len(m_json)) || m_json || e_digest || r`.
pub fn canonical_kappa_bytes(kappa: &Kappa) -> Vec<u8> {
    let m_json = kappa.m.canonical_json();
    let mut out = Vec::with_capacity(KAPPA_MAGIC.len() + 4 + m_json.len() + 48);
    out.extend_from_slice(KAPPA_MAGIC);
    out.extend_from_slice(&(m_json.len() as u32).to_le_bytes());
    out.extend_from_slice(m_json.as_bytes());
    out.extend_from_slice(&kappa.e_digest);
    out.extend_from_slice(&kappa.r);
    out
}

pub fn sha3_256(bytes: &[u8]) -> [u8; 32] {
    Sha3_256::digest(bytes).into()
}

pub fn hmac_sha3_256(key: &[u8], message: &[u8]) -> [u8; 32] {
    let mut mac = <Hmac<Sha3_256> as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().into()
}

pub fn derive_seed(identity: &Identity, kappa: &Kappa) -> Seed32 {
    Seed32(hmac_sha3_256(&identity.id_bytes, &canonical_kappa_bytes(kappa)))
}

/// `SHA3-256(seed || LE64(counter))`.
pub fn expand_block(seed: &Seed32, counter: u64) -> [u8; 32] {
    let mut h = Sha3_256::new();
    h.update(seed.0);
    h.update(counter.to_le_bytes());
    h.finalize().into()
}

/// Derives an independent seed from `seed` for the given domain and index.
pub fn sub_seed(seed: &Seed32, domain: u64, index: u64) -> Seed32 {
    Seed32(expand_block(seed, domain | index))
}

#[inline]
fn word_to_open01(w: u64) -> f64 {
    ((w >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

#[inline]
fn block_words(block: &[u8; 32]) -> [u64; 4] {
    let mut words = [0u64; 4];
    for (w, chunk) in words.iter_mut().zip(block.chunks_exact(8)) {
        *w = u64::from_le_bytes(chunk.try_into().unwrap());
    }
    words
}

#[inline]
fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (radius * c, radius * s)
}

/// Fills `out` with uniforms in (0, 1) from the keystream starting at `first_counter`.
pub fn fill_uniform(seed: &Seed32, first_counter: u64, out: &mut [f64]) {
    let mut counter = first_counter;
    for chunk in out.chunks_mut(4) {
        let words = block_words(&expand_block(seed, counter));
        counter = counter.wrapping_add(1);
        for (o, w) in chunk.iter_mut().zip(words) {
            *o = word_to_open01(w);
        }
    }
}

/// Fills `out` with standard normals from the keystream starting at `first_counter`.
pub fn fill_gaussian(seed: &Seed32, first_counter: u64, out: &mut [f64]) {
    let mut counter = first_counter;
    for chunk in out.chunks_mut(4) {
        let w = block_words(&expand_block(seed, counter));
        counter = counter.wrapping_add(1);
        let (a, b) = box_muller(word_to_open01(w[0]), word_to_open01(w[1]));
        let (c, d) = box_muller(word_to_open01(w[2]), word_to_open01(w[3]));
        for (o, z) in chunk.iter_mut().zip([a, b, c, d]) {
            *o = z;
        }
    }
}

/// The first `count` standard normals of the seed's keystream.
pub fn sample_gaussian(seed: &Seed32, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(PoaError::DomainError("count must be at least 1".into()));
    }
    let mut out = vec![0.0; count];
    fill_gaussian(seed, 0, &mut out);
    Ok(out)
}

/// Normals from sub-stream `stream`, i.e. the counter range starting at
/// `stream << 32`. Sub-streams never overlap for fewer than 2^34 values.
pub fn sample_gaussian_substream(seed: &Seed32, stream: u32, count: usize) -> Vec<f64> {
    let mut out = vec![0.0; count];
    fill_gaussian(seed, (stream as u64) << SUBSTREAM_SHIFT, &mut out);
    out
}

/// Unbounded iterator over a seed's standard-normal keystream.
#[derive(Clone, Debug)]
pub struct GaussianStream {
    seed: Seed32,
    counter: u64,
    buf: [f64; 4],
    pos: usize,
}

impl GaussianStream {
    pub fn new(seed: Seed32) -> Self {
        GaussianStream {
            seed,
            counter: 0,
            buf: [0.0; 4],
            pos: 4,
        }
    }
}

impl Iterator for GaussianStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.pos == 4 {
            fill_gaussian(&self.seed, self.counter, &mut self.buf);
            self.counter = self.counter.wrapping_add(1);
            self.pos = 0;
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        Some(v)
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn os_entropy<const N: usize>() -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    getrandom::getrandom(&mut buf).map_err(|e| PoaError::Io(std::io::Error::other(e)))?;
    Ok(buf)
}

/// Append-only identity registry, optionally backed by a JSON-lines file.
#[derive(Debug, Default)]
pub struct IdentityRegistry {
    path: Option<PathBuf>,
    entries: Vec<Identity>,
}

impl IdentityRegistry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads the registry at `path`; a missing file is an empty registry.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = read_jsonl(&path)?;
        Ok(IdentityRegistry {
            path: Some(path),
            entries,
        })
    }

    pub fn entries(&self) -> &[Identity] {
        &self.entries
    }

    pub fn find(&self, id_bytes: &[u8; 32]) -> Option<&Identity> {
        self.entries.iter().find(|i| &i.id_bytes == id_bytes)
    }

    pub fn find_hex(&self, id_hex: &str) -> Result<&Identity> {
        let id: [u8; 32] = hexser::decode_fixed(id_hex).map_err(PoaError::Format)?;
        self.find(&id)
            .ok_or_else(|| PoaError::UnknownIdentity(id_hex.to_string()))
    }

    pub fn register_identity(&mut self, label: &str, entropy: [u8; 32]) -> Result<Identity> {
        self.register_at(label, entropy, now_unix())
    }

    pub fn register_at(&mut self, label: &str, entropy: [u8; 32], registered_at: u64) -> Result<Identity> {
        if self.find(&entropy).is_some() {
            return Err(PoaError::DuplicateIdentity(hex::encode(entropy)));
        }
        let identity = Identity {
            id_bytes: entropy,
            label: label.to_string(),
            registered_at,
        };
        if let Some(path) = &self.path {
            // Another writer may have appended since we loaded.
            let on_disk: Vec<Identity> = read_jsonl(path)?;
            if on_disk.iter().any(|i| i.id_bytes == entropy) {
                return Err(PoaError::DuplicateIdentity(hex::encode(entropy)));
            }
            append_jsonl(path, &identity)?;
        }
        self.entries.push(identity.clone());
        Ok(identity)
    }
}

/// One archived generation: the kappa plus the identity that used it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaRecord {
    pub identity_id_hex: String,
    pub m: MetaParams,
    pub e_digest_hex: String,
    pub e_ref: Option<String>,
    pub r_hex: String,
    pub created_at: u64,
}

impl KappaRecord {
    pub fn new(identity: &Identity, kappa: &Kappa) -> Self {
        KappaRecord {
            identity_id_hex: identity.id_hex(),
            m: kappa.m.clone(),
            e_digest_hex: hex::encode(kappa.e_digest),
            e_ref: kappa.e_ref.clone(),
            r_hex: hex::encode(kappa.r),
            created_at: now_unix(),
        }
    }

    pub fn kappa(&self) -> Result<Kappa> {
        Ok(Kappa {
            m: self.m.clone(),
            e_digest: hexser::decode_fixed(&self.e_digest_hex).map_err(PoaError::Format)?,
            e_ref: self.e_ref.clone(),
            r: hexser::decode_fixed(&self.r_hex).map_err(PoaError::Format)?,
        })
    }
}

/// Append-only JSON-lines archive of generation parameters.
#[derive(Debug)]
pub struct KappaArchive {
    path: PathBuf,
}

impl KappaArchive {
    pub fn new(path: impl AsRef<Path>) -> Self {
        KappaArchive {
            path: path.as_ref().to_path_buf(),
        }
    }

    pub fn append(&self, record: &KappaRecord) -> Result<()> {
        append_jsonl(&self.path, record)
    }

    pub fn records(&self) -> Result<Vec<KappaRecord>> {
        read_jsonl(&self.path)
    }

    /// Finds the record whose `r_hex` matches; the free bits identify a generation.
    pub fn lookup(&self, r_hex: &str) -> Result<KappaRecord> {
        let wanted = r_hex.trim().to_ascii_lowercase();
        self.records()?
            .into_iter()
            .rev()
            .find(|r| r.r_hex == wanted)
            .ok_or_else(|| PoaError::Format(format!("no archived kappa with r = {wanted}")))
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    let value = serde_json::to_value(record)?;
    let mut line = canonical_json(&value);
    line.push('\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.lock_exclusive()?;
    let res = file.write_all(line.as_bytes()).and_then(|_| file.flush());
    let _ = FileExt::unlock(&file);
    res.map_err(Into::into)
}
