//! The `poa` command line.
//!
//! Exit codes: 0 accept (or success), 1 reject, 2 backend failure, 3 fit
//! failure, 4 usage or validation error.

use std::ffi::OsString;
use std::io::Write;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adjudicator::{self, AdjudicatorOptions, ClaimRequest, Contested};
use crate::error::PoaError;
use crate::forger_lab::{self, studies, InsecurePrf, PrfFamily};
use crate::generator::{codec, latent_file, Backend, Embedding, Latent, RemoteBackend, SurrogateBackend, ToyCodec};
use crate::prf_seed::{self, Identity, IdentityRegistry, Kappa, KappaArchive, KappaRecord, MetaParams, Seed32};
use crate::stats;
use crate::transforms::AffineParams;

pub const EXIT_ACCEPT: i32 = 0;
pub const EXIT_REJECT: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

pub const WORKSPACE_ENV: &str = "POA_WORKSPACE";
pub const DEFAULT_CONFIG: &str = "poa-workspace.json";

/// Value range used when images are stored as PNG.
pub const PNG_RANGE: (f64, f64) = studies::QUANT_RANGE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// `surrogate` or `remote`.
    pub selector: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_upscale")]
    pub upscale: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

fn default_upscale() -> usize {
    ToyCodec::default().upscale
}

fn default_smoothing() -> f64 {
    ToyCodec::default().smoothing
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            selector: "surrogate".into(),
            endpoint: None,
            upscale: default_upscale(),
            smoothing: default_smoothing(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    pub registry: PathBuf,
    pub archive: PathBuf,
    pub backend: BackendConfig,
    pub p_r: f64,
    /// Defaults to `p_r / 2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub delta: f64,
    pub latent_shape: [usize; 3],
    pub timesteps: u32,
    /// Worker threads for sampling; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        let m = MetaParams::default();
        WorkspaceConfig {
            registry: "registry.jsonl".into(),
            archive: "archive.jsonl".into(),
            backend: BackendConfig::default(),
            p_r: 2f64.powi(-50),
            alpha: None,
            delta: 1e-4,
            latent_shape: m.latent_shape,
            timesteps: m.timesteps,
            parallelism: None,
        }
    }
}

impl WorkspaceConfig {
    pub fn validate(&self) -> Result<(), PoaError> {
        if !(self.p_r > 0.0 && self.p_r < 1.0) {
            return Err(PoaError::DomainError(format!("p_r = {} outside (0, 1)", self.p_r)));
        }
        stats::required_samples(self.alpha(), self.delta)?;
        if self.parallelism == Some(0) {
            return Err(PoaError::DomainError("parallelism must be positive".into()));
        }
        self.meta().validate()?;
        match self.backend.selector.as_str() {
            "surrogate" => ToyCodec::new(self.backend.upscale, self.backend.smoothing).map(|_| ()),
            "remote" if self.backend.endpoint.is_some() => Ok(()),
            "remote" => Err(PoaError::DomainError("remote backend needs an endpoint".into())),
            other => Err(PoaError::DomainError(format!("unknown backend selector {other:?}"))),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.p_r / 2.0)
    }

    pub fn meta(&self) -> MetaParams {
        MetaParams::desk(self.latent_shape, self.timesteps)
    }

    pub fn options(&self) -> AdjudicatorOptions {
        match self.parallelism.and_then(NonZeroUsize::new) {
            Some(parallelism) => AdjudicatorOptions { parallelism },
            None => AdjudicatorOptions::default(),
        }
    }

    /// Loads `path`, resolving relative file paths against its directory.
    /// A missing file yields the defaults rooted at that directory.
    pub fn load(path: &Path) -> Result<Self, PoaError> {
        let mut config = match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => WorkspaceConfig::default(),
            Err(e) => return Err(e.into()),
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.registry = base.join(&config.registry);
        config.archive = base.join(&config.archive);
        config.validate()?;
        Ok(config)
    }

    pub fn to_canonical_json(&self) -> String {
        prf_seed::canonical_json(&serde_json::to_value(self).expect("config serializes"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "poa", version, about = "Proof-of-authorship for latent diffusion outputs")]
pub struct Cli {
    /// Workspace config file.
    #[arg(long, global = true, env = WORKSPACE_ENV)]
    pub workspace: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a default workspace config.
    Init {
        #[arg(long)]
        force: bool,
    },
    /// Register an author identity.
    Register(RegisterArgs),
    /// Generate a latent and archive its kappa.
    Generate(GenerateArgs),
    /// Claim authorship of a contested object.
    Contend(ContendArgs),
    /// Forger and evaluation experiments on the surrogate.
    #[command(subcommand)]
    Lab(LabCommand),
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub label: String,
    /// Use these 32 bytes (hex) instead of OS entropy.
    #[arg(long, value_name = "HEX")]
    pub entropy: Option<String>,
    /// Derive the entropy from this text instead of the OS.
    #[arg(long, conflicts_with = "entropy")]
    pub seed: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_name = "ID_HEX")]
    pub identity: String,
    /// Meta-parameter JSON file.
    #[arg(long = "m", value_name = "FILE")]
    pub m_file: PathBuf,
    #[arg(long, conflicts_with = "embedding", required_unless_present = "embedding")]
    pub prompt: Option<String>,
    /// Serialized embedding tensor; bound by its SHA3-256 digest.
    #[arg(long, value_name = "FILE")]
    pub embedding: Option<PathBuf>,
    /// Free bits (16 bytes hex); fresh OS randomness when absent.
    #[arg(long, value_name = "HEX")]
    pub r: Option<String>,
    /// Derive r from this text instead of the OS.
    #[arg(long, conflicts_with = "r")]
    pub seed: Option<String>,
    /// Output POAL file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the decoded image as a 16-bit PNG.
    #[arg(long, value_name = "FILE")]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContendArgs {
    /// A POAL latent or a PNG image.
    #[arg(long, value_name = "FILE")]
    pub contested: PathBuf,
    #[arg(long, value_name = "ID_HEX")]
    pub identity: String,
    /// Archived r (hex), a kappa JSON file, or inline kappa JSON.
    #[arg(long, value_name = "REF")]
    pub kappa: String,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "p-r", alias = "p_r")]
    pub p_r: Option<f64>,
    /// Affine alignment as inline JSON or a file path.
    #[arg(long, value_name = "JSON|FILE")]
    pub transform: Option<String>,
    /// Report output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Replay,
    RandomGuess,
    SwapEmbedding,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InsecureArg {
    XorPrefix,
    TruncatedTail,
}

impl From<InsecureArg> for InsecurePrf {
    fn from(a: InsecureArg) -> Self {
        match a {
            InsecureArg::XorPrefix => InsecurePrf::XorPrefix,
            InsecureArg::TruncatedTail => InsecurePrf::TruncatedTail,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistinguisherArg {
    Trivial,
    BitFrequency,
    Recompute,
}

#[derive(Debug, Args)]
pub struct LabCommon {
    /// Root seed text; every lab run is a function of it.
    #[arg(long, default_value = "poa-lab")]
    pub seed: String,
}

impl LabCommon {
    fn root(&self) -> Seed32 {
        text_seed("lab", &self.seed)
    }
}

#[derive(Debug, Subcommand)]
pub enum LabCommand {
    /// Success rate of fresh free bits against a genuine latent.
    RandomForger {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Similarity a forgery must reach; defaults to half the genuine self-score.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        common: LabCommon,
    },
    /// Forger advantage of a strategy.
    Advantage {
        #[arg(long, value_enum, default_value = "replay")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Broken PRF fixture; the bare flag picks one that ignores the key.
        #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "truncated-tail")]
        insecure_prf: Option<InsecureArg>,
        #[command(flatten)]
        common: LabCommon,
    },
    /// PRF indistinguishability game.
    PrfGame {
        #[arg(long, value_enum, default_value = "recompute")]
        distinguisher: DistinguisherArg,
        #[arg(long, default_value_t = 1000)]
        rounds: usize,
        #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "xor-prefix")]
        insecure_prf: Option<InsecureArg>,
        #[command(flatten)]
        common: LabCommon,
    },
    /// A2 detector on a clean and a backdoored surrogate.
    A2Detect {
        #[arg(long, default_value_t = 0.05)]
        rho: f64,
        #[arg(long, default_value_t = 2987)]
        n: usize,
        #[command(flatten)]
        common: LabCommon,
    },
    /// KS distance of the fitted null distribution per embedding.
    KsStudy {
        #[arg(long, default_value_t = 20)]
        embeddings: usize,
        #[arg(long, default_value_t = 332)]
        n: usize,
        #[command(flatten)]
        common: LabCommon,
    },
    /// Distance preservation between starting points and latents.
    DistanceStudy {
        #[arg(long, default_value_t = 100)]
        embeddings: usize,
        #[arg(long, default_value_t = 10)]
        pairs: usize,
        #[command(flatten)]
        common: LabCommon,
    },
    /// Sample sizes for alpha in {2^-10, 2^-30, 2^-50}.
    Table1 {
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
    },
    /// Distortion robustness and unrelated-claim rates.
    Table2 {
        #[arg(long, default_value_t = 100)]
        embeddings: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-10,-30,-50")]
        p_r_log2: Vec<i32>,
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        common: LabCommon,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Poa(PoaError),
}

impl From<PoaError> for CliError {
    fn from(e: PoaError) -> Self {
        CliError::Poa(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Poa(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Poa(e.into())
    }
}

pub fn exit_code(error: &PoaError) -> i32 {
    match error {
        PoaError::BackendError(_) | PoaError::Transport(_) | PoaError::ProtocolVersionMismatch(_) => EXIT_BACKEND,
        PoaError::FitError { .. } | PoaError::DegenerateSample | PoaError::NonConvergence { .. } => EXIT_FIT,
        _ => EXIT_USAGE,
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` and runs the command, writing results to `out` and
/// diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_ACCEPT };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Poa(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn config_path(cli: &Cli) -> PathBuf {
    cli.workspace.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG))
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    let path = config_path(&cli);
    if let Command::Init { force } = &cli.command {
        if path.exists() && !force {
            return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", path.display())));
        }
        let config = WorkspaceConfig::default();
        std::fs::write(&path, config.to_canonical_json() + "\n")?;
        writeln!(out, "{}", config.to_canonical_json())?;
        return Ok(EXIT_ACCEPT);
    }
    let config = WorkspaceConfig::load(&path)?;
    match cli.command {
        Command::Init { .. } => unreachable!(),
        Command::Register(a) => cmd_register(&config, a, out),
        Command::Generate(a) => cmd_generate(&config, a, out),
        Command::Contend(a) => cmd_contend(&config, a, out, err),
        Command::Lab(l) => cmd_lab(&config, l, out),
    }
}

fn text_seed(purpose: &str, text: &str) -> Seed32 {
    let mut bytes = b"POA-cli/".to_vec();
    bytes.extend_from_slice(purpose.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(text.as_bytes());
    Seed32(prf_seed::sha3_256(&bytes))
}

fn parse_hex<const N: usize>(what: &str, text: &str) -> CliResult<[u8; N]> {
    let bytes = hex::decode(text.trim()).map_err(|e| CliError::Usage(format!("{what}: {e}")))?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| CliError::Usage(format!("{what}: expected {N} bytes, got {}", b.len())))
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> CliResult<()> {
    let v = serde_json::to_value(value)?;
    writeln!(out, "{}", prf_seed::canonical_json(&v))?;
    Ok(())
}

fn build_backend(config: &WorkspaceConfig) -> CliResult<Box<dyn Backend>> {
    let b = &config.backend;
    Ok(match b.selector.as_str() {
        "remote" => Box::new(RemoteBackend::new(b.endpoint.as_deref().unwrap_or_default())),
        _ => Box::new(SurrogateBackend::new(ToyCodec::new(b.upscale, b.smoothing)?)),
    })
}

fn surrogate_only(config: &WorkspaceConfig) -> CliResult<SurrogateBackend> {
    let b = &config.backend;
    if b.selector != "surrogate" {
        return Err(PoaError::BackendError(format!("this study needs the surrogate backend, not {:?}", b.selector)).into());
    }
    Ok(SurrogateBackend::new(ToyCodec::new(b.upscale, b.smoothing)?))
}

fn registry(config: &WorkspaceConfig) -> CliResult<IdentityRegistry> {
    Ok(IdentityRegistry::open(&config.registry)?)
}

/// Exclusive advisory lock on `<path>.lock` for the lifetime of the guard.
struct FileLock(std::fs::File);

impl FileLock {
    fn acquire(path: &Path) -> CliResult<Self> {
        use fs2::FileExt;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut lock_path = path.as_os_str().to_owned();
        lock_path.push(".lock");
        let file = std::fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(PathBuf::from(lock_path))?;
        file.lock_exclusive()?;
        Ok(FileLock(file))
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = fs2::FileExt::unlock(&self.0);
    }
}

fn cmd_register(config: &WorkspaceConfig, a: RegisterArgs, out: &mut dyn Write) -> CliResult<i32> {
    let entropy = match (&a.entropy, &a.seed) {
        (Some(h), _) => parse_hex::<32>("--entropy", h)?,
        (None, Some(s)) => text_seed("entropy", s).0,
        (None, None) => prf_seed::os_entropy()?,
    };
    let _lock = FileLock::acquire(&config.registry)?;
    let identity = registry(config)?.register_identity(&a.label, entropy)?;
    emit(out, &identity)?;
    Ok(EXIT_ACCEPT)
}

fn load_meta(path: &Path) -> CliResult<MetaParams> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Usage(format!(
            "cannot read meta-parameter file {}: {e}\nhint: write one with e.g. {}",
            path.display(),
            MetaParams::default().canonical_json()
        ))
    })?;
    let m: MetaParams = serde_json::from_str(&text)?;
    m.validate()?;
    Ok(m)
}

#[derive(Serialize)]
struct GenerateSummary {
    identity: String,
    kappa: Kappa,
    seed_digest: String,
    latent_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_digest: Option<String>,
    out: String,
}

fn cmd_generate(config: &WorkspaceConfig, a: GenerateArgs, out: &mut dyn Write) -> CliResult<i32> {
    let m = load_meta(&a.m_file)?;
    let identity = registry(config)?.find_hex(&a.identity)?.clone();
    let (e_digest, e_ref) = match (&a.prompt, &a.embedding) {
        (Some(p), _) => (Embedding::from_prompt(p).digest, None),
        (None, Some(path)) => (
            Embedding::from_tensor_bytes(&std::fs::read(path)?).digest,
            Some(path.display().to_string()),
        ),
        (None, None) => return Err(CliError::Usage("one of --prompt or --embedding is required".into())),
    };
    let r: [u8; 16] = match (&a.r, &a.seed) {
        (Some(h), _) => parse_hex("--r", h)?,
        (None, Some(s)) => text_seed("r", s).0[..16].try_into().unwrap(),
        (None, None) => prf_seed::os_entropy()?,
    };
    let kappa = Kappa {
        e_ref,
        ..Kappa::new(m, e_digest, r)
    };
    let backend = build_backend(config)?;
    let seed = prf_seed::derive_seed(&identity, &kappa);
    let latent = backend.generate(&kappa.m, &kappa.e_digest, &seed)?;
    latent_file::write(&a.out, latent.shape(), latent.data())?;
    let image_digest = match &a.image {
        Some(path) => {
            let image = backend.decode(&latent)?;
            std::fs::write(path, codec::image_to_png(&image, PNG_RANGE.0, PNG_RANGE.1)?)?;
            Some(hex::encode(image.digest()))
        }
        None => None,
    };
    {
        let _lock = FileLock::acquire(&config.archive)?;
        KappaArchive::new(&config.archive).append(&KappaRecord::new(&identity, &kappa))?;
    }
    emit(
        out,
        &GenerateSummary {
            identity: identity.id_hex(),
            seed_digest: hex::encode(prf_seed::sha3_256(&seed.0)),
            latent_digest: hex::encode(latent.digest()),
            image_digest,
            out: a.out.display().to_string(),
            kappa,
        },
    )?;
    Ok(EXIT_ACCEPT)
}

/// Reads an affine transform from inline JSON or a file.
pub fn parse_transform(text: &str) -> Result<AffineParams, PoaError> {
    let trimmed = text.trim_start();
    let body = if trimmed.starts_with('{') {
        text.to_string()
    } else {
        std::fs::read_to_string(text)?
    };
    let t: AffineParams = serde_json::from_str(&body)?;
    t.validate()?;
    Ok(t)
}

fn resolve_kappa(config: &WorkspaceConfig, reference: &str, identity: &Identity) -> CliResult<Kappa> {
    let r = reference.trim();
    if r.len() == 32 && r.bytes().all(|b| b.is_ascii_hexdigit()) {
        let record = KappaArchive::new(&config.archive).lookup(r)?;
        if record.identity_id_hex != identity.id_hex() {
            return Err(CliError::Usage(format!(
                "archived kappa {r} belongs to identity {}, not {}",
                record.identity_id_hex,
                identity.id_hex()
            )));
        }
        return Ok(record.kappa()?);
    }
    let body = if r.starts_with('{') {
        r.to_string()
    } else {
        std::fs::read_to_string(r)?
    };
    let value: Value = serde_json::from_str(&body)?;
    if value.get("r_hex").is_some() {
        Ok(serde_json::from_value::<KappaRecord>(value)?.kappa()?)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

fn load_contested(path: &Path) -> CliResult<Contested> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(latent_file::MAGIC) {
        let (shape, data) = latent_file::from_bytes(&bytes)?;
        Ok(Contested::Latent(Latent::new(shape, data)?))
    } else if bytes.starts_with(b"\x89PNG") {
        Ok(Contested::Image(codec::png_to_image(&bytes, PNG_RANGE.0, PNG_RANGE.1)?))
    } else {
        Err(CliError::Usage(format!("{} is neither a POAL latent nor a PNG", path.display())))
    }
}

fn cmd_contend(config: &WorkspaceConfig, a: ContendArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    let p_r = a.p_r.unwrap_or(config.p_r);
    if !(p_r > 0.0 && p_r < 1.0) {
        return Err(CliError::Usage(format!("--p-r {p_r} outside (0, 1)")));
    }
    let alpha = a.alpha.or(config.alpha.filter(|_| a.p_r.is_none())).unwrap_or(p_r / 2.0);
    let delta = a.delta.unwrap_or(config.delta);
    let transform = a.transform.as_deref().map(parse_transform).transpose()?;
    let identity = registry(config)?.find_hex(&a.identity)?.clone();
    let kappa = resolve_kappa(config, &a.kappa, &identity)?;
    kappa.verify_embedding()?;
    let contested = load_contested(&a.contested)?;
    let backend = build_backend(config)?;
    let request = ClaimRequest {
        contested,
        identity,
        kappa,
        alpha,
        delta,
        transform,
        backend: backend.selector(),
    };
    let report = adjudicator::adjudicate(&request, backend.as_ref(), &config.options())?;
    std::fs::write(&a.out, report.to_canonical_json() + "\n")?;
    let verdict = adjudicator::judge(&report, p_r)?;
    if verdict.rationale.contains("warning") {
        writeln!(err, "warning: alpha = {alpha:e} differs from p_r/2")?;
    }
    emit(out, &verdict)?;
    Ok(if verdict.accept { EXIT_ACCEPT } else { EXIT_REJECT })
}

fn prf_family(arg: Option<InsecureArg>) -> PrfFamily {
    arg.map_or(PrfFamily::HMAC_SHA3, |k| PrfFamily::insecure(k.into()))
}

fn lab_identity(root: &Seed32, index: u64, label: &str) -> Identity {
    Identity {
        id_bytes: prf_seed::sub_seed(root, 0, index).0,
        label: label.into(),
        registered_at: 0,
    }
}

fn cmd_lab(config: &WorkspaceConfig, command: LabCommand, out: &mut dyn Write) -> CliResult<i32> {
    let m = config.meta();
    let options = config.options();
    match command {
        LabCommand::RandomForger { trials, threshold, common } => {
            let root = common.root();
            let backend = build_backend(config)?;
            let author = studies::study_author(&root);
            let forger = lab_identity(&root, 1, "forger");
            let kappa = Kappa::new(m, studies::study_embedding(&root, 0), [0; 16]);
            let contested = backend.generate(&kappa.m, &kappa.e_digest, &prf_seed::derive_seed(&author, &kappa))?;
            let threshold = match threshold {
                Some(t) => t,
                None => 0.5 * stats::similarity(&contested, &contested)?,
            };
            let rate = forger_lab::random_forger_success(&contested, &kappa, &forger, threshold, trials, backend.as_ref(), &root)?;
            emit(
                out,
                &json!({
                    "strategy": "random-forger",
                    "threshold": threshold,
                    "trials": rate.trials,
                    "successes": rate.successes,
                    "rate": rate.rate,
                    "stderr": rate.stderr,
                }),
            )?;
        }
        LabCommand::Advantage {
            strategy,
            trials,
            insecure_prf,
            common,
        } => {
            let root = common.root();
            let backend = build_backend(config)?;
            let author = studies::study_author(&root);
            let forger = lab_identity(&root, 1, "forger");
            let template = Kappa::new(m, studies::study_embedding(&root, 0), [0; 16]);
            let strategy: Box<dyn forger_lab::ForgerStrategy> = match strategy {
                StrategyArg::Replay => Box::new(forger_lab::ReplayKappa),
                StrategyArg::RandomGuess => Box::new(forger_lab::RandomGuess),
                StrategyArg::SwapEmbedding => Box::new(forger_lab::SwapEmbedding {
                    e_digest: studies::study_embedding(&root, 1),
                }),
            };
            let estimate = forger_lab::estimate_advantage(
                strategy.as_ref(),
                &author,
                &template,
                &forger,
                trials,
                backend.as_ref(),
                prf_family(insecure_prf),
                &root,
            )?;
            emit(out, &estimate)?;
        }
        LabCommand::PrfGame {
            distinguisher,
            rounds,
            insecure_prf,
            common,
        } => {
            let root = common.root();
            let identity = lab_identity(&root, 2, "game-author");
            let mut d: Box<dyn forger_lab::Distinguisher> = match distinguisher {
                DistinguisherArg::Trivial => Box::new(forger_lab::TrivialDistinguisher),
                DistinguisherArg::BitFrequency => Box::<forger_lab::BitFrequencyDistinguisher>::default(),
                DistinguisherArg::Recompute => Box::new(forger_lab::RecomputeDistinguisher),
            };
            let transcript = forger_lab::play_prf_game(
                d.as_mut(),
                prf_family(insecure_prf),
                &identity,
                &m,
                &studies::study_embedding(&root, 0),
                rounds,
                &root,
                None,
            )?;
            emit(out, &transcript)?;
        }
        LabCommand::A2Detect { rho, n, common } => {
            let root = common.root();
            let clean = surrogate_only(config)?;
            let author = studies::study_author(&root);
            let kappa = Kappa::new(m, studies::study_embedding(&root, 0), [0; 16]);
            let original = clean.generate(&kappa.m, &kappa.e_digest, &prf_seed::derive_seed(&author, &kappa))?;
            let backdoor = forger_lab::BackdoorBackend::new(surrogate_only(config)?, rho, original.clone())?;
            let sample_root = prf_seed::sub_seed(&root, 1, 0);
            let mut reports = Vec::new();
            for backend in [&clean as &dyn Backend, &backdoor] {
                let scores = adjudicator::null_scores(backend, &kappa, &original, &sample_root, n, None, options.parallelism)?;
                let fitted = stats::fit_gennorm(&scores)?;
                reports.push(forger_lab::detect_a2_violation(&scores, &fitted)?);
            }
            emit(
                out,
                &json!({ "rho": rho, "clean": reports[0], "backdoor": reports[1], "trigger": backdoor.trigger() }),
            )?;
        }
        LabCommand::KsStudy { embeddings, n, common } => {
            let backend = build_backend(config)?;
            emit(out, &studies::ks_study(embeddings, n, &m, backend.as_ref(), &common.root(), &options)?)?;
        }
        LabCommand::DistanceStudy { embeddings, pairs, common } => {
            let backend = surrogate_only(config)?;
            emit(out, &studies::distance_study(embeddings, pairs, &m, &backend, &common.root())?)?;
        }
        LabCommand::Table1 { delta } => {
            emit(out, &studies::table1(delta)?)?;
        }
        LabCommand::Table2 {
            embeddings,
            p_r_log2,
            delta,
            common,
        } => {
            let backend = build_backend(config)?;
            let table_config = studies::Table2Config {
                embeddings,
                p_r_log2,
                delta: delta.unwrap_or(config.delta),
                distortions: studies::Distortion::standard_set(),
                m,
            };
            emit(out, &studies::table2(&table_config, backend.as_ref(), &common.root(), &options)?)?;
        }
    }
    Ok(EXIT_ACCEPT)
}
