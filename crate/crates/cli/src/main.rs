//! `etcimg`: command-line front end for the EtC image toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 codec error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use etcimg_core::codec::{
    builtin_profiles, default_codec, parse_profiles, provider_recompress, rd_curve, CodecParams, Subsampling,
};
use etcimg_core::keyschedule::keyspace_bits;
use etcimg_core::learnable::{
    classify, enroll, extract_template, protect_templates, read_model_csv, read_templates_csv, synthetic_clusters,
    synthetic_symmetric_pair, write_model_csv, write_templates_csv, ProtectedTemplate, Template,
};
use etcimg_core::pixelcore::{load_ppm, save_ppm, BlockGrid, ImageBuffer};
use etcimg_core::puzzle::{greedy_assemble, score_assembly, Assembly, AttackReport, Puzzle};
use etcimg_core::{decrypt, encrypt, encrypt_padded, CipherConfig, CipherSidecar, Error, MasterKey, Scheme, Steps};

/// Shown by `--version`; the number in parentheses is the sidecar format.
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (sidecar format 1)");

#[derive(Parser)]
#[command(name = "etcimg", version = VERSION, about = "Compressible block-scrambling image encryption toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encrypt a PPM/PGM image; writes the ciphertext and a sidecar.
    Encrypt(EncryptArgs),
    /// Decrypt a ciphertext with its sidecar.
    Decrypt(DecryptArgs),
    /// Rate-distortion curves of the plain and encrypted JPEG paths (CSV).
    RdCurve(RdCurveArgs),
    /// Jigsaw-puzzle attack on a ciphertext, scored against the key (CSV).
    Attack(AttackArgs),
    /// Number of blocks and key-space size in bits.
    Keyspace(KeyspaceArgs),
    /// JPEG-encode a PPM/PGM image.
    Compress(CompressArgs),
    /// Decode a JPEG to PPM/PGM.
    Decompress(InOut),
    /// Re-encode a JPEG the way a sharing service would.
    Recompress(RecompressArgs),
    /// Block-mean feature templates from images (CSV).
    Extract(ExtractArgs),
    /// Synthetic labelled templates (CSV).
    SynthTemplates(SynthArgs),
    /// Protect templates with a client key (CSV).
    Protect(ProtectArgs),
    /// Fit a nearest-centroid model on protected templates (CSV).
    Enroll(EnrollArgs),
    /// Classify protected query templates against a model (CSV).
    Classify(ClassifyArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct KeyArgs {
    /// Master key as 16 hex digits.
    #[arg(long, value_parser = parse_key)]
    key: Option<MasterKey>,
    /// File holding the master key.
    #[arg(long)]
    key_file: Option<PathBuf>,
}

#[derive(Args)]
struct CipherArgs {
    #[arg(long, default_value = "color", value_parser = parse_scheme)]
    scheme: Scheme,
    /// Block size; 16 for color, 8 for grayscale-based by default.
    #[arg(long)]
    block_size: Option<usize>,
    /// Enabled steps as a subset of s,r,n,c (scramble, rotate/flip,
    /// negative-positive, color shuffle); empty disables encryption.
    #[arg(long, value_parser = parse_steps)]
    steps: Option<Steps>,
}

impl CipherArgs {
    fn config(&self) -> CipherConfig {
        let mut cfg = match self.scheme {
            Scheme::Color => CipherConfig::color(),
            Scheme::GrayscaleBased => CipherConfig::grayscale(),
        };
        if let Some(b) = self.block_size {
            cfg = cfg.with_block_size(b);
        }
        if let Some(s) = self.steps {
            cfg = cfg.with_steps(s);
        }
        cfg
    }
}

#[derive(Args)]
struct EncryptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Sidecar path; defaults to `<output>.sidecar`.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[command(flatten)]
    key: KeyArgs,
    #[command(flatten)]
    cipher: CipherArgs,
    /// Edge-replicate the image up to a multiple of the block size.
    #[arg(long)]
    pad: bool,
    /// Encrypt with a key derived from the master key and this image id.
    #[arg(long, value_name = "ID")]
    per_image_key: Option<String>,
}

#[derive(Args)]
struct DecryptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Sidecar path; defaults to `<input>.sidecar`.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[command(flatten)]
    key: KeyArgs,
}

#[derive(Args)]
struct RdCurveArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    key: KeyArgs,
    #[command(flatten)]
    cipher: CipherArgs,
    #[arg(long, value_delimiter = ',', default_value = "50,70,85,95")]
    qualities: Vec<u8>,
    #[arg(long, default_value = "420", value_parser = parse_subsampling)]
    subsampling: Subsampling,
    #[arg(long)]
    progressive: bool,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    /// Greedy border-matching reassembly.
    Greedy,
    /// The true arrangement (scoring sanity check).
    Identity,
}

#[derive(Args)]
struct AttackArgs {
    /// Ciphertext image.
    #[arg(long)]
    cipher: PathBuf,
    /// Sidecar of the ciphertext; defaults to `<cipher>.sidecar`.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Key used for encryption; only needed for scoring.
    #[command(flatten)]
    key: KeyArgs,
    /// Let the solver try all 8 orientations of every piece.
    #[arg(long)]
    orientation_search: bool,
    #[arg(long, value_enum, default_value = "greedy")]
    solver: Solver,
    /// Pass the ciphertext through 4:2:0 JPEG at this quality first.
    #[arg(long)]
    jpeg_quality: Option<u8>,
    /// Write the assembled image here.
    #[arg(long)]
    assembled: Option<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct KeyspaceArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[command(flatten)]
    cipher: CipherArgs,
    /// Channels of the plain image (grayscale-based scheme only).
    #[arg(long, default_value_t = 3)]
    channels: usize,
}

#[derive(Args)]
struct InOut {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    io: InOut,
    #[arg(long, default_value_t = 85)]
    quality: u8,
    #[arg(long, default_value = "420", value_parser = parse_subsampling)]
    subsampling: Subsampling,
    #[arg(long)]
    progressive: bool,
}

#[derive(Args)]
struct RecompressArgs {
    #[command(flatten)]
    io: InOut,
    /// Profile name (built in: sns-a, sns-b, photo-store).
    #[arg(long)]
    profile: String,
    /// Extra profiles, CSV lines `name,quality,subsampling`.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    generations: u32,
}

#[derive(Args)]
struct ExtractArgs {
    /// Input images; one template row per image.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    client_id: u64,
    #[arg(long)]
    label: Option<u32>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    classes: u32,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Scale of the random class centres.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Two classes mirrored through the origin at distance `separation`.
    #[arg(long)]
    symmetric: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ProtectArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    key: KeyArgs,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EnrollArgs {
    /// Protected template files.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Protected query templates.
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_key(s: &str) -> Result<MasterKey, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_steps(s: &str) -> Result<Steps, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_subsampling(s: &str) -> Result<Subsampling, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_codec() {
            3
        } else if matches!(e, Error::Config(_)) {
            1
        } else {
            2
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or stdout when `None`.
fn emit(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_image(path: &Path) -> CliResult<ImageBuffer> {
    load_ppm(&read(path)?).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn sidecar_path(explicit: Option<&PathBuf>, image: &Path) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| {
        let mut s = image.as_os_str().to_owned();
        s.push(".sidecar");
        PathBuf::from(s)
    })
}

fn load_sidecar(path: &Path) -> CliResult<CipherSidecar> {
    CipherSidecar::parse(&read_text(path)?).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

impl KeyArgs {
    fn resolve(&self) -> CliResult<MasterKey> {
        match (&self.key, &self.key_file) {
            (Some(k), _) => Ok(*k),
            (None, Some(path)) => MasterKey::from_key_file(&read_text(path)?)
                .map_err(|e| Failure::data(format!("{}: {e}", path.display()))),
            (None, None) => Err(Failure::usage("a key is required (--key or --key-file)")),
        }
    }
}

/// The key a ciphertext was made with: per-image when the sidecar names an id.
fn image_key(master: MasterKey, sidecar: &CipherSidecar) -> MasterKey {
    match &sidecar.key_id {
        Some(id) => master.derive_for_image(id),
        None => master,
    }
}

fn cmd_encrypt(a: &EncryptArgs) -> CliResult {
    let img = load_image(&a.input)?;
    let master = a.key.resolve()?;
    let cfg = a.cipher.config();
    let key = match &a.per_image_key {
        Some(id) if id.is_empty() || id.contains(['\n', '\r']) => {
            return Err(Failure::usage("--per-image-key needs a single-line, non-empty id"))
        }
        Some(id) => master.derive_for_image(id),
        None => master,
    };
    let (cipher, mut sidecar) = if a.pad { encrypt_padded(&img, key, &cfg)? } else { encrypt(&img, key, &cfg)? };
    sidecar.key_id = a.per_image_key.clone();
    write(&a.output, &save_ppm(&cipher))?;
    write(&sidecar_path(a.sidecar.as_ref(), &a.output), sidecar.to_text().as_bytes())
}

fn cmd_decrypt(a: &DecryptArgs) -> CliResult {
    let cipher = load_image(&a.input)?;
    let sidecar = load_sidecar(&sidecar_path(a.sidecar.as_ref(), &a.input))?;
    let key = image_key(a.key.resolve()?, &sidecar);
    let plain = decrypt(&cipher, key, &sidecar)?;
    write(&a.output, &save_ppm(&plain))
}

fn cmd_rd_curve(a: &RdCurveArgs) -> CliResult {
    if a.qualities.is_empty() {
        return Err(Failure::usage("--qualities must list at least one value"));
    }
    let img = load_image(&a.input)?;
    let key = a.key.resolve()?;
    let codec = default_codec()?;
    let params = CodecParams::new(50, a.subsampling)
        .map_err(|e| Failure::usage(e.to_string()))?
        .progressive(a.progressive);
    for &q in &a.qualities {
        params.with_quality(q).map_err(|e| Failure::usage(e.to_string()))?;
    }
    let curves = rd_curve(codec, &img, key, &a.cipher.config(), &a.qualities, &params)?;
    emit(a.output.as_deref(), &curves.to_csv())
}

fn cmd_attack(a: &AttackArgs) -> CliResult {
    let mut cipher = load_image(&a.cipher)?;
    let sidecar = load_sidecar(&sidecar_path(a.sidecar.as_ref(), &a.cipher))?;
    let key = image_key(a.key.resolve()?, &sidecar);
    let cfg = sidecar.config();
    let (pw, ph) = (sidecar.padded_width(), sidecar.padded_height());
    let expected_h = match sidecar.scheme {
        Scheme::Color => ph,
        Scheme::GrayscaleBased => cipher.height(),
    };
    if cipher.width() != pw
        || cipher.height() != expected_h
        || (sidecar.scheme == Scheme::GrayscaleBased && cipher.height() != ph && cipher.height() != 3 * ph)
    {
        return Err(Failure::data(format!(
            "{}x{} ciphertext does not match the sidecar's {pw}x{ph} grid",
            cipher.width(),
            cipher.height()
        )));
    }
    if let Some(q) = a.jpeg_quality {
        let params = CodecParams::new(q, Subsampling::S420).map_err(|e| Failure::usage(e.to_string()))?;
        cipher = etcimg_core::codec::jpeg_roundtrip(default_codec()?, &cipher, &params)?.0;
    }
    let start = Instant::now();
    let puzzle = Puzzle::from_ciphertext(&cipher, key, &cfg)?;
    let assembly = match a.solver {
        Solver::Greedy => greedy_assemble(&puzzle, a.orientation_search),
        Solver::Identity => {
            let grid = puzzle.grid();
            Assembly::new(grid.rows, grid.cols, puzzle.ground_truth().expect("attached").to_vec())?
        }
    };
    let metrics = score_assembly(&assembly, &puzzle)?;
    let report = AttackReport {
        steps: cfg.steps,
        block_size: cfg.block_size,
        n_pieces: puzzle.len(),
        metrics,
        seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(path) = &a.assembled {
        write(path, &save_ppm(&puzzle.render(&assembly)?))?;
    }
    emit(a.output.as_deref(), &format!("{}\n{}\n", AttackReport::CSV_HEADER, report.csv_row()))
}

fn cmd_keyspace(a: &KeyspaceArgs) -> CliResult {
    let cfg = a.cipher.config();
    if a.width == 0 || a.height == 0 || cfg.block_size == 0 {
        return Err(Failure::usage("width, height and block size must be positive"));
    }
    let channels = match cfg.scheme {
        Scheme::Color => 3,
        Scheme::GrayscaleBased if matches!(a.channels, 1 | 3) => a.channels,
        Scheme::GrayscaleBased => return Err(Failure::usage("--channels must be 1 or 3")),
    };
    cfg.validate(channels)?;
    // Geometry after edge padding; stacked planes for the grayscale-based scheme.
    let (w, h) = (a.width.div_ceil(cfg.block_size) * cfg.block_size, a.height.div_ceil(cfg.block_size) * cfg.block_size);
    let h = if cfg.scheme == Scheme::GrayscaleBased { h * channels } else { h };
    let grid = BlockGrid::for_dimensions(w, h, cfg.block_size)?;
    let bits = keyspace_bits(grid.len() as u64, cfg.steps, cfg.scheme)?;
    emit(None, &format!("n_blocks,keyspace_bits\n{},{bits:.6}\n", grid.len()))
}

fn cmd_compress(a: &CompressArgs) -> CliResult {
    let img = load_image(&a.io.input)?;
    let params = CodecParams::new(a.quality, a.subsampling)
        .map_err(|e| Failure::usage(e.to_string()))?
        .progressive(a.progressive);
    write(&a.io.output, &default_codec()?.encode(&img, &params)?)
}

fn cmd_decompress(a: &InOut) -> CliResult {
    let img = default_codec()?.decode(&read(&a.input)?)?;
    write(&a.output, &save_ppm(&img))
}

fn cmd_recompress(a: &RecompressArgs) -> CliResult {
    let mut profiles = builtin_profiles();
    if let Some(path) = &a.profiles {
        profiles.extend(parse_profiles(&read_text(path)?)?);
    }
    let profile = profiles
        .iter()
        .rev()
        .find(|p| p.name == a.profile)
        .ok_or_else(|| Failure::usage(format!("unknown profile {:?}", a.profile)))?;
    let codec = default_codec()?;
    let mut bytes = read(&a.io.input)?;
    for _ in 0..a.generations {
        bytes = provider_recompress(codec, &bytes, profile)?;
    }
    write(&a.io.output, &bytes)
}

fn cmd_extract(a: &ExtractArgs) -> CliResult {
    let templates = a
        .input
        .iter()
        .map(|path| {
            let mut t = extract_template(&load_image(path)?, a.dim)?;
            t.label = a.label;
            t.client_id = a.client_id;
            Ok(t)
        })
        .collect::<CliResult<Vec<Template>>>()?;
    emit(a.output.as_deref(), &write_templates_csv(&templates)?)
}

fn cmd_synth(a: &SynthArgs) -> CliResult {
    if a.dim == 0 || a.per_class == 0 || !a.separation.is_finite() {
        return Err(Failure::usage("--dim and --per-class must be positive and --separation finite"));
    }
    let data = if a.symmetric {
        synthetic_symmetric_pair(a.seed, a.per_class, a.dim, a.separation)
    } else {
        synthetic_clusters(a.seed, a.classes, a.per_class, a.dim, a.separation)
    };
    emit(a.output.as_deref(), &write_templates_csv(&data)?)
}

fn cmd_protect(a: &ProtectArgs) -> CliResult {
    let templates: Vec<Template> = read_templates_csv(&read_text(&a.input)?)?;
    let protected = protect_templates(&templates, a.key.resolve()?)?;
    emit(a.output.as_deref(), &write_templates_csv(&protected)?)
}

fn cmd_enroll(a: &EnrollArgs) -> CliResult {
    let mut all: Vec<ProtectedTemplate> = Vec::new();
    for path in &a.input {
        all.extend(read_templates_csv::<ProtectedTemplate>(&read_text(path)?)?);
    }
    emit(a.output.as_deref(), &write_model_csv(&enroll(&all)?))
}

fn cmd_classify(a: &ClassifyArgs) -> CliResult {
    let model = read_model_csv(&read_text(&a.model)?)?;
    let queries: Vec<ProtectedTemplate> = read_templates_csv(&read_text(&a.query)?)?;
    let mut out = String::from("client_id,label,predicted,distance\n");
    for q in &queries {
        let (class, distance) = classify(q, &model)?;
        let label = q.label.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{label},{class},{distance:.16e}\n", q.client_id));
    }
    emit(a.output.as_deref(), &out)
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Encrypt(a) => cmd_encrypt(a),
        Command::Decrypt(a) => cmd_decrypt(a),
        Command::RdCurve(a) => cmd_rd_curve(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Keyspace(a) => cmd_keyspace(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Recompress(a) => cmd_recompress(a),
        Command::Extract(a) => cmd_extract(a),
        Command::SynthTemplates(a) => cmd_synth(a),
        Command::Protect(a) => cmd_protect(a),
        Command::Enroll(a) => cmd_enroll(a),
        Command::Classify(a) => cmd_classify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("etcimg: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
