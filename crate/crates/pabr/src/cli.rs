//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! failure (degenerate embedding, non-finite training state).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use pabr_core::evaluation::{evaluate, evaluate_rankings, LabeledEmbedding};
use pabr_core::matching::rank_gallery;
use pabr_core::model::{Embedding, ImageSample, Split};
use pabr_core::sketch::SketchParams;
use pabr_core::synth::{generate, SynthConfig};
use pabr_core::training::{train, Affine, LinearHeads, PoolingMode};

use crate::config::{read_heads, write_heads, ModeName, TrainFile};
use crate::dataset::{write_dataset, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::format::read_feature_file;
use crate::manifest::Manifest;
use crate::textio::{
    read_embeddings, read_rankings, report_to_text, write_embeddings, write_history, write_rankings,
};
use crate::viz::render;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pabr", version, about = "Part-aligned bilinear pooling for re-identification")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (feature files plus manifest).
    Synth(SynthArgs),
    /// Embed samples with exact bilinear pooling.
    Pool(EmbedArgs),
    /// Embed samples with tensor-sketched bilinear pooling.
    Sketch(SketchArgs),
    /// Train the appearance and part heads with triplet loss.
    Train(TrainArgs),
    /// Rank a gallery for every query embedding.
    Match(MatchArgs),
    /// Compute CMC and mAP from rankings or embeddings.
    Eval(EvalArgs),
    /// Render feature maps as PPM images via PCA.
    Viz(VizArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; receives manifest.tsv and maps/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    identities: usize,
    #[arg(long, default_value_t = 8)]
    images: usize,
    #[arg(long, default_value_t = 8)]
    height: usize,
    #[arg(long, default_value_t = 4)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    parts: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    /// Maximum vertical shift of the part layout, in cells.
    #[arg(long, default_value_t = 3)]
    jitter: usize,
    /// Gaussian noise on both raw maps.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Fraction of identities turned into gallery distractors.
    #[arg(long, default_value_t = 0.2)]
    distractors: f64,
    #[arg(long, default_value_t = 2)]
    cameras: usize,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Embeddings file to write.
    #[arg(long)]
    out: PathBuf,
    /// Trained heads (JSON); raw maps are pooled directly when omitted.
    #[arg(long)]
    heads: Option<PathBuf>,
    /// Only embed this split (train, query or gallery).
    #[arg(long)]
    split: Option<Split>,
}

#[derive(Debug, Args)]
struct SketchArgs {
    #[command(flatten)]
    embed: EmbedArgs,
    /// Sketch dimension.
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    /// Seed of the count-sketch hash and sign tables.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Training config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Heads file (JSON) to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss history (CSV: iteration, loss, lr).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeName>,
    /// Clamp part-head outputs at zero.
    #[arg(long)]
    nonneg_parts: bool,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
    /// Rankings file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["rankings", "embeddings"])))]
struct EvalArgs {
    /// Manifest supplying labels and the query/gallery split.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    rankings: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Report file; printed to stdout as well.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    max_rank: u32,
}

#[derive(Debug, Args)]
struct VizArgs {
    /// Directory for the PPM images.
    #[arg(long)]
    out: PathBuf,
    /// Feature files rendered with one shared PCA.
    #[arg(required = true)]
    maps: Vec<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let mut text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                if !text.contains("Usage:") {
                    text = format!("{text}\n{}\n", Cli::command().render_usage());
                }
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_DATA
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Pool(a) => embed_command(&a, PoolingChoice::Exact, out),
        Command::Sketch(a) => embed_command(&a.embed, PoolingChoice::Sketched { dim: a.dim as usize, seed: a.seed }, out),
        Command::Train(a) => train_command(a, out),
        Command::Match(a) => match_command(a, out),
        Command::Eval(a) => eval_command(a, out),
        Command::Viz(a) => viz_command(a, out, err),
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments<'_>) {
    let _ = writeln!(out, "{msg}");
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        num_identities: a.identities,
        images_per_identity: a.images,
        height: a.height,
        width: a.width,
        num_parts: a.parts,
        appearance_channels: a.channels,
        jitter: a.jitter,
        noise_sigma: a.noise,
        distractor_fraction: a.distractors,
        cameras: a.cameras,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg)?;
    let manifest = write_dataset(&ds, &a.out)?;
    say(out, format_args!("wrote {} samples to {}", manifest.entries.len(), a.out.join(MANIFEST_NAME).display()));
    Ok(())
}

enum PoolingChoice {
    Exact,
    Sketched { dim: usize, seed: u64 },
}

/// Heads from a file, or identity heads that pass raw maps through.
fn load_heads(path: Option<&Path>, sample: Option<&ImageSample>) -> Result<LinearHeads> {
    match (path, sample) {
        (Some(p), _) => read_heads(p),
        (None, Some(s)) => Ok(LinearHeads::new(
            Affine::identity(s.appearance().channels()),
            Affine::identity(s.part().channels()),
            false,
        )),
        (None, None) => Ok(LinearHeads::new(Affine::identity(1), Affine::identity(1), false)),
    }
}

fn embed_all(samples: &[ImageSample], mode: &PoolingMode, heads: &LinearHeads) -> Result<Vec<(String, Embedding)>> {
    samples.iter().map(|s| Ok((s.label.sample_id.clone(), mode.embed(s, heads)?))).collect()
}

fn embed_command(a: &EmbedArgs, choice: PoolingChoice, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let samples = manifest.load_split(a.split)?;
    if samples.is_empty() {
        return Err(Error::Validation("no samples to embed".into()));
    }
    let heads = load_heads(a.heads.as_deref(), samples.first())?;
    let mode = match choice {
        PoolingChoice::Exact => PoolingMode::Exact,
        PoolingChoice::Sketched { dim, seed } => {
            PoolingMode::Sketched(SketchParams::new(seed, heads.appearance.outputs(), heads.part.outputs(), dim)?)
        }
    };
    let items = embed_all(&samples, &mode, &heads)?;
    write_embeddings(&items, &a.out)?;
    say(out, format_args!("wrote {} embeddings to {}", items.len(), a.out.display()));
    Ok(())
}

fn train_command(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut file = match &a.config {
        Some(p) => TrainFile::read(p)?,
        None => TrainFile::default(),
    };
    if let Some(n) = a.iters {
        file.iterations = Some(n);
    }
    if let Some(s) = a.seed {
        file.seed = s;
    }
    if let Some(m) = a.mode {
        file.mode = m;
    }
    file.nonneg_parts |= a.nonneg_parts;

    let manifest = Manifest::read(&a.manifest)?;
    let samples = manifest.load_split(Some(Split::Train))?;
    let first = samples.first().ok_or_else(|| Error::Validation("manifest has no training samples".into()))?;
    let cfg = file.to_train_config(first.appearance().channels(), first.part().channels())?;
    let outcome = train(&samples, &cfg)?;
    write_heads(&outcome.heads, &a.out)?;
    if let Some(h) = &a.history {
        write_history(&outcome.history, h)?;
    }
    let last = outcome.history.last().map_or(f64::NAN, |r| r.loss);
    say(out, format_args!("trained {} iterations, final batch loss {last}, heads in {}", cfg.iterations, a.out.display()));
    Ok(())
}

fn match_command(a: MatchArgs, out: &mut dyn Write) -> Result<()> {
    let queries = read_embeddings(&a.queries)?;
    let gallery = read_embeddings(&a.gallery)?;
    let rankings =
        queries.iter().map(|(id, e)| rank_gallery(id, e, &gallery)).collect::<pabr_core::Result<Vec<_>>>()?;
    write_rankings(&rankings, &a.out)?;
    say(out, format_args!("ranked {} gallery items for {} queries", gallery.len(), rankings.len()));
    Ok(())
}

fn eval_command(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let max_rank = a.max_rank as usize;
    let queries: Vec<_> = manifest.split(Split::Query).map(|e| e.label.clone()).collect();
    let gallery: BTreeMap<String, _> =
        manifest.split(Split::Gallery).map(|e| (e.label.sample_id.clone(), e.label.clone())).collect();

    let report = if let Some(path) = &a.rankings {
        let by_query: BTreeMap<String, _> = read_rankings(path)?.into_iter().map(|r| (r.query_id.clone(), r)).collect();
        let rankings = queries
            .iter()
            .map(|q| {
                by_query
                    .get(&q.sample_id)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("no ranking for query {}", q.sample_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        evaluate_rankings(&queries, &rankings, &gallery, max_rank)?
    } else {
        let path = a.embeddings.as_ref().expect("clap requires rankings or embeddings");
        let table: BTreeMap<String, Embedding> = read_embeddings(path)?.into_iter().collect();
        let lookup = |label: &pabr_core::SampleLabel| -> Result<LabeledEmbedding> {
            let e = table
                .get(&label.sample_id)
                .ok_or_else(|| Error::Validation(format!("no embedding for {}", label.sample_id)))?;
            Ok(LabeledEmbedding::new(label.clone(), e.clone()))
        };
        let q = queries.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        let g = gallery.values().map(lookup).collect::<Result<Vec<_>>>()?;
        evaluate(&q, &g, max_rank)?
    };
    let text = report_to_text(&report);
    if let Some(p) = &a.out {
        fs::write(p, &text).map_err(|e| Error::io(p, e))?;
    }
    let _ = write!(out, "{text}");
    Ok(())
}

fn viz_command(a: VizArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let maps = a.maps.iter().map(read_feature_file).collect::<Result<Vec<_>>>()?;
    let rendering = render(&maps)?;
    for w in &rendering.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (path, img) in a.maps.iter().zip(&rendering.images) {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "map".into());
        img.write_ppm(a.out.join(format!("{stem}.ppm")))?;
    }
    say(out, format_args!("rendered {} images into {}", rendering.images.len(), a.out.display()));
    Ok(())
}
