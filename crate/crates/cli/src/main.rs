use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crow_core::aggregation::{aggregate_all, spatial_stage};
use crow_core::config::{describe, parse_config};
use crow_core::crowd::{find_duplicate_id, load_descriptors, save_descriptors};
use crow_core::crowt::{
    corpus_entries, load_tensor, save_tensor, write_manifest, ManifestEntry, MANIFEST_NAME,
};
use crow_core::evaluator::{parse_groundtruth, read_holidays};
use crow_core::synthetic::{generate, CorpusSpec};
use crow_core::whitening::{read_model, write_model};
use crow_core::{
    build_index, evaluate, fit_whitening, local_pool, query, query_expand, Descriptor,
    PipelineConfig, SourceLayer, WhiteningModel, WhiteningParams,
};

#[derive(Parser)]
#[command(
    name = "crow",
    version,
    about = "Weighted aggregation of convolutional features for image retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate a directory of .crowt tensors into a .crowd descriptor file.
    Aggregate {
        /// Pipeline configuration (key = value lines). Defaults to CroW on pool5.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Whitening model; when given, descriptors are whitened and re-normalized.
        #[arg(long)]
        whitening: Option<PathBuf>,
    },
    /// Learn a PCA-whitening model from normalized descriptors.
    FitWhitening {
        #[arg(long)]
        descriptors: PathBuf,
        /// Number of retained dimensions.
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
        /// Eigenvalue floor relative to the largest eigenvalue.
        #[arg(long, default_value_t = crow_core::whitening::DEFAULT_RELATIVE_FLOOR)]
        floor: f64,
        /// Configuration the descriptors were produced with; recorded in the fingerprint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rank an index against one query descriptor and write a TSV.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Query id to use when the query file holds several descriptors.
        #[arg(long)]
        query_id: Option<String>,
        /// Average query expansion over the top M results.
        #[arg(long, value_name = "M", num_args = 0..=1, default_missing_value = "10")]
        qe: Option<usize>,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute mAP of an index against ground truth and write a JSON report.
    Evaluate {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_name = "M", num_args = 0..=1, default_missing_value = "10")]
        qe: Option<usize>,
        #[arg(long, value_enum, default_value_t = GtFormat::Oxford)]
        format: GtFormat,
        #[arg(long)]
        report: PathBuf,
        /// Configuration used to build the descriptors; recorded in the report.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the spatial weight map of one tensor as a 16-bit PGM image.
    WeightMap {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic tensor corpus with Oxford-style ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GtFormat {
    Oxford,
    Holidays,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::crow(SourceLayer::Pool5)),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse_config(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn load_model(path: &Path) -> Result<WhiteningModel> {
    let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
    read_model(BufReader::new(file)).with_context(|| format!("reading model {}", path.display()))
}

fn descriptors(path: &Path) -> Result<Vec<Descriptor>> {
    load_descriptors(path).with_context(|| format!("reading descriptors {}", path.display()))
}

fn aggregate(
    config: Option<&Path>,
    tensors: &Path,
    out: &Path,
    whitening: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let model = whitening.map(load_model).transpose()?;
    let entries = corpus_entries(tensors)
        .with_context(|| format!("listing tensors in {}", tensors.display()))?;
    if entries.is_empty() {
        bail!("no tensors found in {}", tensors.display());
    }
    let loaded = entries
        .iter()
        .map(|e| {
            load_tensor(&tensors.join(&e.path), e.id.clone())
                .with_context(|| format!("loading {}", e.path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = aggregate_all(&loaded, &cfg, model.as_ref())?;
    if let Some(id) = find_duplicate_id(&ds) {
        bail!("duplicate image id '{id}'");
    }
    let zeros = ds.iter().filter(|d| d.zero).count();
    if zeros > 0 {
        warn!("{zeros} images produced zero descriptors");
    }
    save_descriptors(out, &ds)?;
    info!(
        "wrote {} descriptors of dim {} ({})",
        ds.len(),
        ds[0].dim(),
        describe(&cfg)
    );
    Ok(())
}

fn fit(
    descriptors_path: &Path,
    dim: usize,
    out: &Path,
    floor: f64,
    config: Option<&Path>,
) -> Result<()> {
    let ds = descriptors(descriptors_path)?;
    let params = WhiteningParams {
        output_dim: dim,
        relative_floor: floor,
        provenance: match config {
            Some(_) => describe(&load_config(config)?),
            None => String::new(),
        },
    };
    let model = fit_whitening(&ds, &params)?;
    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_model(&model, &mut w)?;
    w.flush()?;
    info!(
        "fitted {} -> {} whitening on {} descriptors",
        model.input_dim(),
        model.output_dim(),
        ds.len()
    );
    Ok(())
}

fn search(
    index: &Path,
    query_path: &Path,
    query_id: Option<&str>,
    qe: Option<usize>,
    top: Option<usize>,
    out: &Path,
) -> Result<()> {
    let idx = build_index(&descriptors(index)?)?;
    let queries = descriptors(query_path)?;
    let q = match query_id {
        Some(id) => queries
            .iter()
            .find(|d| d.id == id)
            .with_context(|| format!("query '{id}' not found in {}", query_path.display()))?,
        None => match queries.as_slice() {
            [single] => single,
            [] => bail!("{} holds no descriptors", query_path.display()),
            _ => bail!(
                "{} holds {} descriptors; pick one with --query-id",
                query_path.display(),
                queries.len()
            ),
        },
    };
    let ranked = match qe {
        Some(m) => query_expand(&idx, q, m, top)?,
        None => query(&idx, q, top)?,
    };
    if let Some(e) = ranked.expansion.filter(|e| e.clamped()) {
        warn!(
            "query expansion depth {} clamped to index size {}",
            e.requested, e.used
        );
    }
    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    for (rank, hit) in ranked.hits.iter().enumerate() {
        writeln!(w, "{}\t{}\t{:.6}", rank + 1, hit.id, hit.score)?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_evaluate(
    index: &Path,
    queries: &Path,
    gt: &Path,
    qe: Option<usize>,
    format: GtFormat,
    report: &Path,
    config: Option<&Path>,
) -> Result<()> {
    let idx = build_index(&descriptors(index)?)?;
    let qs = descriptors(queries)?;
    let gts = match format {
        GtFormat::Oxford => parse_groundtruth(gt),
        GtFormat::Holidays => read_holidays(gt),
    }
    .with_context(|| format!("reading ground truth {}", gt.display()))?;
    if gts.is_empty() {
        bail!("no queries found in {}", gt.display());
    }
    let mut result = evaluate(&idx, &qs, &gts, qe)?;
    if config.is_some() {
        result.config = Some(describe(&load_config(config)?));
    }
    let json = serde_json::to_string_pretty(&result.to_json())?;
    fs::write(report, json + "\n").with_context(|| format!("writing {}", report.display()))?;
    println!(
        "mAP {:.6} over {} queries",
        result.map,
        result.per_query.len()
    );
    Ok(())
}

fn weight_map(tensor: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let stem = tensor
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let t = load_tensor(tensor, stem)?;
    let pooled = local_pool(&t, &cfg.pooling)?;
    let map = spatial_stage(&pooled, &cfg)?;
    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    map.write_pgm(&mut w)?;
    w.flush()?;
    Ok(())
}

fn synth(out: &Path, classes: usize, per_class: usize, seed: u64) -> Result<()> {
    let spec = CorpusSpec {
        classes,
        per_class,
        seed,
        ..CorpusSpec::default()
    };
    let corpus = generate(&spec)?;
    let tensors = out.join("tensors");
    let gt = out.join("gt");
    fs::create_dir_all(&tensors)?;
    fs::create_dir_all(&gt)?;
    let mut entries = Vec::new();
    for img in &corpus.images {
        let file = format!("{}.crowt", img.tensor.id());
        save_tensor(&tensors.join(&file), &img.tensor)?;
        entries.push(ManifestEntry {
            id: img.tensor.id().to_string(),
            path: file.into(),
        });
    }
    let mut manifest = BufWriter::new(File::create(tensors.join(MANIFEST_NAME))?);
    write_manifest(&entries, &mut manifest)?;
    manifest.flush()?;

    let lines = |set: &std::collections::BTreeSet<String>| {
        set.iter().map(|s| format!("{s}\n")).collect::<String>()
    };
    for q in corpus.groundtruth() {
        let name = &q.query_id;
        fs::write(
            gt.join(format!("{name}_query.txt")),
            format!("{} 0 0 {} {}\n", q.image_id, spec.width, spec.height),
        )?;
        fs::write(gt.join(format!("{name}_good.txt")), lines(&q.good))?;
        fs::write(gt.join(format!("{name}_ok.txt")), lines(&q.ok))?;
        fs::write(gt.join(format!("{name}_junk.txt")), lines(&q.junk))?;
    }
    info!(
        "wrote {} tensors to {}",
        corpus.images.len(),
        tensors.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Aggregate {
            config,
            tensors,
            out,
            whitening,
        } => aggregate(config.as_deref(), &tensors, &out, whitening.as_deref()),
        Command::FitWhitening {
            descriptors,
            dim,
            out,
            floor,
            config,
        } => fit(&descriptors, dim, &out, floor, config.as_deref()),
        Command::Search {
            index,
            query,
            query_id,
            qe,
            top,
            out,
        } => search(&index, &query, query_id.as_deref(), qe, top, &out),
        Command::Evaluate {
            index,
            queries,
            gt,
            qe,
            format,
            report,
            config,
        } => run_evaluate(
            &index,
            &queries,
            &gt,
            qe,
            format,
            &report,
            config.as_deref(),
        ),
        Command::WeightMap {
            tensor,
            config,
            out,
        } => weight_map(&tensor, config.as_deref(), &out),
        Command::Synth {
            out,
            classes,
            per_class,
            seed,
        } => synth(&out, classes, per_class, seed),
    }
}
