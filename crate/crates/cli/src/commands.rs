use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use facecloak::backends::{save_toy_weights, train_toy_backend, FaceEmbedder, ToyTrainingConfig};
use facecloak::corpus::{write_corpus, ToyCorpusConfig};
use facecloak::eval::{CloakSet, ProbeGallerySplit};
use facecloak::focusing::CanonicalLandmarks;
use facecloak::ingestion::{
    build_split, load_entry, load_static_gallery, manifest_path_for, scan_dataset, DatasetManifest,
};
use facecloak::optimizer::{apply_cloak, AnchorPool};
use facecloak::pipeline::{
    ablation_csv, evaluate, make_cloak, pool_from_images, AblationAxis, EvalOptions,
};
use facecloak::{load_cloak, read_cloak_header, save_cloak, CloakMask, IdentityLabel, ImagePlane, LabeledImage, RawImage};

use crate::config::RunConfig;
use crate::failure::{at, CliError, Stage};

fn create_dir(dir: &Path, stage: Stage) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::new(stage, facecloak::Error::Persistence { path: dir.to_path_buf(), source })
    })
}

fn write_file(path: &Path, body: &str, stage: Stage) -> Result<(), CliError> {
    std::fs::write(path, body).map_err(|source| {
        CliError::new(stage, facecloak::Error::Persistence { path: path.to_path_buf(), source })
    })
}

/// Scans the dataset and saves its manifest beside the root.
fn ingest(cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    let root = cfg.dataset_root()?;
    let manifest = scan_dataset(root).map_err(at(Stage::Ingest))?;
    manifest.save(manifest_path_for(root)).map_err(at(Stage::Ingest))?;
    Ok(manifest)
}

fn static_pool(
    manifest: &DatasetManifest,
    backend: &dyn FaceEmbedder,
) -> Result<AnchorPool, CliError> {
    let shape = backend.descriptor().input_shape();
    let gallery = load_static_gallery(manifest, shape).map_err(at(Stage::Ingest))?;
    pool_from_images(&gallery, backend, &manifest.root.display().to_string()).map_err(at(Stage::Generate))
}

fn load_seed(path: &Path, backend: &dyn FaceEmbedder) -> Result<ImagePlane, CliError> {
    let raw = RawImage::open(path).map_err(at(Stage::Ingest))?;
    facecloak::ingestion::resize_and_center(&raw, backend.descriptor().input_shape()).map_err(at(Stage::Ingest))
}

fn label_from_path(path: &Path) -> Result<IdentityLabel, CliError> {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    IdentityLabel::new(stem).map_err(at(Stage::Generate))
}

fn cloak_for(
    cfg: &RunConfig,
    label: &IdentityLabel,
    seed: &ImagePlane,
    backend: &dyn FaceEmbedder,
    pool: &AnchorPool,
) -> Result<CloakMask, CliError> {
    let out = make_cloak(label, seed, backend, pool, &cfg.optimizer, &cfg.generator, &CanonicalLandmarks)
        .map_err(at(Stage::Generate))?;
    tracing::info!(identity = %label, near = %out.anchors.near.label, far = %out.anchors.far.label, "anchors");
    let mut cloak = out.cloak;
    cloak.config_digest = cfg.digest();
    Ok(cloak)
}

pub fn generate(
    cfg: &RunConfig,
    seed_path: &Path,
    identity: Option<&str>,
    out: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let backend = cfg.backend.load()?;
    let manifest = ingest(cfg)?;
    let pool = static_pool(&manifest, backend.as_ref())?;
    let seed = load_seed(seed_path, backend.as_ref())?;
    let label = match identity {
        Some(s) => IdentityLabel::new(s).map_err(|e| CliError::config(e.to_string()))?,
        None => label_from_path(seed_path)?,
    };
    let cloak = cloak_for(cfg, &label, &seed, backend.as_ref(), &pool)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            create_dir(&cfg.output_dir, Stage::Generate)?;
            cfg.output_dir.join(format!("{label}.fclk"))
        }
    };
    save_cloak(&cloak, &path).map_err(at(Stage::Generate))?;
    Ok(path)
}

#[derive(Debug)]
pub struct ApplyOutcome {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(PathBuf, CliError)>,
}

/// Adds the cloak to each image. A failing file does not stop the others.
pub fn apply(cloak_path: &Path, images: &[PathBuf], out_dir: &Path) -> Result<ApplyOutcome, CliError> {
    let cloak = load_cloak(cloak_path).map_err(at(Stage::Apply))?;
    create_dir(out_dir, Stage::Apply)?;
    let mut outcome = ApplyOutcome { written: Vec::new(), failures: Vec::new() };
    for path in images {
        let result = (|| -> Result<PathBuf, CliError> {
            let img = RawImage::open(path).map_err(at(Stage::Apply))?.into_plane().map_err(at(Stage::Apply))?;
            let start = Instant::now();
            let protected = apply_cloak(&img, &cloak).map_err(at(Stage::Apply))?;
            let micros = start.elapsed().as_micros();
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            let target = out_dir.join(format!("{name}.png"));
            protected.save_png(&target).map_err(at(Stage::Apply))?;
            tracing::info!(input = %path.display(), micros, "applied");
            Ok(target)
        })();
        match result {
            Ok(p) => outcome.written.push(p),
            Err(e) => outcome.failures.push((path.clone(), e)),
        }
    }
    Ok(outcome)
}

/// Clean seed image for each probe identity: its first injectable image.
fn seeds_from_split(split: &ProbeGallerySplit) -> Vec<(IdentityLabel, ImagePlane)> {
    let mut jobs: Vec<(IdentityLabel, ImagePlane)> = Vec::new();
    for id in split.probe_identities() {
        if let Some(img) = split.injectable().iter().find(|i| &i.label == id) {
            jobs.push((id.clone(), img.image.clone()));
        }
    }
    jobs
}

fn load_cloak_dir(dir: &Path, split: &ProbeGallerySplit) -> Result<CloakSet, CliError> {
    let mut out = CloakSet::new();
    for id in split.probe_identities() {
        let path = dir.join(format!("{id}.fclk"));
        if path.exists() {
            out.insert(id.clone(), load_cloak(&path).map_err(at(Stage::Eval))?);
        } else {
            tracing::warn!(identity = %id, "no cloak; probes scored clean");
        }
    }
    Ok(out)
}

pub enum CloakSource<'a> {
    Dir(&'a Path),
    Generate,
    None,
}

pub fn eval(cfg: &RunConfig, source: CloakSource<'_>) -> Result<facecloak::eval::EvalReport, CliError> {
    let backend = cfg.backend.load()?;
    let manifest = ingest(cfg)?;
    let shape = backend.descriptor().input_shape();
    let split = build_split(&manifest, cfg.probe_per_identity, shape).map_err(at(Stage::Ingest))?;
    let cloaks = match source {
        CloakSource::Dir(d) => load_cloak_dir(d, &split)?,
        CloakSource::None => CloakSet::new(),
        CloakSource::Generate => {
            let pool = static_pool(&manifest, backend.as_ref())?;
            let dir = cfg.output_dir.join("cloaks");
            create_dir(&dir, Stage::Generate)?;
            seeds_from_split(&split)
                .into_par_iter()
                .map(|(label, seed)| {
                    let cloak = cloak_for(cfg, &label, &seed, backend.as_ref(), &pool)?;
                    save_cloak(&cloak, dir.join(format!("{label}.fclk"))).map_err(at(Stage::Generate))?;
                    Ok((label, cloak))
                })
                .collect::<Result<CloakSet, CliError>>()?
        }
    };
    let opts = EvalOptions {
        robustness: cfg.eval.transforms().map_err(|e| CliError::config(e.to_string()))?,
        verification_set: if cfg.eval.verification {
            Some(load_static_gallery(&manifest, shape).map_err(at(Stage::Ingest))?)
        } else {
            None
        },
        target_far: Some(cfg.eval.target_far),
    };
    let report = evaluate(&split, &cloaks, backend.as_ref(), &cfg.digest(), &opts).map_err(at(Stage::Eval))?;
    create_dir(&cfg.output_dir, Stage::Eval)?;
    report.write_all(&cfg.output_dir, "report").map_err(at(Stage::Eval))?;
    Ok(report)
}

pub fn ablate(cfg: &RunConfig, axis: AblationAxis, values: &[f64]) -> Result<String, CliError> {
    let backend = cfg.backend.load()?;
    let manifest = ingest(cfg)?;
    let shape = backend.descriptor().input_shape();
    let split = build_split(&manifest, cfg.probe_per_identity, shape).map_err(at(Stage::Ingest))?;
    let pool = static_pool(&manifest, backend.as_ref())?;
    let jobs = seeds_from_split(&split);
    let mut rows = facecloak::pipeline::ablate(
        axis,
        values,
        &cfg.optimizer,
        &cfg.generator,
        &jobs,
        &split,
        backend.as_ref(),
        &pool,
    )
    .map_err(at(Stage::Ablate))?;
    // Rows carry the digest of the full run config with the axis applied.
    for (row, &v) in rows.iter_mut().zip(values) {
        let mut run = cfg.clone();
        run.optimizer = axis.apply(&cfg.optimizer, v).map_err(at(Stage::Ablate))?;
        row.config_digest = run.digest();
    }
    let csv = ablation_csv(axis, &rows);
    create_dir(&cfg.output_dir, Stage::Ablate)?;
    write_file(&cfg.output_dir.join(format!("ablate_{}.csv", axis.name())), &csv, Stage::Ablate)?;
    Ok(csv)
}

pub fn inspect(path: &Path) -> Result<String, CliError> {
    let header = read_cloak_header(path).map_err(at(Stage::Inspect))?;
    Ok(serde_json::to_string_pretty(&header).expect("header serializes"))
}

/// Trains toy weights on every image of a dataset, labeled by identity folder.
pub fn train(dataset: &Path, out: &Path, training: &ToyTrainingConfig) -> Result<f64, CliError> {
    let manifest = scan_dataset(dataset).map_err(at(Stage::Ingest))?;
    let arch = &training.architecture;
    let shape = facecloak::Shape::new(arch.input_height, arch.input_width);
    let images: Vec<LabeledImage> = manifest
        .entries
        .iter()
        .map(|e| load_entry(&manifest.root, e, shape))
        .collect::<facecloak::Result<_>>()
        .map_err(at(Stage::Ingest))?;
    let weights = train_toy_backend(&images, training).map_err(at(Stage::Train))?;
    let acc = weights.metadata.heldout_accuracy;
    save_toy_weights(&weights, out).map_err(at(Stage::Train))?;
    Ok(acc)
}

pub fn make_corpus(cfg: &ToyCorpusConfig, out: &Path, probe_ids: usize) -> Result<(), CliError> {
    if probe_ids > cfg.identities {
        return Err(CliError::config("--users cannot exceed --identities"));
    }
    write_corpus(cfg, out, probe_ids).map_err(at(Stage::Corpus))
}
