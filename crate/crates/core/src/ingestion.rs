//! Dataset scanning and probe/gallery assembly.
//!
//! Expected layout: `root/{probe,gallery,distractor}/<identity>/<image>.{png,jpg,jpeg}`.
//! Images under `probe/<id>` supply the probes (first `k` in sorted order) and
//! the rest become injectable same-identity gallery images, together with any
//! images under `gallery/<id>`. Gallery identities without probes, and all
//! distractor identities, form the static gallery.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{InjectionRule, ProbeGallerySplit};
use crate::plane::{ImagePlane, RawImage, Shape, CHANNELS, MIN_SIDE};
use crate::types::{IdentityLabel, LabeledImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Probe,
    Gallery,
    Distractor,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Probe, Role::Gallery, Role::Distractor];

    pub fn dir_name(self) -> &'static str {
        match self {
            Role::Probe => "probe",
            Role::Gallery => "gallery",
            Role::Distractor => "distractor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub role: Role,
    pub identity: IdentityLabel,
    /// Relative to the dataset root, `/`-separated.
    pub path: String,
    pub height: usize,
    pub width: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub exclusions: Vec<Exclusion>,
    pub digest: String,
}

impl DatasetManifest {
    pub fn identities(&self, role: Role) -> BTreeSet<&IdentityLabel> {
        self.entries
            .iter()
            .filter(|e| e.role == role)
            .map(|e| &e.identity)
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::Dataset(format!("manifest encode: {e}")))?;
        std::fs::write(path, json).map_err(|source| Error::Persistence {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Sibling path where a dataset's manifest is stored: `<root>.manifest.json`.
pub fn manifest_path_for(root: impl AsRef<Path>) -> PathBuf {
    let root = root.as_ref();
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    root.with_file_name(format!("{name}.manifest.json"))
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
    )
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        out.push(entry.map_err(|e| Error::io(path, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

enum Scanned {
    Ok(ManifestEntry),
    Excluded(Exclusion),
}

fn scan_file(root: &Path, role: Role, identity: &IdentityLabel, path: &Path) -> Result<Scanned> {
    let rel = relative(root, path);
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let excluded = |reason: String| Ok(Scanned::Excluded(Exclusion { path: rel.clone(), reason }));
    let img = match RawImage::decode(&bytes) {
        Ok(img) => img,
        Err(e) => return excluded(format!("undecodable: {e}")),
    };
    if img.height < MIN_SIDE || img.width < MIN_SIDE {
        return excluded(format!("{}x{} is below {MIN_SIDE}x{MIN_SIDE}", img.height, img.width));
    }
    Ok(Scanned::Ok(ManifestEntry {
        role,
        identity: identity.clone(),
        path: rel.clone(),
        height: img.height,
        width: img.width,
        sha256: hex::encode(Sha256::digest(&bytes)),
    }))
}

/// Walks the dataset tree and validates every image. Undecodable or too-small
/// files are excluded and listed rather than failing the scan.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut jobs: Vec<(Role, IdentityLabel, PathBuf)> = Vec::new();
    for role in Role::ALL {
        let dir = root.join(role.dir_name());
        if !dir.is_dir() {
            continue;
        }
        for id_dir in sorted_dir(&dir)?.into_iter().filter(|p| p.is_dir()) {
            let name = id_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let label = IdentityLabel::new(name)?;
            for file in sorted_dir(&id_dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
                jobs.push((role, label.clone(), file));
            }
        }
    }
    let scanned: Vec<Scanned> = jobs
        .par_iter()
        .map(|(role, label, path)| scan_file(root, *role, label, path))
        .collect::<Result<_>>()?;

    let mut entries = Vec::new();
    let mut exclusions = Vec::new();
    for s in scanned {
        match s {
            Scanned::Ok(e) => entries.push(e),
            Scanned::Excluded(x) => {
                tracing::warn!(path = %x.path, reason = %x.reason, "image excluded");
                exclusions.push(x);
            }
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    exclusions.sort_by(|a, b| a.path.cmp(&b.path));
    if entries.is_empty() {
        return Err(Error::Dataset(format!("no usable images under {}", root.display())));
    }
    let probe_ids: BTreeSet<_> = entries.iter().filter(|e| e.role == Role::Probe).map(|e| &e.identity).collect();
    if let Some(clash) = entries
        .iter()
        .find(|e| e.role == Role::Distractor && probe_ids.contains(&e.identity))
    {
        return Err(Error::Dataset(format!(
            "identity {} appears as both probe and distractor",
            clash.identity
        )));
    }

    let mut hasher = Sha256::new();
    for e in &entries {
        hasher.update(e.path.as_bytes());
        hasher.update([0]);
        hasher.update(e.sha256.as_bytes());
        hasher.update([b'\n']);
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
        exclusions,
        digest: hex::encode(hasher.finalize()),
    })
}

pub fn load_entry(root: &Path, entry: &ManifestEntry, shape: Shape) -> Result<LabeledImage> {
    let raw = RawImage::open(root.join(&entry.path))?;
    Ok(LabeledImage::new(entry.identity.clone(), resize_and_center(&raw, shape)?))
}

/// Loads images at `shape` and assigns probes, injectable images and the
/// static gallery.
pub fn build_split(
    manifest: &DatasetManifest,
    probe_per_identity: usize,
    shape: Shape,
) -> Result<ProbeGallerySplit> {
    if probe_per_identity == 0 {
        return Err(Error::Dataset("probe_per_identity must be >= 1".into()));
    }
    let mut by_probe_id: BTreeMap<&IdentityLabel, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in manifest.entries.iter().filter(|e| e.role == Role::Probe) {
        by_probe_id.entry(&e.identity).or_default().push(e);
    }
    let mut probe_entries = Vec::new();
    let mut inject_entries = Vec::new();
    for (id, files) in &by_probe_id {
        let extra = manifest
            .entries
            .iter()
            .filter(|e| e.role == Role::Gallery && &e.identity == *id)
            .count();
        if files.len() + extra <= probe_per_identity {
            return Err(Error::Dataset(format!(
                "identity {id} has {} images, needs more than {probe_per_identity}",
                files.len() + extra
            )));
        }
        if files.len() < probe_per_identity {
            return Err(Error::Dataset(format!(
                "identity {id} has {} probe images, needs {probe_per_identity}",
                files.len()
            )));
        }
        probe_entries.extend(&files[..probe_per_identity]);
        inject_entries.extend(&files[probe_per_identity..]);
    }
    let mut static_entries = Vec::new();
    for e in &manifest.entries {
        match e.role {
            Role::Gallery if by_probe_id.contains_key(&e.identity) => inject_entries.push(e),
            Role::Gallery | Role::Distractor => static_entries.push(e),
            Role::Probe => {}
        }
    }
    let load = |list: Vec<&ManifestEntry>| -> Result<Vec<LabeledImage>> {
        list.par_iter().map(|e| load_entry(&manifest.root, e, shape)).collect()
    };
    ProbeGallerySplit::new(
        load(probe_entries)?,
        load(inject_entries)?,
        load(static_entries)?,
        InjectionRule::Injectable,
    )
}

/// Distractors plus gallery images of identities with no probe folder: the
/// part of the gallery that never changes between probes.
pub fn load_static_gallery(manifest: &DatasetManifest, shape: Shape) -> Result<Vec<LabeledImage>> {
    let probe_ids = manifest.identities(Role::Probe);
    let entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| match e.role {
            Role::Distractor => true,
            Role::Gallery => !probe_ids.contains(&e.identity),
            Role::Probe => false,
        })
        .collect();
    entries.par_iter().map(|e| load_entry(&manifest.root, e, shape)).collect()
}

/// Bilinear resize that covers the target (aspect preserved), then a centre
/// crop. Sample positions use pixel centres.
pub fn resize_and_center(image: &RawImage, target: Shape) -> Result<ImagePlane> {
    target.validate()?;
    let (h, w) = (image.height, image.width);
    if h == 0 || w == 0 || image.data.len() != h * w * CHANNELS {
        return Err(Error::shape(format!("{h}x{w}x3 pixel buffer"), image.data.len()));
    }
    if let Some(v) = image.data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(Error::InvariantViolation(format!("pixel value {v} outside [0, 1]")));
    }
    if (h, w) == (target.height, target.width) {
        return ImagePlane::new(h, w, image.data.clone());
    }
    let s = (target.height as f64 / h as f64).max(target.width as f64 / w as f64);
    let rh = ((h as f64 * s).round() as usize).max(target.height);
    let rw = ((w as f64 * s).round() as usize).max(target.width);
    let (oy, ox) = ((rh - target.height) / 2, (rw - target.width) / 2);
    let (sy, sx) = (h as f64 / rh as f64, w as f64 / rw as f64);
    let mut data = Vec::with_capacity(target.len());
    for y in 0..target.height {
        let fy = ((y + oy) as f64 + 0.5) * sy - 0.5;
        let fy = fy.clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..target.width {
            let fx = ((x + ox) as f64 + 0.5) * sx - 0.5;
            let fx = fx.clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for c in 0..CHANNELS {
                let at = |yy: usize, xx: usize| image.data[(yy * w + xx) * CHANNELS + c] as f64;
                let v = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1))
                    + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1));
                data.push(v as f32);
            }
        }
    }
    ImagePlane::from_clamped(target.height, target.width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raw(h: usize, w: usize, seed: u64) -> RawImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RawImage { height: h, width: w, data: (0..h * w * 3).map(|_| rng.gen()).collect() }
    }

    #[test]
    fn same_shape_is_unchanged() {
        let raw = random_raw(20, 24, 1);
        let out = resize_and_center(&raw, Shape::new(20, 24)).unwrap();
        assert_eq!(out.data(), raw.data.as_slice());
    }

    #[test]
    fn halving_averages_two_by_two_blocks() {
        let raw = random_raw(224, 224, 2);
        let out = resize_and_center(&raw, Shape::new(112, 112)).unwrap();
        for y in 0..112 {
            for x in 0..112 {
                for c in 0..3 {
                    let mean = (raw.get(2 * y, 2 * x, c) as f64
                        + raw.get(2 * y, 2 * x + 1, c) as f64
                        + raw.get(2 * y + 1, 2 * x, c) as f64
                        + raw.get(2 * y + 1, 2 * x + 1, c) as f64)
                        / 4.0;
                    assert!((out.get(y, x, c) as f64 - mean).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn wide_image_is_centre_cropped() {
        // Left half black, right half white, 32x64 -> 16x16: scale 0.5 gives
        // 16x32 and the crop keeps columns 8..24, straddling the edge.
        let raw = RawImage {
            height: 32,
            width: 64,
            data: (0..32 * 64 * 3).map(|i| if (i / 3) % 64 >= 32 { 1.0 } else { 0.0 }).collect(),
        };
        let out = resize_and_center(&raw, Shape::new(16, 16)).unwrap();
        assert_eq!(out.get(5, 0, 0), 0.0);
        assert_eq!(out.get(5, 15, 0), 1.0);
    }

    #[test]
    fn degenerate_target_rejected() {
        assert!(resize_and_center(&random_raw(20, 20, 3), Shape::new(1, 1)).is_err());
    }

    fn write_png(path: &Path, h: usize, w: usize, v: u8) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        image::RgbImage::from_pixel(w as u32, h as u32, image::Rgb([v, v / 2, 255 - v]))
            .save(path)
            .unwrap();
    }

    fn fixture(root: &Path) {
        for id in ["carol", "alice", "bob"] {
            for i in 0..2 {
                write_png(&root.join(format!("probe/{id}/{i}.png")), 16, 16, 40 * i as u8 + 10);
            }
        }
    }

    #[test]
    fn scan_enumerates_sorted_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let m = scan_dataset(dir.path()).unwrap();
        let paths: Vec<_> = m.entries.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(
            paths,
            [
                "probe/alice/0.png",
                "probe/alice/1.png",
                "probe/bob/0.png",
                "probe/bob/1.png",
                "probe/carol/0.png",
                "probe/carol/1.png"
            ]
        );
        assert_eq!(m.digest, scan_dataset(dir.path()).unwrap().digest);
    }

    #[test]
    fn corrupt_and_tiny_images_are_excluded() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        std::fs::write(dir.path().join("probe/bob/2.png"), b"not a png").unwrap();
        write_png(&dir.path().join("probe/bob/3.png"), 8, 8, 0);
        let m = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 6);
        let excluded: Vec<_> = m.exclusions.iter().map(|x| x.path.as_str()).collect();
        assert_eq!(excluded, ["probe/bob/2.png", "probe/bob/3.png"]);
    }

    #[test]
    fn empty_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_dataset(dir.path()), Err(Error::Dataset(_))));
    }

    #[test]
    fn probe_distractor_overlap_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write_png(&dir.path().join("distractor/alice/0.png"), 16, 16, 1);
        assert!(matches!(scan_dataset(dir.path()), Err(Error::Dataset(_))));
    }

    #[test]
    fn split_takes_first_probes_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..20 {
            write_png(&dir.path().join(format!("probe/ann/{i:02}.png")), 16, 16, i as u8 * 10);
        }
        write_png(&dir.path().join("distractor/zed/0.png"), 16, 16, 7);
        let m = scan_dataset(dir.path()).unwrap();
        let split = build_split(&m, 5, Shape::new(16, 16)).unwrap();
        assert_eq!(split.probes().len(), 5);
        assert_eq!(split.injectable().len(), 15);
        assert_eq!(split.distractors().len(), 1);
        assert_eq!(split.probes()[0].image.get(0, 0, 0), 0.0);
        assert!(matches!(build_split(&m, 0, Shape::new(16, 16)), Err(Error::Dataset(_))));
        assert!(matches!(build_split(&m, 20, Shape::new(16, 16)), Err(Error::Dataset(_))));
        assert_eq!(split, build_split(&scan_dataset(dir.path()).unwrap(), 5, Shape::new(16, 16)).unwrap());
    }

    #[test]
    fn manifest_round_trips_as_json() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        fixture(&root);
        let m = scan_dataset(&root).unwrap();
        let path = manifest_path_for(&root);
        assert_eq!(path, dir.path().join("data.manifest.json"));
        m.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    }
}
