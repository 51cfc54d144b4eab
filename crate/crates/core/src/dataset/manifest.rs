use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Layout;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Unassigned,
}

/// One sample's files, relative to the manifest root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub mask: Option<String>,
    pub boxes: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct ManifestBuild {
    pub manifest: DatasetManifest,
    /// Files under `synthetic/` that could not be turned into an entry.
    pub skipped: Vec<PathBuf>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, seed: u64, mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::invalid(format!("duplicate sample id {}", w[0].id)));
        }
        Ok(DatasetManifest { root: root.into(), seed, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn entry_mut(&mut self, id: &str) -> Option<&mut ManifestEntry> {
        self.entries.iter_mut().find(|e| e.id == id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Writes pretty JSON. When the manifest lives in its own root, the root
    /// is stored as `.` so the file does not depend on where the dataset sits.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::raster::ensure_parent(path)?;
        let parent = path.parent().unwrap_or(Path::new("."));
        let same = match (fs::canonicalize(parent), fs::canonicalize(&self.root)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        let text =
            if same { DatasetManifest { root: PathBuf::from("."), ..self.clone() }.to_json() } else { self.to_json() };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; a relative root is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        if m.root.is_relative() {
            let parent = path.parent().unwrap_or(Path::new("."));
            m.root = if m.root == Path::new(".") { parent.to_path_buf() } else { parent.join(&m.root) };
        }
        Ok(m)
    }
}

fn parse_id(path: &Path) -> Option<String> {
    if path.extension()?.to_str()? != "png" {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    let valid = !stem.is_empty() && stem.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    valid.then(|| stem.to_string())
}

/// Scans `root/synthetic` and attaches masks and box files found under the
/// conventional paths. Entries come out sorted by id and unassigned.
pub fn build_manifest(root: &Path) -> Result<ManifestBuild> {
    let layout = Layout::new(root);
    let dir = root.join(Layout::SYNTHETIC);
    let listing = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();
    for item in listing {
        let item = item.map_err(|e| Error::io(&dir, e))?;
        if item.file_type().map_err(|e| Error::io(item.path(), e))?.is_file() {
            files.push(item.path());
        }
    }
    files.sort();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for path in files {
        let Some(id) = parse_id(&path) else {
            skipped.push(path);
            continue;
        };
        let mask = Layout::mask_rel(&id);
        let boxes = Layout::detections_rel(&id);
        entries.push(ManifestEntry {
            image: Layout::image_rel(&id),
            mask: layout.abs(&mask).is_file().then_some(mask),
            boxes: layout.abs(&boxes).is_file().then_some(boxes),
            split: Split::Unassigned,
            id,
        });
    }
    Ok(ManifestBuild { manifest: DatasetManifest::new(root, 0, entries)?, skipped })
}

/// Seed-keyed shuffle of the id-sorted entries; the first `floor(N * ratio)`
/// become `train` and the rest `val`. Only split tags change, so entry order
/// stays lexicographic and repeated application is a no-op.
pub fn split_dataset(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let n = manifest.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} samples into train and val")));
    }
    let mut out = DatasetManifest::new(manifest.root.clone(), seed, manifest.entries.clone())?;
    // The small bias absorbs representation error such as 0.7 * 10 = 6.999...
    let n_train = ((n as f64 * ratio + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (rank, &idx) in order.iter().enumerate() {
        out.entries[idx].split = if rank < n_train { Split::Train } else { Split::Val };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_sample, read_sample, write_sample, SampleLabel};

    fn fixture(n: usize) -> DatasetManifest {
        let entries = (0..n)
            .map(|i| ManifestEntry {
                id: format!("s{i:03}"),
                image: Layout::image_rel(&format!("s{i:03}")),
                mask: None,
                boxes: None,
                split: Split::Unassigned,
            })
            .collect();
        DatasetManifest::new("root", 0, entries).unwrap()
    }

    #[test]
    fn split_counts() {
        for (n, train) in [(10, 8), (5, 4), (101, 80), (2, 1)] {
            let s = split_dataset(&fixture(n), 0.8, 3).unwrap();
            assert_eq!(s.count(Split::Train), train, "n={n}");
            assert_eq!(s.count(Split::Val), n - train);
            assert_eq!(s.count(Split::Unassigned), 0);
        }
    }

    #[test]
    fn split_is_deterministic_and_idempotent() {
        let m = fixture(10);
        let a = split_dataset(&m, 0.8, 42).unwrap();
        assert_eq!(a, split_dataset(&m, 0.8, 42).unwrap());
        assert_eq!(a, split_dataset(&a, 0.8, 42).unwrap());
        assert_ne!(a, split_dataset(&m, 0.8, 43).unwrap());
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        assert!(split_dataset(&fixture(1), 0.8, 0).is_err());
        assert!(split_dataset(&fixture(5), 1.0, 0).is_err());
        assert!(split_dataset(&fixture(5), 0.0, 0).is_err());
    }

    #[test]
    fn write_then_build_lists_written_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut ids = Vec::new();
        for seed in 0..4u64 {
            let label = if seed % 2 == 0 { SampleLabel::Polyps } else { SampleLabel::NonPolyps };
            let s = generate_synthetic_sample(seed, label, (64, 64)).unwrap();
            let entry = write_sample(&s, dir.path()).unwrap();
            assert_eq!(entry.image, format!("synthetic/{}.png", s.id));
            assert_eq!(entry.mask.as_deref(), Some(format!("masks/{}.png", s.id).as_str()));
            let back = read_sample(dir.path(), &entry).unwrap();
            assert_eq!(back.gt_mask, s.gt_mask);
            assert_eq!(back.image, s.image);
            assert_eq!(back.label, s.label);
            ids.push(s.id);
        }
        let built = build_manifest(dir.path()).unwrap();
        let listed: Vec<_> = built.manifest.entries.iter().map(|e| e.id.clone()).collect();
        ids.sort();
        assert_eq!(listed, ids);
        assert!(built.skipped.is_empty());
    }

    #[test]
    fn unmatched_mask_and_bad_names() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..10u64 {
            let mut s = generate_synthetic_sample(i, SampleLabel::Polyps, (64, 64)).unwrap();
            if i == 9 {
                s.gt_mask = None;
            }
            write_sample(&s, dir.path()).unwrap();
        }
        fs::write(dir.path().join("synthetic/not an id.png"), b"x").unwrap();
        fs::write(dir.path().join("synthetic/notes.txt"), b"x").unwrap();
        let built = build_manifest(dir.path()).unwrap();
        assert_eq!(built.manifest.len(), 10);
        assert_eq!(built.skipped.len(), 2);
        let missing: Vec<_> = built.manifest.entries.iter().filter(|e| e.mask.is_none()).collect();
        assert_eq!(missing.len(), 1);
        assert_eq!(missing[0].id, "s000009");
    }

    #[test]
    fn empty_synthetic_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("synthetic")).unwrap();
        assert!(build_manifest(dir.path()).unwrap().manifest.is_empty());
    }

    #[test]
    fn manifest_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = split_dataset(&fixture(5), 0.8, 1).unwrap();
        let p = dir.path().join("manifest.json");
        m.save(&p).unwrap();
        let loaded = DatasetManifest::load(&p).unwrap();
        assert_eq!(loaded.root, dir.path().join(&m.root));
        m.root = dir.path().join("elsewhere");
        m.save(&p).unwrap();
        assert_eq!(DatasetManifest::load(&p).unwrap(), m);
    }

    #[test]
    fn manifest_in_its_root_stores_relative_root() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(dir.path(), 0, vec![]).unwrap();
        let p = dir.path().join("manifest.json");
        m.save(&p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().contains("\"root\": \".\""));
        assert_eq!(DatasetManifest::load(&p).unwrap().root, dir.path());
    }
}
