//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.json        counts, vocabularies, split assignment
//! <root>/images/<id>.ppm      binary P6, 8-bit
//! <root>/captions/<id>.json   {"texture", "shape", "gel_id", "contact"}
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ppm;
use super::render::{ShapeKind, SyntheticGenerator, TactileSample, TextureKind};
use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";
pub const CAPTIONS_DIR: &str = "captions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub sample_count: usize,
    pub gel_count: usize,
    pub image_size: usize,
    pub textures: Vec<String>,
    pub shapes: Vec<String>,
    /// Sample ids in iteration order.
    pub samples: Vec<String>,
    pub splits: Splits,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count != self.samples.len() {
            return Err(Error::Integrity(format!(
                "manifest declares {} samples but lists {}",
                self.sample_count,
                self.samples.len()
            )));
        }
        for (name, vocab) in [("texture", &self.textures), ("shape", &self.shapes)] {
            if vocab.is_empty() {
                return Err(Error::Integrity(format!("{name} vocabulary is empty")));
            }
            let unique: HashSet<&String> = vocab.iter().collect();
            if unique.len() != vocab.len() {
                return Err(Error::Integrity(format!("{name} vocabulary has duplicates")));
            }
        }
        let all: HashSet<&String> = self.samples.iter().collect();
        if all.len() != self.samples.len() {
            return Err(Error::Integrity("duplicate sample ids".into()));
        }
        let mut seen = HashSet::new();
        for id in self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test) {
            if !all.contains(id) {
                return Err(Error::Integrity(format!("split references unknown sample {id}")));
            }
            if !seen.insert(id) {
                return Err(Error::Integrity(format!("sample {id} appears in more than one split")));
            }
        }
        if seen.len() != all.len() {
            return Err(Error::Integrity("some samples are not assigned to a split".into()));
        }
        Ok(())
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|&s| self.splits.ids(s).iter().any(|x| x == id))
    }
}

/// Knobs for the procedurally generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub image_size: usize,
    pub gel_count: usize,
    pub seeds_per_combo: usize,
    /// Bare-gel frames per gel; these are written but never trained on.
    pub no_contact_per_gel: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            gel_count: 3,
            seeds_per_combo: 64,
            no_contact_per_gel: 16,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 43,
        }
    }
}

/// A generated dataset held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<TactileSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&TactileSample> {
        let wanted: HashSet<&String> = self.manifest.splits.ids(split).iter().collect();
        self.manifest
            .samples
            .iter()
            .zip(&self.samples)
            .filter(|(id, _)| wanted.contains(id))
            .map(|(_, s)| s)
            .collect()
    }

    pub fn contact_split(&self, split: Split) -> Vec<&TactileSample> {
        self.split(split).into_iter().filter(|s| s.contact).collect()
    }
}

/// Generate every (gel, shape, texture, seed) combination plus bare-gel frames.
pub fn generate_dataset(cfg: &DataConfig) -> Result<Dataset> {
    let generator = SyntheticGenerator::new(cfg.image_size, cfg.gel_count)?;
    let mut samples = Vec::new();
    let mut ids = Vec::new();
    for gel in 0..cfg.gel_count {
        for shape in 0..generator.shapes.len() {
            for texture in 0..generator.textures.len() {
                for s in 0..cfg.seeds_per_combo {
                    let seed = rng::mix(&[cfg.seed, s as u64]);
                    samples.push(generator.generate_sample(texture, Some(shape), gel, seed)?);
                    ids.push(format!("g{gel}-s{shape}-t{texture}-{s:04}"));
                }
            }
        }
        for s in 0..cfg.no_contact_per_gel {
            let seed = rng::mix(&[cfg.seed, 1 << 32, s as u64]);
            samples.push(generator.generate_sample(0, None, gel, seed)?);
            ids.push(format!("g{gel}-none-{s:04}"));
        }
    }

    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, 0x5917));
    let n = ids.len();
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    let n_val = (n as f64 * cfg.val_fraction).round() as usize;
    if n_test + n_val > n {
        return Err(Error::Config("split fractions exceed 1".into()));
    }
    let pick = |range: std::ops::Range<usize>| -> Vec<String> {
        let mut v: Vec<usize> = order[range].to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| ids[i].clone()).collect()
    };
    let splits = Splits {
        test: pick(0..n_test),
        val: pick(n_test..n_test + n_val),
        train: pick(n_test + n_val..n),
    };
    let manifest = DatasetManifest {
        root: PathBuf::new(),
        sample_count: n,
        gel_count: cfg.gel_count,
        image_size: cfg.image_size,
        textures: TextureKind::ALL.iter().map(|t| t.word().to_string()).collect(),
        shapes: ShapeKind::ALL.iter().map(|s| s.caption().to_string()).collect(),
        samples: ids,
        splits,
    };
    manifest.validate()?;
    Ok(Dataset { manifest, samples })
}

/// Sidecar caption record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub texture: String,
    pub shape: String,
    pub gel_id: usize,
    pub contact: bool,
}

pub fn write_dataset(root: &Path, manifest: &DatasetManifest, samples: &[TactileSample]) -> Result<()> {
    manifest.validate()?;
    if samples.len() != manifest.sample_count {
        return Err(Error::Integrity(format!(
            "{} samples supplied for a manifest of {}",
            samples.len(),
            manifest.sample_count
        )));
    }
    for dir in [root.to_path_buf(), root.join(IMAGES_DIR), root.join(CAPTIONS_DIR)] {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (id, sample) in manifest.samples.iter().zip(samples) {
        sample.validate(manifest.gel_count)?;
        ppm::write(&root.join(IMAGES_DIR).join(format!("{id}.ppm")), &sample.image)?;
        let record = CaptionRecord {
            texture: sample.texture_caption.clone(),
            shape: sample.shape_caption.clone(),
            gel_id: sample.gel_id,
            contact: sample.contact,
        };
        let path = root.join(CAPTIONS_DIR).join(format!("{id}.json"));
        std::fs::write(&path, serde_json::to_vec(&record)?).map_err(|e| Error::io(&path, e))?;
    }
    let path = root.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    manifest.root = root.to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

pub fn read_caption(root: &Path, id: &str) -> Result<CaptionRecord> {
    let path = root.join(CAPTIONS_DIR).join(format!("{id}.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        message: e.to_string(),
    })
}

/// Open a dataset. Samples are decoded lazily in manifest order.
pub fn read_dataset(root: &Path) -> Result<(DatasetManifest, impl Iterator<Item = Result<TactileSample>>)> {
    let manifest = read_manifest(root)?;
    let images_dir = root.join(IMAGES_DIR);
    let entries = std::fs::read_dir(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut image_count = 0usize;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&images_dir, e))?;
        if entry.path().extension().is_some_and(|x| x == "ppm") {
            image_count += 1;
        }
    }
    if image_count != manifest.sample_count {
        return Err(Error::Integrity(format!(
            "manifest lists {} samples but {} images are present",
            manifest.sample_count, image_count
        )));
    }
    let root = root.to_path_buf();
    let ids = manifest.samples.clone();
    let gel_count = manifest.gel_count;
    let iter = ids.into_iter().map(move |id| {
        let image_path = root.join(IMAGES_DIR).join(format!("{id}.ppm"));
        if !image_path.exists() {
            return Err(Error::Integrity(format!("missing image for sample {id}")));
        }
        let image = ppm::read(&image_path)?;
        let rec = read_caption(&root, &id)?;
        let sample = TactileSample {
            image,
            texture_caption: rec.texture,
            shape_caption: rec.shape,
            gel_id: rec.gel_id,
            contact: rec.contact,
        };
        sample.validate(gel_count)?;
        Ok(sample)
    });
    Ok((manifest, iter))
}

/// Read a whole dataset into memory.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let (manifest, iter) = read_dataset(root)?;
    let samples = iter.collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DataConfig {
        DataConfig {
            image_size: 16,
            gel_count: 3,
            seeds_per_combo: 1,
            no_contact_per_gel: 1,
            ..DataConfig::default()
        }
    }

    #[test]
    fn default_config_has_3072_contact_samples() {
        let cfg = DataConfig::default();
        assert_eq!(cfg.gel_count * 4 * 4 * cfg.seeds_per_combo, 3072);
    }

    #[test]
    fn splits_partition_samples() {
        let ds = generate_dataset(&small_config()).unwrap();
        assert_eq!(ds.samples.len(), 3 * 16 + 3);
        ds.manifest.validate().unwrap();
        let total = ds.manifest.splits.train.len() + ds.manifest.splits.val.len() + ds.manifest.splits.test.len();
        assert_eq!(total, ds.samples.len());
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut ds = generate_dataset(&small_config()).unwrap();
        // Keep ten samples.
        ds.samples.truncate(10);
        ds.manifest.samples.truncate(10);
        ds.manifest.sample_count = 10;
        ds.manifest.splits = Splits {
            train: ds.manifest.samples[..8].to_vec(),
            val: ds.manifest.samples[8..9].to_vec(),
            test: ds.manifest.samples[9..].to_vec(),
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds.manifest, &ds.samples).unwrap();
        let (manifest, iter) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest.gel_count, 3);
        assert_eq!(manifest.samples, ds.manifest.samples);
        let back: Vec<TactileSample> = iter.collect::<Result<_>>().unwrap();
        assert_eq!(back, ds.samples);
    }

    #[test]
    fn image_count_mismatch_is_an_integrity_error() {
        let mut ds = generate_dataset(&small_config()).unwrap();
        ds.samples.truncate(5);
        ds.manifest.samples.truncate(5);
        ds.manifest.sample_count = 5;
        ds.manifest.splits = Splits {
            train: ds.manifest.samples.clone(),
            ..Splits::default()
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds.manifest, &ds.samples).unwrap();
        let victim = dir.path().join(IMAGES_DIR).join(format!("{}.ppm", ds.manifest.samples[3]));
        std::fs::remove_file(victim).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn corrupt_manifest_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), b"{ not json").unwrap();
        let err = read_manifest(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains(MANIFEST_FILE));
    }

    #[test]
    fn gel_count_survives_round_trip() {
        let ds = generate_dataset(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds.manifest, &ds.samples).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap().gel_count, 3);
    }
}
