use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xreg_autograd::Tensor;

use super::npy::{read_tensor, write_tensor};
use super::phantom::PhantomPair;
use super::volume::normalize_intensity;
use crate::error::{Error, Result};
use crate::eval::{EvalPair, LabelVolume};
use crate::train::TrainingPair;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Subjects per split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// The 8:1:3 train/val/test proportions scaled to `n` subjects.
    pub fn proportional(n: usize) -> Self {
        let val = (n as f64 / 12.0).round() as usize;
        let test = (n as f64 / 4.0).round() as usize;
        SplitCounts {
            train: n.saturating_sub(val + test),
            val,
            test,
        }
    }
}

/// One co-registered pair on disk, paths relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub subject: String,
    pub a: String,
    pub b: String,
    pub labels: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestPair {
    pub split: Split,
    #[serde(flatten)]
    pub entry: PairEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Applied when images are loaded; files hold raw intensities.
    pub normalization: String,
    pub voxel_mm: f64,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            normalization: "minmax[-1,1]".into(),
            voxel_mm: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub counts: SplitCounts,
    pub preprocessing: Preprocessing,
    pub legend: BTreeMap<u16, String>,
    pub pairs: Vec<ManifestPair>,
}

/// Shuffle subjects with `seed` and deal them into splits of the given sizes.
/// Pairs of subjects left over are dropped.
pub fn build_manifest(
    entries: Vec<PairEntry>,
    counts: SplitCounts,
    seed: u64,
    preprocessing: Preprocessing,
    legend: BTreeMap<u16, String>,
) -> Result<DatasetManifest> {
    let mut subjects: Vec<String> = entries.iter().map(|e| e.subject.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if counts.total() > subjects.len() {
        return Err(Error::Dataset(format!(
            "split needs {} subjects, only {} available",
            counts.total(),
            subjects.len()
        )));
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split_of = BTreeMap::new();
    let plan = [(Split::Train, counts.train), (Split::Val, counts.val), (Split::Test, counts.test)];
    let mut it = subjects.into_iter();
    for (split, n) in plan {
        for s in it.by_ref().take(n) {
            split_of.insert(s, split);
        }
    }
    let pairs = entries
        .into_iter()
        .filter_map(|entry| split_of.get(&entry.subject).map(|&split| ManifestPair { split, entry }))
        .collect();
    let m = DatasetManifest {
        seed,
        counts,
        preprocessing,
        legend,
        pairs,
    };
    m.validate()?;
    Ok(m)
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for p in &self.pairs {
            if let Some(&s) = seen.get(p.entry.subject.as_str()) {
                if s != p.split {
                    return Err(Error::Dataset(format!("subject {} is in {s:?} and {:?}", p.entry.subject, p.split)));
                }
            }
            seen.insert(&p.entry.subject, p.split);
        }
        if let Some(first) = self.pairs.first() {
            if let Some(bad) = self.pairs.iter().find(|p| p.entry.shape != first.entry.shape) {
                return Err(Error::Dataset(format!(
                    "pair {} has shape {:?}, expected {:?}",
                    bad.entry.subject, bad.entry.shape, first.entry.shape
                )));
            }
        }
        if self.legend.is_empty() {
            return Err(Error::Dataset("label legend is empty".into()));
        }
        Ok(())
    }

    pub fn subjects(&self, split: Split) -> Vec<&str> {
        self.pairs.iter().filter(|p| p.split == split).map(|p| p.entry.subject.as_str()).collect()
    }
}

/// A loaded pair with normalized intensities.
#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub subject: String,
    pub split: Split,
    pub a: Tensor,
    pub b: Tensor,
    pub labels: LabelVolume,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub pairs: Vec<LoadedPair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LoadedPair> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    pub fn training_pairs(&self) -> Vec<TrainingPair> {
        self.split(Split::Train)
            .map(|p| TrainingPair {
                a: p.a.clone(),
                b: p.b.clone(),
            })
            .collect()
    }

    pub fn eval_pairs(&self, split: Split) -> Vec<EvalPair> {
        self.split(split)
            .map(|p| EvalPair {
                a: p.a.clone(),
                b: p.b.clone(),
                labels: p.labels.clone(),
            })
            .collect()
    }
}

/// Write phantom pairs as `<subject>/{a,b,labels}.npy` plus the manifest.
pub fn write_dataset(dir: impl AsRef<Path>, pairs: &[PhantomPair], counts: SplitCounts, seed: u64) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let mut entries = Vec::with_capacity(pairs.len());
    let mut legend = BTreeMap::new();
    let width = pairs.len().saturating_sub(1).to_string().len().max(3);
    for (i, p) in pairs.iter().enumerate() {
        let subject = format!("subject_{i:0width$}");
        let sub = dir.join(&subject);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        write_tensor(&p.a.image, sub.join("a.npy"))?;
        write_tensor(&p.b.image, sub.join("b.npy"))?;
        write_tensor(&p.labels.to_tensor(), sub.join("labels.npy"))?;
        legend.extend(p.labels.legend().clone());
        entries.push(PairEntry {
            a: format!("{subject}/a.npy"),
            b: format!("{subject}/b.npy"),
            labels: format!("{subject}/labels.npy"),
            shape: p.labels.dims().to_vec(),
            subject,
        });
    }
    let voxel_mm = pairs.first().map_or(1.0, |p| p.a.voxel_size[0]);
    let preprocessing = Preprocessing {
        voxel_mm,
        ..Default::default()
    };
    let manifest = build_manifest(entries, counts, seed, preprocessing, legend)?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    m.validate().map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(m)
}

/// Load every pair listed in the manifest, normalizing intensities.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let resolve = |rel: &str| -> PathBuf { dir.join(rel) };
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for p in &manifest.pairs {
        let e = &p.entry;
        let a = read_tensor(resolve(&e.a))?;
        let b = read_tensor(resolve(&e.b))?;
        let labels = LabelVolume::from_tensor(&read_tensor(resolve(&e.labels))?, manifest.legend.clone())?;
        let mut shape = vec![1, 1];
        shape.extend_from_slice(&e.shape);
        for (t, file) in [(&a, &e.a), (&b, &e.b)] {
            if t.shape() != shape.as_slice() {
                return Err(Error::format(resolve(file), format!("shape {:?}, manifest says {:?}", t.shape(), e.shape)));
            }
        }
        if labels.dims() != e.shape.as_slice() {
            return Err(Error::format(resolve(&e.labels), format!("label shape {:?}, manifest says {:?}", labels.dims(), e.shape)));
        }
        pairs.push(LoadedPair {
            subject: e.subject.clone(),
            split: p.split,
            a: normalize_intensity(&a),
            b: normalize_intensity(&b),
            labels,
        });
    }
    Ok(Dataset { manifest, pairs })
}
