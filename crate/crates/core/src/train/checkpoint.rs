//! Checkpoint directory: `manifest.json`, `params/<name>.npy`, and Adam
//! moments under `optim/<group>/<name>.{m,v}.npy`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use xreg_autograd::{Adam, Moments, Tensor};

use super::config::TrainConfig;
use super::step::Optimizers;
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::nets::RegistrationModel;

pub const CHECKPOINT_VERSION: u64 = 1;
const FORMAT: &str = "xreg-checkpoint";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: RegistrationModel,
    pub optimizers: Optimizers,
    pub step: usize,
    pub config: TrainConfig,
}

#[derive(Serialize)]
struct ParamEntry<'a> {
    name: &'a str,
    shape: &'a [usize],
    file: String,
}

fn param_file(name: &str) -> String {
    format!("params/{name}.npy")
}

fn moment_file(group: &str, name: &str, which: &str) -> String {
    format!("optim/{group}/{name}.{which}.npy")
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn optimizer_entry(opt: &Adam) -> Value {
    json!({
        "learn_rate": opt.learn_rate,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "eps": opt.eps,
        "steps": opt.steps(),
    })
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    model: &RegistrationModel,
    opts: &Optimizers,
    step: usize,
    config: &TrainConfig,
) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(&dir.join("params"))?;
    let mut entries = Vec::new();
    for p in model.parameters() {
        let file = param_file(p.name());
        write_tensor(&p.tensor, dir.join(&file))?;
        entries.push(ParamEntry {
            name: p.name(),
            shape: p.shape(),
            file,
        });
    }
    for (group, opt) in [("generator", &opts.generator), ("discriminator", &opts.discriminator)] {
        create_dir(&dir.join("optim").join(group))?;
        for (name, m) in opt.moments() {
            let shape = model
                .parameters()
                .into_iter()
                .find(|p| p.name() == name)
                .map(|p| p.shape().to_vec())
                .unwrap_or_else(|| vec![m.first.len()]);
            for (which, data) in [("m", &m.first), ("v", &m.second)] {
                let t = Tensor::new(shape.clone(), data.clone())?;
                write_tensor(&t, dir.join(moment_file(group, name, which)))?;
            }
        }
    }
    let manifest = json!({
        "format": FORMAT,
        "version": CHECKPOINT_VERSION,
        "spatial_rank": model.spatial_rank(),
        "step": step,
        "config": config,
        "parameters": entries,
        "optimizers": {
            "generator": optimizer_entry(&opts.generator),
            "discriminator": optimizer_entry(&opts.discriminator),
        },
    });
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Parsed manifest; every field read reports its own name on failure.
struct Manifest {
    dir: PathBuf,
    root: Value,
}

impl Manifest {
    fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let root: Value = serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })?;
        let m = Manifest {
            dir: dir.to_path_buf(),
            root,
        };
        let format: String = m.field(&m.root, "format")?;
        if format != FORMAT {
            return Err(Error::Checkpoint(format!("field `format`: {format:?} is not {FORMAT:?}")));
        }
        let version: u64 = m.field(&m.root, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "field `version`: checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        Ok(m)
    }

    fn field<T: DeserializeOwned>(&self, obj: &Value, key: &str) -> Result<T> {
        let v = obj
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("manifest is missing field `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("manifest field `{key}`: {e}")))
    }

    fn object(&self, obj: &Value, key: &str) -> Result<Value> {
        let v: Value = self.field(obj, key)?;
        if v.is_object() || v.is_array() {
            Ok(v)
        } else {
            Err(Error::Checkpoint(format!("manifest field `{key}` has the wrong type")))
        }
    }

    fn optimizer(&self, group: &str) -> Result<Adam> {
        let opts = self.object(&self.root, "optimizers")?;
        let o = self.object(&opts, group)?;
        let mut adam = Adam::new(self.field(&o, "learn_rate")?, self.field(&o, "beta1")?, self.field(&o, "beta2")?);
        adam.eps = self.field(&o, "eps")?;
        let steps: u64 = self.field(&o, "steps")?;
        let mut moments = BTreeMap::new();
        let base = self.dir.join("optim").join(group);
        if base.is_dir() {
            let mut names: Vec<String> = Vec::new();
            for entry in fs::read_dir(&base).map_err(|e| Error::io(&base, e))? {
                let entry = entry.map_err(|e| Error::io(&base, e))?;
                if let Some(n) = entry.file_name().to_str().and_then(|f| f.strip_suffix(".m.npy")) {
                    names.push(n.to_string());
                }
            }
            for name in names {
                let first = read_tensor(self.dir.join(moment_file(group, &name, "m")))?.into_data();
                let second = read_tensor(self.dir.join(moment_file(group, &name, "v")))?.into_data();
                moments.insert(name, Moments { first, second });
            }
        }
        adam.restore(steps, moments);
        Ok(adam)
    }
}

fn fill_model(m: &Manifest, model: &mut RegistrationModel) -> Result<()> {
    let entries = m.object(&m.root, "parameters")?;
    let entries = entries.as_array().cloned().unwrap_or_default();
    let mut listed: BTreeMap<String, (Vec<usize>, String)> = BTreeMap::new();
    for e in &entries {
        let name: String = m.field(e, "name")?;
        let shape: Vec<usize> = m.field(e, "shape")?;
        let file: String = m.field(e, "file")?;
        listed.insert(name, (shape, file));
    }
    let known: Vec<String> = model.parameters().iter().map(|p| p.name().to_string()).collect();
    if let Some(extra) = listed.keys().find(|n| !known.contains(n)) {
        return Err(Error::Checkpoint(format!("unknown parameter `{extra}`")));
    }
    for p in model.parameters_mut() {
        let (shape, file) = listed
            .get(p.name())
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name())))?;
        if shape.as_slice() != p.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter `{}`: checkpoint {shape:?} vs model {:?}",
                p.name(),
                p.shape()
            )));
        }
        let t = read_tensor(m.dir.join(file))?;
        if t.shape() != p.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter `{}`: file holds {:?}, model expects {:?}",
                p.name(),
                t.shape(),
                p.shape()
            )));
        }
        p.tensor = t;
    }
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let m = Manifest::read(dir.as_ref())?;
    let rank: usize = m.field(&m.root, "spatial_rank")?;
    let mut model = RegistrationModel::new(rank, 0)?;
    fill_model(&m, &mut model)?;
    Ok(Checkpoint {
        model,
        optimizers: Optimizers {
            generator: m.optimizer("generator")?,
            discriminator: m.optimizer("discriminator")?,
        },
        step: m.field(&m.root, "step")?,
        config: m.field(&m.root, "config")?,
    })
}

/// Load parameters into an existing model, checking every shape against it.
/// Returns the recorded step.
pub fn load_checkpoint_into(dir: impl AsRef<Path>, model: &mut RegistrationModel) -> Result<usize> {
    let m = Manifest::read(dir.as_ref())?;
    fill_model(&m, model)?;
    m.field(&m.root, "step")
}
