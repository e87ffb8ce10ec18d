//! Checkpoints: `manifest.json` (configuration, digests, counters, parameter
//! table) plus `tensors.bin`, a sequence of records
//! `[name length: u32 | name | dtype code: u8 | rank: u8 | dims: u64 × rank |
//! little-endian payload]`.
//!
//! Records are parameter values (`param/<name>`) followed, when optimizer
//! state is saved, by first and second moments (`opt_m/<name>`,
//! `opt_v/<name>`). All randomness in training is derived from
//! `(seed, step)`, so the saved seed and step are the complete RNG state.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use graphfm_core::config::ModelConfig;
use graphfm_core::graph::Task;
use graphfm_core::model::GraphFm;
use graphfm_core::numerics::{DType, Group, Scalar, Tensor};
use graphfm_core::trainer::{Moments, OptimHyper, OptimState, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "graphfm-checkpoint/1";
pub const MANIFEST: &str = "manifest.json";
pub const TENSORS: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub id: u32,
    pub name: String,
    pub num_features: usize,
    pub num_classes: usize,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub no_decay: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimMeta {
    pub hyper: OptimHyper,
    pub step: u64,
    /// Per-parameter update counts (bias correction), aligned with `params`.
    pub moment_steps: Vec<u64>,
}

/// Counter-based RNG state: every draw derives from `(seed, step)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: DType,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub step: u64,
    pub tokens_seen: u64,
    #[serde(default)]
    pub corpus_digest: Option<String>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    pub rng: RngState,
    pub adapters: Vec<AdapterMeta>,
    pub params: Vec<ParamMeta>,
    #[serde(default)]
    pub optimizer: Option<OptimMeta>,
}

impl CheckpointManifest {
    pub fn adapter_by_name(&self, name: &str) -> Option<&AdapterMeta> {
        self.adapters.iter().find(|a| a.name == name)
    }

    /// Smallest id not used by any adapter.
    pub fn next_adapter_id(&self) -> u32 {
        self.adapters.iter().map(|a| a.id + 1).max().unwrap_or(0)
    }
}

/// What to save besides the model.
#[derive(Clone, Debug, Default)]
pub struct SaveInfo<'a, T> {
    pub opt: Option<&'a OptimState<T>>,
    pub train: Option<&'a TrainConfig>,
    pub step: u64,
    pub tokens_seen: u64,
    pub corpus_digest: Option<String>,
    /// Adapter names by dataset id (missing ids are saved as `dataset-<id>`).
    pub names: BTreeMap<u32, String>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub manifest: CheckpointManifest,
    pub model: GraphFm<T>,
    pub opt: Option<OptimState<T>>,
}

fn manifest_for<T: Scalar>(model: &GraphFm<T>, info: &SaveInfo<'_, T>) -> CheckpointManifest {
    let adapters = model
        .adapters
        .values()
        .map(|a| AdapterMeta {
            id: a.dataset,
            name: info.names.get(&a.dataset).cloned().unwrap_or_else(|| format!("dataset-{}", a.dataset)),
            num_features: a.num_features,
            num_classes: a.num_classes,
            task: a.task,
        })
        .collect::<Vec<_>>();
    // adapters are listed in parameter-store order so loading can replay them
    let mut order: Vec<(usize, AdapterMeta)> = adapters
        .into_iter()
        .map(|m| {
            let first = model.store.iter().position(|(_, p)| p.group.dataset() == Some(m.id)).unwrap_or(usize::MAX);
            (first, m)
        })
        .collect();
    order.sort_by_key(|(first, m)| (*first, m.id));
    CheckpointManifest {
        format: FORMAT.into(),
        dtype: T::DTYPE,
        model: model.config.clone(),
        model_seed: model.seed,
        step: info.step,
        tokens_seen: info.tokens_seen,
        corpus_digest: info.corpus_digest.clone(),
        train: info.train.cloned(),
        rng: RngState { seed: info.train.map_or(model.seed, |t| t.seed), step: info.step },
        adapters: order.into_iter().map(|(_, m)| m).collect(),
        params: model
            .store
            .iter()
            .map(|(_, p)| ParamMeta {
                name: p.name.clone(),
                group: p.group.tag(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                no_decay: p.no_decay,
            })
            .collect(),
        optimizer: info.opt.map(|o| OptimMeta {
            hyper: o.hyper,
            step: o.step,
            moment_steps: o.moments.iter().map(|m| m.step).collect(),
        }),
    }
}

fn write_record<T: Scalar>(w: &mut impl Write, name: &str, t: &Tensor<T>) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[T::DTYPE.code(), t.shape().len() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        match T::DTYPE {
            DType::F32 => w.write_all(&(x.f64() as f32).to_le_bytes())?,
            DType::F64 => w.write_all(&x.f64().to_le_bytes())?,
        }
    }
    Ok(())
}

/// One decoded record; payload widened to f64 (exact for both dtypes).
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn read_exact<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Reads the next record; `Ok(None)` at a clean end of file.
pub fn read_record(r: &mut impl Read) -> std::result::Result<Option<Record>, String> {
    let mut len = [0u8; 4];
    match r.read(&mut len[..1]) {
        Ok(0) => return Ok(None),
        Ok(_) => {}
        Err(e) => return Err(e.to_string()),
    }
    r.read_exact(&mut len[1..]).map_err(|e| e.to_string())?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 1 << 20 {
        return Err(format!("record name of {} bytes", len));
    }
    let mut name = vec![0u8; len];
    r.read_exact(&mut name).map_err(|e| e.to_string())?;
    let name = String::from_utf8(name).map_err(|e| e.to_string())?;
    let [code, rank] = read_exact::<2>(r).map_err(|e| e.to_string())?;
    let dtype = DType::from_code(code).ok_or_else(|| format!("{}: unknown dtype code {}", name, code))?;
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(read_exact::<8>(r).map_err(|e| e.to_string())?) as usize);
    }
    let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| format!("{}: shape overflow", name))?;
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut bytes = vec![0u8; count.checked_mul(width).ok_or("payload overflow")?];
    r.read_exact(&mut bytes).map_err(|e| format!("{}: {}", name, e))?;
    let data = match dtype {
        DType::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect(),
        DType::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
    };
    Ok(Some(Record { name, dtype, shape, data }))
}

fn write_files<T: Scalar>(dir: &Path, model: &GraphFm<T>, info: &SaveInfo<'_, T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = manifest_for(model, info);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Validation(e.to_string()))?;
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
    let tpath = dir.join(TENSORS);
    let file = fs::File::create(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&tpath, e);
    for (_, p) in model.store.iter() {
        write_record(&mut w, &format!("param/{}", p.name), &p.value).map_err(io)?;
    }
    if let Some(opt) = info.opt {
        if opt.moments.len() != model.store.len() {
            return Err(Error::Validation("optimizer state does not match the model".into()));
        }
        for ((_, p), m) in model.store.iter().zip(&opt.moments) {
            write_record(&mut w, &format!("opt_m/{}", p.name), &m.m).map_err(io)?;
            write_record(&mut w, &format!("opt_v/{}", p.name), &m.v).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    w.into_inner().map_err(|e| Error::io(&tpath, e.into_error()))?.sync_all().map_err(io)
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    dir.with_file_name(name)
}

/// Writes a checkpoint to `dir`, replacing any previous one only once the new
/// one is complete: an interrupted save leaves the last good checkpoint.
pub fn save<T: Scalar>(dir: &Path, model: &GraphFm<T>, info: &SaveInfo<'_, T>) -> Result<()> {
    let tmp = sibling(dir, ".tmp");
    let old = sibling(dir, ".old");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    write_files(&tmp, model, info)?;
    if dir.exists() {
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    if old.exists() {
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.clone(), line: e.line(), msg: e.to_string() })?;
    if m.format != FORMAT {
        return Err(Error::Validation(format!("{}: unsupported format {:?}", path.display(), m.format)));
    }
    Ok(m)
}

fn tensor_from<T: Scalar>(rec: Record, expect: &[usize], path: &Path) -> Result<Tensor<T>> {
    if rec.shape != expect {
        return Err(Error::Validation(format!(
            "{}: {} has shape {:?}, expected {:?}",
            path.display(),
            rec.name,
            rec.shape,
            expect
        )));
    }
    Tensor::new(rec.shape, rec.data.into_iter().map(T::of).collect()).map_err(|e| Error::Validation(e.to_string()))
}

/// Loads a checkpoint at element type `T` (values are converted when the
/// stored dtype differs; reloading at the saved dtype is bit-exact).
pub fn load<T: Scalar>(dir: &Path) -> Result<Checkpoint<T>> {
    let manifest = read_manifest(dir)?;
    let mut model = GraphFm::<T>::new(manifest.model.clone(), manifest.model_seed)?;
    for a in &manifest.adapters {
        model.add_adapter(a.id, a.num_features, a.num_classes, a.task)?;
    }
    let tpath = dir.join(TENSORS);
    if model.store.len() != manifest.params.len() {
        return Err(Error::Validation(format!(
            "{}: {} parameters listed, the configuration builds {}",
            dir.display(),
            manifest.params.len(),
            model.store.len()
        )));
    }
    for ((_, p), meta) in model.store.iter().zip(&manifest.params) {
        if p.name != meta.name || p.group.tag() != meta.group || Group::parse(&meta.group).is_none() {
            return Err(Error::Validation(format!("{}: parameter {} does not match {}", dir.display(), meta.name, p.name)));
        }
    }
    let file = fs::File::open(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let mut r = BufReader::new(file);
    let mut next = |what: &str, name: &str| -> Result<Record> {
        let rec = read_record(&mut r)
            .map_err(|msg| Error::Parse { path: tpath.clone(), line: 0, msg })?
            .ok_or_else(|| Error::Validation(format!("{}: missing record {}/{}", tpath.display(), what, name)))?;
        if rec.name != format!("{}/{}", what, name) {
            return Err(Error::Validation(format!("{}: found record {}, expected {}/{}", tpath.display(), rec.name, what, name)));
        }
        Ok(rec)
    };
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for (&id, meta) in ids.iter().zip(&manifest.params) {
        let rec = next("param", &meta.name)?;
        let p = model.store.get_mut(id);
        p.value = tensor_from(rec, &meta.shape, &tpath)?;
        p.trainable = meta.trainable;
    }
    let opt = match &manifest.optimizer {
        None => None,
        Some(o) => {
            if o.moment_steps.len() != manifest.params.len() {
                return Err(Error::Validation(format!("{}: optimizer state length mismatch", dir.display())));
            }
            let mut moments = Vec::with_capacity(ids.len());
            for (meta, &step) in manifest.params.iter().zip(&o.moment_steps) {
                let m = tensor_from(next("opt_m", &meta.name)?, &meta.shape, &tpath)?;
                let v = tensor_from(next("opt_v", &meta.name)?, &meta.shape, &tpath)?;
                moments.push(Moments { m, v, step });
            }
            Some(OptimState { hyper: o.hyper, moments, step: o.step })
        }
    };
    if read_record(&mut r).map_err(|msg| Error::Parse { path: tpath.clone(), line: 0, msg })?.is_some() {
        return Err(Error::Validation(format!("{}: trailing records", tpath.display())));
    }
    Ok(Checkpoint { manifest, model, opt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use graphfm_core::trainer::OptimHyper;

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_latents: 4,
            dim: 8,
            cross_heads: 2,
            cross_ffn: 16,
            self_depth: 1,
            self_heads: 2,
            self_ffn: 16,
            dec_depth: 1,
            dec_heads: 2,
            dec_ffn: 16,
            neighbors: 3,
            ..ModelConfig::small()
        }
    }

    fn model<T: Scalar>() -> GraphFm<T> {
        let mut m = GraphFm::<T>::new(tiny(), 5).unwrap();
        m.add_adapter(1, 3, 4, Task::Multiclass).unwrap();
        m.add_adapter(0, 1, 2, Task::Multilabel).unwrap();
        // perturb values so a fresh init would not pass for a reload
        for (i, (_, p)) in m.store.iter_mut().enumerate() {
            for (j, x) in p.value.data_mut().iter_mut().enumerate() {
                *x += T::of(((i * 31 + j) % 17) as f64 * 1e-3 + 1.0 / 3.0);
            }
        }
        m
    }

    fn round_trip<T: Scalar>() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let m = model::<T>();
        let mut opt = OptimState::new(&m.store, OptimHyper::lamb(0.01));
        opt.step = 7;
        for (i, mo) in opt.moments.iter_mut().enumerate() {
            mo.step = i as u64;
            mo.m.data_mut().iter_mut().for_each(|x| *x = T::of(0.1 + i as f64));
            mo.v.data_mut().iter_mut().for_each(|x| *x = T::of(1.0 / 7.0));
        }
        let info = SaveInfo { opt: Some(&opt), step: 12, tokens_seen: 99, ..Default::default() };
        save(&path, &m, &info).unwrap();
        let back = load::<T>(&path).unwrap();
        assert_eq!(back.manifest.step, 12);
        assert_eq!(back.manifest.tokens_seen, 99);
        assert_eq!(back.manifest.dtype, T::DTYPE);
        assert_eq!(back.opt.as_ref().unwrap(), &opt);
        for ((_, a), (_, b)) in back.model.store.iter().zip(m.store.iter()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.f64().to_bits() == y.f64().to_bits()), "{}", a.name);
        }
        assert_eq!(back.manifest.next_adapter_id(), 2);
    }

    #[test]
    fn round_trip_f64_bit_exact() {
        round_trip::<f64>();
    }

    #[test]
    fn round_trip_f32_bit_exact() {
        round_trip::<f32>();
    }

    #[test]
    fn record_layout() {
        let mut buf = Vec::new();
        write_record(&mut buf, "ab", &Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.0]).unwrap()).unwrap();
        let mut expect = vec![2, 0, 0, 0, b'a', b'b', 0, 2];
        expect.extend(2u64.to_le_bytes());
        expect.extend(1u64.to_le_bytes());
        expect.extend(1.0f32.to_le_bytes());
        expect.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expect);
        let rec = read_record(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(rec, Record { name: "ab".into(), dtype: DType::F32, shape: vec![2, 1], data: vec![1.0, -2.0] });
    }

    #[test]
    fn truncated_tensors_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        save(&path, &model::<f64>(), &SaveInfo::default()).unwrap();
        let t = path.join(TENSORS);
        let mut bytes = fs::read(&t).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&t, bytes).unwrap();
        assert!(load::<f64>(&path).is_err());
    }

    #[test]
    fn save_replaces_previous_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let m = model::<f64>();
        save(&path, &m, &SaveInfo { step: 1, ..Default::default() }).unwrap();
        save(&path, &m, &SaveInfo { step: 2, ..Default::default() }).unwrap();
        assert_eq!(read_manifest(&path).unwrap().step, 2);
        assert!(!sibling(&path, ".tmp").exists() && !sibling(&path, ".old").exists());
    }

    #[test]
    fn f32_checkpoint_loads_at_f64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let m = model::<f32>();
        save(&path, &m, &SaveInfo::default()).unwrap();
        let back = load::<f64>(&path).unwrap();
        for ((_, a), (_, b)) in back.model.store.iter().zip(m.store.iter()) {
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| *x == *y as f64));
        }
    }
}
