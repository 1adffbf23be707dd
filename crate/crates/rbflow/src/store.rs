//! Persistent store. An archive is a JSON text manifest followed by raw
//! little-endian f64 arrays in row-major order:
//!
//! ```text
//! RBSTORE\x01 | u64 LE manifest length | manifest JSON | array bytes
//! ```
//!
//! The manifest lists each array's name, shape and byte offset. Models are
//! single archives; an ensemble is a directory with a manifest and one
//! archive per snapshot.

use crate::affine::Coefficient;
use crate::hifi::{Ensemble, Snapshot};
use crate::reduction::{ModelOptions, Provenance, ReducedModel, ReducedTerm};
use crate::spaces::{PushMode, SpaceKind};
use crate::{Error, ParameterBox, ParameterPoint, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 8] = b"RBSTORE\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// byte offset from the start of the data section
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    /// name → (shape, row-major data)
    pub arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, arrays: BTreeMap::new() }
    }

    pub fn put(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.insert(name.into(), (shape, data));
    }

    pub fn put_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.put(name, vec![v.len()], v.to_vec());
    }

    pub fn put_matrix(&mut self, name: impl Into<String>, m: &DMatrix<f64>) {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(m.row(i).iter());
        }
        self.put(name, vec![r, c], data);
    }

    pub fn get(&self, name: &str) -> Result<&(Vec<usize>, Vec<f64>)> {
        self.arrays.get(name).ok_or_else(|| Error::Store(format!("array '{name}' missing")))
    }

    pub fn vec(&self, name: &str) -> Result<Vec<f64>> {
        let (shape, data) = self.get(name)?;
        if shape.len() != 1 {
            return Err(Error::Store(format!("array '{name}' has shape {shape:?}, expected a vector")));
        }
        Ok(data.clone())
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (shape, data) = self.get(name)?;
        if shape.len() != 2 {
            return Err(Error::Store(format!("array '{name}' has shape {shape:?}, expected a matrix")));
        }
        Ok(DMatrix::from_row_slice(shape[0], shape[1], data))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for (name, (shape, data)) in &self.arrays {
            entries.push(ArrayEntry { name: name.clone(), shape: shape.clone(), offset });
            offset += 8 * data.len() as u64;
        }
        let manifest = Manifest { format: 1, meta: self.meta.clone(), arrays: entries };
        let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + text.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(&text);
        for (_, data) in self.arrays.values() {
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Store("not an rbflow archive (bad magic)".into()));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + n).ok_or_else(|| Error::Store("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        if manifest.format != 1 {
            return Err(Error::Store(format!("unsupported archive format {}", manifest.format)));
        }
        let data = &bytes[16 + n..];
        let mut arrays = BTreeMap::new();
        for e in manifest.arrays {
            let len: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = data
                .get(start..start + 8 * len)
                .ok_or_else(|| Error::Store(format!("array '{}' runs past the end of the file", e.name)))?;
            let v = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            arrays.insert(e.name, (e.shape, v));
        }
        Ok(Self { meta: manifest.meta, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Store(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    crate::spaces::hex(&Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Exclusive lock on a store directory, released on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Store(format!(
                "store {} is locked by another process (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TermLists {
    a: Vec<Coefficient>,
    b: Vec<Coefficient>,
    c: Vec<Coefficient>,
    c0: Vec<Coefficient>,
    d0: Vec<Coefficient>,
    d1: Vec<Coefficient>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    kind: SpaceKind,
    mode: PushMode,
    nu: f64,
    order: usize,
    options: ModelOptions,
    mv: usize,
    ms: usize,
    mp: usize,
    param_box: ParameterBox,
    provenance: Provenance,
    terms: TermLists,
    attached: bool,
}

fn coeffs<T>(t: &[ReducedTerm<T>]) -> Vec<Coefficient> {
    t.iter().map(|t| t.coeff).collect()
}

pub fn model_to_archive(rm: &ReducedModel) -> Archive {
    let header = ModelHeader {
        kind: rm.kind,
        mode: rm.mode,
        nu: rm.nu,
        order: rm.order,
        options: rm.options,
        mv: rm.mv,
        ms: rm.ms,
        mp: rm.mp,
        param_box: rm.param_box,
        provenance: rm.provenance.clone(),
        terms: TermLists { a: coeffs(&rm.a), b: coeffs(&rm.b), c: coeffs(&rm.c), c0: coeffs(&rm.c0), d0: coeffs(&rm.d0), d1: coeffs(&rm.d1) },
        attached: rm.attached.is_some(),
    };
    let mut ar = Archive::new(serde_json::json!({ "type": "reduced-model", "model": header }));
    let mw = rm.mw();
    for (k, t) in rm.a.iter().enumerate() {
        ar.put_matrix(format!("a/{k:03}"), &t.op);
    }
    for (k, t) in rm.b.iter().enumerate() {
        ar.put_matrix(format!("b/{k:03}"), &t.op);
    }
    for (k, t) in rm.c.iter().enumerate() {
        ar.put(format!("c/{k:03}"), vec![mw, mw, mw], t.op.clone());
    }
    for (k, t) in rm.c0.iter().enumerate() {
        ar.put_matrix(format!("c0/{k:03}"), &t.op);
    }
    for (k, t) in rm.d0.iter().enumerate() {
        ar.put_vec(format!("d0/{k:03}"), t.op.as_slice());
    }
    for (k, t) in rm.d1.iter().enumerate() {
        ar.put_vec(format!("d1/{k:03}"), t.op.as_slice());
    }
    ar.put_vec("eig_vel", &rm.eig_vel);
    ar.put_vec("eig_sup", &rm.eig_sup);
    ar.put_vec("eig_pres", &rm.eig_pres);
    ar.put_matrix("vel_basis", &rm.vel_basis);
    ar.put_matrix("pres_basis", &rm.pres_basis);
    if let Some(a) = &rm.attached {
        ar.put_matrix("attached", a);
    }
    ar.put_matrix("gram_w", &rm.gram_w);
    ar.put_matrix("gram_p", &rm.gram_p);
    ar.put_vec("lift", &rm.lift);
    ar
}

pub fn model_from_archive(ar: &Archive) -> Result<ReducedModel> {
    if ar.meta.get("type").and_then(|t| t.as_str()) != Some("reduced-model") {
        return Err(Error::Store("archive does not hold a reduced model".into()));
    }
    let h: ModelHeader = serde_json::from_value(ar.meta["model"].clone())?;
    let mw = h.mv + h.ms;
    let mats = |prefix: &str, list: &[Coefficient], rows: usize, cols: usize| -> Result<Vec<ReducedTerm<DMatrix<f64>>>> {
        list.iter()
            .enumerate()
            .map(|(k, c)| {
                let m = ar.matrix(&format!("{prefix}/{k:03}"))?;
                if m.shape() != (rows, cols) {
                    return Err(Error::Store(format!("{prefix}/{k:03} has shape {:?}", m.shape())));
                }
                Ok(ReducedTerm { coeff: *c, op: m })
            })
            .collect()
    };
    let vecs = |prefix: &str, list: &[Coefficient], len: usize| -> Result<Vec<ReducedTerm<DVector<f64>>>> {
        list.iter()
            .enumerate()
            .map(|(k, c)| {
                let v = ar.vec(&format!("{prefix}/{k:03}"))?;
                if v.len() != len {
                    return Err(Error::Store(format!("{prefix}/{k:03} has length {}", v.len())));
                }
                Ok(ReducedTerm { coeff: *c, op: DVector::from_vec(v) })
            })
            .collect()
    };
    let c = h
        .terms
        .c
        .iter()
        .enumerate()
        .map(|(k, co)| {
            let (shape, data) = ar.get(&format!("c/{k:03}"))?;
            if shape != &vec![mw, mw, mw] {
                return Err(Error::Store(format!("c/{k:03} has shape {shape:?}")));
            }
            Ok(ReducedTerm { coeff: *co, op: data.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let vel_basis = ar.matrix("vel_basis")?;
    let pres_basis = ar.matrix("pres_basis")?;
    if vel_basis.ncols() != mw || pres_basis.ncols() != h.mp {
        return Err(Error::Store("basis shapes disagree with the header".into()));
    }
    let attached = if h.attached { Some(ar.matrix("attached")?) } else { None };
    Ok(ReducedModel {
        kind: h.kind,
        mode: h.mode,
        nu: h.nu,
        order: h.order,
        options: h.options,
        mv: h.mv,
        ms: h.ms,
        mp: h.mp,
        param_box: h.param_box,
        eig_vel: ar.vec("eig_vel")?,
        eig_sup: ar.vec("eig_sup")?,
        eig_pres: ar.vec("eig_pres")?,
        a: mats("a", &h.terms.a, mw, mw)?,
        b: mats("b", &h.terms.b, h.mp, mw)?,
        c,
        c0: mats("c0", &h.terms.c0, mw, mw)?,
        d0: vecs("d0", &h.terms.d0, mw)?,
        d1: vecs("d1", &h.terms.d1, h.mp)?,
        vel_basis,
        pres_basis,
        attached,
        gram_w: ar.matrix("gram_w")?,
        gram_p: ar.matrix("gram_p")?,
        lift: ar.vec("lift")?,
        provenance: h.provenance,
    })
}

pub fn save_model(path: &Path, rm: &ReducedModel) -> Result<()> {
    model_to_archive(rm).write(path)
}

pub fn load_model(path: &Path) -> Result<ReducedModel> {
    model_from_archive(&Archive::read(path)?)
}

pub fn snapshot_to_archive(s: &Snapshot) -> Archive {
    let meta = serde_json::json!({
        "type": "snapshot",
        "mu": s.mu,
        "newton_iters": s.newton_iters,
        "converged": s.converged,
        "updates": s.updates,
    });
    let mut ar = Archive::new(meta);
    ar.put_vec("u0", &s.u0);
    ar.put_vec("p", &s.p);
    ar.put_vec("s", &s.s);
    ar
}

pub fn snapshot_from_archive(ar: &Archive) -> Result<Snapshot> {
    if ar.meta.get("type").and_then(|t| t.as_str()) != Some("snapshot") {
        return Err(Error::Store("archive does not hold a snapshot".into()));
    }
    let mu: ParameterPoint = serde_json::from_value(ar.meta["mu"].clone())?;
    Ok(Snapshot {
        mu,
        u0: ar.vec("u0")?,
        p: ar.vec("p")?,
        s: ar.vec("s")?,
        newton_iters: serde_json::from_value(ar.meta["newton_iters"].clone())?,
        converged: serde_json::from_value(ar.meta["converged"].clone())?,
        updates: serde_json::from_value(ar.meta["updates"].clone())?,
    })
}

/// Ensemble directory manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub kind: SpaceKind,
    pub mode: PushMode,
    /// hash of everything the snapshots depend on
    pub inputs_hash: String,
    pub grid: Vec<ParameterPoint>,
    pub files: Vec<String>,
    pub converged: Vec<bool>,
}

pub fn snapshot_file_name(i: usize) -> String {
    format!("snap_{i:04}.rbm")
}

pub fn write_snapshot(dir: &Path, i: usize, s: &Snapshot) -> Result<()> {
    snapshot_to_archive(s).write(&dir.join(snapshot_file_name(i)))
}

pub fn save_ensemble(dir: &Path, ens: &Ensemble, inputs_hash: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (i, s) in ens.snapshots.iter().enumerate() {
        write_snapshot(dir, i, s)?;
        files.push(snapshot_file_name(i));
    }
    write_ensemble_manifest(dir, ens, inputs_hash)
}

pub fn write_ensemble_manifest(dir: &Path, ens: &Ensemble, inputs_hash: &str) -> Result<()> {
    let m = EnsembleManifest {
        kind: ens.kind,
        mode: ens.mode,
        inputs_hash: inputs_hash.to_string(),
        grid: ens.grid.clone(),
        files: (0..ens.snapshots.len()).map(snapshot_file_name).collect(),
        converged: ens.snapshots.iter().map(|s| s.converged).collect(),
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    write_atomic(&dir.join("manifest.json"), text.as_bytes())
}

pub fn read_ensemble_manifest(dir: &Path) -> Result<EnsembleManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::Store(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_ensemble(dir: &Path) -> Result<(Ensemble, String)> {
    let m = read_ensemble_manifest(dir)?;
    if m.files.len() != m.grid.len() {
        return Err(Error::Store("ensemble manifest lists a different number of files and grid points".into()));
    }
    let snapshots = m
        .files
        .iter()
        .map(|f| snapshot_from_archive(&Archive::read(&dir.join(f))?))
        .collect::<Result<Vec<_>>>()?;
    Ok((Ensemble { kind: m.kind, mode: m.mode, grid: m.grid, snapshots }, m.inputs_hash))
}

/// Content hash of an ensemble: grid and every snapshot's arrays.
pub fn ensemble_hash(ens: &Ensemble) -> String {
    let mut h = Sha256::new();
    h.update(ens.kind.name().as_bytes());
    h.update(format!("{:?}", ens.mode).as_bytes());
    for s in &ens.snapshots {
        h.update(s.mu.phi.to_le_bytes());
        h.update(s.mu.uinf.to_le_bytes());
        h.update([s.converged as u8]);
        for v in [&s.u0, &s.p, &s.s] {
            h.update((v.len() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
    }
    crate::spaces::hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_roundtrip_is_byte_identical() {
        let mut ar = Archive::new(serde_json::json!({"type": "test", "x": 1.0 / 3.0}));
        ar.put_matrix("m", &DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, f64::MIN_POSITIVE]));
        ar.put_vec("v", &[0.1, -0.0, 1e300]);
        let b1 = ar.to_bytes();
        let back = Archive::from_bytes(&b1).unwrap();
        assert_eq!(back, ar);
        assert_eq!(back.to_bytes(), b1);
        let m = back.matrix("m").unwrap();
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(m[(0, 2)], 3.0);
    }

    #[test]
    fn data_section_is_row_major_le() {
        let mut ar = Archive::new(serde_json::json!({}));
        ar.put_matrix("m", &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = ar.to_bytes();
        let tail = &b[b.len() - 32..];
        let vals: Vec<f64> = tail.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Archive::from_bytes(b"hello world, not an archive").is_err());
        let mut ar = Archive::new(serde_json::json!({}));
        ar.put_vec("v", &[1.0, 2.0]);
        let b = ar.to_bytes();
        assert!(Archive::from_bytes(&b[..b.len() - 4]).is_err());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let l = StoreLock::acquire(dir.path()).unwrap();
        assert!(StoreLock::acquire(dir.path()).is_err());
        drop(l);
        assert!(StoreLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn snapshot_roundtrip() {
        let s = Snapshot {
            mu: ParameterPoint::from_degrees(12.5, 3.0),
            u0: vec![1.0, 2.0],
            p: vec![0.5],
            s: vec![-1.0, 1e-17],
            newton_iters: 6,
            converged: true,
            updates: vec![1.0, 1e-3, 1e-11],
        };
        let back = snapshot_from_archive(&Archive::from_bytes(&snapshot_to_archive(&s).to_bytes()).unwrap()).unwrap();
        assert_eq!(back.mu, s.mu);
        assert_eq!(back.u0, s.u0);
        assert_eq!(back.s, s.s);
        assert_eq!(back.updates, s.updates);
    }
}
