//! Offline pipeline: mesh → spaces → lift → affine forms → ensemble → POD →
//! projection. The in-memory builders are used directly by tests; `run_offline`
//! adds the on-disk stages with hash stamps so unchanged stages are skipped.

use crate::affine::{build_affine_forms, AffineFormSet};
use crate::config::{MethodConfig, PipelineConfig};
use crate::geometry::{build_omesh, naca_profile, OMesh};
use crate::hifi::{generate_ensemble, Ensemble, HifiProblem, NewtonOptions, Snapshot};
use crate::reduction::{build_reduced_model, ModelOptions, Provenance, ReducedModel, ReductionInput};
use crate::spaces::build_space_pair;
use crate::store::{self, StoreLock};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub fn build_mesh(cfg: &PipelineConfig) -> Result<OMesh> {
    let m = &cfg.mesh;
    let profile = naca_profile(m.thickness, m.n_circ)?;
    build_omesh(&profile, m.outer_radius, m.n_circ, m.n_rad, m.alpha)
}

pub fn build_problem(cfg: &PipelineConfig, mesh: &OMesh, method: &MethodConfig) -> Result<HifiProblem> {
    let space = build_space_pair(mesh, method.kind)?;
    let mut hp = HifiProblem::new(space, cfg.geometry()?, method.mode(), cfg.nu)?;
    hp.newton = NewtonOptions { tol: cfg.solver.tol, max_iters: cfg.solver.max_iters };
    Ok(hp)
}

pub fn build_affine(problem: &HifiProblem) -> Result<AffineFormSet> {
    build_affine_forms(&problem.space, &problem.geom, problem.mode, &problem.lift, problem.nu)
}

pub fn training_grid(cfg: &PipelineConfig) -> Vec<crate::ParameterPoint> {
    cfg.param_box().gauss_grid(cfg.ensemble_grid[0], cfg.ensemble_grid[1])
}

/// Stabilized model with attached pressure modes at size m; smaller models
/// come from `ReducedModel::truncate`.
pub fn build_model(problem: &HifiProblem, affine: &AffineFormSet, ens: &Ensemble, cfg: &PipelineConfig, m: usize) -> Result<ReducedModel> {
    let input = ReductionInput {
        space: &problem.space,
        affine,
        ensemble: ens,
        lift: &problem.lift,
        gram: &problem.gram,
        pressure_gram: &problem.pressure_gram,
        param_box: cfg.param_box(),
        provenance: Provenance {
            ensemble_hash: store::ensemble_hash(ens),
            spaces_hash: problem.space.hash(),
            mesh: Some(problem.space.mesh.params),
        },
    };
    build_reduced_model(&input, m, ModelOptions { stabilized: true, combined: true })
}

/// Everything the offline stage produces for one method, in memory.
pub struct MethodArtifacts {
    pub problem: HifiProblem,
    pub affine: AffineFormSet,
    pub ensemble: Ensemble,
    pub model: ReducedModel,
}

pub fn build_method_in_memory(cfg: &PipelineConfig, mesh: &OMesh, method: &MethodConfig) -> Result<MethodArtifacts> {
    let problem = build_problem(cfg, mesh, method)?;
    let affine = build_affine(&problem)?;
    let ensemble = generate_ensemble(&problem, &training_grid(cfg), |_, _| {});
    let model = build_model(&problem, &affine, &ensemble, cfg, cfg.max_basis_size())?;
    Ok(MethodArtifacts { problem, affine, ensemble, model })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, Default)]
pub struct OfflineSummary {
    pub stages: Vec<(String, StageStatus)>,
    pub model_files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn hash_parts(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    crate::spaces::hex(&h.finalize())
}

/// Inputs the snapshots depend on besides the spaces.
fn ensemble_inputs(cfg: &PipelineConfig, spaces_hash: &str, method: &MethodConfig) -> String {
    let j = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "mode": method.mode(),
        "nu": cfg.nu,
        "parameters": cfg.parameters,
        "series_order": cfg.series_order,
        "grid": cfg.ensemble_grid,
        "solver": cfg.solver,
    });
    hash_parts(&[spaces_hash, &j.to_string()])
}

fn model_inputs(cfg: &PipelineConfig, ensemble_hash: &str, method: &MethodConfig) -> String {
    let j = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "mode": method.mode(),
        "sizes": cfg.basis_sizes,
        "series_order": cfg.series_order,
        "nu": cfg.nu,
        "parameters": cfg.parameters,
    });
    hash_parts(&[ensemble_hash, &j.to_string()])
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Stamps(BTreeMap<String, String>);

impl Stamps {
    fn path(dir: &Path) -> PathBuf {
        dir.join("stamps.json")
    }

    fn load(dir: &Path) -> Self {
        fs::read_to_string(Self::path(dir)).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default()
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let mut t = serde_json::to_string_pretty(self)?;
        t.push('\n');
        fs::write(Self::path(dir), t)?;
        Ok(())
    }

    fn matches(&self, stage: &str, hash: &str) -> bool {
        self.0.get(stage).map(|h| h == hash).unwrap_or(false)
    }
}

pub fn model_file_name(method: &MethodConfig, m: usize) -> String {
    format!("{}_M{m:02}.rbm", method.tag())
}

pub fn ensemble_dir(out: &Path, method: &MethodConfig) -> PathBuf {
    out.join("ensemble").join(method.tag())
}

fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Store(format!("stage {stage}: {io}")),
        other => Error::Store(format!("stage {stage}: {other}")),
    }
}

/// Runs (or resumes) the offline stage into `out`.
pub fn run_offline(cfg: &PipelineConfig, out: &Path) -> Result<OfflineSummary> {
    cfg.validate()?;
    let _lock = StoreLock::acquire(out)?;
    let mut summary = OfflineSummary { warnings: cfg.warnings(), ..Default::default() };
    for w in &summary.warnings {
        log::warn!("{w}");
    }
    let mut stamps = Stamps::load(out);
    fs::write(out.join("config.toml"), cfg.to_toml())?;

    let mesh_hash = hash_parts(&[&serde_json::to_string(&cfg.mesh)?]);
    let mesh = build_mesh(cfg).map_err(|e| stage_err("mesh", e))?;
    let mesh_path = out.join("mesh.txt");
    if stamps.matches("mesh", &mesh_hash) && mesh_path.exists() {
        summary.stages.push(("mesh".into(), StageStatus::Skipped));
    } else {
        fs::write(&mesh_path, mesh.to_text())?;
        stamps.0.insert("mesh".into(), mesh_hash);
        stamps.save(out)?;
        summary.stages.push(("mesh".into(), StageStatus::Ran));
    }

    for method in &cfg.methods {
        let tag = method.tag();
        let space = build_space_pair(&mesh, method.kind).map_err(|e| stage_err("spaces", e))?;
        let spaces_hash = space.hash();
        drop(space);
        let mut problem: Option<HifiProblem> = None;

        let st = format!("ensemble:{tag}");
        let dir = ensemble_dir(out, method);
        let inputs = ensemble_inputs(cfg, &spaces_hash, method);
        let have = store::read_ensemble_manifest(&dir).map(|m| m.inputs_hash == inputs).unwrap_or(false);
        let ensemble = if stamps.matches(&st, &inputs) && have {
            summary.stages.push((st.clone(), StageStatus::Skipped));
            store::load_ensemble(&dir).map_err(|e| stage_err(&st, e))?.0
        } else {
            let hp = build_problem(cfg, &mesh, method).map_err(|e| stage_err(&st, e))?;
            let ens = resume_ensemble(&hp, cfg, &dir, &inputs).map_err(|e| stage_err(&st, e))?;
            problem = Some(hp);
            stamps.0.insert(st.clone(), inputs.clone());
            stamps.save(out)?;
            summary.stages.push((st.clone(), StageStatus::Ran));
            ens
        };
        if ensemble.n_converged() < ensemble.snapshots.len() {
            summary.warnings.push(format!(
                "{tag}: {} of {} snapshots did not converge",
                ensemble.snapshots.len() - ensemble.n_converged(),
                ensemble.snapshots.len()
            ));
        }

        let st = format!("models:{tag}");
        let ens_hash = store::ensemble_hash(&ensemble);
        let inputs = model_inputs(cfg, &ens_hash, method);
        let files: Vec<PathBuf> = cfg.basis_sizes.iter().map(|&m| out.join("models").join(model_file_name(method, m))).collect();
        if stamps.matches(&st, &inputs) && files.iter().all(|f| f.exists()) {
            summary.stages.push((st, StageStatus::Skipped));
        } else {
            let hp = match problem.take() {
                Some(p) => p,
                None => build_problem(cfg, &mesh, method).map_err(|e| stage_err(&st, e))?,
            };
            let affine = build_affine(&hp).map_err(|e| stage_err(&st, e))?;
            let full = build_model(&hp, &affine, &ensemble, cfg, cfg.max_basis_size()).map_err(|e| stage_err(&st, e))?;
            for (&m, f) in cfg.basis_sizes.iter().zip(&files) {
                let rm = full.truncate(m, m, m).map_err(|e| stage_err(&st, e))?;
                store::save_model(f, &rm).map_err(|e| stage_err(&st, e))?;
            }
            stamps.0.insert(st.clone(), inputs);
            stamps.save(out)?;
            summary.stages.push((st, StageStatus::Ran));
        }
        summary.model_files.extend(files);
    }
    Ok(summary)
}

/// Computes the snapshots missing from `dir`, writing each one as it finishes.
fn resume_ensemble(hp: &HifiProblem, cfg: &PipelineConfig, dir: &Path, inputs: &str) -> Result<Ensemble> {
    let grid = training_grid(cfg);
    fs::create_dir_all(dir)?;
    // a partial run leaves its inputs hash behind; reuse its snapshots only if it matches
    let marker = dir.join("inputs.hash");
    let reuse = fs::read_to_string(&marker).map(|h| h.trim() == inputs).unwrap_or(false);
    if !reuse {
        for e in fs::read_dir(dir)? {
            let p = e?.path();
            if p.extension().map(|x| x == "rbm").unwrap_or(false) || p.file_name().map(|n| n == "manifest.json").unwrap_or(false) {
                fs::remove_file(p)?;
            }
        }
        fs::write(&marker, format!("{inputs}\n"))?;
    }
    let mut slots: Vec<Option<Snapshot>> = (0..grid.len())
        .map(|i| {
            let p = dir.join(store::snapshot_file_name(i));
            store::Archive::read(&p).ok().and_then(|a| store::snapshot_from_archive(&a).ok()).filter(|s| s.mu == grid[i])
        })
        .collect();
    let missing: Vec<usize> = (0..grid.len()).filter(|&i| slots[i].is_none()).collect();
    if missing.len() < grid.len() {
        log::info!("reusing {} snapshots from a previous run", grid.len() - missing.len());
    }
    let sub: Vec<_> = missing.iter().map(|&i| grid[i]).collect();
    let write_err = Mutex::new(None);
    let ens = generate_ensemble(hp, &sub, |k, s| {
        if let Err(e) = store::write_snapshot(dir, missing[k], s) {
            *write_err.lock().unwrap() = Some(e);
        }
    });
    if let Some(e) = write_err.into_inner().unwrap() {
        return Err(e);
    }
    for (k, s) in ens.snapshots.into_iter().enumerate() {
        if !s.converged && s.u0.is_empty() {
            // failed solves are not persisted; store the placeholder so the manifest is complete
            store::write_snapshot(dir, missing[k], &s)?;
        }
        slots[missing[k]] = Some(s);
    }
    let ens = Ensemble { kind: hp.space.kind, mode: hp.mode, grid, snapshots: slots.into_iter().map(|s| s.unwrap()).collect() };
    store::write_ensemble_manifest(dir, &ens, inputs)?;
    Ok(ens)
}

/// Loads every model file of an offline directory, keyed by file name.
pub fn load_models(out: &Path) -> Result<BTreeMap<String, ReducedModel>> {
    let dir = out.join("models");
    let mut map = BTreeMap::new();
    for e in fs::read_dir(&dir).map_err(|e| Error::Store(format!("{}: {e}", dir.display())))? {
        let p = e?.path();
        if p.extension().map(|x| x == "rbm").unwrap_or(false) {
            map.insert(p.file_name().unwrap().to_string_lossy().into_owned(), store::load_model(&p)?);
        }
    }
    Ok(map)
}

/// Rebuilds the high-fidelity problem a model was reduced from and checks the
/// spaces hash against the model's provenance.
pub fn problem_for_model(rm: &ReducedModel) -> Result<HifiProblem> {
    let params = rm
        .provenance
        .mesh
        .ok_or_else(|| Error::Provenance("model does not record the mesh it was built on".into()))?;
    let mesh_cfg = crate::config::MeshConfig::from_params(&params);
    let profile = naca_profile(mesh_cfg.thickness, mesh_cfg.n_circ)?;
    let mesh = build_omesh(&profile, mesh_cfg.outer_radius, mesh_cfg.n_circ, mesh_cfg.n_rad, mesh_cfg.alpha)?;
    problem_on_mesh(rm, &mesh)
}

/// As `problem_for_model`, on a given mesh; refuses a mismatching spaces hash.
pub fn problem_on_mesh(rm: &ReducedModel, mesh: &OMesh) -> Result<HifiProblem> {
    let space = build_space_pair(mesh, rm.kind)?;
    let h = space.hash();
    if h != rm.provenance.spaces_hash {
        return Err(Error::Provenance(format!(
            "model was built on spaces {} but the loaded mesh gives {}",
            &rm.provenance.spaces_hash[..12.min(rm.provenance.spaces_hash.len())],
            &h[..12]
        )));
    }
    let geom = crate::geometry::DeformedGeometry::new(crate::geometry::RotationProfile::default(), rm.order, rm.param_box.phi_abs_max())?;
    HifiProblem::new(space, geom, rm.mode, rm.nu)
}
