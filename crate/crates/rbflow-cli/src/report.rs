use crate::{load_model, CliError, CliResult, Study};
use rbflow::config::PipelineConfig;
use rbflow::diagnostics::{self, fmt, write_csv};
use rbflow::hifi::HifiProblem;
use rbflow::online::{solve, OnlineOptions, SolverKind};
use rbflow::pipeline;
use rbflow::reduction::ReducedModel;
use rbflow::store;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn applicable(rm: &ReducedModel) -> Vec<SolverKind> {
    SolverKind::ALL.into_iter().filter(|s| s.supports(rm).is_ok()).collect()
}

/// One high-fidelity problem per distinct (spaces, formulation, order, ν).
#[derive(Default)]
struct Problems(BTreeMap<String, HifiProblem>);

impl Problems {
    fn key(rm: &ReducedModel) -> String {
        format!("{}|{:?}|{}|{}", rm.provenance.spaces_hash, rm.mode, rm.order, rm.nu)
    }

    fn get(&mut self, rm: &ReducedModel) -> CliResult<&HifiProblem> {
        let k = Self::key(rm);
        if !self.0.contains_key(&k) {
            self.0.insert(k.clone(), pipeline::problem_for_model(rm)?);
        }
        Ok(&self.0[&k])
    }
}

pub fn sweep(config: &Option<PathBuf>, model: &Path, n: usize, solvers: Vec<SolverKind>, reference: bool, out: Option<PathBuf>) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::Usage("--grid must be positive".into()));
    }
    let rm = load_model(model)?;
    let solvers = if solvers.is_empty() { applicable(&rm) } else { solvers };
    for s in &solvers {
        s.supports(&rm).map_err(CliError::Usage)?;
    }
    let grid = rm.param_box.uniform_grid(n, n);
    let (hp, refs) = if reference {
        let hp = match config {
            Some(p) => {
                let cfg = PipelineConfig::load(p)?;
                pipeline::problem_on_mesh(&rm, &pipeline::build_mesh(&cfg)?)?
            }
            None => pipeline::problem_for_model(&rm)?,
        };
        let refs = diagnostics::reference_solutions(&hp, &grid);
        (Some(hp), refs)
    } else {
        (None, vec![None; grid.len()])
    };
    let mut header = vec!["phi", "uinf", "solver", "M", "iters", "converged"];
    if reference {
        header.extend(["vel_err", "p_err"]);
    }
    header.extend(["t_assembly_s", "t_solve_s", "t_recovery_s"]);
    let mut rows = Vec::new();
    let opts = OnlineOptions::default();
    for (mu, r) in grid.iter().zip(&refs) {
        for &s in &solvers {
            let mut row = vec![fmt(mu.phi_degrees()), fmt(mu.uinf), s.name().to_string(), rm.mv.to_string()];
            match solve(&rm, *mu, s, &opts) {
                Ok(sol) => {
                    row.push(sol.newton_iters.to_string());
                    row.push(sol.converged.to_string());
                    if reference {
                        match (r, &hp) {
                            (Some(r), Some(hp)) if sol.converged => {
                                let (eu, ep) = diagnostics::relative_errors(hp, &rm, &sol, r);
                                row.extend([fmt(eu), fmt(ep)]);
                            }
                            _ => row.extend([String::new(), String::new()]),
                        }
                    }
                    row.extend([fmt(sol.times.assembly), fmt(sol.times.solve), fmt(sol.times.recovery)]);
                }
                Err(e) => {
                    log::warn!("{} at phi = {:.3}: {e}", s.name(), mu.phi_degrees());
                    row.push(String::new());
                    row.push("false".into());
                    if reference {
                        row.extend([String::new(), String::new()]);
                    }
                    row.extend([String::new(), String::new(), String::new()]);
                }
            }
            rows.push(row);
        }
    }
    match out {
        Some(p) => write_csv(&p, "sweep v1", &header, &rows)?,
        None => {
            println!("{}", header.join(","));
            for r in rows {
                println!("{}", r.join(","));
            }
        }
    }
    Ok(())
}

/// The directory holding config.toml for an offline directory or one of its subdirectories.
fn offline_root(p: &Path) -> CliResult<PathBuf> {
    let mut cur = Some(p);
    while let Some(d) = cur {
        if d.join("config.toml").is_file() {
            return Ok(d.to_path_buf());
        }
        cur = d.parent();
    }
    Err(CliError::Runtime(format!("{}: no config.toml found in it or its parents (run `rbflow offline` first)", p.display())))
}

fn load_models_sorted(inputs: &[PathBuf]) -> CliResult<Vec<ReducedModel>> {
    let mut v = Vec::new();
    for p in inputs {
        if !p.exists() {
            return Err(CliError::Runtime(format!("missing artifact {}", p.display())));
        }
        v.push(load_model(p)?);
    }
    v.sort_by_key(|rm| (rm.kind.short(), format!("{:?}", rm.mode), rm.mv));
    Ok(v)
}

pub fn report(study: Study, inputs: &[PathBuf], out: &Path, n: usize) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::Usage("--grid must be positive".into()));
    }
    let path = match study {
        Study::Spectra => {
            let root = offline_root(&inputs[0])?;
            let cfg = PipelineConfig::load(&root.join("config.toml"))?;
            let mesh = pipeline::build_mesh(&cfg)?;
            let mut rows = Vec::new();
            for method in &cfg.methods {
                let dir = pipeline::ensemble_dir(&root, method);
                let (ens, _) = store::load_ensemble(&dir).map_err(|e| CliError::Runtime(format!("missing ensemble for {}: {e}", method.tag())))?;
                let hp = pipeline::build_problem(&cfg, &mesh, method)?;
                let s = diagnostics::spectra(&hp, &ens)?;
                for r in diagnostics::spectra_rows(&s) {
                    let mut row = vec![method.tag()];
                    row.extend(r);
                    rows.push(row);
                }
            }
            let p = out.join("spectra.csv");
            write_csv(&p, "spectra v1", &["method", "k", "lambda_vel", "lambda_press", "lambda_sup"], &rows)?;
            p
        }
        Study::Divs => {
            let models = load_models_sorted(inputs)?;
            let mut probs = Problems::default();
            let mut rows = Vec::new();
            for rm in &models {
                let hp = probs.get(rm)?;
                let b = rm.param_box;
                let angles: Vec<f64> = (0..7).map(|i| (b.phi_min + (b.phi_max - b.phi_min) * i as f64 / 6.0).to_degrees()).collect();
                for r in diagnostics::divergence_study(rm, hp, &angles, 10) {
                    rows.push(vec![rm.kind.short().into(), rm.mv.to_string(), fmt(r.phi_deg), fmt(r.mean), fmt(r.max), fmt(r.max_pointwise)]);
                }
            }
            let p = out.join("divs.csv");
            write_csv(&p, "divs v1", &["method", "M", "phi_deg", "mean_div", "max_div", "max_pointwise_div"], &rows)?;
            p
        }
        Study::Lbb => {
            let models = load_models_sorted(inputs)?;
            let mut rows = Vec::new();
            for rm in &models {
                let sample = rm.param_box.uniform_grid(n, n);
                for stab in [false, true] {
                    if stab && rm.ms == 0 {
                        continue;
                    }
                    let beta = diagnostics::lbb_min(rm, &sample, stab)?;
                    rows.push(vec![rm.kind.short().into(), rm.mv.to_string(), stab.to_string(), fmt(beta)]);
                }
            }
            let p = out.join("lbb.csv");
            write_csv(&p, "lbb v1", &["method", "M", "stabilized", "beta_min"], &rows)?;
            p
        }
        Study::Angles => {
            let models = load_models_sorted(inputs)?;
            let mut rows = Vec::new();
            for rm in models.iter().filter(|rm| rm.ms > 0) {
                rows.push(vec![rm.kind.short().into(), rm.mv.to_string(), fmt(diagnostics::velocity_supremizer_angle(rm)?)]);
            }
            let p = out.join("angles.csv");
            write_csv(&p, "angles v1", &["method", "M", "angle_deg"], &rows)?;
            p
        }
        Study::Perf => {
            let models = load_models_sorted(inputs)?;
            let mut probs = Problems::default();
            let mut refs: BTreeMap<String, Vec<Option<rbflow::hifi::Snapshot>>> = BTreeMap::new();
            let mut rows = Vec::new();
            let opts = OnlineOptions::default();
            for rm in &models {
                let grid = rm.param_box.uniform_grid(n, n);
                let key = Problems::key(rm);
                let hp = probs.get(rm)?;
                if !refs.contains_key(&key) {
                    refs.insert(key.clone(), diagnostics::reference_solutions(hp, &grid));
                }
                let rs = &refs[&key];
                for s in applicable(rm) {
                    let model = if s == SolverKind::CoupledUnstab { rm.truncate(rm.mv, 0, rm.mp)? } else { rm.clone() };
                    let r = diagnostics::error_study(hp, &model, s, &grid, rs, &opts);
                    rows.push(vec![
                        r.method,
                        r.m.to_string(),
                        r.solver,
                        fmt(r.mean_vel_err),
                        fmt(r.mean_p_err),
                        fmt(r.expected_err),
                        fmt(r.mean_time_s),
                        r.converged.to_string(),
                        r.total.to_string(),
                    ]);
                }
            }
            let p = out.join("perf.csv");
            write_csv(
                &p,
                "perf v1",
                &["method", "M", "solver", "mean_vel_err", "mean_p_err", "expected_err", "mean_time_s", "converged", "total"],
                &rows,
            )?;
            p
        }
    };
    println!("{}", path.display());
    Ok(())
}
