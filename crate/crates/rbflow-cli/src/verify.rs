use crate::{CliError, CliResult};
use rbflow::config::PipelineConfig;
use rbflow::pipeline;
use rbflow::spaces::SpaceKind;
use rbflow::ParameterPoint;

struct Checks {
    failed: usize,
}

impl Checks {
    fn report(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

pub fn verify(cfg: &PipelineConfig) -> CliResult<()> {
    let mesh = pipeline::build_mesh(cfg)?;
    let geom = cfg.geometry()?;
    let pbox = cfg.param_box();
    let mut checks = Checks { failed: 0 };
    if let Some(w) = geom.accuracy_warning() {
        eprintln!("warning: {w}");
    }
    let angles: Vec<f64> = (0..21).map(|i| pbox.phi_min + (pbox.phi_max - pbox.phi_min) * i as f64 / 20.0).collect();

    let mut geometry_done = false;
    for method in &cfg.methods {
        let hp = pipeline::build_problem(cfg, &mesh, method)?;
        let tag = method.tag();
        let pts = hp.space.quad_points();

        if !geometry_done {
            geometry_done = true;
            let mut det = 0.0f64;
            let mut series = 0.0f64;
            for &phi in &angles {
                for q in pts {
                    let ex = geom.exact(phi, q.xh);
                    det = det.max((ex.j.determinant() - 1.0).abs());
                    let sj = geom.series_jacobian(phi, q.xh)?;
                    series = series.max((sj - ex.j).abs().max());
                }
            }
            checks.report("det J = 1", det <= 1e-12, format!("max |det J - 1| = {det:.2e} over {} points", pts.len() * angles.len()));
            checks.report(
                "series Jacobian",
                series <= 1e-8,
                format!("max entry error {series:.2e} (bound {:.2e})", geom.truncation_bound()),
            );
        }

        let affine = pipeline::build_affine(&hp)?;
        let mut worst = [0.0f64; 2];
        for phi in [pbox.phi_min, 0.5 * pbox.phi_min, 0.5 * pbox.phi_max, pbox.phi_max] {
            let mu = ParameterPoint::new(phi, 0.5 * (pbox.uinf_min + pbox.uinf_max));
            let direct = hp.operators(mu)?;
            let ops = affine.assemble_at(mu);
            worst[0] = worst[0].max(ops.a.add_scaled(&direct.a, -1.0).frobenius_norm() / direct.a.frobenius_norm());
            worst[1] = worst[1].max(ops.b.add_scaled(&direct.b, -1.0).frobenius_norm() / direct.b.frobenius_norm());
        }
        checks.report(
            &format!("{tag} affine vs direct"),
            worst[0] <= 1e-8 && worst[1] <= 1e-8,
            format!("relative Frobenius a {:.2e}, b {:.2e}", worst[0], worst[1]),
        );

        let zero = vec![0.0; hp.lift.len()];
        match hp.kind() {
            SpaceKind::DivConforming => {
                let mut div = 0.0f64;
                for &phi in &angles {
                    div = div.max(hp.max_divergence(phi, &hp.total_velocity(&zero, 1.0)));
                }
                checks.report(&format!("{tag} lift divergence"), div <= 1e-10, format!("max pointwise {div:.2e}"));
            }
            SpaceKind::TaylorHood => {
                let e = hp.inflow_trace_error(&hp.total_velocity(&zero, pbox.uinf_max), pbox.uinf_max);
                checks.report(
                    &format!("{tag} inflow trace"),
                    e <= 1e-12,
                    format!("max nodal deviation {e:.2e} on {} inflow edges", hp.inflow_edges()),
                );
            }
        }
    }
    if checks.failed > 0 {
        return Err(CliError::Runtime(format!("{} verification check(s) failed", checks.failed)));
    }
    Ok(())
}
