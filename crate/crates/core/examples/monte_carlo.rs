//! Small Monte Carlo comparison of QR and spline fits.

use sqr::{run_mc, McConfig, Method, ModelKind};

fn main() -> sqr::Result<()> {
    let mut cfg = McConfig::new(ModelKind::Qar15, 200, 40, 1);
    cfg.spar_grid = vec![-1.0, 0.0, 1.0, 2.0, 3.0];
    cfg.criteria = true;
    cfg.point_taus = vec![0.25, 0.5, 0.75];
    cfg.point_fits = vec![(Method::SqrCubic, 2.3)];
    let rep = run_mc(&cfg)?;

    let qr = rep.mae_qr.expect("QR included");
    println!("{} runs; QR total MAE {:.5} (se {:.5})", rep.runs_effective, qr.mean, qr.se);
    for curve in &rep.curves {
        let (i, best) = curve.best();
        println!("{}:", curve.method.label());
        for (s, e) in rep.spar_grid.iter().zip(&curve.mae) {
            println!("  spar {s:>4}  MAE {:.5}  ({:.3} of QR)", e.mean, e.mean / qr.mean);
        }
        println!("  best at spar {}: {:.5}", rep.spar_grid[i], best.mean);
        if let (Some(a), Some(b)) = (curve.mae_aic, curve.mae_bic) {
            println!("  AIC-selected {:.5}, BIC-selected {:.5}", a.mean, b.mean);
        }
    }
    for tau in [0.25, 0.5, 0.75] {
        let q = rep.point_mae(Method::Qr, tau).expect("point QR");
        let c = rep.point_mae(Method::SqrCubic, tau).expect("point SQR");
        println!("tau {tau}: QR a0 {:.4e}, a1 {:.4e} | cubic a0 {:.4e}, a1 {:.4e}", q.mae[0].mean, q.mae[1].mean, c.mae[0].mean, c.mae[1].mean);
    }
    Ok(())
}
