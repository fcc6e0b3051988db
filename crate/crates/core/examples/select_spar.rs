//! Choosing the smoothing level by AIC and BIC over a spar grid.

use sqr::selection::{default_epsilon, default_spar_grid};
use sqr::{generate, select_spar, CriterionKind, FitConfig, Method, ModelKind, SimModel};

fn main() -> sqr::Result<()> {
    let kind = ModelKind::Qar15;
    let data = generate(&SimModel::new(kind, 200, 21))?;
    let grid = kind.default_grid();
    let eps = default_epsilon(data.y().as_slice());

    for method in [Method::SqrLinear, Method::SqrCubic] {
        let curve = select_spar(&data, &grid, &FitConfig::new(method), &default_spar_grid(), CriterionKind::Bic, eps)?;
        println!("{}: AIC picks spar {}, BIC picks spar {}", method.label(), curve.chosen_aic, curve.chosen_bic);
        for (i, s) in curve.spar_grid.iter().enumerate().step_by(10) {
            println!("  spar {s:>4}  aic {:>9.3}  bic {:>9.3}  m {:>6.2}", curve.aic[i], curve.bic[i], curve.m_bar[i]);
        }
    }
    Ok(())
}
