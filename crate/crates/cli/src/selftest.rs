//! Quick invariant checks, one PASS/FAIL line each.

use std::f64::consts::PI;
use std::sync::Arc;

use anyhow::{bail, Result};
use num_complex::Complex64;
use spinlet::field::{draw_total, ComponentKind, PowerSpectrumModel, SpinAlm};
use spinlet::grid::CubatureGrid;
use spinlet::specfun::{spin_sph_harm, wigner_d, SphPoint};
use spinlet::transform::{needlet_analyze, needlet_synthesize};
use spinlet::window::NeedletWindow;

type Check = (&'static str, fn() -> Result<String>);

pub fn run() -> Result<()> {
    let checks: [Check; 4] = [
        ("wigner_unitarity", wigner_unitarity),
        ("addition_theorem", addition_theorem),
        ("partition_of_unity", partition_of_unity),
        ("needlet_roundtrip", needlet_roundtrip),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name} {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name} {e:#}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} self-test check(s) failed");
    }
    Ok(())
}

fn verdict(name: &str, err: f64, tol: f64) -> Result<String> {
    if err.is_finite() && err <= tol {
        Ok(format!("{name}={err:.2e}"))
    } else {
        bail!("{name}={err:.2e} exceeds {tol:.0e}")
    }
}

/// `Σ_m d^l_{mn}(β)^2 = 1` for every `n`.
fn wigner_unitarity() -> Result<String> {
    let mut worst = 0.0f64;
    for &beta in &[0.2, 1.1, PI / 2.0, 2.9] {
        for l in [5usize, 40] {
            for n in [-3i64, 0, 2] {
                let mut sum = 0.0;
                for m in -(l as i64)..=l as i64 {
                    sum += wigner_d::<f64>(l, m, n, beta)?.powi(2);
                }
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    verdict("max_err", worst, 1e-11)
}

/// `Σ_m |sY_lm|² = (2l+1)/4π` at any point.
fn addition_theorem() -> Result<String> {
    let mut worst = 0.0f64;
    for p in [SphPoint::new(0.7, 2.3), SphPoint::new(2.9, 5.1)] {
        for s in -2i64..=2 {
            for l in s.unsigned_abs() as usize..=40 {
                let mut sum = 0.0;
                for m in -(l as i64)..=l as i64 {
                    sum += spin_sph_harm::<f64>(l, m, s, p)?.norm_sqr();
                }
                worst = worst.max((sum - (2 * l + 1) as f64 / (4.0 * PI)).abs());
            }
        }
    }
    verdict("max_err", worst, 1e-11)
}

fn partition_of_unity() -> Result<String> {
    let window = NeedletWindow::<f64>::build(2.0, 1)?;
    let levels: Vec<u32> = (0..12).collect();
    let mut worst = 0.0f64;
    for l in 3..=1000 {
        worst = worst.max((window.coverage(l, 2, &levels) - 1.0).abs());
    }
    verdict("max_err", worst, 1e-12)
}

fn needlet_roundtrip() -> Result<String> {
    let band = 24;
    let model = PowerSpectrumModel::power_law(3.0, 1.0, 1, ComponentKind::Signal)?;
    let mut alm: SpinAlm<f64> = draw_total(&model, 2, band, 7);
    for m in 0..=2 {
        alm.set_e(2, m, Complex64::default());
        alm.set_b(2, m, Complex64::default());
    }
    let window = Arc::new(NeedletWindow::build(2.0, 1)?);
    let mut coeffs = Vec::new();
    for j in 0..=5 {
        let support = window.support(j, 2);
        if support.is_empty() || support.l_min > band {
            continue;
        }
        let grid = Arc::new(CubatureGrid::build(j, 2.0)?);
        coeffs.push(needlet_analyze(&alm.with_band_limit(band.max(support.l_max)), &window, &grid, j)?);
    }
    let back = needlet_synthesize(&coeffs, band)?;
    verdict("max_alm_err", back.max_abs_diff(&alm), 1e-9)
}
