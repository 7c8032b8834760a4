use std::sync::Arc;

use spinlet::estimators::{
    estimate_ap, estimate_cp, estimate_masked, estimate_unfeasible, gamma_theoretical, ApOptions, ChannelCoefficients, EstimatorKind,
};
use spinlet::field::{draw_total, rotate_spin, synthesize_grid, ComponentKind, PowerSpectrumModel, SpinAlm};
use spinlet::grid::SkyMask;
use spinlet::mc::{run_experiment, ExperimentPlan, MaskSpec, Standardization, Statistic};
use spinlet::transform::{masked_analyze, needlet_analyze};
use spinlet::{Grid, Window};

const J: u32 = 4;
const S: i64 = 2;

fn model() -> PowerSpectrumModel {
    PowerSpectrumModel::power_law(3.0, 1.0, 1, ComponentKind::Signal).unwrap()
}

struct Setup {
    window: Arc<Window>,
    grid: Arc<Grid>,
    mask: SkyMask<f64>,
    alm: SpinAlm<f64>,
}

fn setup(seed: u64) -> Setup {
    let window = Arc::new(Window::build(2.0, 1).unwrap());
    let grid = Arc::new(Grid::build(J, 2.0).unwrap());
    let mask = SkyMask::polar_cap(grid.clone(), 0.6, 3.0 / 16.0).unwrap();
    let alm = draw_total(&model(), S, window.support(J, S).l_max, seed);
    Setup { window, grid, mask, alm }
}

#[test]
fn masked_estimate_ignores_the_spin_frame() {
    let t = setup(3);
    let map = synthesize_grid(&t.alm, &t.grid);
    let rotated: Vec<_> = map.iter().map(|v| rotate_spin(*v, 0.83, S)).collect();
    let a = estimate_masked(&masked_analyze(&map, &t.mask, &t.window, S, J).unwrap(), &t.mask, &model()).unwrap();
    let b = estimate_masked(&masked_analyze(&rotated, &t.mask, &t.window, S, J).unwrap(), &t.mask, &model()).unwrap();
    assert!((a.value - b.value).abs() < 1e-12 * a.value);
    assert!((a.variance_estimate - b.variance_estimate).abs() < 1e-10 * a.variance_estimate);
}

#[test]
fn doubling_amplitude_scales_subsampling_variance_by_sixteen() {
    let t = setup(4);
    let once = needlet_analyze(&t.alm, &t.window, &t.grid, J).unwrap();
    let twice = needlet_analyze(&t.alm.scaled(2.0), &t.window, &t.grid, J).unwrap();
    let a = estimate_unfeasible(&once, &t.mask, &model()).unwrap();
    let b = estimate_unfeasible(&twice, &t.mask, &model()).unwrap();
    assert!((b.value / a.value - 4.0).abs() < 1e-12);
    assert!((b.variance_estimate / a.variance_estimate - 16.0).abs() < 1e-9);
}

#[test]
fn ap_equals_cp_for_identical_noiseless_channels() {
    let t = setup(5);
    let c = needlet_analyze(&t.alm, &t.window, &t.grid, J).unwrap();
    let channels = ChannelCoefficients {
        channels: vec![c.clone(), c],
        noise_models: vec![PowerSpectrumModel::zero(1, ComponentKind::Noise); 2],
    };
    let ap = estimate_ap(&channels, &model(), ApOptions::default()).unwrap();
    let cp = estimate_cp(&channels, &model()).unwrap();
    assert_eq!(ap.kind, EstimatorKind::Ap);
    assert!((ap.value - cp.value).abs() < 1e-12 * ap.value);
}

#[test]
fn theoretical_target_decays_like_the_spectrum() {
    let window = Window::build(2.0, 1).unwrap();
    let m = model();
    let points: Vec<(f64, f64)> = (4..=9).map(|j| (j as f64, gamma_theoretical(&window, &m, j, S).ln())).collect();
    let n = points.len() as f64;
    let (mx, my) = (points.iter().map(|p| p.0).sum::<f64>() / n, points.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let want = (2.0 - 3.0) * 2f64.ln();
    assert!((slope - want).abs() < 0.05 * want.abs(), "slope {slope} vs {want}");
}

#[test]
fn masked_clt_holds_with_a_wide_guard() {
    let mut plan = ExperimentPlan::new(2.0, S, vec![5], 3.0, 300, 4242, vec![EstimatorKind::Masked]);
    plan.mask = MaskSpec::PolarCap {
        radius: None,
        sky_fraction: Some(0.1),
    };
    plan.epsilon_scale = 10.0;
    let out = run_experiment(&plan).unwrap();
    let entry = out.diagnostics.entry(5, Statistic::Masked).unwrap();
    let n = entry.normality.unwrap();
    // 3-sigma bands for R = 300 with a 300-replicate calibration variance
    let var_band = 3.0 * (4.0 / 300f64).sqrt();
    assert!(n.mean.abs() < 3.0 / 300f64.sqrt() && (n.variance - 1.0).abs() < var_band && n.ks < 1.63 / 300f64.sqrt(), "{n:?}");
    let ratio = entry.subsampling_ratio.unwrap();
    assert!((0.5..=2.0).contains(&ratio), "subsampling ratio {ratio}");
}

#[test]
fn subsampling_standardization_is_available() {
    let mut plan = ExperimentPlan::new(2.0, S, vec![4], 3.0, 100, 77, vec![EstimatorKind::Unfeasible]);
    plan.mask = MaskSpec::PolarCap {
        radius: Some(0.5),
        sky_fraction: None,
    };
    plan.standardization = Standardization::Subsampling;
    let out = run_experiment(&plan).unwrap();
    let rows: Vec<_> = out.rows.iter().filter(|r| r.kind == Statistic::Unfeasible).collect();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r.variance > 0.0 && r.standardized.is_some_and(f64::is_finite)));
}
