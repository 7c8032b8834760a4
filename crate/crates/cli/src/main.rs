//! `spinlet`: simulate spin fields, run needlet transforms and estimators,
//! and run Monte Carlo plans.
//!
//! Data goes to files or standard output, diagnostics to standard error.

mod config;
mod selftest;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spinlet::estimators::{
    estimate_asymmetry, estimate_ap, estimate_cp, estimate_hausman, estimate_masked, estimate_unfeasible, write_reports_csv,
    ApOptions, ChannelCoefficients, EstimateReport, EstimatorKind,
};
use spinlet::field::{draw_total, observe_channels, synthesize_grid, SpinAlm};
use spinlet::grid::{hemispheres, CubatureGrid, SkyMask};
use spinlet::mc::{run_experiment, write_raw_csv, DiagnosticsReport, RegionSpec};
use spinlet::transform::{admissible_levels, masked_analyze, needlet_analyze, needlet_synthesize, NeedletCoefficients};
use spinlet::window::NeedletWindow;

use config::{parse_levels, MaskKind, RunConfig};

#[derive(Parser)]
#[command(name = "spinlet", version, about = "Spin needlet analysis of spin-weighted fields on the sphere")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the resolved configuration and exit without running.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw Gaussian harmonic coefficients and write SALM files.
    Simulate(SimulateArgs),
    /// Needlet coefficients of SALM inputs, one SNBC file per level.
    Transform(TransformArgs),
    /// Run estimators on SNBC files, or on a simulated field from a config.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo plan from a config file.
    Mc(McArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct FieldFlags {
    #[arg(long)]
    spin: Option<i64>,
    #[arg(long)]
    lmax: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of noise channels.
    #[arg(long)]
    channels: Option<usize>,
    /// Noise spectrum decay exponent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Noise amplitude; repeat once per channel or give once for all.
    #[arg(long = "noise-amplitude")]
    noise_amplitude: Vec<f64>,
}

#[derive(Args)]
struct NeedletFlags {
    /// Window bandwidth B > 1.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    smoothness: Option<u32>,
    /// Levels as `a..b` (inclusive) or `a,b,c`.
    #[arg(long)]
    levels: Option<String>,
}

#[derive(Args)]
struct MaskFlags {
    /// Mask file in the `mask v1` text format; `{j}` is replaced by the level.
    #[arg(long)]
    mask: Option<String>,
    /// Mask the north polar cap of this angular radius.
    #[arg(long, conflicts_with_all = ["mask", "sky_fraction"])]
    cap_radius: Option<f64>,
    /// Mask the north polar cap covering this fraction of the sky.
    #[arg(long, conflicts_with = "mask")]
    sky_fraction: Option<f64>,
    /// Guard radius in units of B^-j.
    #[arg(long)]
    epsilon_scale: Option<f64>,
    /// Region pair for the asymmetry statistic.
    #[arg(long, value_parser = parse_regions)]
    regions: Option<RegionSpec>,
}

fn parse_regions(s: &str) -> std::result::Result<RegionSpec, String> {
    match s {
        "hemispheres" => Ok(RegionSpec::Hemispheres),
        "none" => Ok(RegionSpec::None),
        _ => Err(format!("unknown region pair `{s}` (expected hemispheres or none)")),
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    field: FieldFlags,
    /// Signal output; noise channel `r` goes to `<stem>.noise<r>.salm` next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    needlet: NeedletFlags,
    #[command(flatten)]
    mask: MaskFlags,
    /// SALM inputs; several inputs are added, e.g. a signal and one noise channel.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Output file prefix (default: stem of the first input).
    #[arg(long)]
    prefix: Option<String>,
    /// Treat inputs as exactly band-limited and pad with zeros for levels
    /// reaching beyond their band limit.
    #[arg(long)]
    zero_pad: bool,
    /// Reconstruct the coefficients from the levels and report the error.
    #[arg(long)]
    roundtrip: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    field: FieldFlags,
    #[command(flatten)]
    needlet: NeedletFlags,
    #[command(flatten)]
    mask: MaskFlags,
    /// SNBC coefficient files. Without any, a field is simulated from the configuration.
    #[arg(long)]
    coeffs: Vec<PathBuf>,
    /// Estimators to run (masked, unfeasible, asymmetry, ap, cp, hausman).
    #[arg(long)]
    kind: Vec<EstimatorKind>,
    /// Multiplier on the noise bias assumed by ap and hausman.
    #[arg(long)]
    noise_bias_scale: Option<f64>,
    /// JSON report (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV report, one row per (level, kind).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    levels: Option<String>,
    /// Directory for `raw.csv` and `diagnostics.json`.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, cli.print_config),
        Command::Transform(a) => transform(a, cli.print_config),
        Command::Estimate(a) => estimate(a, cli.print_config),
        Command::Mc(a) => mc(a, cli.print_config),
        Command::Selftest => selftest::run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn check_output(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("refusing to overwrite {} (use --force)", path.display());
    }
    Ok(())
}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn apply_field(cfg: &mut RunConfig, f: &FieldFlags) {
    let fs = &mut cfg.field;
    fs.spin = f.spin.unwrap_or(fs.spin);
    fs.band_limit = f.lmax.unwrap_or(fs.band_limit);
    fs.alpha = f.alpha.unwrap_or(fs.alpha);
    fs.amplitude = f.amplitude.unwrap_or(fs.amplitude);
    fs.seed = f.seed.unwrap_or(fs.seed);
    let n = &mut cfg.noise;
    n.channels = f.channels.unwrap_or(n.channels);
    n.gamma = f.gamma.unwrap_or(n.gamma);
    if !f.noise_amplitude.is_empty() {
        n.amplitudes = f.noise_amplitude.clone();
    }
}

fn apply_needlet(cfg: &mut RunConfig, f: &NeedletFlags) -> Result<()> {
    let n = &mut cfg.needlet;
    n.bandwidth = f.bandwidth.unwrap_or(n.bandwidth);
    n.smoothness_order = f.smoothness.unwrap_or(n.smoothness_order);
    if let Some(l) = &f.levels {
        n.levels = parse_levels(l).with_context(|| format!("invalid --levels `{l}`"))?;
    }
    Ok(())
}

fn apply_mask(cfg: &mut RunConfig, f: &MaskFlags) {
    let m = &mut cfg.mask;
    if let Some(p) = &f.mask {
        m.kind = MaskKind::File;
        m.path = Some(p.clone());
        m.radius = None;
        m.sky_fraction = None;
    }
    if let Some(r) = f.cap_radius {
        m.kind = MaskKind::PolarCap;
        m.radius = Some(r);
        m.sky_fraction = None;
    }
    if let Some(s) = f.sky_fraction {
        m.kind = MaskKind::PolarCap;
        m.sky_fraction = Some(s);
        m.radius = None;
    }
    m.epsilon_scale = f.epsilon_scale.unwrap_or(m.epsilon_scale);
    m.regions = f.regions.unwrap_or(m.regions);
}

fn print_config(cfg: &RunConfig) -> Result<()> {
    print!("{}", cfg.canonical());
    Ok(())
}

fn mask_path(template: &str, j: u32) -> PathBuf {
    PathBuf::from(template.replace("{j}", &j.to_string()))
}

/// The configured mask on `grid`, or `None` when nothing is masked.
fn level_mask(cfg: &RunConfig, grid: &Arc<CubatureGrid<f64>>) -> Result<Option<SkyMask<f64>>> {
    let m = &cfg.mask;
    let epsilon = m.epsilon_scale * cfg.needlet.bandwidth.powi(-(grid.j as i32));
    Ok(match m.kind {
        MaskKind::None => None,
        MaskKind::PolarCap => {
            let radius = match (m.radius, m.sky_fraction) {
                (Some(r), None) => r,
                (None, Some(f)) if f > 0.0 && f < 1.0 => (1.0 - 2.0 * f).acos(),
                _ => bail!("invalid config field `mask`: polar_cap needs exactly one of radius or sky_fraction in (0, 1)"),
            };
            Some(SkyMask::polar_cap(grid.clone(), radius, epsilon)?)
        }
        MaskKind::File => {
            let template = m.path.as_deref().ok_or_else(|| anyhow!("invalid config field `mask.path`: missing"))?;
            let path = mask_path(template, grid.j);
            let file = File::open(&path).with_context(|| format!("opening mask file {}", path.display()))?;
            Some(SkyMask::read_text(BufReader::new(file), grid.clone(), epsilon).with_context(|| format!("reading mask file {}", path.display()))?)
        }
    })
}

fn check_mask_inputs(cfg: &RunConfig, levels: &[u32]) -> Result<()> {
    if cfg.mask.kind == MaskKind::File {
        let template = cfg.mask.path.as_deref().ok_or_else(|| anyhow!("invalid config field `mask.path`: missing"))?;
        for &j in levels {
            check_input(&mask_path(template, j))?;
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs, dump: bool) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_field(&mut cfg, &a.field);
    if dump {
        return print_config(&cfg);
    }
    let signal_model = cfg.signal_model()?;
    let noise_models = cfg.noise_models()?;
    let f = &cfg.field;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("field").to_string();
    let dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let noise_paths: Vec<PathBuf> = (1..=noise_models.len()).map(|r| dir.join(format!("{stem}.noise{r}.salm"))).collect();
    for p in std::iter::once(&a.out).chain(&noise_paths) {
        check_output(p, a.common.force)?;
    }
    let signal: SpinAlm<f64> = draw_total(&signal_model, f.spin, f.band_limit, f.seed);
    signal.write_salm(create(&a.out)?)?;
    eprintln!("seed {}: signal from stream 0 -> {}", f.seed, a.out.display());
    if !noise_models.is_empty() {
        let set = observe_channels(&signal, &noise_models, f.seed)?;
        for (r, (noise, path)) in set.noise.iter().zip(&noise_paths).enumerate() {
            noise.write_salm(create(path)?)?;
            eprintln!("seed {}: noise channel {} from stream {} -> {}", f.seed, r + 1, r + 1, path.display());
        }
    }
    Ok(())
}

fn read_salm(path: &Path) -> Result<SpinAlm<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    SpinAlm::read_salm(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn transform(a: TransformArgs, dump: bool) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_needlet(&mut cfg, &a.needlet)?;
    apply_mask(&mut cfg, &a.mask);
    if dump {
        return print_config(&cfg);
    }
    for p in &a.input {
        check_input(p)?;
    }
    let mut alm = read_salm(&a.input[0])?;
    for p in &a.input[1..] {
        alm = alm.add(&read_salm(p)?).with_context(|| format!("adding {}", p.display()))?;
    }
    let s = alm.spin;
    let band = alm.band_limit;
    let window = Arc::new(NeedletWindow::build(cfg.needlet.bandwidth, cfg.needlet.smoothness_order)?);
    let levels = if !cfg.needlet.levels.is_empty() {
        cfg.needlet.levels.clone()
    } else if a.roundtrip || a.zero_pad {
        (0..=20).filter(|&j| {
            let r = window.support(j, s);
            !r.is_empty() && r.l_min <= band
        }).collect()
    } else {
        admissible_levels(&window, s, band, 20)
    };
    if levels.is_empty() {
        bail!("no needlet level fits under band limit {band}");
    }
    let masked = cfg.mask.kind != MaskKind::None;
    if a.roundtrip && masked {
        bail!("--roundtrip needs unmasked coefficients");
    }
    check_mask_inputs(&cfg, &levels)?;
    if !(a.zero_pad || a.roundtrip) {
        for &j in &levels {
            let l_max = window.support(j, s).l_max;
            if l_max > band {
                bail!("band limit exceeded at level j={j}: window needs l_max={l_max}, input has {band} (use --zero-pad for exactly band-limited inputs)");
            }
        }
    }
    let prefix = a
        .prefix
        .clone()
        .unwrap_or_else(|| a.input[0].file_stem().and_then(|s| s.to_str()).unwrap_or("coeffs").to_string());
    let outputs: Vec<PathBuf> = levels.iter().map(|j| a.out_dir.join(format!("{prefix}_j{j}.snbc"))).collect();
    for p in &outputs {
        check_output(p, a.common.force)?;
    }

    let mut all = Vec::new();
    for (&j, path) in levels.iter().zip(&outputs) {
        let grid = Arc::new(CubatureGrid::build(j, cfg.needlet.bandwidth)?);
        let support = window.support(j, s);
        let padded;
        let input = if a.zero_pad || a.roundtrip {
            padded = alm.with_band_limit(band.max(support.l_max));
            &padded
        } else {
            &alm
        };
        let coeffs = match level_mask(&cfg, &grid)? {
            Some(mask) => {
                let map = synthesize_grid(input, &grid);
                masked_analyze(&map, &mask, &window, s, j)?
            }
            None => needlet_analyze(input, &window, &grid, j).with_context(|| format!("level j={j}"))?,
        };
        coeffs.write_snbc(create(path)?)?;
        eprintln!("level {j}: {} coefficients -> {}", coeffs.values.len(), path.display());
        all.push(coeffs);
    }
    if a.roundtrip {
        let back = needlet_synthesize(&all, band)?;
        // l = s sits outside every level
        let mut expected = alm.clone();
        if (s.unsigned_abs() as usize) <= band {
            let l = s.unsigned_abs() as usize;
            for m in 0..=l {
                expected.set_e(l, m, Default::default());
                expected.set_b(l, m, Default::default());
            }
        }
        println!("roundtrip max_alm_error={:e}", back.max_abs_diff(&expected));
    }
    Ok(())
}

fn peek_level(path: &Path) -> Result<u32> {
    let mut head = [0u8; 12];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .with_context(|| format!("reading {}", path.display()))?;
    if &head[..4] != b"SNBC" {
        bail!("{} is not a SNBC file (bad magic)", path.display());
    }
    Ok(u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")))
}

struct Level {
    grid: Arc<CubatureGrid<f64>>,
    mask: SkyMask<f64>,
}

fn level(cfg: &RunConfig, j: u32) -> Result<Level> {
    let grid = Arc::new(CubatureGrid::build(j, cfg.needlet.bandwidth)?);
    let mask = level_mask(cfg, &grid)?.unwrap_or_else(|| SkyMask::empty(grid.clone()));
    Ok(Level { grid, mask })
}

fn single_kind(kind: EstimatorKind, coeffs: &NeedletCoefficients<f64>, lv: &Level, cfg: &RunConfig, out: &mut Vec<EstimateReport>) -> Result<()> {
    let model = cfg.signal_model()?;
    match kind {
        EstimatorKind::Masked => out.push(estimate_masked(coeffs, &lv.mask, &model)?),
        EstimatorKind::Unfeasible => out.push(estimate_unfeasible(coeffs, &lv.mask, &model)?),
        EstimatorKind::Asymmetry => {
            if cfg.mask.regions == RegionSpec::None {
                bail!("no region pair configured (use --regions hemispheres)");
            }
            let epsilon = cfg.mask.epsilon_scale * cfg.needlet.bandwidth.powi(-(coeffs.j as i32));
            out.push(estimate_asymmetry(coeffs, &hemispheres(&lv.grid, epsilon), &model)?.difference);
        }
        _ => unreachable!("channel estimators are handled separately"),
    }
    Ok(())
}

fn channel_kinds(kinds: &[EstimatorKind], channels: &ChannelCoefficients<f64>, cfg: &RunConfig, out: &mut Vec<EstimateReport>) -> Result<()> {
    let model = cfg.signal_model()?;
    let opts = ApOptions {
        noise_bias_scale: cfg.estimate.noise_bias_scale,
    };
    for &kind in kinds {
        let r = match kind {
            EstimatorKind::Ap => estimate_ap(channels, &model, opts),
            EstimatorKind::Cp => estimate_cp(channels, &model),
            EstimatorKind::Hausman => estimate_hausman(channels, &model, opts).map(|h| {
                if h.identity_residual > spinlet::estimators::IDENTITY_TOLERANCE {
                    eprintln!("warning: Hausman identity residual {:e}", h.identity_residual);
                }
                h.statistic
            }),
            _ => continue,
        };
        out.push(r.with_context(|| format!("kind {kind}"))?);
    }
    Ok(())
}

fn is_channel_kind(k: EstimatorKind) -> bool {
    matches!(k, EstimatorKind::Ap | EstimatorKind::Cp | EstimatorKind::Hausman)
}

fn estimate(a: EstimateArgs, dump: bool) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_field(&mut cfg, &a.field);
    apply_needlet(&mut cfg, &a.needlet)?;
    apply_mask(&mut cfg, &a.mask);
    if !a.kind.is_empty() {
        cfg.estimate.kinds = a.kind.clone();
    }
    cfg.estimate.noise_bias_scale = a.noise_bias_scale.unwrap_or(cfg.estimate.noise_bias_scale);
    if dump {
        return print_config(&cfg);
    }
    for p in &a.coeffs {
        check_input(p)?;
    }
    for p in a.out.iter().chain(&a.csv) {
        check_output(p, a.common.force)?;
    }
    let kinds = cfg.estimate.kinds.clone();
    let reports = if a.coeffs.is_empty() {
        estimate_pipeline(&cfg, &kinds)?
    } else {
        estimate_files(&cfg, &kinds, &a.coeffs)?
    };
    for r in &reports {
        for w in &r.meta.warnings {
            eprintln!("warning: j={} {}: {w}", r.j, r.kind);
        }
    }
    let json = serde_json::to_string_pretty(&reports)? + "\n";
    match &a.out {
        Some(p) => create(p)?.write_all(json.as_bytes())?,
        None => std::io::stdout().write_all(json.as_bytes())?,
    }
    if let Some(p) = &a.csv {
        write_reports_csv(&reports, create(p)?)?;
    }
    Ok(())
}

fn estimate_files(cfg: &RunConfig, kinds: &[EstimatorKind], files: &[PathBuf]) -> Result<Vec<EstimateReport>> {
    let window = Arc::new(NeedletWindow::build(cfg.needlet.bandwidth, cfg.needlet.smoothness_order)?);
    let mut by_level: BTreeMap<u32, Vec<&PathBuf>> = BTreeMap::new();
    for f in files {
        by_level.entry(peek_level(f)?).or_default().push(f);
    }
    check_mask_inputs(cfg, &by_level.keys().copied().collect::<Vec<_>>())?;
    let mut reports = Vec::new();
    for (&j, paths) in &by_level {
        let lv = level(cfg, j)?;
        let mut coeffs = Vec::new();
        for p in paths {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            coeffs.push(
                NeedletCoefficients::read_snbc(BufReader::new(file), lv.grid.clone(), window.clone())
                    .with_context(|| format!("reading {}", p.display()))?,
            );
        }
        for &kind in kinds.iter().filter(|k| !is_channel_kind(**k)) {
            for c in &coeffs {
                single_kind(kind, c, &lv, cfg, &mut reports).with_context(|| format!("kind {kind}"))?;
            }
        }
        if kinds.iter().any(|k| is_channel_kind(*k)) {
            let mut noise_cfg = cfg.clone();
            if noise_cfg.noise.channels == 0 {
                noise_cfg.noise.channels = coeffs.len();
            }
            let channels = ChannelCoefficients {
                noise_models: noise_cfg.noise_models()?,
                channels: coeffs,
            };
            channel_kinds(kinds, &channels, cfg, &mut reports)?;
        }
    }
    Ok(reports)
}

fn estimate_pipeline(cfg: &RunConfig, kinds: &[EstimatorKind]) -> Result<Vec<EstimateReport>> {
    let f = &cfg.field;
    let window = Arc::new(NeedletWindow::build(cfg.needlet.bandwidth, cfg.needlet.smoothness_order)?);
    let levels = if cfg.needlet.levels.is_empty() {
        admissible_levels(&window, f.spin, f.band_limit, 20)
    } else {
        cfg.needlet.levels.clone()
    };
    check_mask_inputs(cfg, &levels)?;
    let signal: SpinAlm<f64> = draw_total(&cfg.signal_model()?, f.spin, f.band_limit, f.seed);
    let noise_models = cfg.noise_models()?;
    let channels = if kinds.iter().any(|k| is_channel_kind(*k)) {
        Some(observe_channels(&signal, &noise_models, f.seed).context("channel estimators need at least 2 noise channels")?)
    } else {
        None
    };
    let mut reports = Vec::new();
    for j in levels {
        let lv = level(cfg, j)?;
        let singles: Vec<EstimatorKind> = kinds.iter().copied().filter(|k| !is_channel_kind(*k)).collect();
        if !singles.is_empty() {
            let map = synthesize_grid(&signal, &lv.grid);
            let masked = masked_analyze(&map, &lv.mask, &window, f.spin, j)?;
            let full = needlet_analyze(&signal, &window, &lv.grid, j).with_context(|| format!("level j={j}"))?;
            for kind in singles {
                let c = if kind == EstimatorKind::Unfeasible { &full } else { &masked };
                single_kind(kind, c, &lv, cfg, &mut reports).with_context(|| format!("kind {kind}"))?;
            }
        }
        if let Some(set) = &channels {
            let cc = ChannelCoefficients {
                channels: (0..set.len())
                    .map(|r| needlet_analyze(&set.channel(r), &window, &lv.grid, j))
                    .collect::<spinlet::Result<Vec<_>>>()?,
                noise_models: set.noise_models.clone(),
            };
            channel_kinds(kinds, &cc, cfg, &mut reports)?;
        }
    }
    Ok(reports)
}

fn mc(a: McArgs, dump: bool) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.mc.replicates = a.replicates.unwrap_or(cfg.mc.replicates);
    cfg.field.seed = a.seed.unwrap_or(cfg.field.seed);
    if let Some(l) = &a.levels {
        cfg.needlet.levels = parse_levels(l).with_context(|| format!("invalid --levels `{l}`"))?;
    }
    if dump {
        return print_config(&cfg);
    }
    let plan = cfg.plan()?;
    plan.validate()?;
    let raw_path = a.out_dir.join("raw.csv");
    let diag_path = a.out_dir.join("diagnostics.json");
    check_output(&raw_path, a.force)?;
    check_output(&diag_path, a.force)?;
    eprintln!(
        "running {} replicates ({} calibration) at levels {:?}, seed {}",
        plan.replicates,
        plan.calibration_count(),
        plan.levels,
        plan.seed
    );
    let out = run_experiment(&plan)?;
    let mut raw = create(&raw_path)?;
    write_raw_csv(&out.rows, &mut raw)?;
    raw.flush()?;
    let mut diag = create(&diag_path)?;
    serde_json::to_writer_pretty(&mut diag, &out.diagnostics)?;
    writeln!(diag)?;
    diag.flush()?;
    for w in &out.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    print_summary(&out.diagnostics);
    Ok(())
}

fn print_summary(d: &DiagnosticsReport) {
    println!("j,kind,replicates,mean,variance,skewness,excess_kurtosis,ks");
    for e in &d.entries {
        match e.normality {
            Some(n) => println!(
                "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                e.j, e.kind, e.replicates, n.mean, n.variance, n.skewness, n.excess_kurtosis, n.ks
            ),
            None => println!("{},{},{},,,,,", e.j, e.kind, e.replicates),
        }
    }
    for s in &d.slopes {
        println!("slope,{},{:.4},{:.4}", s.kind, s.fit.slope, s.fit.std_error);
    }
}
