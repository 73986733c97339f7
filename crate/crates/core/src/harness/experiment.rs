//! Corpus runs and the RGS × UCS ablation.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::degradation::degrade;
use crate::denoiser::{BuildContext, Denoiser, DenoiserRegistry, TrainingPair};
use crate::error::{Error, Result};
use crate::io::{save_pgm16, save_volume};
use crate::metrics::{format_metric, MetricsReport};
use crate::rgs::RgsConfig;
use crate::rng::{splitmix64, streams, SeededRng};
use crate::schedule::NoiseSchedule;
use crate::ucs::{generate_candidates, select_and_aggregate, UcsConfig};
use crate::volume::ImageVolume;

use super::config::ExperimentConfig;
use super::phantom::generate_corpus;

pub const LOW_FIELD: &str = "low-field";

/// One evaluation case: ground truth and its degraded observation.
#[derive(Clone, Debug)]
pub struct Case {
    pub index: usize,
    pub id: String,
    pub y: ImageVolume,
    pub x: ImageVolume,
}

fn degrade_all(
    phantoms: Vec<ImageVolume>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<(ImageVolume, ImageVolume)>> {
    let root = SeededRng::new(seed, cfg.degradation.rng_stream);
    phantoms
        .into_iter()
        .enumerate()
        .map(|(i, y)| {
            let x = degrade(&y, &cfg.degradation, &mut root.fork(i as u64))?;
            Ok((y, x))
        })
        .collect()
}

/// The evaluation corpus. Case `i` depends only on the corpus seed and `i`.
pub fn build_corpus(cfg: &ExperimentConfig) -> Result<Vec<Case>> {
    let c = &cfg.corpus;
    let phantoms = generate_corpus(c.n_cases, c.image_size, c.n_ellipses, c.phantom_seed)?;
    Ok(degrade_all(phantoms, cfg, c.phantom_seed)?
        .into_iter()
        .enumerate()
        .map(|(index, (y, x))| Case {
            index,
            id: format!("case{index:03}"),
            y,
            x,
        })
        .collect())
}

/// Training pairs for learned denoisers, from a seed disjoint from the
/// evaluation corpus.
pub fn training_pairs(cfg: &ExperimentConfig) -> Result<Vec<TrainingPair>> {
    let c = &cfg.corpus;
    let seed = splitmix64(c.phantom_seed ^ streams::TRAIN);
    let phantoms = generate_corpus(c.train_cases, c.image_size, c.n_ellipses, seed)?;
    Ok(degrade_all(phantoms, cfg, seed)?
        .into_iter()
        .map(|(y0, x)| TrainingPair { x, y0 })
        .collect())
}

/// Candidate streams for case `index`, disjoint across cases.
pub fn case_ucs(ucs: &UcsConfig, index: usize) -> UcsConfig {
    UcsConfig {
        base_seed: ucs.base_seed.wrapping_add((index as u64) << 32),
        ..ucs.clone()
    }
}

/// Builds denoisers for a run: experiment-wide ones once, per-case ones on
/// demand.
pub struct DenoiserProvider<'a> {
    registry: &'a DenoiserRegistry,
    cfg: &'a ExperimentConfig,
    schedule: &'a NoiseSchedule,
    shared: Option<Arc<dyn Denoiser>>,
}

impl<'a> DenoiserProvider<'a> {
    pub fn new(
        registry: &'a DenoiserRegistry,
        cfg: &'a ExperimentConfig,
        schedule: &'a NoiseSchedule,
    ) -> Result<Self> {
        let factory = registry.get(&cfg.denoiser.id)?;
        let shared = if factory.per_case() {
            None
        } else {
            let pairs = if cfg.denoiser.weights.is_some() {
                Vec::new()
            } else {
                training_pairs(cfg)?
            };
            let size = cfg.corpus.image_size;
            let ctx = BuildContext {
                schedule,
                shape: &[size, size],
                reference: None,
                observation: None,
                training: &pairs,
            };
            Some(factory.build(&cfg.denoiser, &ctx)?)
        };
        Ok(DenoiserProvider {
            registry,
            cfg,
            schedule,
            shared,
        })
    }

    pub fn for_case(&self, case: &Case) -> Result<Arc<dyn Denoiser>> {
        if let Some(d) = &self.shared {
            return Ok(Arc::clone(d));
        }
        let ctx = BuildContext {
            schedule: self.schedule,
            shape: case.y.shape(),
            reference: Some(&case.y),
            observation: Some(&case.x),
            training: &[],
        };
        self.registry.build(&self.cfg.denoiser, &ctx)
    }
}

/// Row label for a sampler configuration.
pub fn method_label(rgs: &RgsConfig, ucs: &UcsConfig) -> &'static str {
    match (rgs.gamma > 0.0, ucs.k > 1) {
        (false, false) => "baseline",
        (true, false) => "rgs",
        (false, true) => "ucs",
        (true, true) => "rgs+ucs",
    }
}

#[derive(Debug)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: Error,
}

#[derive(Debug)]
pub struct CaseOutput {
    pub case: Case,
    pub prediction: ImageVolume,
}

#[derive(Debug, Default)]
pub struct ExperimentOutcome {
    /// Per case, the pipeline row followed by the low-field row.
    pub rows: Vec<MetricsReport>,
    pub outputs: Vec<CaseOutput>,
    pub failures: Vec<CaseFailure>,
}

fn run_case(
    case: &Case,
    cfg: &ExperimentConfig,
    schedule: &NoiseSchedule,
    provider: &DenoiserProvider<'_>,
    method: &str,
) -> Result<(ImageVolume, [MetricsReport; 2])> {
    let denoiser = provider.for_case(case)?;
    let ucs = case_ucs(&cfg.ucs, case.index);
    let candidates = generate_candidates(&case.x, denoiser.as_ref(), schedule, &cfg.rgs, &ucs)?;
    let (pred, _) = select_and_aggregate(candidates, ucs.m, ucs.beta)?;
    let contrast = &cfg.corpus.contrast;
    let rows = [
        MetricsReport::evaluate(&pred, &case.y, method, contrast, &case.id)?,
        MetricsReport::evaluate(&case.x, &case.y, LOW_FIELD, contrast, &case.id)?,
    ];
    Ok((pred, rows))
}

/// Runs the configured pipeline on every case. A failing case is recorded
/// and skipped; the rest still run.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    registry: &DenoiserRegistry,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let schedule = cfg.schedule.build()?;
    let provider = DenoiserProvider::new(registry, cfg, &schedule)?;
    let method = method_label(&cfg.rgs, &cfg.ucs);
    let mut outcome = ExperimentOutcome::default();
    for case in build_corpus(cfg)? {
        match run_case(&case, cfg, &schedule, &provider, method) {
            Ok((prediction, rows)) => {
                outcome.rows.extend(rows);
                outcome.outputs.push(CaseOutput { case, prediction });
            }
            Err(error) => outcome.failures.push(CaseFailure {
                case_id: case.id,
                error,
            }),
        }
    }
    Ok(outcome)
}

/// Mean and sample standard deviation of one metric over the corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub method: String,
    pub rgs: bool,
    pub ucs: bool,
    pub n_cases: usize,
    pub psnr: Stat,
    pub ssim: Stat,
    pub hf_artifact: Stat,
}

impl AblationRow {
    pub const CSV_HEADER: [&'static str; 10] = [
        "method",
        "rgs",
        "ucs",
        "n_cases",
        "psnr_mean",
        "psnr_std",
        "ssim_mean",
        "ssim_std",
        "hf_mean",
        "hf_std",
    ];

    pub fn csv_record(&self) -> [String; 10] {
        [
            self.method.clone(),
            self.rgs.to_string(),
            self.ucs.to_string(),
            self.n_cases.to_string(),
            format_metric(self.psnr.mean),
            format_metric(self.psnr.std),
            format_metric(self.ssim.mean),
            format_metric(self.ssim.std),
            format_metric(self.hf_artifact.mean),
            format_metric(self.hf_artifact.std),
        ]
    }
}

#[derive(Debug, Default)]
pub struct AblationOutcome {
    /// Per case: baseline, rgs, ucs, rgs+ucs and low-field rows.
    pub rows: Vec<MetricsReport>,
    /// baseline, rgs, ucs, rgs+ucs.
    pub summary: Vec<AblationRow>,
    pub failures: Vec<CaseFailure>,
}

impl AblationOutcome {
    pub fn summary_row(&self, method: &str) -> Option<&AblationRow> {
        self.summary.iter().find(|r| r.method == method)
    }
}

pub const ABLATION_METHODS: [(&str, bool, bool); 4] = [
    ("baseline", false, false),
    ("rgs", true, false),
    ("ucs", false, true),
    ("rgs+ucs", true, true),
];

/// The four methods for one case. The single-chain variants are candidate 0
/// of the corresponding K-candidate run, which is exactly what a K = 1 run on
/// the same streams produces.
fn ablate_case(
    case: &Case,
    cfg: &ExperimentConfig,
    schedule: &NoiseSchedule,
    provider: &DenoiserProvider<'_>,
) -> Result<Vec<MetricsReport>> {
    let denoiser = provider.for_case(case)?;
    let ucs = case_ucs(&cfg.ucs, case.index);
    let plain = RgsConfig {
        gamma: 0.0,
        ..cfg.rgs.clone()
    };
    let contrast = &cfg.corpus.contrast;
    let mut rows = Vec::with_capacity(5);
    let mut preds = Vec::with_capacity(4);
    for rgs in [&plain, &cfg.rgs] {
        let candidates = generate_candidates(&case.x, denoiser.as_ref(), schedule, rgs, &ucs)?;
        let single = candidates[0].clone();
        let (fused, _) = select_and_aggregate(candidates, ucs.m, ucs.beta)?;
        preds.push((single, fused));
    }
    let [(base, ucs_only), (rgs_only, full)] = [preds[0].clone(), preds[1].clone()];
    for ((method, _, _), pred) in ABLATION_METHODS
        .iter()
        .zip([&base, &rgs_only, &ucs_only, &full])
    {
        rows.push(MetricsReport::evaluate(
            pred, &case.y, *method, contrast, &case.id,
        )?);
    }
    rows.push(MetricsReport::evaluate(
        &case.x, &case.y, LOW_FIELD, contrast, &case.id,
    )?);
    Ok(rows)
}

/// Runs the {RGS off/on} × {UCS off/on} grid with all seeds held fixed.
/// `cfg.rgs` and `cfg.ucs` describe the "on" settings.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    registry: &DenoiserRegistry,
) -> Result<AblationOutcome> {
    cfg.validate()?;
    if cfg.rgs.gamma <= 0.0 || cfg.ucs.k < 2 {
        return Err(Error::param(
            "ablation",
            "needs gamma > 0 and k >= 2 for the \"on\" settings",
        ));
    }
    let schedule = cfg.schedule.build()?;
    let provider = DenoiserProvider::new(registry, cfg, &schedule)?;
    let mut outcome = AblationOutcome::default();
    for case in build_corpus(cfg)? {
        match ablate_case(&case, cfg, &schedule, &provider) {
            Ok(rows) => outcome.rows.extend(rows),
            Err(error) => outcome.failures.push(CaseFailure {
                case_id: case.id,
                error,
            }),
        }
    }
    for (method, rgs, ucs) in ABLATION_METHODS {
        let rows: Vec<&MetricsReport> =
            outcome.rows.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            continue;
        }
        let col =
            |f: fn(&MetricsReport) -> f64| Stat::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        outcome.summary.push(AblationRow {
            method: method.to_string(),
            rgs,
            ucs,
            n_cases: rows.len(),
            psnr: col(|r| r.psnr_db),
            ssim: col(|r| r.ssim),
            hf_artifact: col(|r| r.hf_artifact),
        });
    }
    Ok(outcome)
}

/// Writes a header plus records as CSV.
pub fn write_csv<W: Write, const N: usize>(
    w: W,
    header: [&str; N],
    records: impl IntoIterator<Item = [String; N]>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for r in records {
        out.write_record(&r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn metrics_csv(rows: &[MetricsReport]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(
        &mut buf,
        MetricsReport::CSV_HEADER,
        rows.iter().map(MetricsReport::csv_record),
    )?;
    Ok(buf)
}

pub fn summary_csv(rows: &[AblationRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(
        &mut buf,
        AblationRow::CSV_HEADER,
        rows.iter().map(AblationRow::csv_record),
    )?;
    Ok(buf)
}

/// Writes `metrics.csv`, the effective `config.toml` and, when enabled, each
/// case's volumes and previews under `cfg.output.dir`.
pub fn save_experiment(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<()> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&outcome.rows)?)?;
    if cfg.output.save_volumes {
        for out in &outcome.outputs {
            let case_dir = dir.join(&out.case.id);
            save_case_volumes(&case_dir, &out.case, &out.prediction)?;
        }
    }
    Ok(())
}

fn save_case_volumes(dir: &Path, case: &Case, pred: &ImageVolume) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, vol) in [("hf", &case.y), ("lf", &case.x), ("pred", pred)] {
        save_volume(dir.join(format!("{name}.rdv")), vol)?;
        save_pgm16(dir.join(format!("{name}.pgm")), vol)?;
    }
    Ok(())
}

/// Writes `ablation.csv` (per case), `ablation_summary.csv` and the
/// effective `config.toml` under `cfg.output.dir`.
pub fn save_ablation(cfg: &ExperimentConfig, outcome: &AblationOutcome) -> Result<()> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    fs::write(dir.join("ablation.csv"), metrics_csv(&outcome.rows)?)?;
    fs::write(
        dir.join("ablation_summary.csv"),
        summary_csv(&outcome.summary)?,
    )?;
    Ok(())
}
