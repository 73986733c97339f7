mod args;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Parser;
use rediff::degradation::{degrade, DegradationConfig};
use rediff::denoiser::{tiny::train_tiny_denoiser, BuildContext, Denoiser, DenoiserRegistry};
use rediff::harness::experiment::{
    metrics_csv, run_ablation, run_experiment, save_ablation, save_experiment, training_pairs,
    write_csv, CaseFailure,
};
use rediff::harness::{generate_corpus, ExperimentConfig};
use rediff::io::{load_volume, save_pgm16, save_volume};
use rediff::metrics::MetricsReport;
use rediff::rgs::sample_chain_traced;
use rediff::rng::SeededRng;
use rediff::ucs::ucs_pipeline;
use rediff::ImageVolume;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code_for(&err)
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> ExitCode {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<rediff::Error>())
        .any(rediff::Error::is_numerical);
    ExitCode::from(if numerical { 2 } else { 1 })
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    Ok(match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    })
}

/// Validates the effective config; with `--print-config` prints it and
/// reports that the command should stop.
fn finish_config(cfg: &ExperimentConfig, print: bool) -> Result<bool> {
    cfg.validate()?;
    if print {
        print!("{}", cfg.to_toml_string()?);
    }
    Ok(print)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(&cli)?;
    let print = cli.print_config;
    match cli.command {
        Command::Phantom { out, corpus } => {
            corpus.apply(&mut cfg);
            if finish_config(&cfg, print)? {
                return Ok(ExitCode::SUCCESS);
            }
            let c = &cfg.corpus;
            fs::create_dir_all(&out)?;
            for (i, img) in generate_corpus(c.n_cases, c.image_size, c.n_ellipses, c.phantom_seed)?
                .iter()
                .enumerate()
            {
                save_volume(out.join(format!("case{i:03}.rdv")), img)?;
                save_pgm16(out.join(format!("case{i:03}.pgm")), img)?;
            }
            println!("wrote {} phantoms to {}", c.n_cases, out.display());
        }
        Command::Degrade {
            input,
            output,
            contrast,
            blur_sigma,
            contrast_gamma,
            noise_std,
            seed,
        } => {
            if let Some(name) = &contrast {
                cfg.degradation = DegradationConfig::preset(name)?;
            }
            let d = &mut cfg.degradation;
            d.blur_sigma = blur_sigma.unwrap_or(d.blur_sigma);
            d.contrast_gamma = contrast_gamma.unwrap_or(d.contrast_gamma);
            d.noise_std = noise_std.unwrap_or(d.noise_std);
            if finish_config(&cfg, print)? {
                return Ok(ExitCode::SUCCESS);
            }
            let y = load_volume(&input).with_context(|| format!("reading {}", input.display()))?;
            let mut rng = SeededRng::new(seed, cfg.degradation.rng_stream);
            let x = degrade(&y, &cfg.degradation, &mut rng)?;
            save_volume(&output, &x)?;
            let sidecar = DegradeRecord {
                input: input.display().to_string(),
                seed,
                degradation: cfg.degradation.clone(),
            };
            fs::write(sidecar_path(&output), toml::to_string(&sidecar)?)?;
        }
        Command::Sample {
            io,
            sampler,
            reliability_pgm,
        } => {
            sampler.apply(&mut cfg);
            if finish_config(&cfg, print)? {
                return Ok(ExitCode::SUCCESS);
            }
            let (x, reference) = load_inputs(&io.input, io.reference.as_deref())?;
            let schedule = cfg.schedule.build()?;
            let denoiser = build_denoiser(&cfg, &schedule, &x, reference.as_ref())?;
            let mut rng = cfg.ucs.candidate_rng(0);
            let out = sample_chain_traced(&x, denoiser.as_ref(), &schedule, &cfg.rgs, &mut rng)?;
            save_volume(&io.output, &out.sample)?;
            if let Some(path) = reliability_pgm {
                match out.last_reliability {
                    Some(map) => save_pgm16(path, &map.reliability)?,
                    None => eprintln!("note: gamma = 0, no reliability map was computed"),
                }
            }
        }
        Command::Ucs {
            io,
            sampler,
            ucs,
            export,
        } => {
            sampler.apply(&mut cfg);
            ucs.apply(&mut cfg);
            if finish_config(&cfg, print)? {
                return Ok(ExitCode::SUCCESS);
            }
            let (x, reference) = load_inputs(&io.input, io.reference.as_deref())?;
            let schedule = cfg.schedule.build()?;
            let denoiser = build_denoiser(&cfg, &schedule, &x, reference.as_ref())?;
            let (fused, set) = ucs_pipeline(&x, denoiser.as_ref(), &schedule, &cfg.rgs, &cfg.ucs)?;
            save_volume(&io.output, &fused)?;
            if let Some(dir) = export {
                fs::create_dir_all(&dir)?;
                save_volume(dir.join("mean.rdv"), &set.mean)?;
                save_volume(dir.join("variance.rdv"), &set.variance)?;
                for (k, c) in set.candidates.iter().enumerate() {
                    save_volume(dir.join(format!("candidate{k:02}.rdv")), c)?;
                }
                let retained: Vec<String> = set.retained.iter().map(usize::to_string).collect();
                fs::write(dir.join("retained.txt"), retained.join(" ") + "\n")?;
            }
        }
        Command::Eval {
            pred,
            reference,
            csv,
            method,
            contrast,
            case_id,
        } => {
            if finish_config(&cfg, print)? {
                return Ok(ExitCode::SUCCESS);
            }
            let p = load_volume(&pred).with_context(|| format!("reading {}", pred.display()))?;
            let r = load_volume(&reference)
                .with_context(|| format!("reading {}", reference.display()))?;
            let report = MetricsReport::evaluate(&p, &r, method, contrast, case_id)?;
            append_row(&csv, &report)?;
            println!("{report}");
        }
        Command::Train {
            output,
            epochs,
            corpus,
        } => {
            corpus.apply(&mut cfg);
            if let Some(e) = epochs {
                cfg.denoiser.training.epochs = e;
            }
            if finish_config(&cfg, print)? {
                return Ok(ExitCode::SUCCESS);
            }
            let schedule = cfg.schedule.build()?;
            let pairs = training_pairs(&cfg)?;
            let (model, report) = train_tiny_denoiser(
                &pairs,
                &schedule,
                &cfg.denoiser.tiny,
                &cfg.denoiser.training,
            )?;
            model.save(&output)?;
            for (epoch, loss) in report.epoch_losses.iter().enumerate() {
                println!("epoch {epoch:3}  loss {loss:.6}");
            }
        }
        Command::Run { run } => {
            run.apply(&mut cfg);
            if finish_config(&cfg, print)? {
                return Ok(ExitCode::SUCCESS);
            }
            let outcome = run_experiment(&cfg, &DenoiserRegistry::with_builtins())?;
            save_experiment(&cfg, &outcome)?;
            std::io::stdout().write_all(&metrics_csv(&outcome.rows)?)?;
            return Ok(report_failures(&outcome.failures));
        }
        Command::Ablate { run } => {
            run.apply(&mut cfg);
            if finish_config(&cfg, print)? {
                return Ok(ExitCode::SUCCESS);
            }
            let outcome = run_ablation(&cfg, &DenoiserRegistry::with_builtins())?;
            save_ablation(&cfg, &outcome)?;
            for r in &outcome.summary {
                println!(
                    "{:8}  PSNR {:.3} ± {:.3}  SSIM {:.4} ± {:.4}  HF {:.4} ± {:.4}",
                    r.method,
                    r.psnr.mean,
                    r.psnr.std,
                    r.ssim.mean,
                    r.ssim.std,
                    r.hf_artifact.mean,
                    r.hf_artifact.std
                );
            }
            return Ok(report_failures(&outcome.failures));
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize)]
struct DegradeRecord {
    input: String,
    seed: u64,
    degradation: DegradationConfig,
}

fn sidecar_path(output: &Path) -> std::path::PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".toml");
    name.into()
}

fn load_inputs(
    input: &Path,
    reference: Option<&Path>,
) -> Result<(ImageVolume, Option<ImageVolume>)> {
    let x = load_volume(input).with_context(|| format!("reading {}", input.display()))?;
    let reference = match reference {
        Some(p) => Some(load_volume(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    Ok((x, reference))
}

fn build_denoiser(
    cfg: &ExperimentConfig,
    schedule: &rediff::NoiseSchedule,
    x: &ImageVolume,
    reference: Option<&ImageVolume>,
) -> Result<Arc<dyn Denoiser>> {
    let registry = DenoiserRegistry::with_builtins();
    let factory = registry.get(&cfg.denoiser.id)?;
    let pairs = if !factory.per_case() && cfg.denoiser.weights.is_none() {
        if x.shape() != [cfg.corpus.image_size, cfg.corpus.image_size] {
            bail!(
                "input is {:?} but the training corpus is {}x{}; pass --weights or set corpus.image_size",
                x.shape(),
                cfg.corpus.image_size,
                cfg.corpus.image_size
            );
        }
        training_pairs(cfg)?
    } else {
        Vec::new()
    };
    let ctx = BuildContext {
        schedule,
        shape: x.shape(),
        reference,
        observation: Some(x),
        training: &pairs,
    };
    Ok(factory.build(&cfg.denoiser, &ctx)?)
}

fn append_row(path: &Path, report: &MetricsReport) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if fresh {
        write_csv(file, MetricsReport::CSV_HEADER, [report.csv_record()])?;
    } else {
        let mut w = csv::Writer::from_writer(file);
        w.write_record(report.csv_record())?;
        w.flush()?;
    }
    Ok(())
}

fn report_failures(failures: &[CaseFailure]) -> ExitCode {
    for f in failures {
        eprintln!("case {} failed: {}", f.case_id, f.error);
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else if failures.iter().any(|f| f.error.is_numerical()) {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}
