use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rediff::harness::ExperimentConfig;
use rediff::rgs::ProbeScale;
use rediff::schedule::SigmaRule;

#[derive(Parser)]
#[command(
    name = "rediff",
    version,
    about = "Reliability-guided diffusion sampling with uncertainty-aware candidate selection"
)]
pub struct Cli {
    /// Experiment config (TOML). Flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Print the effective config and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write the phantom corpus as volume files and PGM previews.
    Phantom {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Apply the low-field observation model to a volume.
    Degrade {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Degraded volume; the config used is written next to it as `<output>.toml`.
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// Start from a named contrast preset: t1w, t2w or flair.
        #[arg(long)]
        contrast: Option<String>,
        #[arg(long)]
        blur_sigma: Option<f64>,
        #[arg(long)]
        contrast_gamma: Option<f64>,
        #[arg(long)]
        noise_std: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one reliability-guided sampling chain.
    Sample {
        #[command(flatten)]
        io: SampleIo,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Write the last reliability map as a PGM preview.
        #[arg(long, value_name = "FILE")]
        reliability_pgm: Option<PathBuf>,
    },
    /// Run K chains and fuse them.
    Ucs {
        #[command(flatten)]
        io: SampleIo,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[command(flatten)]
        ucs: UcsArgs,
        /// Also write μ, U and every candidate into this directory.
        #[arg(long, value_name = "DIR")]
        export: Option<PathBuf>,
    },
    /// Score a prediction against a reference and append a CSV row.
    Eval {
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        #[arg(long = "ref", value_name = "FILE")]
        reference: PathBuf,
        #[arg(long, value_name = "FILE")]
        csv: PathBuf,
        #[arg(long, default_value = "rediff")]
        method: String,
        #[arg(long, default_value = "t1w")]
        contrast: String,
        #[arg(long, default_value = "0")]
        case_id: String,
    },
    /// Fit the tiny denoiser on the training corpus and save its weights.
    Train {
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Run the configured pipeline over the corpus.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the RGS × UCS ablation over the corpus.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
pub struct SampleIo {
    /// Conditioning (low-field) volume.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Ground truth, required by the oracle denoiser.
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,
}

#[derive(Args)]
pub struct SamplerArgs {
    /// oracle, gaussian, linear or tiny.
    #[arg(long)]
    pub denoiser: Option<String>,
    /// Pretrained tiny-denoiser weights.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    #[arg(long)]
    pub sigma_rule: Option<SigmaRule>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// A number, `adaptive` or `adaptive:<fraction>`.
    #[arg(long)]
    pub probe_std: Option<ProbeScale>,
    #[arg(long)]
    pub n_probes: Option<usize>,
    #[arg(long)]
    pub probe_every: Option<usize>,
    /// Base seed of the chain streams.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct UcsArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub n_cases: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub phantom_seed: Option<u64>,
}

#[derive(Args)]
pub struct RunArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub save_volumes: bool,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub ucs: UcsArgs,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl SamplerArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        set(&mut cfg.denoiser.id, self.denoiser.clone());
        if self.weights.is_some() {
            cfg.denoiser.weights = self.weights.clone();
        }
        set(&mut cfg.schedule.steps, self.steps);
        set(&mut cfg.schedule.beta_start, self.beta_start);
        set(&mut cfg.schedule.beta_end, self.beta_end);
        set(&mut cfg.schedule.sigma_rule, self.sigma_rule);
        set(&mut cfg.rgs.gamma, self.gamma);
        set(&mut cfg.rgs.probe_std, self.probe_std);
        set(&mut cfg.rgs.n_probes, self.n_probes);
        set(&mut cfg.rgs.probe_every, self.probe_every);
        set(&mut cfg.ucs.base_seed, self.seed);
    }
}

impl UcsArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        set(&mut cfg.ucs.k, self.k);
        set(&mut cfg.ucs.m, self.m);
        set(&mut cfg.ucs.beta, self.beta);
    }
}

impl CorpusArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        set(&mut cfg.corpus.n_cases, self.n_cases);
        set(&mut cfg.corpus.image_size, self.size);
        set(&mut cfg.corpus.phantom_seed, self.phantom_seed);
    }
}

impl RunArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if self.save_volumes {
            cfg.output.save_volumes = true;
        }
        self.corpus.apply(cfg);
        self.sampler.apply(cfg);
        self.ucs.apply(cfg);
    }
}
