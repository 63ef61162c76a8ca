use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Subcommand};
use log::info;
use vesselpipe::frangi::{frangi_filter, FrangiParams, StructureWeight};
use vesselpipe::net::{gradient_check, load_checkpoint, save_checkpoint, AdamConfig, NetConfig};
use vesselpipe::phantom::{phantom_suite, Preset};
use vesselpipe::pipeline::{
    evaluate_case, postprocess, prepare_phantom_cases, sliding_window_reconstruct, AggregationMode, EvalReport,
    InferenceConfig, PostprocessConfig, TrainConfig,
};
use vesselpipe::preprocess::{candidate_region, CandidateConfig, CropBox};
use vesselpipe::sampling::{build_dataset, DatasetManifest, SampleCase, SamplingConfig, DEFAULT_PLAN};
use vesselpipe::volume::{load_volume, save_volume, Datatype};
use vesselpipe::{Mask3, WindowSpec};

use crate::cases::{CaseEntry, CaseList};
use crate::CliError;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Comma-separated list flag.
#[derive(Clone, Debug)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("bad list item `{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic phantom suite with ground truth.
    Phantom(PhantomArgs),
    /// Multiscale Frangi vesselness of a volume.
    Frangi(FrangiArgs),
    /// Candidate vessel region from CTA and vesselness.
    Preprocess(PreprocessArgs),
    /// Balanced training manifest from labeled cases.
    Sample(SampleArgs),
    /// Train the patch network on a manifest.
    Train(TrainArgs),
    /// Sliding-window probability map for one volume.
    Predict(PredictArgs),
    /// Dice report over labeled cases.
    Eval(EvalArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// train8, eval2 or distractor4.
    #[arg(long)]
    preset: Preset,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Skip computing vesselness maps.
    #[arg(long)]
    no_vesselness: bool,
}

#[derive(Debug, Args)]
pub struct FrangiOptions {
    /// Scales in voxels.
    #[arg(long, default_value = "1,1.5,2,3")]
    sigmas: List<f64>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Structureness weight: `auto` or a number.
    #[arg(long, default_value = "auto")]
    c: StructureWeight,
    /// Scale-normalization exponent.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
}

impl FrangiOptions {
    fn params(&self) -> FrangiParams {
        FrangiParams {
            alpha: self.alpha,
            beta: self.beta,
            c: self.c,
            sigmas: self.sigmas.0.clone(),
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Args)]
pub struct FrangiArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    frangi: FrangiOptions,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    cta: PathBuf,
    #[arg(long)]
    vesselness: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = -24.0, allow_negative_numbers = true)]
    hu_lo: f32,
    #[arg(long, default_value_t = 576.0, allow_negative_numbers = true)]
    hu_hi: f32,
    #[arg(long, default_value_t = 0.05)]
    v_thresh: f32,
    /// Keep only x0,y0,z0,x1,y1,z1 (half-open).
    #[arg(long)]
    crop: Option<CropBox>,
    #[arg(long, default_value_t = 1)]
    open_iterations: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Case list (JSON).
    #[arg(long)]
    cases: PathBuf,
    /// Output manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 32)]
    voi_size: usize,
    /// Transform ids applied to each vessel center.
    #[arg(long, default_value_t = default_plan())]
    transforms: String,
    /// Random subset of vessel entries kept per case.
    #[arg(long)]
    max_vessel_per_case: Option<usize>,
}

fn default_plan() -> String {
    DEFAULT_PLAN.map(|t| t.to_string()).join(",")
}

#[derive(Debug, Args)]
pub struct NetOptions {
    /// Encoder widths, finest first.
    #[arg(long, default_value = "16,32,64")]
    levels: List<usize>,
    #[arg(long, default_value_t = 128)]
    bottleneck: usize,
}

impl NetOptions {
    fn config(&self) -> NetConfig {
        NetConfig {
            levels: self.levels.0.clone(),
            bottleneck_channels: self.bottleneck,
            ..NetConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Intensity mapped to 0 (phantoms: -0.5; CTA in HU: e.g. -100).
    #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
    window_lo: f32,
    /// Intensity mapped to 1 (phantoms: 1.5; CTA in HU: e.g. 900).
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    window_hi: f32,
    #[command(flatten)]
    net: NetOptions,
    /// Write the per-epoch mean loss here (JSON).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferenceOptions {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 16)]
    stride: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    /// Connected components kept after thresholding.
    #[arg(long, default_value_t = 2)]
    keep: usize,
}

impl InferenceOptions {
    fn post(&self) -> PostprocessConfig {
        PostprocessConfig {
            threshold: self.threshold,
            keep: self.keep,
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    cta: PathBuf,
    #[arg(long)]
    vesselness: PathBuf,
    /// Restrict the VOI lattice to cubes touching this mask.
    #[arg(long)]
    region: Option<PathBuf>,
    /// mean or max.
    #[arg(long, default_value = "max")]
    agg: AggregationMode,
    /// Output probability map.
    #[arg(long)]
    out: PathBuf,
    /// Also write the thresholded, component-filtered mask.
    #[arg(long)]
    mask_out: Option<PathBuf>,
    #[command(flatten)]
    inference: InferenceOptions,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    cases: PathBuf,
    /// Output report (JSON).
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    inference: InferenceOptions,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    edge: usize,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value = "2,4")]
    levels: List<usize>,
    #[arg(long, default_value_t = 8)]
    bottleneck: usize,
}

pub fn run(cmd: Command, seed: u64) -> Result<(), CliError> {
    match cmd {
        Command::Phantom(a) => phantom(a, seed),
        Command::Frangi(a) => frangi(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Sample(a) => sample(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a, seed),
    }
}

fn save_mask(mask: &Mask3, spacing: [f32; 3], path: &Path) -> vesselpipe::Result<()> {
    save_volume(&mask.to_volume().with_spacing(spacing)?, path, Datatype::Uint8)
}

fn phantom(a: PhantomArgs, seed: u64) -> Result<(), CliError> {
    std::fs::create_dir_all(&a.out).map_err(vesselpipe::Error::from)?;
    let suite = phantom_suite(a.preset, seed)?;
    let vesselness = if a.no_vesselness {
        None
    } else {
        Some(prepare_phantom_cases(&suite, &FrangiParams::default())?)
    };
    let mut entries = Vec::new();
    for (k, case) in suite.iter().enumerate() {
        let img = format!("case_{k}_img.nii");
        let gt = format!("case_{k}_gt.nii");
        save_volume(&case.image, a.out.join(&img), Datatype::Float32)?;
        save_mask(&case.truth, case.image.spacing(), &a.out.join(&gt))?;
        let ves = match &vesselness {
            Some(v) => {
                let name = format!("case_{k}_ves.nii");
                save_volume(&v[k].vesselness, a.out.join(&name), Datatype::Float32)?;
                Some(name.into())
            }
            None => None,
        };
        entries.push(CaseEntry {
            id: case.id.clone(),
            cta: img.into(),
            vesselness: ves,
            label: Some(gt.into()),
            region: None,
        });
    }
    CaseList::new(entries).save(&a.out.join("cases.json"))?;
    info!("wrote {} {} cases to {}", suite.len(), a.preset.name(), a.out.display());
    Ok(())
}

fn frangi(a: FrangiArgs) -> Result<(), CliError> {
    let vol = load_volume(&a.input)?;
    let v = frangi_filter(&vol, &a.frangi.params())?;
    save_volume(&v, &a.out, Datatype::Float32)?;
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<(), CliError> {
    let cta = load_volume(&a.cta)?;
    let ves = load_volume(&a.vesselness)?;
    let cfg = CandidateConfig {
        hu_lo: a.hu_lo,
        hu_hi: a.hu_hi,
        v_thresh: a.v_thresh,
        crop: a.crop,
        open_iterations: a.open_iterations,
    };
    let region = candidate_region(&ves, &cta, &cfg)?;
    info!("candidate region: {} voxels", region.count());
    save_mask(&region, cta.spacing(), &a.out)?;
    Ok(())
}

fn sample(a: SampleArgs, seed: u64) -> Result<(), CliError> {
    let transforms = a
        .transforms
        .parse::<List<u8>>()
        .map_err(|e| CliError::Usage(format!("--transforms: {e}")))?
        .0;
    let list = CaseList::load(&a.cases)?;
    let labels = list.load_labels()?;
    let cases: Vec<SampleCase> = labels
        .iter()
        .map(|(id, label, region)| SampleCase {
            id,
            label,
            region: region.as_ref(),
        })
        .collect();
    let cfg = SamplingConfig {
        voi_size: a.voi_size,
        transforms,
        max_vessel_per_case: a.max_vessel_per_case,
    };
    let manifest = build_dataset(&cases, &cfg, seed)?;
    manifest.save(&a.manifest)?;
    info!("manifest: {} entries", manifest.entries.len());
    Ok(())
}

fn train(a: TrainArgs, seed: u64) -> Result<(), CliError> {
    let cfg = TrainConfig {
        net: a.net.config(),
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        epochs: a.epochs,
        batch_size: a.batch_size,
        window: WindowSpec::new(a.window_lo, a.window_hi)?,
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    let cases: Vec<_> = CaseList::load(&a.cases)?.load_all()?.into_iter().map(|c| c.data).collect();
    let out = vesselpipe::pipeline::train(&manifest, &cases, &cfg, seed)?;
    save_checkpoint(&out.checkpoint, &a.out)?;
    if let Some(path) = a.history {
        let json = serde_json::to_string_pretty(&out.loss_history).expect("history serializes");
        std::fs::write(&path, json + "\n").map_err(vesselpipe::Error::from)?;
    }
    info!("saved checkpoint to {}", a.out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.inference.ckpt)?;
    let cta = load_volume(&a.cta)?;
    let ves = load_volume(&a.vesselness)?;
    let region = match &a.region {
        Some(p) => Some(Mask3::from_volume(&load_volume(p)?)),
        None => None,
    };
    let inf = InferenceConfig {
        stride: a.inference.stride,
        region,
        ..InferenceConfig::default()
    };
    let rec = sliding_window_reconstruct(&cta, &ves, &ckpt.net(), ckpt.window, &inf)?;
    let prob = rec.get(a.agg);
    save_volume(prob, &a.out, Datatype::Float32)?;
    if let Some(path) = &a.mask_out {
        let post = a.inference.post();
        let mask = postprocess(prob, post.threshold, post.keep)?;
        save_mask(&mask, cta.spacing(), path)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.inference.ckpt)?;
    let net = ckpt.net();
    let post = a.inference.post();
    let cases = CaseList::load(&a.cases)?.load_all()?;
    let mut rows = Vec::with_capacity(cases.len());
    for c in cases {
        let inf = InferenceConfig {
            stride: a.inference.stride,
            region: c.region,
            ..InferenceConfig::default()
        };
        let (row, _) = evaluate_case(&c.data, &net, ckpt.window, &inf, &post)?;
        info!("{}: max + LCC {:.4}", row.case_id, row.dsc_max_lcc);
        rows.push(row);
    }
    let report = EvalReport::from_rows(rows);
    report.save(&a.report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn gradcheck(a: GradcheckArgs, seed: u64) -> Result<(), CliError> {
    let cfg = NetConfig {
        levels: a.levels.0,
        bottleneck_channels: a.bottleneck,
        ..NetConfig::default()
    };
    let r = gradient_check(&cfg, a.edge, seed, a.eps)?;
    println!(
        "max relative error {:.3e} over {} parameters ({} skipped near kinks)",
        r.max_rel_error, r.checked, r.skipped
    );
    if r.max_rel_error > GRADCHECK_TOLERANCE {
        return Err(CliError::Failed(format!(
            "max relative error {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
            r.max_rel_error
        )));
    }
    Ok(())
}
