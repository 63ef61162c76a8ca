//! Training, sliding-window inference, postprocessing and evaluation.

mod report;

pub use report::{EvalReport, EvalRow, EvalSummary};

use std::str::FromStr;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::frangi::{frangi_filter, FrangiParams};
use crate::net::{adam_step, dice_loss, AdamConfig, AdamState, Checkpoint, NetConfig, Params, Tensor5, UNet};
use crate::phantom::PhantomCase;
use crate::preprocess::{keep_largest, Connectivity};
use crate::sampling::{augment, DatasetManifest, Patch};
use crate::volume::{extract_voi, linear_index, window_normalize, Mask3, Volume3, WindowSpec, VOI_SIZE};

/// Window for phantom images, whose tubes sit at 1.0 over a 0.0 background.
pub const PHANTOM_WINDOW: WindowSpec = WindowSpec { lo: -0.5, hi: 1.5 };

/// One labeled volume with its vesselness map.
#[derive(Clone, Debug)]
pub struct CaseData {
    pub id: String,
    pub cta: Volume3,
    pub vesselness: Volume3,
    pub label: Mask3,
}

impl CaseData {
    pub fn new(id: impl Into<String>, cta: Volume3, vesselness: Volume3, label: Mask3) -> Result<Self> {
        let id = id.into();
        if cta.dims() != vesselness.dims() || cta.dims() != label.dims() {
            return arg_err(format!(
                "case {id}: CTA {:?}, vesselness {:?} and label {:?} dims differ",
                cta.dims(),
                vesselness.dims(),
                label.dims()
            ));
        }
        Ok(Self {
            id,
            cta,
            vesselness,
            label,
        })
    }
}

/// Runs the Frangi filter on every phantom image.
pub fn prepare_phantom_cases(cases: &[PhantomCase], frangi: &FrangiParams) -> Result<Vec<CaseData>> {
    cases
        .iter()
        .map(|c| CaseData::new(c.id.clone(), c.image.clone(), frangi_filter(&c.image, frangi)?, c.truth.clone()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub window: WindowSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            adam: AdamConfig::default(),
            epochs: 20,
            batch_size: 8,
            window: PHANTOM_WINDOW,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean batch loss of each epoch.
    pub loss_history: Vec<f64>,
}

fn patch_tensors(patches: &[Patch]) -> Result<(Tensor5<f32>, Tensor5<f32>)> {
    let s = patches[0].size;
    let c = patches[0].channels.len();
    let mut x = Vec::with_capacity(patches.len() * c * s * s * s);
    let mut t = Vec::with_capacity(patches.len() * s * s * s);
    for p in patches {
        for ch in &p.channels {
            x.extend_from_slice(ch);
        }
        t.extend(p.label.iter().map(|&b| b as u8 as f32));
    }
    Ok((
        Tensor5::from_vec([patches.len(), c, s, s, s], x)?,
        Tensor5::from_vec([patches.len(), 1, s, s, s], t)?,
    ))
}

fn find_case<'a>(cases: &'a [(CaseData, Volume3)], id: &str) -> Result<&'a (CaseData, Volume3)> {
    cases
        .iter()
        .find(|(c, _)| c.id == id)
        .ok_or_else(|| Error::Argument(format!("manifest refers to unknown case {id:?}")))
}

/// Adds `b` into `a`.
fn accumulate(a: &mut Params<f32>, b: &Params<f32>) {
    for (pa, pb) in a.entries.iter_mut().zip(&b.entries) {
        for (x, y) in pa.data.iter_mut().zip(&pb.data) {
            *x += y;
        }
    }
}

/// One Adam step on a batch; returns the batch loss.
///
/// Samples run forward and backward in parallel; their gradients are summed
/// in batch order so the result does not depend on the worker count.
fn train_step(net: &mut UNet<f32>, adam: &mut AdamState<f32>, cfg: &AdamConfig, patches: &[Patch]) -> Result<f64> {
    let (x, target) = patch_tensors(patches)?;
    let inputs: Vec<Tensor5<f32>> = (0..x.batch()).map(|b| x.select(b)).collect();
    let tapes = inputs
        .par_iter()
        .map(|xi| net.forward_tape(xi))
        .collect::<Result<Vec<_>>>()?;
    let probs = Tensor5::stack(&tapes.iter().map(|t| t.probs().clone()).collect::<Vec<_>>())?;
    let (loss, dprobs) = dice_loss(&probs, &target)?;
    let grads = tapes
        .par_iter()
        .enumerate()
        .map(|(b, t)| net.backward(t, &dprobs.select(b)))
        .collect::<Result<Vec<_>>>()?;
    let mut total = grads[0].clone();
    for g in &grads[1..] {
        accumulate(&mut total, g);
    }
    adam_step(&mut net.params, &total, adam, cfg)?;
    Ok(loss as f64)
}

/// Trains a fresh net on the manifest, reporting each epoch's mean loss to `on_epoch`.
pub fn train_with_progress(
    manifest: &DatasetManifest,
    cases: &[CaseData],
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if manifest.entries.is_empty() {
        return arg_err("manifest is empty");
    }
    if !manifest.is_balanced() {
        return arg_err("manifest is not balanced between vessel and background entries");
    }
    if cfg.batch_size == 0 {
        return arg_err("batch size must be positive");
    }
    let s = manifest.voi_size;
    cfg.net.check_edge([s, s, s])?;
    if cfg.net.in_channels != 2 {
        return arg_err("training feeds two channels (windowed CTA, vesselness)");
    }
    let prepared: Vec<(CaseData, Volume3)> = cases
        .iter()
        .map(|c| (c.clone(), window_normalize(&c.cta, cfg.window)))
        .collect();
    for e in &manifest.entries {
        find_case(&prepared, &e.case_id)?;
    }

    let mut net = UNet::<f32>::init(cfg.net.clone(), seed)?;
    let mut adam = AdamState::new(&cfg.net);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..manifest.entries.len()).collect();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let patches = chunk
                .par_iter()
                .map(|&i| {
                    let e = &manifest.entries[i];
                    let (case, windowed) = find_case(&prepared, &e.case_id)?;
                    let p = Patch::extract(&[windowed, &case.vesselness], &case.label, e.center, s)?;
                    augment(&p, e.transform_id)
                })
                .collect::<Result<Vec<_>>>()?;
            sum += train_step(&mut net, &mut adam, &cfg.adam, &patches)?;
            batches += 1;
        }
        let mean = sum / batches as f64;
        info!("epoch {}/{}: loss {mean:.4} ({:.1?})", epoch + 1, cfg.epochs, start.elapsed());
        on_epoch(epoch, mean);
        history.push(mean);
    }
    let mut checkpoint = Checkpoint::new(net, cfg.window);
    checkpoint.adam = adam;
    Ok(TrainOutcome {
        checkpoint,
        loss_history: history,
    })
}

pub fn train(manifest: &DatasetManifest, cases: &[CaseData], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train_with_progress(manifest, cases, cfg, seed, |_, _| {})
}

/// Anything that maps a batch of 2-channel patches to per-voxel probabilities.
pub trait PatchPredictor: Sync {
    fn predict(&self, input: &Tensor5<f32>) -> Result<Tensor5<f32>>;
}

impl PatchPredictor for UNet<f32> {
    fn predict(&self, input: &Tensor5<f32>) -> Result<Tensor5<f32>> {
        self.forward(input)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    Mean,
    Max,
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => arg_err(format!("aggregation must be mean or max, got {other:?}")),
        }
    }
}

/// Both overlap reconstructions of one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub mean: Volume3,
    pub max: Volume3,
}

impl Reconstruction {
    pub fn get(&self, mode: AggregationMode) -> &Volume3 {
        match mode {
            AggregationMode::Mean => &self.mean,
            AggregationMode::Max => &self.max,
        }
    }
}

/// Options shared by inference and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    pub voi_size: usize,
    pub stride: usize,
    pub region: Option<Mask3>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            voi_size: VOI_SIZE,
            stride: 16,
            region: None,
        }
    }
}

const PREDICT_CHUNK: usize = 8;

/// Predicts every VOI of the test lattice once and aggregates the overlaps
/// both by per-voxel mean and by per-voxel maximum.
///
/// Voxels that no VOI covers stay 0.
pub fn sliding_window_reconstruct(
    cta: &Volume3,
    vesselness: &Volume3,
    predictor: &dyn PatchPredictor,
    window: WindowSpec,
    cfg: &InferenceConfig,
) -> Result<Reconstruction> {
    let dims = cta.dims();
    if vesselness.dims() != dims {
        return arg_err(format!(
            "CTA dims {dims:?} differ from vesselness dims {:?}",
            vesselness.dims()
        ));
    }
    let s = cfg.voi_size;
    let centers = crate::sampling::test_grid_centers(dims, cfg.region.as_ref(), s, cfg.stride)?;
    let windowed = window_normalize(cta, window);
    let n = dims.iter().product();
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    let mut max = vec![f32::NEG_INFINITY; n];
    let half = s / 2;
    for chunk in centers.chunks(PREDICT_CHUNK) {
        let outputs = chunk
            .par_iter()
            .map(|&c| {
                let mut x = extract_voi(&windowed, c, s)?;
                x.extend(extract_voi(vesselness, c, s)?);
                let input = Tensor5::from_vec([1, 2, s, s, s], x)?;
                let out = predictor.predict(&input)?;
                if out.shape() != [1, 1, s, s, s] {
                    return arg_err(format!("predictor returned shape {:?}", out.shape()));
                }
                Ok(out.into_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        for (c, out) in chunk.iter().zip(outputs) {
            let origin: [isize; 3] = std::array::from_fn(|a| c[a] as isize - half as isize);
            for lz in 0..s {
                let z = origin[2] + lz as isize;
                if z < 0 || z >= dims[2] as isize {
                    continue;
                }
                for ly in 0..s {
                    let y = origin[1] + ly as isize;
                    if y < 0 || y >= dims[1] as isize {
                        continue;
                    }
                    for lx in 0..s {
                        let x = origin[0] + lx as isize;
                        if x < 0 || x >= dims[0] as isize {
                            continue;
                        }
                        let v = out[lx + s * (ly + s * lz)];
                        let i = linear_index(dims, [x as usize, y as usize, z as usize]);
                        sum[i] += v as f64;
                        count[i] += 1;
                        max[i] = max[i].max(v);
                    }
                }
            }
        }
    }
    let spacing = cta.spacing();
    let mean: Vec<f32> = (0..n)
        .map(|i| if count[i] == 0 { 0.0 } else { (sum[i] / count[i] as f64) as f32 })
        .collect();
    let max: Vec<f32> = (0..n).map(|i| if count[i] == 0 { 0.0 } else { max[i] }).collect();
    Ok(Reconstruction {
        mean: Volume3::new(dims, spacing, mean)?,
        max: Volume3::new(dims, spacing, max)?,
    })
}

pub fn sliding_window_predict(
    cta: &Volume3,
    vesselness: &Volume3,
    predictor: &dyn PatchPredictor,
    window: WindowSpec,
    cfg: &InferenceConfig,
    agg: AggregationMode,
) -> Result<Volume3> {
    let r = sliding_window_reconstruct(cta, vesselness, predictor, window, cfg)?;
    Ok(match agg {
        AggregationMode::Mean => r.mean,
        AggregationMode::Max => r.max,
    })
}

/// [`sliding_window_predict`] with the net and window stored in a checkpoint.
pub fn predict_with_checkpoint(
    cta: &Volume3,
    vesselness: &Volume3,
    ckpt: &Checkpoint,
    cfg: &InferenceConfig,
    agg: AggregationMode,
) -> Result<Volume3> {
    sliding_window_predict(cta, vesselness, &ckpt.net(), ckpt.window, cfg, agg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    pub threshold: f32,
    /// Number of largest 26-connected components kept.
    pub keep: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { threshold: 0.5, keep: 2 }
    }
}

/// Voxels with probability at or above `threshold`.
pub fn binarize(prob: &Volume3, threshold: f32) -> Result<Mask3> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return arg_err(format!("threshold must be in (0, 1), got {threshold}"));
    }
    Mask3::new(prob.dims(), prob.data().iter().map(|&p| p >= threshold).collect())
}

/// Binarizes and keeps the `keep` largest 26-connected components.
pub fn postprocess(prob: &Volume3, threshold: f32, keep: usize) -> Result<Mask3> {
    keep_largest(&binarize(prob, threshold)?, keep, Connectivity::TwentySix)
}

/// `2|P ∩ G| / (|P| + |G|)`, or 1 when both masks are empty.
pub fn dice_3d(pred: &Mask3, gt: &Mask3) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return arg_err(format!("prediction dims {:?} differ from truth dims {:?}", pred.dims(), gt.dims()));
    }
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += (p && g) as usize;
        np += p as usize;
        ng += g as usize;
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// The three DSC columns for one case.
pub fn evaluate_case(
    case: &CaseData,
    predictor: &dyn PatchPredictor,
    window: WindowSpec,
    inference: &InferenceConfig,
    post: &PostprocessConfig,
) -> Result<(EvalRow, Reconstruction)> {
    let r = sliding_window_reconstruct(&case.cta, &case.vesselness, predictor, window, inference)?;
    let row = EvalRow {
        case_id: case.id.clone(),
        dsc_mean: dice_3d(&binarize(&r.mean, post.threshold)?, &case.label)?,
        dsc_max: dice_3d(&binarize(&r.max, post.threshold)?, &case.label)?,
        dsc_max_lcc: dice_3d(&postprocess(&r.max, post.threshold, post.keep)?, &case.label)?,
    };
    Ok((row, r))
}

pub fn evaluate(
    cases: &[CaseData],
    predictor: &dyn PatchPredictor,
    window: WindowSpec,
    inference: &InferenceConfig,
    post: &PostprocessConfig,
) -> Result<EvalReport> {
    if cases.is_empty() {
        return arg_err("evaluation needs at least one case");
    }
    let rows = cases
        .iter()
        .map(|c| Ok(evaluate_case(c, predictor, window, inference, post)?.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows))
}

pub fn evaluate_checkpoint(
    cases: &[CaseData],
    ckpt: &Checkpoint,
    inference: &InferenceConfig,
    post: &PostprocessConfig,
) -> Result<EvalReport> {
    evaluate(cases, &ckpt.net(), ckpt.window, inference, post)
}
