//! Config-driven end-to-end run: load, preprocess, estimate sensitivities,
//! sample, reconstruct, register, evaluate and write artifacts.

pub mod container;
mod preprocess;

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{apply_mask, rss_image, ComplexImage, DynamicKSpace, RealImage, SamplingMask};
use crate::metrics::{l_rec, l_reg, nmse, psnr, ssim2d, total_loss, Losses, MetricSummary, MetricsReport};
use crate::phantom::{generate, phantom_kspace, PhantomConfig};
use crate::recon::{vsharp_reconstruct, zero_filled, ReconConfig};
use crate::registration::{
    integrate_field, mean_endpoint_error, register_sequence, warp_sequence, DeformationField, RegMethodConfig,
    RegistrationConfig, WarpConfig,
};
use crate::sampling::{
    acs_lines, acs_mask, adaptive_mask, dataset_optimized_mask, equispaced_mask, init_mask, kt_equispaced_mask,
    CorpusItem, EnergyScorer, OracleScorer, SamplerConfig, Scheme, ScorerKind,
};
use crate::sensitivity::{estimate, SensitivityConfig};

pub use container::{ArrayContainer, ArrayData, Dtype, Header};
pub use preprocess::{
    normalization_scale, pad_kspace, percentile, postprocess_crop, scale_kspace, PostprocessConfig,
    PreprocessConfig,
};

/// Fully sampled input: a `.arr` k-space file `[x, y_line, coil, frame]`
/// or a generated phantom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputConfig {
    File { path: PathBuf },
    Phantom(PhantomConfig),
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig::Phantom(PhantomConfig::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}

/// Training cases for the dataset-optimized sampler. Without paths and
/// with a phantom input, `phantoms` jittered phantoms seeded from
/// `seed + 1000 + i` are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub paths: Vec<PathBuf>,
    pub phantoms: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { paths: Vec::new(), phantoms: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: InputConfig,
    /// Defaults to the middle frame `(n_frames - 1) / 2`.
    pub reference_frame_index: Option<usize>,
    pub sampler: SamplerConfig,
    pub sensitivity: SensitivityConfig,
    pub recon: ReconConfig,
    pub registration: RegMethodConfig,
    pub warp: WarpConfig,
    pub loss_weights: LossWeights,
    pub preprocess: PreprocessConfig,
    pub postprocess: PostprocessConfig,
    pub corpus: CorpusConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::default(),
            reference_frame_index: None,
            sampler: SamplerConfig::default(),
            sensitivity: SensitivityConfig::default(),
            recon: ReconConfig::default(),
            registration: RegMethodConfig::default(),
            warp: WarpConfig::default(),
            loss_weights: LossWeights::default(),
            preprocess: PreprocessConfig::default(),
            postprocess: PostprocessConfig::default(),
            corpus: CorpusConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid pipeline config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Sets the seed; a phantom input also takes the ellipse jitter and
    /// noise stream of that seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let InputConfig::Phantom(p) = &mut self.input {
            p.ellipses = PhantomConfig::seeded(seed).ellipses;
            p.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.sensitivity.validate()?;
        self.recon.validate()?;
        self.registration.validate()?;
        self.preprocess.validate()?;
        self.postprocess.validate()?;
        if self.sampler.center_fraction <= 0.0 {
            return Err(Error::Config("center_fraction must be positive to calibrate sensitivities".into()));
        }
        if let InputConfig::Phantom(p) = &self.input {
            p.validate()?;
        }
        if !(self.loss_weights.alpha.is_finite() && self.loss_weights.beta.is_finite()) {
            return Err(Error::Config("loss weights must be finite".into()));
        }
        Ok(())
    }

    fn reference_index(&self, n_frames: usize) -> Result<usize> {
        let r = self.reference_frame_index.unwrap_or((n_frames - 1) / 2);
        if r >= n_frames {
            return Err(Error::Config(format!("reference frame {r} out of range for {n_frames} frames")));
        }
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    /// SHA-256 of the row-major `[y_line, frame]` u8 mask.
    pub sha256: String,
    pub counts: Vec<usize>,
    pub budget: usize,
    pub unified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub reference_frame_index: usize,
    pub scale: f64,
    pub crop: [usize; 2],
    pub mask: MaskSummary,
    /// Warped frames against the reference inside the center crop.
    pub registration: MetricsReport,
    pub registration_uncropped: MetricsReport,
    /// Reconstructed magnitudes against the fully sampled moving frames.
    pub reconstruction: MetricSummary,
    pub zero_filled: MetricSummary,
    /// Mean endpoint error against known phantom motion over the object.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub field_epe: Option<f64>,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything a run computes, before anything is written.
#[derive(Clone, Debug)]
pub struct RunProducts {
    pub report: PipelineReport,
    pub timing: Vec<(String, f64)>,
    pub mask: SamplingMask,
    pub recon: ComplexImage,
    pub fields: DeformationField,
    pub warped: RealImage,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub products: RunProducts,
    pub artifacts: Vec<PathBuf>,
}

pub fn mask_sha256(mask: &SamplingMask) -> String {
    let bytes: Vec<u8> = mask.to_u8().iter().copied().collect();
    hex::encode(Sha256::digest(&bytes))
}

struct Truth {
    fields: DeformationField,
    object_mask: Array2<bool>,
    reference_index: usize,
}

fn load_input(cfg: &PipelineConfig) -> Result<(DynamicKSpace, Option<Truth>)> {
    match &cfg.input {
        InputConfig::File { path } => Ok((load_kspace(path)?, None)),
        InputConfig::Phantom(pc) => {
            let p = generate(pc)?;
            let y = phantom_kspace(&p, pc)?;
            let truth = Truth {
                fields: p.true_fields,
                object_mask: p.object_mask,
                reference_index: p.reference_index,
            };
            Ok((y, Some(truth)))
        }
    }
}

pub fn load_kspace(path: &Path) -> Result<DynamicKSpace> {
    let a = ArrayContainer::load(path)?.into_c64()?;
    let a = a
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|_| Error::Container(format!("{} is not a 4-d k-space array", path.display())))?;
    DynamicKSpace::new(a.as_standard_layout().to_owned())
}

/// Moving frames after padding and normalization, plus the scale.
struct Prepared {
    moving: DynamicKSpace,
    moving_raw: DynamicKSpace,
    reference_raw: DynamicKSpace,
    scale: f64,
}

fn prepare(full: &DynamicKSpace, r: usize, cfg: &PipelineConfig) -> Result<Prepared> {
    let n_frames = full.shape().n_t;
    let padded = match cfg.preprocess.pad_to {
        Some(p) => pad_kspace(full, p)?,
        None => full.clone(),
    };
    let moving_idx: Vec<usize> = (0..n_frames).filter(|&t| t != r).collect();
    let moving_raw = padded.select_frames(&moving_idx)?;
    let reference_raw = padded.select_frames(&[r])?;
    let scale = match cfg.preprocess.normalize_percentile {
        Some(q) => {
            let acs = acs_lines(padded.shape().n_y, cfg.sampler.center_fraction);
            normalization_scale(&moving_raw, &acs, q)?
        }
        None => 1.0,
    };
    Ok(Prepared {
        moving: scale_kspace(&moving_raw, 1.0 / scale),
        moving_raw,
        reference_raw,
        scale,
    })
}

fn corpus_item(full: &DynamicKSpace, cfg: &PipelineConfig) -> Result<CorpusItem> {
    let n_frames = full.shape().n_t;
    if n_frames < 2 {
        return Err(Error::TooFewFrames(n_frames));
    }
    let prep = prepare(full, cfg.reference_index(n_frames)?, cfg)?;
    let s = prep.moving.shape();
    let acs = apply_mask(&prep.moving, &acs_mask(s.n_y, cfg.sampler.center_fraction, s.n_t)?)?;
    Ok(CorpusItem {
        sens: estimate(&acs, &cfg.sensitivity)?,
        target: rss_image(&prep.moving),
        kspace: prep.moving,
    })
}

fn build_corpus(cfg: &PipelineConfig) -> Result<Vec<CorpusItem>> {
    if !cfg.corpus.paths.is_empty() {
        return cfg.corpus.paths.iter().map(|p| corpus_item(&load_kspace(p)?, cfg)).collect();
    }
    let InputConfig::Phantom(pc) = &cfg.input else {
        return Err(Error::Config("dataset-optimized sampling needs corpus paths for file input".into()));
    };
    (0..cfg.corpus.phantoms as u64)
        .map(|i| {
            let seed = cfg.seed + 1000 + i;
            let c = PhantomConfig {
                ellipses: PhantomConfig::seeded(seed).ellipses,
                seed,
                ..pc.clone()
            };
            corpus_item(&phantom_kspace(&generate(&c)?, &c)?, cfg)
        })
        .collect()
}

fn sample(cfg: &PipelineConfig, y: &DynamicKSpace, sens: &crate::forward::CoilSensitivities) -> Result<SamplingMask> {
    let sc = &cfg.sampler;
    let s = y.shape();
    sc.validate_for(s.n_y)?;
    let (r, cf) = (sc.acceleration, sc.center_fraction);
    match sc.scheme {
        Scheme::AcsOnly => acs_mask(s.n_y, cf, s.n_t),
        Scheme::Equispaced { offset } => equispaced_mask(s.n_y, r, cf, offset, s.n_t, sc.mode),
        Scheme::KtEquispaced { offset } => kt_equispaced_mask(s.n_y, r, cf, offset, s.n_t, sc.mode),
        Scheme::DatasetOptimized => {
            let corpus = build_corpus(cfg)?;
            if corpus.iter().any(|c| c.kspace.shape() != s) {
                return Err(Error::Shape("corpus cases must match the input shape".into()));
            }
            dataset_optimized_mask(&corpus, sc)
        }
        Scheme::Adaptive { scorer } => {
            let init = init_mask(s.n_y, s.n_t, sc)?;
            let y0 = apply_mask(y, &init)?;
            match scorer {
                ScorerKind::Energy => adaptive_mask(&y0, &init, sens, sc, &EnergyScorer),
                ScorerKind::Oracle => {
                    let oracle = OracleScorer {
                        item: CorpusItem {
                            kspace: y.clone(),
                            sens: sens.clone(),
                            target: rss_image(y),
                        },
                    };
                    adaptive_mask(&y0, &init, sens, sc, &oracle)
                }
            }
        }
    }
}

fn scaled(img: &RealImage, s: f64) -> RealImage {
    RealImage::new(img.data() * s).expect("shape is unchanged")
}

/// Frame-wise metrics of `est` against the matching frames of `truth`.
fn sequence_summary(est: &RealImage, truth: &RealImage) -> Result<MetricSummary> {
    let n = est.n_t() as f64;
    let (mut ss, mut ps, mut ns) = (0.0, 0.0, 0.0);
    for t in 0..est.n_t() {
        ss += ssim2d(truth.frame(t), est.frame(t), None)?;
        ps += psnr(truth.frame(t), est.frame(t))?;
        ns += nmse(truth.frame(t), est.frame(t))?;
    }
    Ok(MetricSummary { ssim: ss / n, psnr: ps / n, nmse: ns / n })
}

fn timed<T>(timing: &mut Vec<(String, f64)>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage))?;
    timing.push((stage.to_string(), start.elapsed().as_secs_f64()));
    Ok(out)
}

/// Runs every stage in memory.
pub fn execute(cfg: &PipelineConfig) -> Result<RunProducts> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let mut timing = Vec::new();
    let (full, truth, r) = timed(&mut timing, "load", || {
        let (full, truth) = load_input(cfg)?;
        let n_frames = full.shape().n_t;
        if n_frames < 2 {
            return Err(Error::TooFewFrames(n_frames));
        }
        let r = cfg.reference_index(n_frames)?;
        Ok((full, truth, r))
    })?;
    let sh = full.shape();
    let prep = timed(&mut timing, "preprocess", || prepare(&full, r, cfg))?;
    let s = prep.moving.shape();

    let sens = timed(&mut timing, "sensitivity", || {
        let acs = apply_mask(&prep.moving, &acs_mask(s.n_y, cfg.sampler.center_fraction, s.n_t)?)?;
        estimate(&acs, &cfg.sensitivity)
    })?;
    let mask = timed(&mut timing, "sampling", || sample(cfg, &prep.moving, &sens))?;
    let (rec, zf) = timed(&mut timing, "reconstruction", || {
        let rec = vsharp_reconstruct(&prep.moving, &sens, &mask, &cfg.recon)?;
        let zf = zero_filled(&apply_mask(&prep.moving, &mask)?, &sens)?.abs();
        Ok((rec, zf))
    })?;

    let x_ref_raw = rss_image(&prep.reference_raw).frame(0).to_owned();
    let reg_cfg = RegistrationConfig { method: cfg.registration, warp: cfg.warp };
    let (fields, warped) = timed(&mut timing, "registration", || {
        let x_ref = x_ref_raw.mapv(|v| v / prep.scale);
        let fields = register_sequence(&rec.magnitude, x_ref.view(), &reg_cfg)?;
        let (warped, _) = warp_sequence(&rec.magnitude, &fields, &cfg.warp)?;
        Ok((fields, warped))
    })?;

    let report = timed(&mut timing, "metrics", || {
        let base = (sh.n_x, sh.n_y);
        let crop = |img: &RealImage, f: [f64; 2]| postprocess_crop(img, f, base);
        let x_ref_img = RealImage::repeat_frame(x_ref_raw.view(), 1)?;
        let warped_u = scaled(&warped, prep.scale);
        let recon_u = scaled(&rec.magnitude, prep.scale);
        let zf_u = scaled(&zf, prep.scale);
        let truth_mov = rss_image(&prep.moving_raw);

        let frac = cfg.postprocess.crop;
        let ref_c = crop(&x_ref_img, frac)?;
        let warped_c = crop(&warped_u, frac)?;
        let mut registration = MetricsReport::evaluate(&warped_c, ref_c.frame(0))?;
        if warped_c.n_t() >= crate::metrics::SSIM_TEMPORAL_WINDOW {
            let (fx, fy) = ((fields.n_x() - ref_c.n_x()) / 2, (fields.n_y() - ref_c.n_y()) / 2);
            let fields_c = DeformationField::new(
                fields
                    .data()
                    .slice(ndarray::s![.., fx..fx + ref_c.n_x(), fy..fy + ref_c.n_y(), ..])
                    .to_owned(),
            )?;
            let lr = l_rec(&crop(&recon_u, frac)?, &crop(&truth_mov, frac)?)?;
            let lg = l_reg(&warped_c, ref_c.frame(0), &fields_c)?;
            let (alpha, beta) = (cfg.loss_weights.alpha, cfg.loss_weights.beta);
            registration = registration.with_losses(Losses {
                l_rec: lr,
                l_reg: lg,
                total: total_loss(lr, lg, alpha, beta),
                alpha,
                beta,
            });
        }
        let full_frac = [1.0, 1.0];
        let registration_uncropped =
            MetricsReport::evaluate(&crop(&warped_u, full_frac)?, crop(&x_ref_img, full_frac)?.frame(0))?;
        let truth_u = crop(&truth_mov, full_frac)?;
        let reconstruction = sequence_summary(&crop(&recon_u, full_frac)?, &truth_u)?;
        let zero_filled = sequence_summary(&crop(&zf_u, full_frac)?, &truth_u)?;

        let field_epe = truth
            .as_ref()
            .filter(|t| t.reference_index == r && cfg.preprocess.pad_to.is_none_or(|p| p == [sh.n_x, sh.n_y]))
            .map(|t| {
                let total: f64 = (0..fields.n_t())
                    .map(|k| {
                        let d = integrate_field(fields.frame(k), cfg.warp.integration_steps);
                        mean_endpoint_error(d.view(), t.fields.frame(k), Some(t.object_mask.view()))
                    })
                    .sum();
                total / fields.n_t() as f64
            });

        Ok(PipelineReport {
            reference_frame_index: r,
            scale: prep.scale,
            crop: [ref_c.n_x(), ref_c.n_y()],
            mask: MaskSummary {
                sha256: mask_sha256(&mask),
                counts: mask.counts(),
                budget: cfg.sampler.budget(s.n_y),
                unified: mask.is_unified(),
            },
            registration,
            registration_uncropped,
            reconstruction,
            zero_filled,
            field_epe,
        })
    })?;

    let recon = ComplexImage::new(rec.complex.data().mapv(|v| v * prep.scale))?;
    Ok(RunProducts {
        report,
        timing,
        mask,
        recon,
        fields,
        warped: scaled(&warped, prep.scale),
    })
}

/// Files created by a run, removed again if a later write fails.
struct ArtifactWriter {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), created_dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        std::fs::write(&path, bytes)?;
        Ok(())
    }

    fn cleanup(&self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

fn write_products(p: &RunProducts, w: &mut ArtifactWriter) -> Result<()> {
    let mask = ArrayContainer::u8(p.mask.to_u8().into_dyn(), "sampling mask [y_line, frame]");
    w.write("mask.arr", &mask.to_bytes()?)?;
    let recon = ArrayContainer::c64(p.recon.data().clone().into_dyn(), "reconstruction [x, y, frame]");
    w.write("recon.arr", &recon.to_bytes()?)?;
    let fields = ArrayContainer::f64(p.fields.data().clone().into_dyn(), "deformation fields [component, x, y, frame]");
    w.write("fields.arr", &fields.to_bytes()?)?;
    let warped = ArrayContainer::f64(p.warped.data().clone().into_dyn(), "warped magnitudes [x, y, frame]");
    w.write("warped.arr", &warped.to_bytes()?)?;
    w.write("metrics.json", p.report.to_json()?.as_bytes())?;
    let mut csv = Vec::new();
    p.report.registration.write_csv(&mut csv)?;
    w.write("metrics.csv", &csv)?;
    let mut csv = Vec::new();
    p.report.registration_uncropped.write_csv(&mut csv)?;
    w.write("metrics_uncropped.csv", &csv)?;
    let timing: serde_json::Map<String, serde_json::Value> =
        p.timing.iter().map(|(k, v)| (k.clone(), serde_json::json!(v))).collect();
    w.write("timing.json", serde_json::to_string_pretty(&timing)?.as_bytes())?;
    Ok(())
}

/// Executes the pipeline and writes its artifacts to `cfg.output_dir`.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let products = execute(cfg)?;
    let mut w = ArtifactWriter::new(&cfg.output_dir).map_err(|e| e.in_stage("write"))?;
    match write_products(&products, &mut w) {
        Ok(()) => Ok(RunOutcome { artifacts: w.written.clone(), products }),
        Err(e) => {
            w.cleanup();
            Err(e.in_stage("write"))
        }
    }
}

/// Runs independent cases in parallel; output directories must differ.
pub fn run_batch(cfgs: &[PipelineConfig]) -> Result<Vec<Result<RunOutcome>>> {
    let mut dirs: Vec<&PathBuf> = cfgs.iter().map(|c| &c.output_dir).collect();
    dirs.sort();
    if dirs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("batch cases must use distinct output directories".into()));
    }
    Ok(cfgs.par_iter().map(run).collect())
}

/// Reads `metrics.json` from a run directory.
pub fn load_report(dir: &Path) -> Result<PipelineReport> {
    let text = std::fs::read_to_string(dir.join("metrics.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Full k-space of a phantom as a container.
pub fn phantom_container(cfg: &PhantomConfig) -> Result<ArrayContainer> {
    let p = generate(cfg)?;
    let y = phantom_kspace(&p, cfg)?;
    Ok(ArrayContainer::c64(y.into_inner().into_dyn(), "kspace [x, y_line, coil, frame]"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::Motion;
    use crate::recon::Denoiser;
    use crate::sampling::{Offset, SamplingMode};

    fn small(motion: Motion) -> PipelineConfig {
        PipelineConfig {
            input: InputConfig::Phantom(PhantomConfig {
                n_x: 32,
                n_y: 32,
                n_c: 2,
                n_t: 4,
                motion,
                ..PhantomConfig::default()
            }),
            ..PipelineConfig::default()
        }
    }

    fn full_sampling(mut cfg: PipelineConfig) -> PipelineConfig {
        cfg.sampler = SamplerConfig {
            acceleration: 1.0,
            center_fraction: 1.0,
            scheme: Scheme::AcsOnly,
            ..SamplerConfig::default()
        };
        cfg.recon.denoiser = Denoiser::Identity;
        cfg
    }

    #[test]
    fn full_sampling_reconstructs_exactly() {
        let cfg = full_sampling(small(Motion::Contraction { amplitude: 0.1, center: None }));
        let p = execute(&cfg).unwrap();
        assert!(p.report.reconstruction.nmse < 1e-6, "{}", p.report.reconstruction.nmse);
        assert_eq!(p.report.mask.counts, vec![32; 4]);
        assert_eq!(p.report.reference_frame_index, 2);
        assert!(p.report.field_epe.unwrap() < 1.0);
    }

    #[test]
    fn static_scene_needs_no_motion() {
        let cfg = full_sampling(small(Motion::Static));
        let p = execute(&cfg).unwrap();
        let mean = p.fields.data().iter().map(|v| v.abs()).sum::<f64>() / p.fields.data().len() as f64;
        assert!(mean < 0.1, "{mean}");
    }

    #[test]
    fn report_is_deterministic_and_consistent() {
        let mut cfg = small(Motion::Contraction { amplitude: 0.1, center: None });
        cfg.sampler.scheme = Scheme::Equispaced { offset: Offset::Seeded(4) };
        let a = execute(&cfg).unwrap().report;
        let b = execute(&cfg).unwrap().report;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let rows = &a.registration.per_frame;
        let mean = rows.iter().map(|m| m.ssim).sum::<f64>() / rows.len() as f64;
        assert!((mean - a.registration.phase_averaged.ssim).abs() < 1e-12);
        assert_eq!(a.crop, [10, 16]);
        assert!(a.registration.losses.is_some());
        assert!(a.mask.counts.iter().all(|&c| c == 8));
    }

    #[test]
    fn normalization_scale_cancels() {
        let mut cfg = small(Motion::Contraction { amplitude: 0.1, center: None });
        cfg.recon.denoiser = Denoiser::Identity;
        cfg.sampler.scheme = Scheme::Adaptive { scorer: ScorerKind::Energy };
        let with = execute(&cfg).unwrap().report;
        cfg.preprocess.normalize_percentile = None;
        let without = execute(&cfg).unwrap().report;
        assert_eq!(without.scale, 1.0);
        assert_eq!(with.mask.sha256, without.mask.sha256);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * (1.0 + a.abs());
        assert!(close(with.reconstruction.nmse, without.reconstruction.nmse));
        assert!(close(with.reconstruction.ssim, without.reconstruction.ssim));
        assert!(close(with.registration.phase_averaged.ssim, without.registration.phase_averaged.ssim));
    }

    #[test]
    fn artifacts_and_mask_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(Motion::Static);
        cfg.sampler.mode = SamplingMode::Unified;
        cfg.output_dir = dir.path().join("run");
        let out = run(&cfg).unwrap();
        for name in ["mask.arr", "recon.arr", "fields.arr", "warped.arr", "metrics.json", "metrics.csv", "timing.json"] {
            assert!(cfg.output_dir.join(name).exists(), "{name}");
        }
        let mask = ArrayContainer::load(&cfg.output_dir.join("mask.arr")).unwrap().into_u8().unwrap();
        let payload: Vec<u8> = mask.iter().copied().collect();
        assert_eq!(hex::encode(Sha256::digest(&payload)), out.products.report.mask.sha256);
        assert!(out.products.report.mask.unified);
        assert_eq!(load_report(&cfg.output_dir).unwrap(), out.products.report);
        let recon = ArrayContainer::load(&cfg.output_dir.join("recon.arr")).unwrap().into_c64().unwrap();
        assert_eq!(recon.shape(), &[32, 32, 4]);
    }

    #[test]
    fn failed_write_removes_partial_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = full_sampling(small(Motion::Static));
        cfg.output_dir = dir.path().to_path_buf();
        std::fs::create_dir(dir.path().join("metrics.json")).unwrap();
        let err = run(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "write", .. }));
        assert!(!dir.path().join("mask.arr").exists());
        assert!(!dir.path().join("recon.arr").exists());
    }

    #[test]
    fn config_errors_are_tagged() {
        let mut cfg = small(Motion::Static);
        cfg.reference_frame_index = Some(5);
        let err = execute(&cfg).unwrap_err();
        assert!(err.is_config());
        assert!(matches!(err, Error::Stage { stage: "load", .. }));
        let mut cfg = small(Motion::Static);
        cfg.preprocess.normalize_percentile = Some(0.0);
        assert!(execute(&cfg).unwrap_err().is_config());
        assert!(PipelineConfig::from_json("{\"sampler\": 3}").unwrap_err().is_config());
        let parsed = PipelineConfig::from_json(
            r#"{"input": {"kind": "phantom", "n_x": 16}, "sampler": {"acceleration": 6.0, "scheme": {"kind": "kt_equispaced", "offset": {"fixed": 1}}}}"#,
        )
        .unwrap();
        assert_eq!(parsed.sampler.scheme, Scheme::KtEquispaced { offset: Offset::Fixed(1) });
        let InputConfig::Phantom(p) = parsed.input else { panic!() };
        assert_eq!((p.n_x, p.n_y), (16, 64));
    }

    #[test]
    fn file_input_matches_phantom_input() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = full_sampling(small(Motion::Static));
        let InputConfig::Phantom(pc) = &cfg.input else { unreachable!() };
        let path = dir.path().join("k.arr");
        phantom_container(pc).unwrap().save(&path).unwrap();
        let file_cfg = PipelineConfig { input: InputConfig::File { path }, ..cfg.clone() };
        let a = execute(&cfg).unwrap().report;
        let b = execute(&file_cfg).unwrap().report;
        assert_eq!(a.registration, b.registration);
        assert!(b.field_epe.is_none());
    }

    #[test]
    fn batch_rejects_shared_directories() {
        let cfg = small(Motion::Static);
        assert!(run_batch(&[cfg.clone(), cfg]).unwrap_err().is_config());
    }

    #[test]
    fn padding_keeps_the_crop_on_the_original_grid() {
        let mut cfg = full_sampling(small(Motion::Static));
        cfg.preprocess.pad_to = Some([40, 36]);
        let p = execute(&cfg).unwrap();
        assert_eq!(p.report.crop, [10, 16]);
        assert_eq!(p.recon.dims(), (40, 36, 4));
        assert!(p.report.reconstruction.nmse < 1e-6);
    }
}
