//! Pipeline stages behind the CLI: tiling, filtering, stain transforms,
//! training, prediction, evaluation, and heatmap emission. Each stage is a
//! plain function over the config so tests drive the same code paths as
//! the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use hmic_core::aggregate::{self, SlidePrediction};
use hmic_core::arch::{build_architecture, build_flat_mlp, Level, ModelBundle, TrunkShape};
use hmic_core::exec::Executor;
use hmic_core::filter;
use hmic_core::gradcam;
use hmic_core::kmeans::kmeans2;
use hmic_core::labels::{flat_six_way_index, ParentLabel, Split};
use hmic_core::metrics::{confusion_matrix, metrics, BootstrapConfig, EvalReport};
use hmic_core::ops::resize::resize_area;
use hmic_core::rng;
use hmic_core::stain::{
    cb_percent_to_params, color_balance, estimate_stain_profile, normalize_stain, StainProfile,
};
use hmic_core::synth::{render_slide, slide_plan, SyntheticSpec};
use hmic_core::train::{train_level, TrainHistory};
use hmic_core::Tensor3;

use crate::config::{PipelineConfig, StainMode};
use crate::error::{PipelineError, Result};
use crate::image_io;
use crate::manifest::{read_manifest, write_manifest, PatchRecord, CLUSTER_NOT_USEFUL, CLUSTER_USEFUL};
use crate::model_io::{load_model, save_model};
use crate::patching::{read_labels_csv, tile_slide, write_labels_csv, SlideLabels};
use crate::profile_io::load_profile;

// ---------------------------------------------------------------------------
// patch
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct PatchSummary {
    pub slides: usize,
    pub patches: usize,
    pub warnings: Vec<String>,
    pub manifest: PathBuf,
}

pub fn manifest_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.patches.join("manifest.jsonl")
}

pub fn labels_csv_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.slides.join("labels.csv")
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut slides = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            slides.push(path);
        }
    }
    slides.sort();
    Ok(slides)
}

/// Slide-level split assignment for slides whose labels carry none:
/// stratified by label group, seeded shuffle, `test_fraction` of each group
/// becomes test.
fn assign_splits(
    labels: &mut BTreeMap<String, SlideLabels>,
    test_fraction: f64,
    seed: u64,
) {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (slide_id, l) in labels.iter() {
        if l.split.is_none() {
            let key = format!(
                "{}:{}",
                l.label_parent.as_str(),
                l.label_child.map(|c| c.as_str()).unwrap_or("-")
            );
            groups.entry(key).or_default().push(slide_id.clone());
        }
    }
    for (key, mut ids) in groups {
        ids.sort();
        let mut stream = rng::substream(seed, &[0x5B11, key.len() as u64]);
        ids.shuffle(&mut stream);
        let test_count = ((ids.len() as f64) * test_fraction).round() as usize;
        for (i, id) in ids.iter().enumerate() {
            let split = if i < test_count { Split::Test } else { Split::Train };
            labels.get_mut(id).expect("listed id").split = Some(split);
        }
    }
}

/// Tiles every slide in the slides directory into patch PNGs plus the
/// manifest. Labels come from the labels CSV; splits come from its split
/// column when present, otherwise from a seeded stratified assignment.
pub fn run_patch<E: Executor>(cfg: &PipelineConfig, exec: &E) -> Result<PatchSummary> {
    let slide_paths = list_pngs(&cfg.paths.slides)?;
    if slide_paths.is_empty() {
        return Err(PipelineError::Config(format!(
            "no PNG slides under {}",
            cfg.paths.slides.display()
        )));
    }
    let mut labels = read_labels_csv(&labels_csv_path(cfg))?;
    assign_splits(&mut labels, cfg.patch.test_fraction, cfg.seed);

    let size = cfg.patch.size;
    let stride = cfg.patch.effective_stride();
    let patches_root = cfg.paths.patches.clone();

    let results = exec.map(&slide_paths, |_, path| -> Result<(Vec<PatchRecord>, Vec<String>)> {
        let slide = image_io::load_slide(path)?;
        let slide_labels = labels.get(&slide.slide_id).ok_or_else(|| {
            PipelineError::Record(format!(
                "slide {} has no row in the labels CSV",
                slide.slide_id
            ))
        })?;
        let split = slide_labels.split.expect("split assigned above");
        let outcome = tile_slide(&slide, size, stride, Some(slide_labels), split)?;
        let mut records = Vec::with_capacity(outcome.patches.len());
        for patch in &outcome.patches {
            image_io::save_rgb(&patch.pixels, &patches_root.join(&patch.record.path))?;
            records.push(patch.record.clone());
        }
        Ok((records, outcome.warnings))
    });

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for result in results {
        let (r, w) = result?;
        records.extend(r);
        warnings.extend(w);
    }
    let manifest = manifest_path(cfg);
    write_manifest(&records, &manifest)?;
    Ok(PatchSummary {
        slides: slide_paths.len(),
        patches: records.len(),
        warnings,
        manifest,
    })
}

// ---------------------------------------------------------------------------
// patch loading + stain transforms
// ---------------------------------------------------------------------------

fn load_patch(cfg: &PipelineConfig, record: &PatchRecord) -> Result<Tensor3<f32>> {
    image_io::load_rgb(&cfg.paths.patches.join(&record.path))
}

fn load_patches<E: Executor>(
    cfg: &PipelineConfig,
    records: &[&PatchRecord],
    exec: &E,
) -> Result<Vec<Tensor3<f32>>> {
    exec.map(records, |_, record| load_patch(cfg, record))
        .into_iter()
        .collect()
}

fn resize_to(patch: &Tensor3<f32>, side: usize) -> Result<Tensor3<f32>> {
    if patch.height() == side && patch.width() == side {
        Ok(patch.clone())
    } else {
        resize_area(patch, side, side).map_err(PipelineError::from)
    }
}

/// Parent-level appearance transform (also used for the flat baselines, so
/// every 6-way comparison sees identical inputs).
pub fn parent_transform(cfg: &PipelineConfig, patch: &Tensor3<f32>) -> Result<Tensor3<f32>> {
    match cfg.stain.parent_mode {
        StainMode::None => Ok(patch.clone()),
        StainMode::ColorBalance => {
            let params = cb_percent_to_params(patch, cfg.stain.percent)?;
            color_balance(patch, &params).map_err(PipelineError::from)
        }
        StainMode::StainNormalize => Err(PipelineError::Config(
            "stain_normalize is a child-level mode; parent level supports color_balance or none"
                .into(),
        )),
    }
}

/// Child-level stain normalization with per-slide source profiles.
pub struct ChildTransformer {
    target: Option<StainProfile>,
    lambda: f64,
    seed: u64,
    enabled: bool,
}

impl ChildTransformer {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        match cfg.stain.child_mode {
            StainMode::None => Ok(ChildTransformer {
                target: None,
                lambda: cfg.stain.lambda,
                seed: cfg.seed,
                enabled: false,
            }),
            StainMode::StainNormalize => {
                let path = cfg.stain.target_profile.as_ref().ok_or_else(|| {
                    PipelineError::Config(
                        "child stain normalization needs stain.target_profile".into(),
                    )
                })?;
                Ok(ChildTransformer {
                    target: Some(load_profile(path)?),
                    lambda: cfg.stain.lambda,
                    seed: cfg.seed,
                    enabled: true,
                })
            }
            StainMode::ColorBalance => Err(PipelineError::Config(
                "color_balance is a parent-level mode; child level supports stain_normalize or none"
                    .into(),
            )),
        }
    }

    /// Source profile of one slide, estimated from pixels pooled across its
    /// patches (seeded subsample, up to 2000 per patch).
    pub fn slide_profile(&self, slide_id: &str, patches: &[Tensor3<f32>]) -> Result<StainProfile> {
        let mut pool: Vec<f32> = Vec::new();
        let mut stream = rng::substream(self.seed, &[0x907F, slide_id.len() as u64]);
        for patch in patches {
            let n_pixels = patch.len() / 3;
            let take = n_pixels.min(2000);
            for _ in 0..take {
                let p = stream.gen_range(0..n_pixels);
                pool.extend_from_slice(&patch.data()[p * 3..p * 3 + 3]);
            }
        }
        let pooled = Tensor3::from_vec(pool.len() / 3, 1, 3, pool)?;
        estimate_stain_profile(&pooled, self.lambda, self.seed).map_err(|e| {
            PipelineError::Record(format!("slide {slide_id}: stain estimation failed: {e}"))
        })
    }

    /// Normalizes all patches of one slide toward the target profile.
    pub fn transform_slide(
        &self,
        slide_id: &str,
        patches: &[Tensor3<f32>],
    ) -> Result<Vec<Tensor3<f32>>> {
        if !self.enabled {
            return Ok(patches.to_vec());
        }
        let target = self.target.as_ref().expect("enabled implies target");
        let source = self.slide_profile(slide_id, patches)?;
        patches
            .iter()
            .map(|p| normalize_stain(p, &source, target).map_err(PipelineError::from))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

pub fn filter_model_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.models.join("filter.hmic")
}

/// Trains the patch-filter autoencoder on every patch in the manifest.
pub fn run_filter_train<E: Executor>(cfg: &PipelineConfig, exec: &E) -> Result<PathBuf> {
    let records = read_manifest(&manifest_path(cfg))?;
    if records.is_empty() {
        return Err(PipelineError::Config("manifest is empty; run patch first".into()));
    }
    let refs: Vec<&PatchRecord> = records.iter().collect();
    let patches = load_patches(cfg, &refs, exec)?;
    let side = cfg.filter.input;
    let resized: Vec<Tensor3<f32>> = patches
        .iter()
        .map(|p| resize_to(p, side))
        .collect::<Result<_>>()?;
    let (bundle, _history) =
        filter::train_autoencoder(&resized, cfg.filter.epochs, cfg.seed, exec)?;
    let path = filter_model_path(cfg);
    save_model(&bundle, &path)?;
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct FilterSummary {
    pub total: usize,
    pub useful: usize,
    pub not_useful: usize,
    pub useful_cluster: usize,
    pub mean_luminance: [f64; 2],
}

/// Encodes every patch, clusters the codes, picks the tissue cluster, and
/// updates the manifest in place. `force_useful` overrides an ambiguous
/// luminance decision.
pub fn run_filter_apply<E: Executor>(
    cfg: &PipelineConfig,
    exec: &E,
    force_useful: Option<usize>,
) -> Result<FilterSummary> {
    let bundle = load_model(&filter_model_path(cfg))?;
    let mut records = read_manifest(&manifest_path(cfg))?;
    if records.is_empty() {
        return Err(PipelineError::Config("manifest is empty; run patch first".into()));
    }
    let refs: Vec<&PatchRecord> = records.iter().collect();
    let patches = load_patches(cfg, &refs, exec)?;
    let side = cfg.filter.input;
    let resized: Vec<Tensor3<f32>> = patches
        .iter()
        .map(|p| resize_to(p, side))
        .collect::<Result<_>>()?;

    let codes = filter::encode_all(&bundle, &resized, exec)?;
    let state = kmeans2(&codes, cfg.seed)?;
    let decision = match force_useful {
        Some(cluster) if cluster < 2 => filter::ClusterDecision {
            useful_cluster: cluster,
            mean_luminance: [f64::NAN, f64::NAN],
            criterion: "manual override".into(),
        },
        Some(other) => {
            return Err(PipelineError::Config(format!(
                "--useful-cluster must be 0 or 1, got {other}"
            )))
        }
        None => filter::select_useful_cluster(&resized, &state)?,
    };

    let mut useful = 0usize;
    for (record, &assignment) in records.iter_mut().zip(&state.assignments) {
        let is_useful = assignment as usize == decision.useful_cluster;
        useful += is_useful as usize;
        record.cluster = Some(if is_useful {
            CLUSTER_USEFUL.to_string()
        } else {
            CLUSTER_NOT_USEFUL.to_string()
        });
    }
    write_manifest(&records, &manifest_path(cfg))?;
    Ok(FilterSummary {
        total: records.len(),
        useful,
        not_useful: records.len() - useful,
        useful_cluster: decision.useful_cluster,
        mean_luminance: decision.mean_luminance,
    })
}

// ---------------------------------------------------------------------------
// stain commands
// ---------------------------------------------------------------------------

/// Estimates a stain profile from one reference patch and writes it as JSON.
pub fn run_stain_profile(cfg: &PipelineConfig, patch_path: &Path, out: &Path) -> Result<()> {
    let patch = image_io::load_rgb(patch_path)?;
    let profile = estimate_stain_profile(&patch, cfg.stain.lambda, cfg.seed)?;
    crate::profile_io::save_profile(&profile, out)
}

/// Materializes color-balanced copies of every manifest patch.
pub fn run_stain_balance<E: Executor>(
    cfg: &PipelineConfig,
    exec: &E,
    out_dir: &Path,
) -> Result<usize> {
    let records = read_manifest(&manifest_path(cfg))?;
    let refs: Vec<&PatchRecord> = records.iter().collect();
    let results = exec.map(&refs, |_, record| -> Result<()> {
        let patch = load_patch(cfg, record)?;
        let params = cb_percent_to_params(&patch, cfg.stain.percent)?;
        let balanced = color_balance(&patch, &params)?;
        image_io::save_rgb(&balanced, &out_dir.join(&record.path))
    });
    for r in results {
        r?;
    }
    Ok(records.len())
}

/// Materializes stain-normalized copies of every manifest patch, slide by
/// slide.
pub fn run_stain_normalize<E: Executor>(
    cfg: &PipelineConfig,
    exec: &E,
    out_dir: &Path,
) -> Result<usize> {
    let transformer = ChildTransformer::from_config(cfg)?;
    if !transformer.enabled {
        return Err(PipelineError::Config(
            "stain.child_mode is none; nothing to normalize".into(),
        ));
    }
    let records = read_manifest(&manifest_path(cfg))?;
    let mut by_slide: BTreeMap<String, Vec<&PatchRecord>> = BTreeMap::new();
    for record in &records {
        by_slide.entry(record.slide_id.clone()).or_default().push(record);
    }
    let mut written = 0usize;
    for (slide_id, slide_records) in by_slide {
        let patches = load_patches(cfg, &slide_records, exec)?;
        let normalized = transformer.transform_slide(&slide_id, &patches)?;
        let jobs: Vec<(usize, &PatchRecord)> =
            slide_records.iter().copied().enumerate().collect();
        let results = exec.map(&jobs, |_, (i, record)| {
            image_io::save_rgb(&normalized[*i], &out_dir.join(&record.path))
        });
        for r in results {
            r?;
        }
        written += slide_records.len();
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Parent,
    Child,
    FlatCnn,
    FlatMlp,
}

impl TrainTarget {
    pub fn model_file(self) -> &'static str {
        match self {
            TrainTarget::Parent => "parent.hmic",
            TrainTarget::Child => "child.hmic",
            TrainTarget::FlatCnn => "flat_cnn.hmic",
            TrainTarget::FlatMlp => "flat_mlp.hmic",
        }
    }

    fn seed_tag(self) -> u64 {
        match self {
            TrainTarget::Parent => 1,
            TrainTarget::Child => 2,
            TrainTarget::FlatCnn => 3,
            TrainTarget::FlatMlp => 4,
        }
    }
}

/// Training patches for one target: transformed pixels plus label indices.
fn training_set<E: Executor>(
    cfg: &PipelineConfig,
    target: TrainTarget,
    records: &[PatchRecord],
    arch_input: usize,
    exec: &E,
) -> Result<(Vec<Tensor3<f32>>, Vec<usize>)> {
    let mut selected: Vec<(&PatchRecord, usize)> = Vec::new();
    for record in records {
        if record.split_value()? != Split::Train || !record.is_useful() {
            continue;
        }
        let parent = record.parent_label()?;
        let child = record.child_label()?;
        let label = match target {
            TrainTarget::Parent => match parent {
                Some(p) => p.index(),
                None => continue,
            },
            TrainTarget::Child => match (parent, child) {
                (Some(ParentLabel::Celiac), Some(c)) => c.index(),
                _ => continue,
            },
            TrainTarget::FlatCnn | TrainTarget::FlatMlp => match parent {
                Some(p) => match flat_six_way_index(p, child) {
                    Ok(i) => i,
                    Err(_) => continue,
                },
                None => continue,
            },
        };
        selected.push((record, label));
    }
    if selected.is_empty() {
        return Err(PipelineError::Config(
            "no training patches match the requested level".into(),
        ));
    }

    let refs: Vec<&PatchRecord> = selected.iter().map(|(r, _)| *r).collect();
    let labels: Vec<usize> = selected.iter().map(|(_, l)| *l).collect();
    let raw = load_patches(cfg, &refs, exec)?;

    let transformed = match target {
        TrainTarget::Child => {
            // per-slide source profiles; keep patch order
            let mut by_slide: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, record) in refs.iter().enumerate() {
                by_slide.entry(record.slide_id.as_str()).or_default().push(i);
            }
            let transformer = ChildTransformer::from_config(cfg)?;
            let mut out = vec![None; raw.len()];
            for (slide_id, indices) in by_slide {
                let slide_patches: Vec<Tensor3<f32>> =
                    indices.iter().map(|&i| raw[i].clone()).collect();
                let normalized = transformer.transform_slide(slide_id, &slide_patches)?;
                for (slot, tensor) in indices.iter().zip(normalized) {
                    out[*slot] = Some(tensor);
                }
            }
            out.into_iter().map(|t| t.expect("filled above")).collect()
        }
        _ => {
            let results = exec.map(&raw, |_, patch| parent_transform(cfg, patch));
            results.into_iter().collect::<Result<Vec<_>>>()?
        }
    };

    let resized = exec.map(&transformed, |_, patch: &Tensor3<f32>| {
        resize_to(patch, arch_input)
    });
    let patches: Vec<Tensor3<f32>> = resized.into_iter().collect::<Result<_>>()?;
    Ok((patches, labels))
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub patches: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub epochs_run: usize,
}

/// Trains one model level from the manifest and saves it.
pub fn run_train<E: Executor>(
    cfg: &PipelineConfig,
    exec: &E,
    target: TrainTarget,
) -> Result<TrainSummary> {
    let records = read_manifest(&manifest_path(cfg))?;
    let settings = match target {
        TrainTarget::Parent => &cfg.train_parent,
        TrainTarget::Child => &cfg.train_child,
        TrainTarget::FlatCnn | TrainTarget::FlatMlp => &cfg.train_flat,
    };
    let (patches, labels) =
        training_set(cfg, target, &records, settings.arch_input, exec)?;

    let shape = TrunkShape::for_input(settings.arch_input)?;
    let seed = rng::derive(cfg.seed, &[target.seed_tag()]);
    let mut bundle: ModelBundle<f32> = match target {
        TrainTarget::Parent => {
            build_architecture(Level::Parent, shape, &settings.to_core(Level::Parent, seed))?
        }
        TrainTarget::Child => {
            build_architecture(Level::Child, shape, &settings.to_core(Level::Child, seed))?
        }
        TrainTarget::FlatCnn => build_architecture(
            Level::FlatBaseline,
            shape,
            &settings.to_core(Level::FlatBaseline, seed),
        )?,
        TrainTarget::FlatMlp => {
            build_flat_mlp(shape, 6, &settings.to_core(Level::FlatBaseline, seed))?
        }
    };

    let history = train_level(&mut bundle, &patches, &labels, exec)?;
    let path = cfg.paths.models.join(target.model_file());
    save_model(&bundle, &path)?;
    write_history(cfg, target, &history)?;
    let last = history.epochs.last().expect("at least one epoch");
    Ok(TrainSummary {
        model: path,
        patches: patches.len(),
        final_loss: last.loss,
        final_accuracy: last.accuracy,
        epochs_run: history.epochs.len(),
    })
}

fn write_history(cfg: &PipelineConfig, target: TrainTarget, history: &TrainHistory) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        loss: f64,
        accuracy: f64,
    }
    let rows: Vec<Row> = history
        .epochs
        .iter()
        .enumerate()
        .map(|(i, e)| Row {
            epoch: i + 1,
            loss: e.loss,
            accuracy: e.accuracy,
        })
        .collect();
    std::fs::create_dir_all(&cfg.paths.reports)
        .map_err(|e| PipelineError::io(&cfg.paths.reports, e))?;
    let path = cfg
        .paths
        .reports
        .join(format!("train_{}.json", target.model_file().trim_end_matches(".hmic")));
    let json = serde_json::to_string_pretty(&rows)
        .map_err(|e| PipelineError::format(&path, e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| PipelineError::io(&path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

/// JSON-facing view of a slide prediction.
#[derive(Debug, Serialize)]
pub struct SlideVerdict {
    pub slide_id: String,
    pub n_patches: usize,
    pub label: String,
    pub aggregate: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub child: Option<Box<SlideVerdict>>,
}

fn verdict_from(prediction: &SlidePrediction, class_names: &[String], child_names: &[String]) -> SlideVerdict {
    SlideVerdict {
        slide_id: prediction.slide_id.clone(),
        n_patches: prediction.n_patches,
        label: class_names
            .get(prediction.label)
            .cloned()
            .unwrap_or_else(|| prediction.label.to_string()),
        aggregate: prediction.aggregate.clone(),
        child: prediction
            .child
            .as_ref()
            .map(|c| Box::new(verdict_from(c, child_names, child_names))),
    }
}

pub struct LoadedModels {
    pub parent: ModelBundle<f32>,
    pub child: Option<ModelBundle<f32>>,
}

pub fn load_models(cfg: &PipelineConfig) -> Result<LoadedModels> {
    let parent = load_model(&cfg.paths.models.join(TrainTarget::Parent.model_file()))?;
    let child_path = cfg.paths.models.join(TrainTarget::Child.model_file());
    let child = if child_path.exists() {
        Some(load_model(&child_path)?)
    } else {
        None
    };
    Ok(LoadedModels { parent, child })
}

fn model_input(bundle: &ModelBundle<f32>) -> usize {
    bundle.net.input_shape().0
}

/// Hierarchical verdict for the useful patches of one slide.
pub fn predict_slide<E: Executor>(
    cfg: &PipelineConfig,
    models: &LoadedModels,
    slide_id: &str,
    records: &[&PatchRecord],
    exec: &E,
) -> Result<(SlidePrediction, SlideVerdict)> {
    let useful: Vec<&PatchRecord> = records.iter().copied().filter(|r| r.is_useful()).collect();
    if useful.is_empty() {
        return Err(PipelineError::Core(hmic_core::Error::EmptySlide));
    }
    let raw = load_patches(cfg, &useful, exec)?;

    let parent_in = model_input(&models.parent);
    let balanced = exec.map(&raw, |_, patch| {
        parent_transform(cfg, patch).and_then(|t| resize_to(&t, parent_in))
    });
    let parent_patches: Vec<Tensor3<f32>> = balanced.into_iter().collect::<Result<_>>()?;

    let child_patches = || -> hmic_core::Result<Vec<Tensor3<f32>>> {
        let child_model = models.child.as_ref().expect("gated by hierarchical_predict");
        let child_in = model_input(child_model);
        let transformer = ChildTransformer::from_config(cfg)
            .map_err(|e| hmic_core::Error::Configuration(e.to_string()))?;
        let normalized = transformer
            .transform_slide(slide_id, &raw)
            .map_err(|e| hmic_core::Error::Configuration(e.to_string()))?;
        normalized
            .iter()
            .map(|p| resize_to(p, child_in).map_err(|e| hmic_core::Error::Configuration(e.to_string())))
            .collect()
    };

    let prediction = aggregate::hierarchical_predict(
        &models.parent,
        models.child.as_ref(),
        slide_id,
        &parent_patches,
        child_patches,
        exec,
    )?;
    let child_names = models
        .child
        .as_ref()
        .map(|c| c.class_names.clone())
        .unwrap_or_default();
    let verdict = verdict_from(&prediction, &models.parent.class_names, &child_names);
    Ok((prediction, verdict))
}

pub fn slides_in_manifest(records: &[PatchRecord]) -> BTreeMap<String, Vec<&PatchRecord>> {
    let mut by_slide: BTreeMap<String, Vec<&PatchRecord>> = BTreeMap::new();
    for record in records {
        by_slide
            .entry(record.slide_id.clone())
            .or_default()
            .push(record);
    }
    by_slide
}

/// Predicts one slide (by id) or every slide in the manifest; verdicts are
/// written as JSON under reports/predictions.
pub fn run_predict<E: Executor>(
    cfg: &PipelineConfig,
    exec: &E,
    slide_id: Option<&str>,
) -> Result<Vec<SlideVerdict>> {
    let records = read_manifest(&manifest_path(cfg))?;
    let by_slide = slides_in_manifest(&records);
    let models = load_models(cfg)?;

    let targets: Vec<(&String, &Vec<&PatchRecord>)> = match slide_id {
        Some(id) => {
            let entry = by_slide
                .get_key_value(id)
                .ok_or_else(|| PipelineError::Config(format!("slide {id} not in manifest")))?;
            vec![entry]
        }
        None => by_slide.iter().collect(),
    };

    let out_dir = cfg.paths.reports.join("predictions");
    std::fs::create_dir_all(&out_dir).map_err(|e| PipelineError::io(&out_dir, e))?;
    let mut verdicts = Vec::new();
    for (id, slide_records) in targets {
        let (_, verdict) = predict_slide(cfg, &models, id, slide_records, exec)?;
        let path = out_dir.join(format!("{id}.json"));
        let json = serde_json::to_string_pretty(&verdict)
            .map_err(|e| PipelineError::format(&path, e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| PipelineError::io(&path, e))?;
        verdicts.push(verdict);
    }
    Ok(verdicts)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct Evaluation {
    pub parent_patch: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub child_patch: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hmic_patch: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat_cnn_patch: Option<EvalReport>,
    pub slide_accuracy: f64,
    pub slides_evaluated: usize,
    pub has_undefined: bool,
}

fn bootstrap(cfg: &PipelineConfig) -> BootstrapConfig {
    BootstrapConfig {
        resamples: 1000,
        seed: rng::derive(cfg.seed, &[0xB007]),
    }
}

/// Test-split evaluation: per-level patch metrics, the hierarchical
/// composite 6-way patch metrics (with the flat comparison when a flat
/// model exists), and slide-level hierarchical accuracy.
pub fn run_evaluate<E: Executor>(cfg: &PipelineConfig, exec: &E) -> Result<Evaluation> {
    let records = read_manifest(&manifest_path(cfg))?;
    let models = load_models(cfg)?;
    let parent_in = model_input(&models.parent);

    // --- patch-level: parent
    let mut parent_refs: Vec<&PatchRecord> = Vec::new();
    for record in &records {
        if record.split_value()? == Split::Test
            && record.is_useful()
            && record.parent_label()?.is_some()
        {
            parent_refs.push(record);
        }
    }
    if parent_refs.is_empty() {
        return Err(PipelineError::Config("no labeled test patches".into()));
    }
    let raw = load_patches(cfg, &parent_refs, exec)?;
    let transformed = exec.map(&raw, |_, patch| {
        parent_transform(cfg, patch).and_then(|t| resize_to(&t, parent_in))
    });
    let parent_patches: Vec<Tensor3<f32>> = transformed.into_iter().collect::<Result<_>>()?;
    let parent_truth: Vec<usize> = parent_refs
        .iter()
        .map(|r| r.parent_label().map(|l| l.expect("filtered").index()))
        .collect::<Result<_>>()?;
    let parent_preds = aggregate::classify_patches(&models.parent, &parent_patches, exec)?;
    let parent_labels: Vec<usize> = parent_preds.iter().map(|p| p.label).collect();
    let parent_patch = metrics(
        &confusion_matrix(&parent_truth, &parent_labels, &models.parent.class_names)?,
        Some(bootstrap(cfg)),
    )?;

    // --- patch-level: child (Celiac test patches), per-slide normalization
    let mut child_patch = None;
    let mut child_patches_by_index: Vec<Option<Tensor3<f32>>> = vec![None; parent_refs.len()];
    if let Some(child_model) = models.child.as_ref() {
        let child_in = model_input(child_model);
        let transformer = ChildTransformer::from_config(cfg)?;
        let mut by_slide: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, record) in parent_refs.iter().enumerate() {
            by_slide.entry(record.slide_id.as_str()).or_default().push(i);
        }
        for (slide_id, indices) in by_slide {
            let slide_patches: Vec<Tensor3<f32>> =
                indices.iter().map(|&i| raw[i].clone()).collect();
            let normalized = transformer.transform_slide(slide_id, &slide_patches)?;
            for (slot, tensor) in indices.iter().zip(normalized) {
                child_patches_by_index[*slot] = Some(resize_to(&tensor, child_in)?);
            }
        }

        let mut truth = Vec::new();
        let mut targets = Vec::new();
        for (i, record) in parent_refs.iter().enumerate() {
            if let (Some(ParentLabel::Celiac), Some(c)) =
                (record.parent_label()?, record.child_label()?)
            {
                truth.push(c.index());
                targets.push(child_patches_by_index[i].clone().expect("filled above"));
            }
        }
        if !truth.is_empty() {
            let preds = aggregate::classify_patches(child_model, &targets, exec)?;
            let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
            child_patch = Some(metrics(
                &confusion_matrix(&truth, &labels, &child_model.class_names)?,
                Some(bootstrap(cfg)),
            )?);
        }
    }

    // --- patch-level: hierarchical composite vs flat 6-way
    let flat_names = hmic_core::arch::flat_class_names();
    let mut hmic_patch = None;
    let mut flat_cnn_patch = None;
    let six_way_truth: Option<Vec<usize>> = parent_refs
        .iter()
        .map(|r| {
            let parent = r.parent_label().ok().flatten()?;
            flat_six_way_index(parent, r.child_label().ok().flatten()).ok()
        })
        .collect();
    if let (Some(child_model), Some(truth6)) = (models.child.as_ref(), six_way_truth) {
        let child_inputs: Vec<Tensor3<f32>> = child_patches_by_index
            .iter()
            .map(|t| t.clone().expect("filled when child model exists"))
            .collect();
        let composite = aggregate::hierarchical_patch_labels(
            &models.parent,
            child_model,
            &parent_patches,
            &child_inputs,
            exec,
        )?;
        hmic_patch = Some(metrics(
            &confusion_matrix(&truth6, &composite, &flat_names)?,
            Some(bootstrap(cfg)),
        )?);

        let flat_path = cfg.paths.models.join(TrainTarget::FlatCnn.model_file());
        if flat_path.exists() {
            let flat_model = load_model(&flat_path)?;
            let flat_in = model_input(&flat_model);
            let flat_inputs = exec.map(&raw, |_, patch| {
                parent_transform(cfg, patch).and_then(|t| resize_to(&t, flat_in))
            });
            let flat_inputs: Vec<Tensor3<f32>> =
                flat_inputs.into_iter().collect::<Result<_>>()?;
            let preds = aggregate::classify_patches(&flat_model, &flat_inputs, exec)?;
            let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
            flat_cnn_patch = Some(metrics(
                &confusion_matrix(&truth6, &labels, &flat_names)?,
                Some(bootstrap(cfg)),
            )?);
        }
    }

    // --- slide-level hierarchical accuracy over test slides
    let by_slide = slides_in_manifest(&records);
    let mut slides_evaluated = 0usize;
    let mut slides_correct = 0usize;
    for (slide_id, slide_records) in &by_slide {
        let first = slide_records.first().expect("non-empty group");
        if first.split_value()? != Split::Test {
            continue;
        }
        let truth_parent = match first.parent_label()? {
            Some(p) => p,
            None => continue,
        };
        let truth_child = first.child_label()?;
        let (prediction, _) = predict_slide(cfg, &models, slide_id, slide_records, exec)?;
        let parent_ok =
            models.parent.class_names[prediction.label] == truth_parent.as_str();
        let child_ok = match (truth_parent, truth_child, prediction.child.as_ref()) {
            (ParentLabel::Celiac, Some(expected), Some(child_pred)) => {
                models
                    .child
                    .as_ref()
                    .map(|m| m.class_names[child_pred.label] == expected.as_str())
                    .unwrap_or(false)
            }
            (ParentLabel::Celiac, Some(_), None) => false,
            _ => true,
        };
        slides_evaluated += 1;
        slides_correct += (parent_ok && child_ok) as usize;
    }

    let evaluation = Evaluation {
        has_undefined: parent_patch.has_undefined()
            || child_patch.as_ref().map(|r| r.has_undefined()).unwrap_or(false)
            || hmic_patch.as_ref().map(|r| r.has_undefined()).unwrap_or(false)
            || flat_cnn_patch.as_ref().map(|r| r.has_undefined()).unwrap_or(false),
        parent_patch,
        child_patch,
        hmic_patch,
        flat_cnn_patch,
        slide_accuracy: if slides_evaluated > 0 {
            slides_correct as f64 / slides_evaluated as f64
        } else {
            0.0
        },
        slides_evaluated,
    };
    crate::report::write_reports(cfg, &evaluation)?;
    Ok(evaluation)
}

// ---------------------------------------------------------------------------
// gradcam
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct GradcamSidecar {
    pub target_class: usize,
    pub class_name: String,
    pub model_hash: String,
    pub degenerate: bool,
    pub heatmap: PathBuf,
}

/// Emits a class-activation heatmap PNG plus a JSON sidecar naming the
/// class and the model file hash.
pub fn run_gradcam(
    cfg: &PipelineConfig,
    model_path: &Path,
    patch_path: &Path,
    target_class: usize,
    out_png: &Path,
) -> Result<GradcamSidecar> {
    let bundle = load_model(model_path)?;
    let patch = image_io::load_rgb(patch_path)?;
    let input = model_input(&bundle);
    let transformed = match bundle.level {
        Level::Parent | Level::FlatBaseline => parent_transform(cfg, &patch)?,
        _ => patch.clone(),
    };
    let resized = resize_to(&transformed, input)?;
    let cam = gradcam::grad_cam(&bundle, &resized, target_class)?;

    // upsample the normalized map to the original patch resolution when the
    // model input was smaller
    let heatmap = if cam.heatmap.height() != patch.height() || cam.heatmap.width() != patch.width()
    {
        hmic_core::ops::resize::resize_bilinear(&cam.heatmap, patch.height(), patch.width())?
    } else {
        cam.heatmap.clone()
    };
    image_io::save_gray(&heatmap, out_png)?;

    let model_bytes = std::fs::read(model_path).map_err(|e| PipelineError::io(model_path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&model_bytes);
    let sidecar = GradcamSidecar {
        target_class,
        class_name: bundle
            .class_names
            .get(target_class)
            .cloned()
            .unwrap_or_default(),
        model_hash: hex::encode(hasher.finalize()),
        degenerate: cam.degenerate,
        heatmap: out_png.to_path_buf(),
    };
    let sidecar_path = out_png.with_extension("json");
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| PipelineError::format(&sidecar_path, e.to_string()))?;
    std::fs::write(&sidecar_path, json).map_err(|e| PipelineError::io(&sidecar_path, e))?;
    Ok(sidecar)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub slides: usize,
    pub tiles: usize,
    pub blank_tiles: usize,
    pub labels_csv: PathBuf,
    pub truth_manifest: PathBuf,
}

/// Renders the synthetic corpus into the slides directory: slide PNGs, the
/// labels CSV (with splits), and a ground-truth manifest whose cluster
/// field marks blank tiles as not useful.
pub fn run_synth(cfg: &PipelineConfig, spec: &SyntheticSpec) -> Result<SynthSummary> {
    let plans = slide_plan(spec)?;
    std::fs::create_dir_all(&cfg.paths.slides)
        .map_err(|e| PipelineError::io(&cfg.paths.slides, e))?;

    let mut label_rows = Vec::new();
    let mut truth_records = Vec::new();
    let mut tiles = 0usize;
    let mut blank_tiles = 0usize;

    for (index, plan) in plans.iter().enumerate() {
        let slide = render_slide(spec, plan, index)?;
        let path = cfg.paths.slides.join(format!("{}.png", plan.slide_id));
        image_io::save_rgb(&slide.pixels, &path)?;
        label_rows.push((
            plan.slide_id.clone(),
            SlideLabels {
                label_parent: plan.label_parent,
                label_child: plan.label_child,
                split: Some(plan.split),
            },
        ));
        for tile in &slide.tiles {
            tiles += 1;
            blank_tiles += tile.blank as usize;
            truth_records.push(PatchRecord {
                slide_id: plan.slide_id.clone(),
                patch_id: format!("{}:{}_{}", plan.slide_id, tile.row, tile.col),
                row: tile.row,
                col: tile.col,
                path: format!("{}/{}_{}.png", plan.slide_id, tile.row, tile.col),
                label_parent: Some(plan.label_parent.as_str().to_string()),
                label_child: plan.label_child.map(|c| c.as_str().to_string()),
                cluster: Some(if tile.blank {
                    CLUSTER_NOT_USEFUL.to_string()
                } else {
                    CLUSTER_USEFUL.to_string()
                }),
                split: plan.split.as_str().to_string(),
            });
        }
    }

    let labels_csv = labels_csv_path(cfg);
    write_labels_csv(&labels_csv, &label_rows)?;
    let truth_manifest = cfg.paths.slides.join("truth.jsonl");
    write_manifest(&truth_records, &truth_manifest)?;
    Ok(SynthSummary {
        slides: plans.len(),
        tiles,
        blank_tiles,
        labels_csv,
        truth_manifest,
    })
}
