use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use vil_core::amf::{estimate_kappa, select_threshold, threshold_scores, AmfRunner, InitialAnnotation};
use vil_core::backends::{codec, ModelBackend};
use vil_core::dataio::{
    load_real_samples, load_virtual_items, save_pseudo_labels, AnnotationEntry, CategoryFrequencyTable,
    DatasetManifest, ImageEntry, PredictionDump, Provenance, PseudoLabelRecord,
};
use vil_core::jsonl;
use vil_core::music::{
    build_prompt, generation_budget, CategoryPair, Curator, DirSink, FilterOutcome, RejectStage,
    RejectionRecord, SceneIndex,
};
use vil_core::seed;
use vil_core::teacher_student::{
    read_checkpoint, write_checkpoint, Checkpoint, Detector, RealSample, ToyDetector, Trainer,
};
use vil_core::toy::{recall, toy_augment, ToyTask};
use vil_core::{Error, Result};

use crate::context::{write_json, Context};

const MANIFEST_FILE: &str = "manifest.jsonl";
const REJECTIONS_FILE: &str = "rejections.jsonl";
const RUN_FILE: &str = "run.json";

fn root_of(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new("."))
}

/// `<path>.<suffix>`, next to the output it describes.
fn beside(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_freq(ctx: &Context, flag: Option<&Path>) -> Result<CategoryFrequencyTable> {
    let path = flag
        .or(ctx.config.paths.frequency_table.as_deref())
        .ok_or_else(|| Error::Config("a frequency table is required (--freq)".into()))?;
    CategoryFrequencyTable::load(path)
}

fn single_annotation(m: &DatasetManifest, id: &str) -> Result<InitialAnnotation> {
    let anns: Vec<InitialAnnotation> = m.annotations_for(id).flat_map(AnnotationEntry::to_initial).collect();
    match anns[..] {
        [a] => Ok(a),
        _ => Err(Error::InvalidInput(format!(
            "curated image {id} has {} annotated pairs, expected 1",
            anns.len()
        ))),
    }
}

pub fn toy_data(ctx: &Context, out: &Path) -> Result<()> {
    let task = ToyTask::generate(&ctx.config.toy, ctx.config.seed)?;
    create_dir(out)?;
    task.lexicon()?
        .write_files(&out.join("actions.txt"), &out.join("objects.txt"))?;
    task.freq.save(&out.join("freq.jsonl"))?;
    for (name, manifest, samples) in [
        ("real.jsonl", task.train_manifest()?, &task.train),
        ("test.jsonl", task.test_manifest()?, &task.test),
    ] {
        // manifests are in id order, which is sample order
        manifest
            .images
            .par_iter()
            .zip(samples.par_iter())
            .try_for_each(|(e, s)| codec::save_png(&s.image, &out.join(&e.path)))?;
        manifest.save(&out.join(name))?;
    }
    let summary = json!({
        "train_images": task.train.len(),
        "test_images": task.test.len(),
        "categories": task.categories.len(),
        "rare_categories": task.rare_categories().len(),
    });
    ctx.write_header(&out.join(RUN_FILE), Some(summary))
}

pub fn prompts(ctx: &Context, freq: Option<&Path>, out: &Path) -> Result<()> {
    let lex = ctx.lexicon()?;
    let budgets = generation_budget(&load_freq(ctx, freq)?, ctx.config.mode);
    let words = ctx.words(budgets.keys().copied())?;
    let mut specs = Vec::new();
    for (&cat, &n) in &budgets {
        for k in 0..n {
            // the seeds of the curation run's first `n` attempts
            let s = seed::derive(ctx.config.seed, &[cat.action as u64, cat.object as u64, k as u64]);
            specs.push(build_prompt(cat, &words, &lex, s)?);
        }
    }
    jsonl::write(out, &json!({"format": "vil-prompts", "version": 1}), &specs)?;
    ctx.write_header(&beside(out, "run.json"), Some(json!({"prompts": specs.len()})))
}

/// Scene features of the real images, with per-category membership.
fn scene_index(backend: &dyn ModelBackend, real_manifest: &Path) -> Result<SceneIndex> {
    let m = DatasetManifest::load(real_manifest)?;
    let samples = load_real_samples(&m, root_of(real_manifest))?;
    let features = samples
        .par_iter()
        .map(|(_, s)| backend.scene_embed(&s.image))
        .collect::<Result<Vec<_>>>()?;
    let mut index = SceneIndex::new(&features)?;
    let mut members: BTreeMap<CategoryPair, Vec<usize>> = BTreeMap::new();
    for (i, (_, s)) in samples.iter().enumerate() {
        let cats: BTreeSet<CategoryPair> = s.annotations.iter().map(InitialAnnotation::category).collect();
        for c in cats {
            members.entry(c).or_default().push(i);
        }
    }
    for (c, idx) in members {
        index.add_category_members(c, &idx)?;
    }
    Ok(index)
}

fn save_rejections(path: &Path, records: &[RejectionRecord]) -> Result<()> {
    jsonl::write(path, &json!({"format": "vil-rejections", "version": 1}), records)
}

#[derive(Serialize)]
struct TallyRow {
    action: usize,
    object: usize,
    #[serde(flatten)]
    tally: vil_core::music::CategoryTally,
}

pub fn generate(ctx: &Context, freq: Option<&Path>, real_manifest: &Path, out: &Path) -> Result<()> {
    let lex = ctx.lexicon()?;
    let budgets = generation_budget(&load_freq(ctx, freq)?, ctx.config.mode);
    let words = ctx.words(budgets.keys().copied())?;
    let backend = ctx.backend(&lex)?;
    let scenes = scene_index(backend.as_ref(), real_manifest)?;
    let curator = Curator::new(backend, lex.clone(), words, scenes, ctx.config.music.clone())?;
    create_dir(out)?;
    let generated = curator.generate(&budgets, ctx.config.seed, &DirSink::new(out))?;
    let manifest = DatasetManifest::from_generation(&generated, &lex);
    manifest.save(&out.join(MANIFEST_FILE))?;
    save_rejections(&out.join(REJECTIONS_FILE), &generated.rejections)?;
    let tallies: Vec<TallyRow> = generated
        .tallies
        .iter()
        .map(|(c, t)| TallyRow {
            action: c.action,
            object: c.object,
            tally: t.clone(),
        })
        .collect();
    log::info!("kept {} images over {} categories", manifest.images.len(), tallies.len());
    ctx.write_header(
        &out.join(RUN_FILE),
        Some(json!({"images": manifest.images.len(), "rejections": generated.rejections.len(), "categories": tallies})),
    )
}

pub fn filter(ctx: &Context, manifest_path: &Path, real_manifest: &Path, out: &Path) -> Result<()> {
    let lex = ctx.lexicon()?;
    let input = DatasetManifest::load(manifest_path)?;
    if input.interactions != lex.action_names() || input.objects != lex.object_names() {
        return Err(Error::InvalidInput(format!(
            "{} uses a different vocabulary than the configured one",
            manifest_path.display()
        )));
    }
    let categories: BTreeSet<CategoryPair> = input.category_counts(None).into_keys().collect();
    let words = ctx.words(categories)?;
    let backend = ctx.backend(&lex)?;
    let scenes = scene_index(backend.as_ref(), real_manifest)?;
    let curator = Curator::new(backend, lex.clone(), words, scenes, ctx.config.music.clone())?;
    let root = root_of(manifest_path);
    create_dir(&out.join("images"))?;

    let screened = input
        .images
        .par_iter()
        .map(|e| -> Result<(&ImageEntry, String, FilterOutcome)> {
            let Provenance::Virtual { prompt, .. } = &e.provenance else {
                return Err(Error::InvalidInput(format!("image {} is not a curated image", e.id)));
            };
            let ann = single_annotation(&input, &e.id)?;
            let img = codec::load_image(&root.join(&e.path))?;
            Ok((e, prompt.clone(), curator.filter_image(ann.category(), prompt, &img)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut kept = DatasetManifest::for_lexicon(&lex);
    let mut rejections = Vec::new();
    for (e, prompt, outcome) in screened {
        match outcome {
            FilterOutcome::Passed { annotation, verdicts } => {
                let name = Path::new(&e.path)
                    .file_name()
                    .ok_or_else(|| Error::InvalidInput(format!("image {} has no file name", e.id)))?;
                let rel = Path::new("images").join(name);
                let src = root.join(&e.path);
                std::fs::copy(&src, out.join(&rel)).map_err(|err| Error::io(&src, err))?;
                kept.images.push(ImageEntry {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    provenance: Provenance::Virtual { prompt, verdicts },
                    ..e.clone()
                });
                kept.annotations.push(AnnotationEntry::single(e.id.clone(), &annotation));
            }
            FilterOutcome::Rejected(v) => rejections.push(RejectionRecord {
                prompt,
                stage: RejectStage::from(v.stage),
                score: Some(v.score),
                message: None,
                timestamp: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            }),
        }
    }
    kept.save(&out.join(MANIFEST_FILE))?;
    save_rejections(&out.join(REJECTIONS_FILE), &rejections)?;
    ctx.write_header(
        &out.join(RUN_FILE),
        Some(json!({"input": input.images.len(), "kept": kept.images.len(), "rejected": rejections.len()})),
    )
}

fn check_dims(det: &ToyDetector, m: &DatasetManifest, what: &Path) -> Result<()> {
    if (det.num_actions(), det.num_objects()) != (m.interactions.len(), m.objects.len()) {
        return Err(Error::InvalidInput(format!(
            "detector covers {}x{} classes but {} has {}x{}",
            det.num_actions(),
            det.num_objects(),
            what.display(),
            m.interactions.len(),
            m.objects.len()
        )));
    }
    Ok(())
}

pub fn predict_toy(ctx: &Context, checkpoint: &Path, manifest: &Path, out: &Path, use_student: bool) -> Result<()> {
    let (student, teacher) = ToyDetector::from_checkpoint(&read_checkpoint(checkpoint)?)?;
    let det = if use_student { student } else { teacher };
    let m = DatasetManifest::load(manifest)?;
    check_dims(&det, &m, manifest)?;
    let samples = load_real_samples(&m, root_of(manifest))?;
    let preds = samples
        .par_iter()
        .map(|(id, s)| Ok((id, det.predict(&s.image)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut dump = PredictionDump::new(det.num_actions(), det.num_objects());
    let mut empty = 0;
    for (id, p) in preds {
        match p {
            Some(p) => dump.push(id.clone(), p)?,
            None => empty += 1,
        }
    }
    dump.save(out)?;
    ctx.write_header(
        &beside(out, "run.json"),
        Some(json!({"images": dump.images.len(), "without_proposals": empty})),
    )
}

fn kappa_from(ctx: &Context, real: Option<&Path>) -> Result<f64> {
    match real {
        None => Ok(ctx.config.amf.kappa),
        Some(p) => {
            let m = DatasetManifest::load(p)?;
            let per: Vec<usize> = m.images.iter().map(|e| m.annotations_for(&e.id).count()).collect();
            estimate_kappa(&per)
        }
    }
}

pub fn amf(ctx: &Context, preds: &Path, manifest: &Path, out: &Path, real: Option<&Path>) -> Result<()> {
    let dump = PredictionDump::load(preds)?;
    let m = DatasetManifest::load(manifest)?;
    let mut cfg = ctx.config.amf.clone();
    cfg.kappa = kappa_from(ctx, real)?;
    let by_id: HashMap<&str, _> = dump.images.iter().map(|(id, p)| (id.as_str(), p)).collect();
    let mut items = Vec::new();
    let mut missing = 0;
    for e in &m.images {
        match by_id.get(e.id.as_str()) {
            Some(p) => items.push((e, single_annotation(&m, &e.id)?, *p)),
            None => missing += 1,
        }
    }
    let mut runner = AmfRunner::new(cfg)?;
    for (_, _, p) in &items {
        runner.collect(p)?;
    }
    let tau = runner.finish_collection()?;
    let labeled = items
        .par_iter()
        .map(|(e, ann, p)| {
            let (corr, labels) = runner.label(p, ann, (e.width, e.height))?;
            Ok((PseudoLabelRecord::new(e.id.clone(), &labels), corr.dropped_localization))
        })
        .collect::<Result<Vec<_>>>()?;
    let dropped = labeled.iter().filter(|(_, d)| *d).count();
    let records: Vec<PseudoLabelRecord> = labeled.into_iter().map(|(r, _)| r).collect();
    save_pseudo_labels(out, &records)?;
    let triplets: usize = records.iter().map(|r| r.triplets.len()).sum();
    ctx.write_header(
        &beside(out, "run.json"),
        Some(json!({
            "tau_bin": tau,
            "kappa": runner.config().kappa,
            "images": records.len(),
            "without_predictions": missing,
            "dropped_localization": dropped,
            "triplets": triplets,
        })),
    )
}

pub fn threshold(ctx: &Context, preds: &Path, nv: Option<usize>, real: Option<&Path>) -> Result<()> {
    let dump = PredictionDump::load(preds)?;
    let scores: Vec<f64> = dump.images.iter().flat_map(|(_, p)| threshold_scores(p)).collect();
    let nv = nv.unwrap_or(dump.images.len());
    let kappa = kappa_from(ctx, real)?;
    let tau = select_threshold(&scores, kappa, nv)?;
    let out = json!({
        "tau_bin": tau,
        "kappa": kappa,
        "nv": nv,
        "scores": scores.len(),
        "run": ctx.header(None::<()>)?,
    });
    print_json(&out)
}

/// Pretty JSON on stdout; a closed pipe is not an error.
fn print_json(value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidState(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

pub struct TrainInputs<'a> {
    pub real: &'a Path,
    pub curated: Option<&'a Path>,
    pub init: Option<&'a Path>,
    pub eval: Option<&'a Path>,
    pub freq: Option<&'a Path>,
}

/// Seed path of the fresh detector weights.
const INIT_STREAM: u64 = 0x1417;

pub fn train_toy(ctx: &Context, inputs: TrainInputs, out: &Path) -> Result<()> {
    let cfg = &ctx.config;
    let real_m = DatasetManifest::load(inputs.real)?;
    let real: Vec<RealSample> = load_real_samples(&real_m, root_of(inputs.real))?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let curated = match inputs.curated {
        Some(p) => {
            let m = DatasetManifest::load(p)?;
            if (&m.interactions, &m.objects) != (&real_m.interactions, &real_m.objects) {
                return Err(Error::InvalidInput("real and curated manifests use different vocabularies".into()));
            }
            load_virtual_items(&m, root_of(p))?.into_iter().map(|(_, v)| v).collect()
        }
        None => Vec::new(),
    };
    let init = match inputs.init {
        Some(p) => ToyDetector::from_checkpoint(&read_checkpoint(p)?)?.0,
        None => ToyDetector::new(
            real_m.interactions.len(),
            real_m.objects.len(),
            seed::derive(cfg.seed, &[INIT_STREAM]),
        ),
    };
    check_dims(&init, &real_m, inputs.real)?;
    let mut tc = cfg.train_config()?;
    tc.augment = cfg.augment.clone().unwrap_or_else(toy_augment);
    let mut trainer = Trainer::new(init, tc)?;
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        let r = trainer.run_epoch(&curated, &real)?;
        log::info!("epoch {} loss {:.4}", r.epoch, r.losses.total());
        epochs.push(r);
    }
    let ck = Checkpoint::new(
        &trainer.student().tag(),
        cfg.train.alpha,
        trainer.epoch(),
        cfg.seed,
        trainer.student().parameters().to_vec(),
        trainer.ema().params.clone(),
    )?;
    write_checkpoint(out, &ck)?;

    let evaluation = match inputs.eval {
        Some(p) => {
            let m = DatasetManifest::load(p)?;
            let test: Vec<RealSample> = load_real_samples(&m, root_of(p))?.into_iter().map(|(_, s)| s).collect();
            let all: BTreeSet<CategoryPair> = m.category_counts(None).into_keys().collect();
            let rare: BTreeSet<CategoryPair> = match inputs.freq {
                Some(f) => CategoryFrequencyTable::load(f)?.rare_categories().into_iter().collect(),
                None => BTreeSet::new(),
            };
            Some(json!({
                "recall_all": recall(trainer.student(), &test, &all)?,
                "recall_rare": recall(trainer.student(), &test, &rare)?,
                "teacher_recall_rare": recall(trainer.teacher(), &test, &rare)?,
            }))
        }
        None => None,
    };
    ctx.write_header(
        &beside(out, "report.json"),
        Some(json!({
            "real_images": real.len(),
            "curated_images": curated.len(),
            "epochs": epochs,
            "evaluation": evaluation,
        })),
    )
}

pub fn stats(ctx: &Context, manifest: &Path, freq: &Path, out: Option<&Path>) -> Result<()> {
    let m = DatasetManifest::load(manifest)?;
    let f = CategoryFrequencyTable::load(freq)?;
    let report = vil_core::dataio::stats(&m, &f, Some(ctx.config.mode));
    let doc = json!({"run": ctx.header(None::<()>)?, "report": report});
    match out {
        Some(p) => write_json(p, &doc),
        None => print_json(&doc),
    }
}
