use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use snrd::dataset::{
    build_student_corpus, build_teacher_corpora, build_test_corpus, render, write_toy_sources, Manifest, Split,
    SynthConfig,
};
use snrd::distill::{
    enhance as enhance_waveform, evaluate as evaluate_examples, load_examples, train_student as fit_student,
    train_teacher as fit_teacher, Enhancer, Precision, RunConfig, TeacherBank, TeacherMeta, TrainOutcome, TrainSet,
    TEACHER_META_FILE,
};
use snrd::metrics::Condition;
use snrd::signal::{read_wav, write_wav};
use snrd::tensor::Real;
use snrd::unet::{load_checkpoint, save_checkpoint};

use crate::exit::{input, usage};
use crate::{logging, ConfigKind, EnhanceArgs, EvaluateArgs, InitArgs, StudentArgs, SynthArgs, TrainArgs};

const BEST_CHECKPOINT: &str = "checkpoints/best.ckpt";
const LAST_CHECKPOINT: &str = "checkpoints/last.ckpt";

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
}

/// Rendered mixtures of `manifest.jsonl` live in `manifest/`.
fn render_dir(manifest: &Path) -> PathBuf {
    manifest.with_extension("")
}

fn read_manifest(path: &Path) -> anyhow::Result<Manifest> {
    Manifest::read(path).with_context(|| format!("manifest {}", path.display()))
}

fn summarize(name: &str, m: &Manifest) {
    let mut per_snr: BTreeMap<i64, usize> = BTreeMap::new();
    for r in &m.records {
        *per_snr.entry((r.snr_db * 1000.0).round() as i64).or_default() += 1;
    }
    let snrs: Vec<String> = per_snr
        .iter()
        .map(|(s, n)| format!("{}dB:{n}", *s as f64 / 1000.0))
        .collect();
    println!(
        "{name}: {} records (train {}, val {}, test {}); per SNR {}",
        m.len(),
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test),
        snrs.join(" ")
    );
}

pub fn synth(a: SynthArgs) -> anyhow::Result<()> {
    create_dir(&a.out)?;
    logging::init(Some(&a.out.join("log")))?;
    let config = match (&a.config, a.toy) {
        (Some(path), _) => read_config::<SynthConfig>(path)?,
        (None, true) => {
            let sources = a.out.join("sources");
            write_toy_sources(&sources, a.seed)?;
            log::info!("wrote toy sources to {}", sources.display());
            SynthConfig::toy(sources)
        }
        (None, false) => return Err(usage("synth needs --config or --toy")),
    };
    write_json(&a.out.join("config.json"), &config)?;

    let mut corpora: Vec<(String, Manifest)> = Vec::new();
    let teachers = build_teacher_corpora(&config.teachers, config.band_check)?;
    for (cfg, m) in config.teachers.iter().zip(teachers) {
        corpora.push((cfg.name.clone(), m));
    }
    corpora.push((config.student.name.clone(), build_student_corpus(&config.student)?));
    corpora.push((config.test.name.clone(), build_test_corpus(&config.test)?));

    let manifests = a.out.join("manifests");
    create_dir(&manifests)?;
    for (name, m) in &corpora {
        let path = manifests.join(format!("{name}.jsonl"));
        m.write(&path)?;
        let audio = render_dir(&path);
        let log = render(m, &audio)?;
        log.write_csv(&manifests.join(format!("{name}.render.csv")))?;
        if log.clipped_records() > 0 {
            log::warn!("{name}: {} records saturate 16-bit output", log.clipped_records());
        }
        log::info!("{name}: wrote {} and {} mixtures", path.display(), m.len());
        summarize(name, m);
    }
    Ok(())
}

fn run_config(path: Option<&Path>, toy: bool, student: bool) -> anyhow::Result<RunConfig> {
    Ok(match (path, toy, student) {
        (Some(p), _, _) => read_config(p)?,
        (None, true, false) => RunConfig::toy_teacher(),
        (None, true, true) => RunConfig::toy_student(),
        (None, false, false) => RunConfig::paper_teacher(),
        (None, false, true) => RunConfig::paper_student(),
    })
}

/// Shared setup: apply overrides, validate, create the run directory and
/// record the effective config before any training step.
fn prepare_run(
    out: &Path,
    config: Option<&Path>,
    toy: bool,
    student: bool,
    seed: Option<u64>,
    precision: Option<crate::PrecisionArg>,
) -> anyhow::Result<RunConfig> {
    let mut cfg = run_config(config, toy, student)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(p) = precision {
        cfg.train.precision = p.into();
    }
    cfg.validate()?;
    create_dir(&out.join("checkpoints"))?;
    logging::init(Some(&out.join("log")))?;
    write_json(&out.join("config.json"), &cfg)?;
    Ok(cfg)
}

fn save_outcome<F: Real>(out: &Path, o: &TrainOutcome<F>) -> anyhow::Result<()> {
    save_checkpoint(&o.best, &out.join(BEST_CHECKPOINT))?;
    save_checkpoint(&o.model, &out.join(LAST_CHECKPOINT))?;
    o.curves.write_csv(&out.join("curves.csv"))?;
    log::info!(
        "stopped ({:?}) after {} steps; best validation at epoch {}",
        o.stop_reason,
        o.steps,
        o.best_epoch
    );
    Ok(())
}

fn load_train_set(manifest: &Path) -> anyhow::Result<TrainSet> {
    let m = read_manifest(manifest)?;
    let set = TrainSet::load(&m, &render_dir(manifest))
        .with_context(|| format!("loading rendered corpus of {}", manifest.display()))?;
    log::info!("{} training and {} validation examples", set.train.len(), set.val.len());
    Ok(set)
}

pub fn train_teacher(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = prepare_run(&a.out, a.config.as_deref(), a.toy, false, a.seed, a.precision)?;
    let data = load_train_set(&a.manifest)?;
    let snr_set = match a.snr_set {
        Some(s) => s,
        None => {
            let mut s: Vec<f64> = data.train.iter().chain(&data.val).map(|e| e.snr_db).collect();
            s.sort_by(f64::total_cmp);
            s.dedup();
            s
        }
    };
    log::info!("teacher band {snr_set:?} dB, precision {:?}", cfg.train.precision);
    fn go<F: Real>(a: &Path, cfg: &RunConfig, data: &TrainSet, snr_set: &[f64]) -> anyhow::Result<()> {
        let o = fit_teacher::<F>(&cfg.arch, data, &cfg.train, Some(snr_set))?;
        save_outcome(a, &o)
    }
    match cfg.train.precision {
        Precision::F32 => go::<f32>(&a.out, &cfg, &data, &snr_set)?,
        Precision::F64 => go::<f64>(&a.out, &cfg, &data, &snr_set)?,
    }
    let id = a
        .out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "teacher".into());
    write_json(
        &a.out.join(TEACHER_META_FILE),
        &TeacherMeta {
            id,
            snr_set,
            checkpoint: BEST_CHECKPOINT.into(),
        },
    )
}

pub fn train_student(a: StudentArgs) -> anyhow::Result<()> {
    let cfg = prepare_run(&a.out, a.config.as_deref(), a.toy, true, a.seed, a.precision)?;
    let data = load_train_set(&a.manifest)?;
    fn go<F: Real>(a: &StudentArgs, cfg: &RunConfig, data: &TrainSet) -> anyhow::Result<()> {
        let bank = match &a.teachers {
            Some(dir) => {
                let bank = TeacherBank::<F>::load_dir(dir, cfg.distill.band_check, cfg.distill.tie_break)
                    .with_context(|| format!("teachers in {}", dir.display()))?;
                log::info!("mode=S2 with {} teachers, alpha {}", bank.len(), cfg.distill.alpha);
                for e in bank.entries() {
                    log::info!("teacher {} from {}", e.id, e.checkpoint.display());
                }
                Some(bank)
            }
            None => {
                log::info!("mode=S1 (no teachers)");
                None
            }
        };
        let o = fit_student::<F>(&cfg.arch, data, bank.as_ref(), &cfg.distill, &cfg.train)?;
        save_outcome(&a.out, &o)
    }
    match cfg.train.precision {
        Precision::F32 => go::<f32>(&a, &cfg, &data),
        Precision::F64 => go::<f64>(&a, &cfg, &data),
    }
}

pub fn enhance(a: EnhanceArgs) -> anyhow::Result<()> {
    logging::init(None)?;
    let model = load_checkpoint::<f32>(&a.checkpoint)?;
    let noisy = read_wav(&a.input)?;
    if noisy.is_empty() {
        return Err(input(format!("{}: no samples", a.input.display())));
    }
    let clean = enhance_waveform(&model, &noisy, a.window)?;
    write_wav(&a.out, &clean)?;
    log::info!(
        "enhanced {} samples from {} into {}",
        clean.len(),
        a.input.display(),
        a.out.display()
    );
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    logging::init(None)?;
    let manifest = read_manifest(&a.manifest)?;
    let examples = load_examples(&manifest, &render_dir(&a.manifest), Split::Test)?;
    let model = a.checkpoint.as_deref().map(load_checkpoint::<f32>).transpose()?;
    let enhancer = match &model {
        Some(m) => Enhancer::Model(m),
        None => Enhancer::Identity,
    };
    let (snrs, noises) = match &a.train_manifest {
        Some(p) => {
            let m = read_manifest(p)?;
            let train: Vec<_> = m.split(Split::Train).collect();
            let mut snrs: Vec<f64> = train.iter().map(|r| r.snr_db).collect();
            snrs.sort_by(f64::total_cmp);
            snrs.dedup();
            let mut noises: Vec<String> = train
                .iter()
                .filter_map(|r| r.noise_path.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            noises.sort();
            noises.dedup();
            (Some(snrs), noises)
        }
        None => (None, Vec::new()),
    };
    let mut report = evaluate_examples(enhancer, &examples, a.window, snrs.as_deref().unwrap_or(&[]), &noises)?;
    if snrs.is_none() {
        for r in &mut report.rows {
            r.snr_tag = None;
            r.noise_tag = None;
        }
    }
    report.write_csv(&a.out)?;
    for c in [Condition::Noisy, Condition::Enhanced] {
        if let Some(o) = report.overall(c) {
            println!(
                "overall {c:?}: STOI {:.4}, SI-SDR {:.2} dB over {} utterances",
                o.mean_stoi, o.mean_sisdr, o.count
            );
        }
    }
    log::info!("{} rows written to {}", report.rows.len(), a.out.display());
    Ok(())
}

pub fn init_config(a: InitArgs) -> anyhow::Result<()> {
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    match (a.kind, a.toy) {
        (ConfigKind::Synth, false) => write_json(&a.out, &SynthConfig::paper(&a.sources)),
        (ConfigKind::Synth, true) => write_json(&a.out, &SynthConfig::toy(&a.sources)),
        (ConfigKind::Teacher, toy) => write_json(&a.out, &run_config(None, toy, false)?),
        (ConfigKind::Student, toy) => write_json(&a.out, &run_config(None, toy, true)?),
    }
}
