use std::fs;
use std::io::Write;
use std::path::Path;

use mmdetect_core::corpus::{
    build_vocab, load_dataset, manifest_dir, prepare, read_manifest, synth_corpus, write_manifest,
    Sample,
};
use mmdetect_core::metrics::metrics_report;
use mmdetect_core::model::{
    init_params, predict_with_confidence, predictions_csv, read_predictions, Params,
};
use mmdetect_core::objective::{
    self, grad_check, GradCheckOptions, GradCheckReport, Labels, TrainConfig,
};
use mmdetect_core::persist::load_checkpoint;
use mmdetect_core::pseudo::{
    count_duplicate_paths, filter_high_confidence, merge_manifests, read_pseudo_records,
    rebase_path, score_manifest, split_pseudo, write_pseudo_records, AugmentReport, PseudoRecord,
    PseudoReport, AUGMENT_REPORT_FILE, PSEUDO_RECORDS_FILE, PSEUDO_REPORT_FILE,
    TRAIN_EXTENDED_FILE, VAL_EXTENDED_FILE,
};
use mmdetect_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{
    AugmentArgs, EvalArgs, GradcheckArgs, PredictArgs, Preset, PseudoLabelArgs, Status, SynthArgs,
    TrainArgs,
};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(
        path,
        (serde_json::to_string_pretty(value)? + "\n").as_bytes(),
    )
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn print_stdout(bytes: &[u8]) -> Result<()> {
    match std::io::stdout().lock().write_all(bytes) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    print_stdout((serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

pub fn synth(args: SynthArgs) -> Result<Status> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    let s = &mut cfg.synth;
    if let Some(n) = args.n_samples {
        s.n_samples = n;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(a) = args.amplitude {
        s.amplitude = a;
    }
    if let Some(sigma) = args.noise_sigma {
        s.noise_sigma = sigma;
    }
    if let Some(prefix) = args.id_prefix {
        s.id_prefix = prefix;
    }
    if args.unlabeled {
        s.labeled = false;
    }
    let samples = synth_corpus(&cfg.synth, &args.out)?;
    cfg.write_effective(&args.out)?;
    eprintln!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(Status::Ok)
}

fn apply_preset(cfg: &mut TrainConfig, preset: Preset) {
    let reference = match preset {
        Preset::Desk => TrainConfig::desk_scale(),
        Preset::Paper => TrainConfig::default(),
    };
    cfg.lr = reference.lr;
    cfg.batch_size = reference.batch_size;
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    best_epoch: usize,
    best_task_a_weighted_f1: f64,
    vocab_size: usize,
    train_samples: usize,
    val_samples: usize,
}

pub fn train(args: TrainArgs) -> Result<Status> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if let Some(preset) = args.preset {
        apply_preset(&mut cfg.train, preset);
    }
    let t = &mut cfg.train;
    if let Some(lr) = args.lr {
        t.lr = lr;
    }
    if let Some(wd) = args.weight_decay {
        t.weight_decay = wd;
    }
    if let Some(b) = args.batch_size {
        t.batch_size = b;
    }
    if let Some(e) = args.epochs {
        t.epochs = e;
    }
    if let Some(seed) = args.seed {
        t.seed = seed;
    }
    cfg.train.validate()?;
    cfg.model.validate()?;

    let train_samples = read_manifest(&args.train)?;
    let vocab = build_vocab(&train_samples, cfg.model.vocab_size)?;
    cfg.model.vocab_size = vocab.len();
    let m = &cfg.model;
    let train_set = prepare(
        train_samples,
        &manifest_dir(&args.train),
        &vocab,
        m.seq_len,
        m.image_size,
    )?;
    let val_set = load_dataset(&args.val, &vocab, m.seq_len, m.image_size)?;
    cfg.write_effective(&args.out)?;

    let outcome = objective::train(
        &train_set,
        &val_set,
        &vocab,
        &cfg.model,
        &cfg.train,
        Some(&args.out),
    )?;
    for r in &outcome.history {
        eprintln!(
            "epoch {}: train loss {:.6}, val loss {:.6}, task A F1 {:.4}, task B weighted-F1 {:.4}{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val.task_a.f1,
            r.val.task_b.f1_w,
            if r.improved { " *" } else { "" }
        );
    }
    print_json(&TrainSummary {
        epochs: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_task_a_weighted_f1: outcome.best_metric,
        vocab_size: vocab.len(),
        train_samples: train_set.len(),
        val_samples: val_set.len(),
    })?;
    Ok(Status::Ok)
}

fn load_for_checkpoint(
    ckpt: &Path,
    manifest: &Path,
) -> Result<(Params, mmdetect_core::corpus::Dataset)> {
    let (params, meta) = load_checkpoint(ckpt)?;
    let data = load_dataset(
        manifest,
        &meta.vocab,
        params.config.seq_len,
        params.config.image_size,
    )?;
    Ok((params, data))
}

pub fn eval(args: EvalArgs) -> Result<Status> {
    let (predictions, gold) = match (&args.ckpt, &args.predictions) {
        (Some(ckpt), _) => {
            let (params, data) = load_for_checkpoint(ckpt, &args.manifest)?;
            (predict_with_confidence(&params, &data)?, data.samples)
        }
        (None, Some(path)) => (read_predictions(path)?, read_manifest(&args.manifest)?),
        (None, None) => {
            return Err(Error::Config(
                "either --ckpt or --predictions is required".into(),
            ))
        }
    };
    let json = metrics_report(&predictions, &gold)?.to_json()? + "\n";
    if let Some(out) = &args.out {
        write_file(out, json.as_bytes())?;
    }
    print_stdout(json.as_bytes())?;
    Ok(Status::Ok)
}

pub fn predict(args: PredictArgs) -> Result<Status> {
    let (params, data) = load_for_checkpoint(&args.ckpt, &args.input)?;
    let bytes = predictions_csv(&predict_with_confidence(&params, &data)?)?;
    match &args.out {
        Some(out) => write_file(out, &bytes)?,
        None => print_stdout(&bytes)?,
    }
    Ok(Status::Ok)
}

/// Re-expresses every sample's image path relative to `out_dir`.
fn rebased_manifest(path: &Path, out_dir: &Path) -> Result<Vec<Sample>> {
    let from = manifest_dir(path);
    read_manifest(path)?
        .into_iter()
        .map(|mut s| {
            s.image_path = rebase_path(&s.image_path, &from, out_dir)?;
            Ok(s)
        })
        .collect()
}

fn augment_into(
    kept: &[PseudoRecord],
    train_manifest: &Path,
    val_manifest: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<AugmentReport> {
    let train = rebased_manifest(train_manifest, out_dir)?;
    let val = rebased_manifest(val_manifest, out_dir)?;
    let (pseudo_train, pseudo_val) = split_pseudo(kept, seed);
    let merged = merge_manifests(&train, &val, &pseudo_train, &pseudo_val)?;
    write_manifest(&merged.train, &out_dir.join(TRAIN_EXTENDED_FILE))?;
    write_manifest(&merged.val, &out_dir.join(VAL_EXTENDED_FILE))?;
    let report = AugmentReport::new(seed, &merged);
    write_json(&out_dir.join(AUGMENT_REPORT_FILE), &report)?;
    Ok(report)
}

pub fn pseudo_label(args: PseudoLabelArgs) -> Result<Status> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if let Some(t) = args.threshold {
        cfg.pseudo.threshold = t;
    }
    if let Some(seed) = args.seed {
        cfg.pseudo.seed = seed;
    }
    let (params, pool) = load_for_checkpoint(&args.ckpt, &args.input)?;
    cfg.model = params.config.clone();
    let scored = score_manifest(&params, &pool)?;
    let mut kept = filter_high_confidence(&scored, cfg.pseudo.threshold)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let from = manifest_dir(&args.input);
    for r in &mut kept {
        r.image_path = rebase_path(&r.image_path, &from, &args.out)?;
    }
    write_pseudo_records(&kept, &args.out.join(PSEUDO_RECORDS_FILE))?;

    let mut report = PseudoReport::new(cfg.pseudo.threshold, scored.len(), &kept);
    if let (Some(train), Some(val)) = (&args.train, &args.val) {
        let mut reference = rebased_manifest(train, &args.out)?;
        reference.extend(rebased_manifest(val, &args.out)?);
        report.duplicate_paths = Some(count_duplicate_paths(&kept, &reference));
        augment_into(&kept, train, val, cfg.pseudo.seed, &args.out)?;
    }
    write_json(&args.out.join(PSEUDO_REPORT_FILE), &report)?;
    cfg.write_effective(&args.out)?;
    print_json(&report)?;
    Ok(Status::Ok)
}

pub fn augment(args: AugmentArgs) -> Result<Status> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.pseudo.seed = seed;
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let from = manifest_dir(&args.pseudo);
    let mut records = read_pseudo_records(&args.pseudo)?;
    for r in &mut records {
        r.image_path = rebase_path(&r.image_path, &from, &args.out)?;
    }
    let report = augment_into(&records, &args.train, &args.val, cfg.pseudo.seed, &args.out)?;
    cfg.write_effective(&args.out)?;
    print_json(&report)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct GradcheckSummary {
    passed: bool,
    batches: Vec<GradCheckReport>,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<Status> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if args.batches == 0 || args.batch_size == 0 {
        return Err(Error::Config(
            "--batches and --batch-size must be at least 1".into(),
        ));
    }
    let (params, data) = match &args.ckpt {
        Some(ckpt) => load_for_checkpoint(ckpt, &args.manifest)?,
        None => {
            let samples = read_manifest(&args.manifest)?;
            let vocab = build_vocab(&samples, cfg.model.vocab_size)?;
            cfg.model.vocab_size = vocab.len();
            let m = &cfg.model;
            let data = prepare(
                samples,
                &manifest_dir(&args.manifest),
                &vocab,
                m.seq_len,
                m.image_size,
            )?;
            (init_params(&cfg.model, cfg.train.seed)?, data)
        }
    };
    let needed = args.batches * args.batch_size;
    if data.len() < needed {
        return Err(Error::Data(format!(
            "{} samples cannot fill {needed} batch slots",
            data.len()
        )));
    }
    let labels = Labels::from_samples(&data.samples)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(cfg.train.seed));

    let mut reports = Vec::with_capacity(args.batches);
    for (b, idx) in order.chunks(args.batch_size).take(args.batches).enumerate() {
        let batch: Vec<_> = idx.iter().map(|&i| &data.examples[i]).collect();
        let y_a: Vec<u8> = idx.iter().map(|&i| labels.a[i]).collect();
        let y_b: Vec<u8> = idx.iter().map(|&i| labels.b[i]).collect();
        let mut opts = GradCheckOptions {
            seed: cfg.train.seed.wrapping_add(b as u64),
            ..GradCheckOptions::default()
        };
        if let Some(t) = args.tolerance {
            opts.tolerance = t;
        }
        reports.push(grad_check(&params, &batch, &y_a, &y_b, &opts)?);
    }
    let passed = reports.iter().all(|r| r.passed);
    print_json(&GradcheckSummary {
        passed,
        batches: reports,
    })?;
    Ok(if passed {
        Status::Ok
    } else {
        Status::NumericFailure
    })
}
