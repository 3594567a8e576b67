use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flowvae::checkpoint;
use flowvae::classifiers::{
    fit_preprocessor, train_lbd, train_llc, FlowClassifier, Head, LlcHead, TrainOptions,
    TrainedModel,
};
use flowvae::data::{
    select_features, write_csv, Dataset, FeatureSchema, Preprocessor, ScalingSpec, ScalingStrategy,
};
use flowvae::gate::{run_gate_sim, GateState};
use flowvae::metrics::{
    binary_collapse, confusion_matrix, per_class_accuracy, permutation_importance,
    throughput_bench, write_log, ConfusionMatrix,
};
use flowvae::preset::{preset, presets, Preset};
use flowvae::vae::VaeModel;
use flowvae::RngStream;

use crate::config::{ConfigError, Settings};
use crate::sources::{
    eval_data, synthetic_draws, training_splits, Splits, EVAL_STREAM, TRAIN_STREAM,
};

pub const CHECKPOINT_FILE: &str = "model.fvae";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const STAGE1_LOG_FILE: &str = "stage1_log.csv";
pub const STAGE2_LOG_FILE: &str = "stage2_log.csv";
pub const RLOSS_GAP_FILE: &str = "rloss_gap.csv";
pub const GATE_REPORT_FILE: &str = "gate_report.txt";
pub const GATE_REASONS_FILE: &str = "gate_reasons.csv";
pub const BENCH_FILE: &str = "bench.txt";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const SYNTHETIC_FILE: &str = "flows.csv";

fn out_dir(s: &Settings) -> Result<PathBuf> {
    let dir = s.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn train_options(s: &Settings, preset: &Preset, splits: &Splits) -> Result<TrainOptions> {
    // Pooled min-max bounds also sample the test flows.
    let preprocessor = match preset.scaling {
        ScalingStrategy::MinMaxTrainTest => Some(fit_preprocessor(
            &splits.train,
            preset,
            splits.test.as_ref(),
        )?),
        _ => None,
    };
    Ok(TrainOptions {
        batch_size: s.batch_size(),
        log_interval: s.log_interval(),
        steps: s.steps,
        steps2: s.steps2,
        learning_rate: s.lr,
        stage2_learning_rate: s.stage2_lr,
        channels: s.channels(),
        preprocessor,
        ..TrainOptions::default()
    })
}

/// Confusion matrices (counts and row rates) of `model` on `ds`; multiclass
/// models also get the benign/malicious collapse.
pub fn write_confusion(
    model: &TrainedModel,
    ds: &Dataset,
    dir: &Path,
    prefix: &str,
) -> Result<ConfusionMatrix> {
    let labels = model.align_labels(ds)?;
    let preds = model.predict(ds)?;
    let cm = confusion_matrix(&preds, &labels, model.classes())?;
    let save = |cm: &ConfusionMatrix, tag: &str| -> Result<()> {
        cm.write_counts_csv(create(&dir.join(format!("{prefix}{tag}counts.csv")))?)?;
        cm.write_rates_csv(create(&dir.join(format!("{prefix}{tag}rates.csv")))?)?;
        Ok(())
    };
    save(&cm, "_")?;
    // The collapse puts benign first.
    let (binary, benign) = if cm.size() > 2 {
        let b = binary_collapse(&cm, model.benign_index())?;
        save(&b, "_binary_")?;
        (b, 0)
    } else {
        (cm.clone(), model.benign_index())
    };
    let acc = per_class_accuracy(&cm);
    for (i, name) in cm.classes().iter().enumerate() {
        if let Some(a) = acc.per_class[i] {
            println!("  {name}: {a:.4} ({} flows)", cm.row_sum(i));
        }
    }
    let bacc = per_class_accuracy(&binary);
    let show = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.4}"));
    println!(
        "benign accuracy {}, malicious accuracy {}, overall {}",
        show(bacc.per_class[benign]),
        show(bacc.per_class[1 - benign]),
        show(acc.overall)
    );
    Ok(cm)
}

pub fn cmd_presets() -> Result<()> {
    println!(
        "{:<6} {:<6} {:<5} {:>8} {:>8} {:>8} {:>7} {:<18} {:<6} {:>4} {:>3} {:<7} {:<10} losses",
        "name",
        "family",
        "base",
        "lr",
        "klm",
        "steps",
        "steps2",
        "scaling",
        "layers",
        "feat",
        "ks",
        "stride",
        "class"
    );
    for p in presets() {
        println!(
            "{:<6} {:<6} {:<5} {:>8} {:>8} {:>8} {:>7} {:<18} {:<6} {:>4} {:>3} {:<7} {:<10} {}",
            p.name,
            format!("{:?}", p.family).to_lowercase(),
            p.base.as_deref().unwrap_or("-"),
            format!("{:e}", p.learning_rate),
            p.klm.map_or("none".into(), |k| format!("{k:e}")),
            p.steps,
            p.steps2.map_or("-".into(), |s| s.to_string()),
            p.scaling.name(),
            p.layer_type.name(),
            p.features.width(),
            p.kernel_size,
            p.stride_label(),
            p.classification.name(),
            p.losses
        );
    }
    Ok(())
}

pub fn cmd_train_llc(s: &Settings) -> Result<()> {
    let p = preset(s.preset_name())?;
    let seed = s.seed()?;
    let splits = training_splits(s, &p, seed)?;
    let opts = train_options(s, &p, &splits)?;
    let dir = out_dir(s)?;
    let (model, log) = train_llc(
        &splits.train,
        &splits.val,
        &p,
        &opts,
        &RngStream::new(seed).fork(TRAIN_STREAM),
    )?;
    write_log(&log, dir.join(TRAIN_LOG_FILE))?;
    checkpoint::save(&model, dir.join(CHECKPOINT_FILE))?;
    println!(
        "trained preset {} for {} steps; artifacts in {}",
        p.name,
        s.steps.unwrap_or(p.steps),
        dir.display()
    );
    write_confusion(&model, splits.eval(), &dir, "confusion")?;
    Ok(())
}

/// Mean per-flow reconstruction loss of each class present in `ds`.
pub fn rloss_gap(model: &TrainedModel, ds: &Dataset) -> Result<Vec<(String, usize, f64)>> {
    let r = model.vae.rloss_per_flow(&model.prepare(ds)?)?;
    let classes = ds.schema().classes();
    let mut sums = vec![(0usize, 0.0f64); classes.len()];
    for (&l, v) in ds.labels().iter().zip(&r) {
        sums[l].0 += 1;
        sums[l].1 += v;
    }
    Ok(classes
        .iter()
        .zip(sums)
        .filter(|(_, (n, _))| *n > 0)
        .map(|(c, (n, t))| (c.clone(), n, t / n as f64))
        .collect())
}

pub fn cmd_train_lbd(s: &Settings) -> Result<()> {
    let p = preset(s.preset_name())?;
    let seed = s.seed()?;
    let splits = training_splits(s, &p, seed)?;
    let opts = train_options(s, &p, &splits)?;
    let dir = out_dir(s)?;
    let run = train_lbd(
        &splits.train,
        None,
        &p,
        &opts,
        &RngStream::new(seed).fork(TRAIN_STREAM),
    )?;
    write_log(&run.stage1_log, dir.join(STAGE1_LOG_FILE))?;
    write_log(&run.stage2_log, dir.join(STAGE2_LOG_FILE))?;
    checkpoint::save(&run.model, dir.join(CHECKPOINT_FILE))?;
    println!(
        "stage 1 finished after {} steps, stage 2 after {} steps; artifacts in {}",
        opts.steps.unwrap_or(p.steps),
        opts.steps2.or(p.steps2).unwrap_or(0),
        dir.display()
    );
    if let Head::Lbd(d) = &run.model.head {
        println!(
            "detector: malicious iff sigmoid({:.6}·r + {:.6}) ≥ 0.5",
            d.w, d.b
        );
    }

    let gap = rloss_gap(&run.model, splits.eval())?;
    let benign = gap
        .iter()
        .find(|(c, _, _)| c == flowvae::data::BENIGN)
        .map(|g| g.2);
    let mut w = std::io::BufWriter::new(create(&dir.join(RLOSS_GAP_FILE))?);
    writeln!(w, "class,flows,mean_rloss,ratio_to_benign")?;
    for (c, n, m) in &gap {
        let ratio = benign
            .filter(|b| *b > 0.0)
            .map(|b| (m / b).to_string())
            .unwrap_or_default();
        writeln!(w, "{c},{n},{m},{ratio}")?;
        println!("  mean r-loss {c}: {m:.6} ({n} flows)");
    }
    write_confusion(&run.model, splits.eval(), &dir, "confusion")?;
    Ok(())
}

fn load_model(s: &Settings) -> Result<TrainedModel> {
    let path = s
        .checkpoint
        .as_deref()
        .ok_or_else(|| ConfigError("--checkpoint is required".into()))?;
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn model_schema(model: &TrainedModel) -> Result<FeatureSchema> {
    Ok(FeatureSchema::new(
        model.prep.features.clone(),
        model.classes.clone(),
    )?)
}

pub fn cmd_evaluate(s: &Settings) -> Result<()> {
    let model = load_model(s)?;
    let ds = eval_data(s, &model_schema(&model)?)?;
    let dir = out_dir(s)?;
    println!(
        "evaluating preset {} model on {} flows",
        model.preset,
        ds.len()
    );
    write_confusion(&model, &ds, &dir, "confusion")?;
    Ok(())
}

/// Fresh weights for timing when no checkpoint is given; inference cost does
/// not depend on the weight values.
fn untrained(p: &Preset, channels: usize, rng: &RngStream) -> Result<TrainedModel> {
    let width = p.features.width();
    let vae = VaeModel::new(p.architecture(width, channels), &mut rng.fork(1))?;
    let head = LlcHead::new(vae.latent_dim(), 2, &mut rng.fork(2))?;
    Ok(TrainedModel {
        vae,
        head: Head::Llc(head),
        preset: p.name.clone(),
        prep: Preprocessor {
            features: p.features.names(),
            scaling: ScalingSpec::None,
        },
        classes: vec![
            flowvae::data::BENIGN.into(),
            flowvae::data::MALICIOUS.into(),
        ],
    })
}

pub fn cmd_bench(s: &Settings) -> Result<()> {
    let rng = RngStream::new(s.seed()?).fork(EVAL_STREAM);
    let model = match s.checkpoint {
        Some(_) => load_model(s)?,
        None => untrained(&preset(s.preset_name())?, s.channels(), &rng)?,
    };
    let batch = rng
        .fork(3)
        .normal_tensor(&[s.batch_size(), model.vae.input_width()]);
    let report = throughput_bench(&model, &batch, s.iterations())?;
    let dir = out_dir(s)?;
    fs::write(dir.join(BENCH_FILE), format!("{report}\n"))?;
    println!("{report}");
    Ok(())
}

pub fn cmd_gate_sim(s: &Settings) -> Result<()> {
    let model = load_model(s)?;
    let trace = eval_data(s, &model_schema(&model)?)?;
    let mut state = GateState::new(s.threshold(), s.capacity, s.window)?;
    let report = run_gate_sim(&trace, &model, &mut state)?;
    let dir = out_dir(s)?;
    fs::write(dir.join(GATE_REPORT_FILE), format!("{report}\n"))?;
    report.write_reasons_csv(create(&dir.join(GATE_REASONS_FILE))?)?;
    println!("{report}");
    Ok(())
}

pub fn cmd_gen_synth(s: &Settings) -> Result<()> {
    let kind = s
        .synthetic
        .ok_or_else(|| ConfigError("gen-synth needs --synthetic (demo, binary)".into()))?;
    let (pool, _) = synthetic_draws(kind, s.seed()?)?;
    let dir = out_dir(s)?;
    let path = dir.join(SYNTHETIC_FILE);
    write_csv(&pool, std::io::BufWriter::new(create(&path)?))?;
    println!(
        "wrote {} {} flows to {}",
        pool.len(),
        kind.name(),
        path.display()
    );
    Ok(())
}

pub fn cmd_importance(s: &Settings) -> Result<()> {
    let model = load_model(s)?;
    let ds = eval_data(s, &model_schema(&model)?)?;
    let rng = RngStream::new(s.seed()?).fork(EVAL_STREAM);
    let ds = select_features(&ds, &model.prep.features)?;
    let report = permutation_importance(&model, &ds, &rng, s.repeats())?;
    let dir = out_dir(s)?;
    let mut w = std::io::BufWriter::new(create(&dir.join(IMPORTANCE_FILE))?);
    writeln!(w, "rank,feature,accuracy_drop")?;
    println!("baseline accuracy {:.4}", report.baseline_accuracy);
    for i in report.order() {
        writeln!(
            w,
            "{},{},{}",
            report.ranks[i], report.features[i], report.drops[i]
        )?;
        if report.ranks[i] <= 10 {
            println!(
                "  {:>2}. {} ({:+.4})",
                report.ranks[i], report.features[i], report.drops[i]
            );
        }
    }
    Ok(())
}
