//! The actual / sampled / augmented experiment on one shared test split.

use std::path::Path;

use flowaug_core::augment::{
    augment_dataset, build_synthesizer, default_balance_plan, median_count, oversample_dataset,
    BalancePlan, ClassSynthesizer,
};
use flowaug_core::classifier::{build_crnn, train_crnn, CrnnCheckpoint, CrnnConfig, EpochStats};
use flowaug_core::eval::{compare_runs, confusion, metrics, plot_csv, Comparison};
use flowaug_core::flows::split;
use flowaug_core::seed::{derive_seed, named_rng};
use flowaug_core::{Dataset, FlowRecord, Variant};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Result, StageExt};
use crate::formats::{
    dataset_hash, write_bytes, write_json, AugmentationBundle, ReportFile, FORMAT_VERSION,
};

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub seed: u64,
    pub train_fraction: f64,
    pub train_flows: usize,
    pub test_flows: usize,
    pub test_set_sha256: String,
    pub plan: BalancePlan,
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: Variant,
    pub report: ReportFile,
    pub checkpoint: CrnnCheckpoint,
    pub trace: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub split: SplitSummary,
    pub runs: Vec<VariantRun>,
    pub comparison: Option<Comparison>,
    pub bundle: Option<AugmentationBundle>,
    pub warnings: Vec<String>,
}

impl ExperimentOutput {
    pub fn report(&self, v: Variant) -> Option<&ReportFile> {
        self.runs.iter().find(|r| r.variant == v).map(|r| &r.report)
    }
}

/// The CRNN settings used for a run: class count from the data, seed from
/// the root seed.
pub fn crnn_config(cfg: &RunConfig, n_classes: usize) -> CrnnConfig {
    CrnnConfig {
        n_classes,
        seed: derive_seed(cfg.seed, "crnn"),
        ..cfg.crnn.clone()
    }
}

/// Train and test halves exactly as the experiment builds them.
pub fn split_for(cfg: &RunConfig, dataset: &Dataset) -> Result<(Dataset, Dataset)> {
    split(
        dataset,
        cfg.split.train_fraction,
        derive_seed(cfg.seed, "split"),
    )
    .stage("split")
}

/// Configured augmentation classes, or every class below the median count.
pub fn target_classes(cfg: &RunConfig, train: &Dataset) -> Vec<String> {
    if !cfg.augment.classes.is_empty() {
        return cfg.augment.classes.clone();
    }
    let counts = train.class_counts();
    let median = median_count(&counts);
    train
        .classes
        .names()
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0 && c < median)
        .map(|(n, _)| n.clone())
        .collect()
}

pub fn build_synthesizers(
    cfg: &RunConfig,
    train: &Dataset,
    plan: &BalancePlan,
    log: &mut dyn FnMut(&str),
) -> Result<(Vec<ClassSynthesizer>, Vec<String>)> {
    let synth_cfg = cfg.synth_config();
    let mut synths = Vec::new();
    let mut warnings = Vec::new();
    for class in plan.targets.keys() {
        log(&format!("fitting synthesizer for {class}"));
        let (s, w) = build_synthesizer(train, class, &synth_cfg).stage("synthesizers")?;
        for m in &w {
            log(m);
        }
        warnings.extend(w);
        synths.push(s);
    }
    Ok((synths, warnings))
}

fn evaluate(
    model: &mut flowaug_core::CrnnModel,
    test: &Dataset,
    variant: Variant,
) -> Result<flowaug_core::EvalReport> {
    let flows: Vec<&FlowRecord> = test.flows.iter().collect();
    let preds: Vec<usize> = model
        .predict(&flows)
        .stage("evaluate")?
        .into_iter()
        .map(|p| p.0)
        .collect();
    let truth = test.label_ids().stage("evaluate")?;
    let cm = confusion(&preds, &truth, &test.classes).stage("evaluate")?;
    metrics(&cm, variant).stage("evaluate")
}

/// Run every configured variant. With `out`, artifacts are written as they
/// are produced and an `INCOMPLETE` marker stays until the run finishes.
pub fn run_experiment(
    cfg: &RunConfig,
    dataset: &Dataset,
    out: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if let Some(dir) = out {
        write_bytes(&dir.join(INCOMPLETE_MARKER), b"run in progress or failed\n")?;
    }
    let (train, test) = split_for(cfg, dataset)?;
    let classes = target_classes(cfg, &train);
    let needs_plan = cfg
        .experiment
        .variants
        .iter()
        .any(|v| *v != Variant::Actual);
    let plan = if needs_plan && !classes.is_empty() {
        default_balance_plan(&train, &classes, cfg.augment.strategy).stage("plan")?
    } else {
        BalancePlan::default()
    };
    let summary = SplitSummary {
        seed: cfg.seed,
        train_fraction: cfg.split.train_fraction,
        train_flows: train.len(),
        test_flows: test.len(),
        test_set_sha256: dataset_hash(&test),
        plan: plan.clone(),
    };
    log(&format!(
        "split: {} train / {} test flows, test sha256 {}",
        summary.train_flows, summary.test_flows, summary.test_set_sha256
    ));
    if let Some(dir) = out {
        write_json(&dir.join("split.json"), &summary)?;
    }

    let mut warnings = Vec::new();
    let mut bundle = None;
    let mut runs = Vec::new();
    for &variant in &cfg.experiment.variants {
        let variant_train = match variant {
            Variant::Actual => train.clone(),
            Variant::Sampled => {
                oversample_dataset(&train, &plan, &mut named_rng(cfg.seed, "oversample"))
                    .stage("oversample")?
            }
            Variant::Augmented => {
                let (synths, w) = build_synthesizers(cfg, &train, &plan, log)?;
                warnings.extend(w);
                let b = AugmentationBundle {
                    version: FORMAT_VERSION,
                    config: cfg.synth_config(),
                    seed: derive_seed(cfg.seed, "synthesis"),
                    synthesizers: synths.iter().map(ClassSynthesizer::to_state).collect(),
                };
                if let Some(dir) = out {
                    write_json(&dir.join("bundle.json"), &b)?;
                }
                bundle = Some(b);
                augment_dataset(
                    &train,
                    &plan,
                    &synths,
                    &mut named_rng(cfg.seed, "synthesis"),
                )
                .stage("augment")?
            }
        };
        log(&format!(
            "{variant}: training on {} flows",
            variant_train.len()
        ));
        let mut model = build_crnn(&crnn_config(cfg, dataset.classes.len())).stage("train")?;
        let trace = train_crnn(&mut model, &variant_train, &test, &mut |s| {
            log(&format!(
                "{variant}: epoch {} loss {:.4} acc {:.4} test acc {:.4}",
                s.epoch + 1,
                s.train_loss,
                s.train_accuracy,
                s.valid_accuracy.unwrap_or(f64::NAN)
            ))
        })
        .stage("train")?;
        let report = ReportFile {
            report: evaluate(&mut model, &test, variant)?,
            test_set_sha256: summary.test_set_sha256.clone(),
            train_flows: variant_train.len(),
        };
        let checkpoint = model.to_checkpoint();
        if let Some(dir) = out {
            write_json(
                &dir.join("reports").join(format!("{variant}.json")),
                &report,
            )?;
            write_json(
                &dir.join("models").join(format!("{variant}.json")),
                &checkpoint,
            )?;
            write_json(&dir.join("traces").join(format!("{variant}.json")), &trace)?;
        }
        runs.push(VariantRun {
            variant,
            report,
            checkpoint,
            trace,
        });
    }

    let comparison = if runs.len() > 1 && runs.iter().any(|r| r.variant == Variant::Actual) {
        let reports: Vec<_> = runs.iter().map(|r| r.report.report.clone()).collect();
        Some(compare_runs(&reports).stage("compare")?)
    } else {
        None
    };
    if let Some(dir) = out {
        if let Some(c) = &comparison {
            write_json(&dir.join("comparison.json"), c)?;
            write_bytes(&dir.join("plot.csv"), plot_csv(&c.plot).as_bytes())?;
            write_bytes(&dir.join("summary.txt"), c.summary.as_bytes())?;
        }
        let marker = dir.join(INCOMPLETE_MARKER);
        std::fs::remove_file(&marker).map_err(|e| crate::error::Error::io(marker, e))?;
    }
    Ok(ExperimentOutput {
        split: summary,
        runs,
        comparison,
        bundle,
        warnings,
    })
}
