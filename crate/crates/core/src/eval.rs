//! Confusion matrices, one-vs-rest metrics and variant comparison.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;
use serde::{Deserialize, Serialize};

use crate::flows::ClassIndex;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("{preds} predictions for {truth} labels")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("pair {index}: class id {id} out of range for {n} classes")]
    OutOfRange { index: usize, id: usize, n: usize },
    #[error("confusion matrix is empty")]
    Empty,
    #[error("reports do not share one class index")]
    ClassMismatch,
    #[error("comparison needs an \"actual\" report")]
    MissingActual,
}

/// Dataset variant a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Actual,
    Sampled,
    Augmented,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Actual, Variant::Sampled, Variant::Augmented];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Actual => "actual",
            Variant::Sampled => "sampled",
            Variant::Augmented => "augmented",
        }
    }
}

impl core::fmt::Display for Variant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: ClassIndex,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n()).map(|i| self.counts[i][i]).sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.n())
            .filter(|&t| t != c)
            .map(|t| self.counts[t][c])
            .sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.n())
            .filter(|&p| p != c)
            .map(|p| self.counts[c][p])
            .sum()
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }
}

pub fn confusion(
    preds: &[usize],
    truth: &[usize],
    classes: &ClassIndex,
) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truth: truth.len(),
        });
    }
    let n = classes.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (index, (&p, &t)) in preds.iter().zip(truth).enumerate() {
        for id in [p, t] {
            if id >= n {
                return Err(EvalError::OutOfRange { index, id, n });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.clone(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: Aggregate,
    pub weighted: Aggregate,
}

/// Columns aligned with [`EvalReport::classes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
}

/// A metric whose denominator was zero and was reported as 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Undefined {
    pub class: String,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub classes: Vec<String>,
    pub per_class: PerClass,
    pub overall: Overall,
    pub confusion: Vec<Vec<u64>>,
    pub undefined: Vec<Undefined>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall; `None` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn metrics(cm: &ConfusionMatrix, variant: Variant) -> Result<EvalReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let n = cm.n();
    let mut per = PerClass {
        precision: Vec::with_capacity(n),
        recall: Vec::with_capacity(n),
        f1: Vec::with_capacity(n),
        support: Vec::with_capacity(n),
    };
    let mut undefined = Vec::new();
    let names = cm.classes.names();
    for c in 0..n {
        let (tp, fp, fn_) = (cm.tp(c), cm.fp(c), cm.fn_(c));
        let mut flag = |m: &str| {
            undefined.push(Undefined {
                class: names[c].clone(),
                metric: m.into(),
            })
        };
        let p = ratio(tp, tp + fp).unwrap_or_else(|| {
            flag("precision");
            0.0
        });
        let r = ratio(tp, tp + fn_).unwrap_or_else(|| {
            flag("recall");
            0.0
        });
        let f = f1_score(p, r).unwrap_or_else(|| {
            flag("f1");
            0.0
        });
        per.precision.push(p);
        per.recall.push(r);
        per.f1.push(f);
        per.support.push(cm.support(c));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let weighted = |v: &[f64]| {
        v.iter()
            .zip(&per.support)
            .map(|(m, &s)| m * s as f64)
            .sum::<f64>()
            / total as f64
    };
    let overall = Overall {
        accuracy: cm.trace() as f64 / total as f64,
        macro_avg: Aggregate {
            precision: mean(&per.precision),
            recall: mean(&per.recall),
            f1: mean(&per.f1),
        },
        weighted: Aggregate {
            precision: weighted(&per.precision),
            recall: weighted(&per.recall),
            f1: weighted(&per.f1),
        },
    };
    Ok(EvalReport {
        variant,
        classes: names.to_vec(),
        per_class: per,
        overall,
        confusion: cm.counts.clone(),
        undefined,
    })
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<&[f64]> {
        match name {
            "precision" => Some(&self.per_class.precision),
            "recall" => Some(&self.per_class.recall),
            "f1" => Some(&self.per_class.f1),
            _ => None,
        }
    }

    /// Mean recall over the named classes (unknown names are skipped).
    pub fn mean_recall<S: AsRef<str>>(&self, classes: &[S]) -> f64 {
        let ids: Vec<usize> = classes
            .iter()
            .filter_map(|c| self.classes.iter().position(|n| n == c.as_ref()))
            .collect();
        if ids.is_empty() {
            return 0.0;
        }
        ids.iter().map(|&i| self.per_class.recall[i]).sum::<f64>() / ids.len() as f64
    }

    /// Overall figures keyed as in [`OVERALL_METRICS`].
    pub fn overall_values(&self) -> [f64; 7] {
        let o = &self.overall;
        [
            o.accuracy,
            o.macro_avg.precision,
            o.macro_avg.recall,
            o.macro_avg.f1,
            o.weighted.precision,
            o.weighted.recall,
            o.weighted.f1,
        ]
    }
}

pub const PER_CLASS_METRICS: [&str; 3] = ["precision", "recall", "f1"];
pub const OVERALL_METRICS: [&str; 7] = [
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "weighted_precision",
    "weighted_recall",
    "weighted_f1",
];

/// One long-format plot value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub class: String,
    pub variant: Variant,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// Class name, or `"overall"`.
    pub class: String,
    pub metric: String,
    /// One per variant, in [`Comparison::variants`] order.
    pub values: Vec<f64>,
    /// Difference from the actual variant, in percentage points.
    pub delta_points: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub variants: Vec<Variant>,
    pub classes: Vec<String>,
    pub per_class: Vec<ComparisonRow>,
    pub overall: Vec<ComparisonRow>,
    pub plot: Vec<PlotPoint>,
    pub summary: String,
}

pub fn compare_runs(reports: &[EvalReport]) -> Result<Comparison, EvalError> {
    let base = reports
        .iter()
        .find(|r| r.variant == Variant::Actual)
        .ok_or(EvalError::MissingActual)?;
    if reports.iter().any(|r| r.classes != base.classes) {
        return Err(EvalError::ClassMismatch);
    }
    let variants: Vec<Variant> = reports.iter().map(|r| r.variant).collect();
    let row = |class: &str, metric: &str, values: Vec<f64>, reference: f64| ComparisonRow {
        class: class.into(),
        metric: metric.into(),
        delta_points: values.iter().map(|v| 100.0 * (v - reference)).collect(),
        values,
    };

    let mut per_class = Vec::new();
    let mut plot = Vec::new();
    for metric in PER_CLASS_METRICS {
        for (c, class) in base.classes.iter().enumerate() {
            let values: Vec<f64> = reports
                .iter()
                .map(|r| r.metric(metric).unwrap()[c])
                .collect();
            for (r, &v) in reports.iter().zip(&values) {
                plot.push(PlotPoint {
                    class: class.clone(),
                    variant: r.variant,
                    metric: metric.into(),
                    value: v,
                });
            }
            per_class.push(row(class, metric, values, base.metric(metric).unwrap()[c]));
        }
    }
    let base_overall = base.overall_values();
    let mut overall = Vec::new();
    for (k, metric) in OVERALL_METRICS.iter().enumerate() {
        let values: Vec<f64> = reports.iter().map(|r| r.overall_values()[k]).collect();
        for (r, &v) in reports.iter().zip(&values) {
            plot.push(PlotPoint {
                class: "overall".into(),
                variant: r.variant,
                metric: metric.to_string(),
                value: v,
            });
        }
        overall.push(row("overall", metric, values, base_overall[k]));
    }

    let mut summary = String::new();
    for r in &overall {
        let _ = write!(summary, "{:<19}", r.metric);
        for (i, v) in variants.iter().enumerate() {
            let _ = write!(summary, " {v}={:.4}", r.values[i]);
            if *v != Variant::Actual {
                let _ = write!(summary, " ({:+.2} pts)", r.delta_points[i]);
            }
        }
        summary.push('\n');
    }
    Ok(Comparison {
        variants,
        classes: base.classes.clone(),
        per_class,
        overall,
        plot,
        summary,
    })
}

/// Long-format CSV body for plot points, header included.
pub fn plot_csv(points: &[PlotPoint]) -> String {
    let mut out = String::from("class,variant,metric,value\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&p.class),
            p.variant,
            p.metric,
            p.value
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.into()
    }
}
