//! Confusion matrix, accuracy reports and their CSV forms.

use std::fmt;
use std::fmt::Write as _;

use crate::data::{make_batch, plan_epoch, Batch, ClipConfig, ClipSet, Order};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n: n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("confusion matrix rows must form a square"));
        }
        Ok(ConfusionMatrix {
            n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.n || predicted >= self.n {
            return Err(Error::invalid(format!(
                "class pair ({truth}, {predicted}) outside {} classes",
                self.n
            )));
        }
        self.counts[truth * self.n + predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(Error::shape(format!("cannot merge {} and {} classes", self.n, other.n)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// `None` for classes with no samples.
    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let n = self.row_sum(class);
        (n > 0).then(|| self.get(class, class) as f64 / n as f64)
    }
}

/// A class, the class it is most often mistaken for, and its accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusedPair {
    pub truth: usize,
    pub predicted: usize,
    pub accuracy: f64,
}

impl ConfusedPair {
    pub fn label(&self, names: Option<&[String]>) -> String {
        let name = |c: usize| names.and_then(|n| n.get(c).cloned()).unwrap_or_else(|| c.to_string());
        format!("{} → {} ({:.2}%)", name(self.truth), name(self.predicted), 100.0 * self.accuracy)
    }
}

impl fmt::Display for ConfusedPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label(None))
    }
}

/// The `k` least accurate classes that have any misclassification, each
/// paired with its most frequent wrong prediction. Ties go to lower indices.
pub fn confused_pairs(cm: &ConfusionMatrix, k: usize) -> Vec<ConfusedPair> {
    let mut pairs: Vec<ConfusedPair> = (0..cm.n_classes())
        .filter_map(|t| {
            let accuracy = cm.class_accuracy(t)?;
            let (predicted, count) = cm
                .row(t)
                .iter()
                .enumerate()
                .filter(|&(p, _)| p != t)
                .fold((0, 0), |best, (p, &c)| if c > best.1 { (p, c) } else { best });
            (count > 0).then_some(ConfusedPair {
                truth: t,
                predicted,
                accuracy,
            })
        })
        .collect();
    pairs.sort_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then(a.truth.cmp(&b.truth)));
    pairs.truncate(k);
    pairs
}

/// The `k` most accurate classes, best first, ties to lower indices.
pub fn top_recognized(cm: &ConfusionMatrix, k: usize) -> Vec<(usize, f64)> {
    let mut classes: Vec<(usize, f64)> = (0..cm.n_classes())
        .filter_map(|c| cm.class_accuracy(c).map(|a| (c, a)))
        .collect();
    classes.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    classes.truncate(k);
    classes
}

/// Anything that turns a batch into `[B, n_classes]` probabilities.
pub trait Classifier: Sync {
    fn n_classes(&self) -> usize;
    fn predict(&self, batch: &Batch) -> Result<Tensor<f32>>;
}

impl Classifier for Model<f32> {
    fn n_classes(&self) -> usize {
        Model::n_classes(self)
    }

    fn predict(&self, batch: &Batch) -> Result<Tensor<f32>> {
        self.infer(&batch.input)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..self.confusion.n_classes()).map(|c| self.confusion.class_accuracy(c)).collect()
    }
}

/// Classifies every clip of `set` with midpoint starts. Batches are spread
/// over `workers` threads and their confusion matrices summed.
pub fn evaluate<C: Classifier + ?Sized>(
    classifier: &C,
    set: &ClipSet,
    clip: &ClipConfig,
    batch_size: usize,
    workers: usize,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let n = classifier.n_classes();
    let plans = plan_epoch(set, batch_size, Order::Eval)?;
    let workers = workers.clamp(1, plans.len());
    let run = |plans: &[crate::data::BatchPlan]| -> Result<ConfusionMatrix> {
        let mut cm = ConfusionMatrix::new(n);
        for plan in plans {
            let batch = make_batch(set.source.as_ref(), plan, clip)?;
            let probs = classifier.predict(&batch)?;
            for (pred, &truth) in probs.argmax(1)?.into_iter().zip(&batch.labels) {
                cm.add(truth, pred)?;
            }
        }
        Ok(cm)
    };
    let chunk = plans.len().div_ceil(workers);
    let partials: Vec<Result<ConfusionMatrix>> = std::thread::scope(|scope| {
        let handles: Vec<_> = plans.chunks(chunk).map(|c| scope.spawn(move || run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut confusion = ConfusionMatrix::new(n);
    for part in partials {
        confusion.merge(&part?)?;
    }
    Ok(EvalReport {
        accuracy: confusion.accuracy(),
        confusion,
    })
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let n = cm.n_classes();
    let mut out = String::from("true/pred");
    (0..n).for_each(|c| write!(out, ",{c}").expect("string write"));
    out.push('\n');
    for t in 0..n {
        out.push_str(&t.to_string());
        cm.row(t).iter().for_each(|v| write!(out, ",{v}").expect("string write"));
        out.push('\n');
    }
    out
}

pub fn per_class_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("class,count,correct,accuracy\n");
    for c in 0..cm.n_classes() {
        let acc = cm.class_accuracy(c).map_or(String::new(), |a| format!("{a:.6}"));
        writeln!(out, "{c},{},{},{acc}", cm.row_sum(c), cm.get(c, c)).expect("string write");
    }
    out
}

pub fn summary_csv(report: &EvalReport) -> String {
    format!(
        "clips,correct,accuracy\n{},{},{}\n",
        report.confusion.total(),
        report.confusion.trace(),
        report.accuracy
    )
}
