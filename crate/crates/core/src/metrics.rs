//! Confusion matrix, per-class precision/recall/F1, and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::check_label;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "index,train_accuracy,val_accuracy";

/// 2x2 tally of (actual, predicted). Class 1 (ransomware) is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_negative: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_positive: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_negative + self.false_positive + self.false_negative + self.true_positive
    }

    /// `counts[actual][predicted]`
    pub fn counts(&self) -> [[u64; 2]; 2] {
        [
            [self.true_negative, self.false_positive],
            [self.false_negative, self.true_positive],
        ]
    }

    pub fn accuracy(&self) -> f32 {
        ratio(self.true_negative + self.true_positive, self.total()).0
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        check_label(p)?;
        check_label(l)?;
        match (l, p) {
            (0, 0) => cm.true_negative += 1,
            (0, _) => cm.false_positive += 1,
            (_, 0) => cm.false_negative += 1,
            _ => cm.true_positive += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f32,
    pub recall: f32,
    pub f1: f32,
    /// Set when any of the three had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f32, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        ((num as f64 / den as f64) as f32, false)
    }
}

/// Harmonic mean of precision and recall; `(0, true)` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> (f64, bool) {
    let sum = precision + recall;
    if sum == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / sum, false)
    }
}

fn class_metrics(correct: u64, predicted: u64, actual: u64) -> ClassMetrics {
    let (precision, dp) = ratio(correct, predicted);
    let (recall, dr) = ratio(correct, actual);
    let (f1, df) = if dp || dr {
        (0.0, true)
    } else {
        f1_score(correct as f64 / predicted as f64, correct as f64 / actual as f64)
    };
    ClassMetrics {
        precision,
        recall,
        f1: f1 as f32,
        degenerate: dp || dr || df,
    }
}

/// Metrics for class 0 (normal) and class 1 (ransomware), in that order.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> [ClassMetrics; 2] {
    [
        class_metrics(
            cm.true_negative,
            cm.true_negative + cm.false_negative,
            cm.true_negative + cm.false_positive,
        ),
        class_metrics(
            cm.true_positive,
            cm.true_positive + cm.false_positive,
            cm.true_positive + cm.false_negative,
        ),
    ]
}

/// One epoch (centralized) or round (federated) of accuracy history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub index: usize,
    pub train_accuracy: Option<f32>,
    pub val_accuracy: Option<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub classes: [ClassMetrics; 2],
    pub accuracy: f32,
    pub history: Vec<HistoryRow>,
}

impl EvalReport {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        let confusion = confusion(predictions, labels)?;
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            classes: precision_recall_f1(&confusion),
            accuracy: confusion.accuracy(),
            confusion,
            history: Vec::new(),
        }
    }

    pub fn with_history(mut self, history: Vec<HistoryRow>) -> Self {
        self.history = history;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    /// Picks the format from a file extension, defaulting to JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Json,
        }
    }
}

fn opt(v: Option<f32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV form: the history table under a fixed header, followed by `#`-prefixed
/// summary lines so the file still loads as plain curve data.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in &report.history {
        let _ = writeln!(
            out,
            "{},{},{}",
            row.index,
            opt(row.train_accuracy),
            opt(row.val_accuracy)
        );
    }
    let cm = &report.confusion;
    let _ = writeln!(out, "# accuracy={}", report.accuracy);
    let _ = writeln!(
        out,
        "# confusion={},{},{},{}",
        cm.true_negative, cm.false_positive, cm.false_negative, cm.true_positive
    );
    for (c, m) in report.classes.iter().enumerate() {
        let _ = writeln!(out, "# class{c}={},{},{},{}", m.precision, m.recall, m.f1, m.degenerate);
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(format!("malformed report: {}", msg.into()))
}

fn parse_num<T: FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| bad(format!("bad number {s:?}")))
}

fn parse_opt(s: &str) -> Result<Option<f32>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_num(s).map(Some)
    }
}

pub fn report_from_csv(text: &str) -> Result<EvalReport> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad("missing header"));
    }
    let mut report = EvalReport::default();
    for line in lines {
        if let Some(meta) = line.strip_prefix("# ") {
            let (key, value) = meta.split_once('=').ok_or_else(|| bad(line))?;
            let fields: Vec<&str> = value.split(',').collect();
            match (key, fields.as_slice()) {
                ("accuracy", [a]) => report.accuracy = parse_num(a)?,
                ("confusion", [tn, fp, fneg, tp]) => {
                    report.confusion = ConfusionMatrix {
                        true_negative: parse_num(tn)?,
                        false_positive: parse_num(fp)?,
                        false_negative: parse_num(fneg)?,
                        true_positive: parse_num(tp)?,
                    }
                }
                ("class0" | "class1", [p, r, f, d]) => {
                    let idx = usize::from(key == "class1");
                    report.classes[idx] = ClassMetrics {
                        precision: parse_num(p)?,
                        recall: parse_num(r)?,
                        f1: parse_num(f)?,
                        degenerate: parse_num(d)?,
                    };
                }
                _ => return Err(bad(line)),
            }
        } else if !line.is_empty() {
            let fields: Vec<&str> = line.split(',').collect();
            let [index, train, val] = fields.as_slice() else {
                return Err(bad(line));
            };
            report.history.push(HistoryRow {
                index: parse_num(index)?,
                train_accuracy: parse_opt(train)?,
                val_accuracy: parse_opt(val)?,
            });
        }
    }
    Ok(report)
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).map_err(|e| bad(e.to_string()))? + "\n",
        ReportFormat::Csv => report_to_csv(report),
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<EvalReport> {
    let text = fs::read_to_string(path)?;
    match format {
        ReportFormat::Json => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
        ReportFormat::Csv => report_from_csv(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tallies() {
        let cm = confusion(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(
            (cm.true_negative, cm.true_positive, cm.false_positive, cm.false_negative),
            (2, 2, 0, 0)
        );
        let cm = confusion(&[0; 5], &[1; 5]).unwrap();
        assert_eq!(cm.counts(), [[0, 0], [5, 0]]);
        assert!(matches!(confusion(&[0], &[0, 1]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(confusion(&[2], &[0]), Err(Error::InvalidLabel(2))));
    }

    #[test]
    fn reported_f1_values() {
        // Goodware row: P=0.81, R=0.90; ransomware row: P=0.90, R=0.80.
        let (f, _) = f1_score(0.81, 0.90);
        assert!((f - 0.852_631_578_9).abs() < 1e-9);
        // 85.26% rounds to 85, not the 86 printed alongside these inputs.
        assert_eq!((f * 100.0).round(), 85.0);
        let (f, _) = f1_score(0.90, 0.80);
        assert!((f - 0.847_058_823_5).abs() < 1e-9);
        assert_eq!((f * 100.0).round(), 85.0);
    }

    #[test]
    fn perfect_and_degenerate_matrices() {
        let m = precision_recall_f1(&confusion(&[0, 1, 1], &[0, 1, 1]).unwrap());
        for c in m {
            assert_eq!((c.precision, c.recall, c.f1, c.degenerate), (1.0, 1.0, 1.0, false));
        }
        // nothing predicted as ransomware and no ransomware present
        let m = precision_recall_f1(&confusion(&[0, 0], &[0, 0]).unwrap());
        assert_eq!(
            m[1],
            ClassMetrics {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                degenerate: true
            }
        );
        assert!(!m[0].degenerate);
        let empty = EvalReport::from_confusion(ConfusionMatrix::default());
        assert_eq!(empty.accuracy, 0.0);
    }

    #[test]
    fn report_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = EvalReport::from_predictions(&[0, 1, 1, 0, 1], &[0, 1, 0, 0, 1]).unwrap();
        report.history = vec![
            HistoryRow {
                index: 1,
                train_accuracy: Some(0.612_345_7),
                val_accuracy: Some(0.5),
            },
            HistoryRow {
                index: 2,
                train_accuracy: None,
                val_accuracy: Some(1.0 / 3.0),
            },
        ];
        for (name, fmt) in [("r.json", ReportFormat::Json), ("r.csv", ReportFormat::Csv)] {
            let path = dir.path().join(name);
            emit_report(&report, &path, fmt).unwrap();
            assert_eq!(read_report(&path, fmt).unwrap(), report);
        }
        let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(csv.starts_with("index,train_accuracy,val_accuracy\n1,0.6123457,0.5\n2,,0.33333334\n"));
    }

    #[test]
    fn empty_history_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let report = EvalReport::from_confusion(ConfusionMatrix::default());
        let path = dir.path().join("e.csv");
        emit_report(&report, &path, ReportFormat::Csv).unwrap();
        let back = read_report(&path, ReportFormat::Csv).unwrap();
        assert!(back.history.is_empty());
        assert_eq!(back, report);
    }

    fn brute_force(preds: &[u8], labels: &[u8], class: u8) -> (f64, f64) {
        let correct = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == class && **l == class)
            .count() as f64;
        let predicted = preds.iter().filter(|&&p| p == class).count() as f64;
        let actual = labels.iter().filter(|&&l| l == class).count() as f64;
        let p = if predicted == 0.0 { 0.0 } else { correct / predicted };
        let r = if actual == 0.0 { 0.0 } else { correct / actual };
        (p, r)
    }

    proptest! {
        #[test]
        fn matrix_metrics_match_brute_force(pairs in prop::collection::vec((0u8..2, 0u8..2), 0..200)) {
            let (preds, labels): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let cm = confusion(&preds, &labels).unwrap();
            prop_assert_eq!(cm.total(), preds.len() as u64);
            let metrics = precision_recall_f1(&cm);
            for class in 0..2u8 {
                let (p, r) = brute_force(&preds, &labels, class);
                let m = metrics[class as usize];
                prop_assert!((m.precision as f64 - p).abs() < 1e-6);
                prop_assert!((m.recall as f64 - r).abs() < 1e-6);
                let lo = m.precision.min(m.recall);
                let hi = m.precision.max(m.recall);
                prop_assert!(m.f1 >= lo - 1e-6 && m.f1 <= hi + 1e-6);
            }
            if !preds.is_empty() {
                let direct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f32 / preds.len() as f32;
                prop_assert!((cm.accuracy() - direct).abs() < 1e-6);
            }
        }

        #[test]
        fn f1_is_bounded_harmonic_mean(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let (f, _) = f1_score(p, r);
            prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
            if (p - r).abs() > 1e-9 && p.min(r) > 0.0 {
                prop_assert!(f > p.min(r) && f < p.max(r));
            }
        }
    }
}
