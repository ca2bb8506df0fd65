//! Eval-mode inference, prediction files and confusion matrices.

use std::fmt::Write as _;
use std::path::Path;

use super::data::{eval_batch, Sample};
use crate::class::Label;
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::net::Network;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub path: String,
    pub truth: Label,
    pub predicted: Label,
    pub probs: [f32; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let total = self.confusion.total();
        if total == 0 {
            0.0
        } else {
            self.confusion.trace() as f64 / total as f64
        }
    }
}

/// Index of the largest probability; ties go to the lower class.
pub fn argmax(probs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(net: &Network, samples: &[Sample], batch_size: usize) -> Result<Evaluation> {
    let size = net.input_size();
    let mut predictions = Vec::with_capacity(samples.len());
    let mut confusion = ConfusionMatrix::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let probs = net.predict(eval_batch(chunk, size)?)?.ensure_finite("eval forward")?;
        for (s, row) in chunk.iter().zip(probs.data().chunks(3)) {
            let predicted = Label::from_index(argmax(row))?;
            confusion.add(s.label, predicted);
            predictions.push(Prediction {
                path: s.path.clone(),
                truth: s.label,
                predicted,
                probs: [row[0], row[1], row[2]],
            });
        }
    }
    Ok(Evaluation {
        predictions,
        confusion,
    })
}

pub fn format_predictions(preds: &[Prediction]) -> String {
    let mut s = String::new();
    for p in preds {
        let _ = writeln!(
            s,
            "{} {} {} {:.6} {:.6} {:.6}",
            p.path,
            p.truth.index(),
            p.predicted.index(),
            p.probs[0],
            p.probs[1],
            p.probs[2]
        );
    }
    s
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    std::fs::write(path, format_predictions(preds)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", t.len())));
        }
        let label = |s: &str| {
            s.parse::<usize>()
                .ok()
                .and_then(|v| Label::from_index(v).ok())
                .ok_or_else(|| err(format!("bad label {s:?}")))
        };
        let prob = |s: &str| {
            s.parse::<f32>()
                .map_err(|_| err(format!("bad probability {s:?}")))
        };
        out.push(Prediction {
            path: t[0].to_string(),
            truth: label(t[1])?,
            predicted: label(t[2])?,
            probs: [prob(t[3])?, prob(t[4])?, prob(t[5])?],
        });
    }
    Ok(out)
}

pub fn confusion_of(preds: &[Prediction]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for p in preds {
        cm.add(p.truth, p.predicted);
    }
    cm
}
