//! Text tables in the layout of the published result tables.

use super::MetricsReport;
use crate::class::Label;

/// Cell text for a metric whose denominator was zero.
pub const UNDEFINED: &str = "\u{2014}";

/// Percentage with one decimal, rounded half up.
pub fn format_percent(fraction: f64) -> String {
    let tenths = tenths(fraction);
    format!("{}.{}", tenths / 10, tenths % 10)
}

// A tiny epsilon absorbs representation error such as 0.981 * 1000 = 980.999...
fn tenths(fraction: f64) -> i64 {
    (fraction * 1000.0 + 0.5 + 1e-9).floor() as i64
}

/// One table per metric family, one row per model; the best value in each
/// column (after rounding) carries a trailing `*`. Ties are all marked.
pub fn render_report(reports: &[(String, MetricsReport)]) -> String {
    let accuracy: Vec<Vec<Option<f64>>> = reports.iter().map(|(_, r)| vec![Some(r.accuracy)]).collect();
    let per_class = |pick: fn(&MetricsReport) -> [Option<f64>; 3]| -> Vec<Vec<Option<f64>>> {
        reports.iter().map(|(_, r)| pick(r).to_vec()).collect()
    };
    let names: Vec<&str> = reports.iter().map(|(n, _)| n.as_str()).collect();
    let classes: Vec<&str> = Label::ALL.iter().map(|l| l.name()).collect();
    let tables = [
        ("Table 1. Accuracy (image level, %)", vec!["Accuracy"], accuracy),
        ("Table 2. Sensitivity (%)", classes.clone(), per_class(|r| r.sensitivity)),
        ("Table 3. Positive predictive value (PPV, %)", classes.clone(), per_class(|r| r.ppv)),
        ("Table 4. Specificity (%)", classes.clone(), per_class(|r| r.specificity)),
        ("Table 5. Negative predictive value (NPV, %)", classes, per_class(|r| r.npv)),
    ];
    let mut out = String::new();
    for (i, (title, columns, rows)) in tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(title);
        out.push('\n');
        out.push_str(&table(&names, columns, rows));
    }
    out
}

fn table(names: &[&str], columns: &[&str], rows: &[Vec<Option<f64>>]) -> String {
    let best: Vec<Option<i64>> = (0..columns.len())
        .map(|c| rows.iter().filter_map(|r| r[c].map(tenths)).max())
        .collect();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&best)
                .map(|(v, b)| match v {
                    Some(v) if Some(tenths(*v)) == *b => format!("{}*", format_percent(*v)),
                    Some(v) => format_percent(*v),
                    None => UNDEFINED.to_string(),
                })
                .collect()
        })
        .collect();
    let name_w = names.iter().map(|n| n.chars().count()).chain([5]).max().unwrap();
    let col_w: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(c, h)| {
            cells
                .iter()
                .map(|r| r[c].chars().count())
                .chain([h.chars().count()])
                .max()
                .unwrap()
        })
        .collect();
    let mut s = pad("Model", name_w);
    for (h, w) in columns.iter().zip(&col_w) {
        s.push_str("  ");
        s.push_str(&pad_left(h, *w));
    }
    s.push('\n');
    for (name, row) in names.iter().zip(&cells) {
        s.push_str(&pad(name, name_w));
        for (cell, w) in row.iter().zip(&col_w) {
            s.push_str("  ");
            s.push_str(&pad_left(cell, *w));
        }
        s.push('\n');
    }
    s
}

fn pad(s: &str, w: usize) -> String {
    format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())))
}

fn pad_left(s: &str, w: usize) -> String {
    format!("{}{s}", " ".repeat(w.saturating_sub(s.chars().count())))
}

/// Machine-readable `model.metric=value` lines; undefined values are written
/// as `undefined`.
pub fn metrics_lines(model: &str, r: &MetricsReport) -> String {
    let mut s = format!("{model}.accuracy={:.6}\n", r.accuracy);
    let families = [
        ("sensitivity", r.sensitivity),
        ("ppv", r.ppv),
        ("specificity", r.specificity),
        ("npv", r.npv),
    ];
    for (name, values) in families {
        for l in Label::ALL {
            match values[l.index()] {
                Some(v) => s.push_str(&format!("{model}.{name}.{}={v:.6}\n", l.name())),
                None => s.push_str(&format!("{model}.{name}.{}=undefined\n", l.name())),
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{compute_metrics, ConfusionMatrix};

    fn report(accuracy: f64) -> MetricsReport {
        MetricsReport {
            accuracy,
            sensitivity: [Some(0.5), None, Some(1.0)],
            ppv: [Some(0.25); 3],
            specificity: [Some(0.75); 3],
            npv: [None; 3],
        }
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(format_percent(0.981), "98.1");
        assert_eq!(format_percent(0.9815), "98.2");
        assert_eq!(format_percent(1.0), "100.0");
        assert_eq!(format_percent(0.0), "0.0");
        assert_eq!(format_percent(5.0 / 6.0), "83.3");
    }

    #[test]
    fn single_model_is_best_everywhere_defined() {
        let text = render_report(&[("L".to_string(), report(0.981))]);
        assert!(text.contains("98.1*"), "{text}");
        assert_eq!(text.matches("Table").count(), 5);
        assert!(text.contains(UNDEFINED));
        assert!(!text.contains('-'));
    }

    #[test]
    fn ties_mark_both() {
        let text = render_report(&[("A".into(), report(0.9)), ("B".into(), report(0.9)), ("C".into(), report(0.5))]);
        let acc: Vec<&str> = text.lines().skip(2).take(3).collect();
        assert!(acc[0].ends_with("90.0*") && acc[1].ends_with("90.0*"), "{acc:?}");
        assert!(acc[2].ends_with("50.0"));
    }

    #[test]
    fn key_value_lines() {
        let cm = ConfusionMatrix::from_counts([[5, 1, 0], [0, 4, 0], [1, 0, 9]]);
        let text = metrics_lines("m", &compute_metrics(&cm).unwrap());
        assert!(text.starts_with("m.accuracy=0.900000\n"));
        assert!(text.contains("m.sensitivity.Normal=0.833333\n"));
        assert_eq!(text.lines().count(), 13);
    }
}
