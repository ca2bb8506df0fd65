//! Patient-level split audit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::manifest::{Manifest, Split};
use crate::class::Label;

/// Slice and patient counts for one split, indexed by label.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitCounts {
    pub slices: [usize; 3],
    pub patients: [usize; 3],
    pub total_slices: usize,
    pub total_patients: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitReport {
    pub counts: BTreeMap<Split, SplitCounts>,
    /// Every patient id found in more than one split, with those splits.
    pub shared: Vec<(String, Vec<Split>)>,
}

impl SplitReport {
    pub fn passed(&self) -> bool {
        self.shared.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let verdict = if self.passed() { "pass" } else { "fail" };
        let _ = writeln!(s, "split check: {verdict}");
        let _ = writeln!(
            s,
            "{:<6} {:>8} {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} {:>8}",
            "split", "Normal", "CP", "NCP", "slices", "Normal", "CP", "NCP", "patients"
        );
        for split in Split::ALL {
            let c = self.counts.get(&split).cloned().unwrap_or_default();
            let _ = writeln!(
                s,
                "{:<6} {:>8} {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} {:>8}",
                split.as_str(),
                c.slices[0],
                c.slices[1],
                c.slices[2],
                c.total_slices,
                c.patients[0],
                c.patients[1],
                c.patients[2],
                c.total_patients
            );
        }
        for (pid, splits) in &self.shared {
            let names: Vec<&str> = splits.iter().map(|s| s.as_str()).collect();
            let _ = writeln!(s, "shared patient {pid}: {}", names.join(", "));
        }
        s
    }
}

pub fn count_split(m: &Manifest) -> SplitCounts {
    let mut c = SplitCounts::default();
    let mut by_label: [BTreeSet<&str>; 3] = Default::default();
    let mut all = BTreeSet::new();
    for r in &m.records {
        c.slices[r.label.index()] += 1;
        by_label[r.label.index()].insert(r.patient_id.as_str());
        all.insert(r.patient_id.as_str());
    }
    c.total_slices = m.records.len();
    for l in Label::ALL {
        c.patients[l.index()] = by_label[l.index()].len();
    }
    c.total_patients = all.len();
    c
}

/// Checks that no patient contributes slices to more than one split.
pub fn validate_split(train: &Manifest, val: &Manifest, test: &Manifest) -> SplitReport {
    let parts = [(Split::Train, train), (Split::Val, val), (Split::Test, test)];
    let mut owners: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (split, m) in parts {
        counts.insert(split, count_split(m));
        for r in &m.records {
            owners.entry(r.patient_id.as_str()).or_default().insert(split);
        }
    }
    let shared = owners
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(p, s)| (p.to_string(), s.into_iter().collect()))
        .collect();
    SplitReport { counts, shared }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn m(text: &str) -> Manifest {
        Manifest::parse(text, Path::new("t"), None).unwrap()
    }

    #[test]
    fn disjoint_passes() {
        let r = validate_split(&m("a 0 p1\nb 1 p1\n"), &m("c 2 p2\n"), &m("d 0 p3\n"));
        assert!(r.passed());
        let t = &r.counts[&Split::Train];
        assert_eq!((t.slices, t.patients, t.total_patients), ([1, 1, 0], [1, 1, 0], 1));
        assert!(r.render().starts_with("split check: pass"));
    }

    #[test]
    fn shared_patient_is_named() {
        let r = validate_split(&m("a 0 p1\nb 0 p9\n"), &m("c 2 p2\n"), &m("d 0 p9\ne 0 p2\n"));
        assert!(!r.passed());
        assert_eq!(
            r.shared,
            vec![
                ("p2".to_string(), vec![Split::Val, Split::Test]),
                ("p9".to_string(), vec![Split::Train, Split::Test])
            ]
        );
        let text = r.render();
        assert!(text.contains("fail") && text.contains("p9") && text.contains("p2"));
    }
}
