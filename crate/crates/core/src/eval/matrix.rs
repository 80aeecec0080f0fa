//! Transfer matrices: success rate per (attack, source, victim) cell.

use std::fmt::Write as _;

use crate::attacks::AttackMethod;
use crate::error::{Error, Result};
use crate::nn::ArchId;

/// Labels of one adversarial example as seen by one victim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Judgement {
    pub true_label: usize,
    /// Victim prediction on the clean input.
    pub clean_label: usize,
    /// Victim prediction on the adversarial input.
    pub adv_label: usize,
}

impl Judgement {
    /// Only samples the victim gets right when clean are scored.
    pub fn eligible(&self) -> bool {
        self.clean_label == self.true_label
    }

    pub fn success(&self) -> bool {
        self.eligible() && self.adv_label != self.true_label
    }
}

/// Percentage of eligible judgements that are successes.
pub fn success_rate(judgements: &[Judgement]) -> Result<f64> {
    let eligible = judgements.iter().filter(|j| j.eligible()).count();
    if eligible == 0 {
        return Err(Error::Degenerate(format!(
            "no eligible samples among {} (the victim misclassifies every clean input)",
            judgements.len()
        )));
    }
    let hits = judgements.iter().filter(|j| j.success()).count();
    Ok(100.0 * hits as f64 / eligible as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixEntry {
    pub attack: AttackMethod,
    pub source: ArchId,
    pub victim: ArchId,
    pub eligible: usize,
    pub successes: usize,
}

impl MatrixEntry {
    /// Success rate in percent; `None` without eligible samples.
    pub fn rate(&self) -> Option<f64> {
        (self.eligible > 0).then(|| 100.0 * self.successes as f64 / self.eligible as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferMatrix {
    pub entries: Vec<MatrixEntry>,
}

pub const MATRIX_HEADER: &str = "attack,source,victim,eligible,successes,success_rate";

impl TransferMatrix {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, attack: AttackMethod, source: ArchId, victim: ArchId) -> Option<&MatrixEntry> {
        self.entries
            .iter()
            .find(|e| e.attack == attack && e.source == source && e.victim == victim)
    }

    pub fn rate(&self, attack: AttackMethod, source: ArchId, victim: ArchId) -> Option<f64> {
        self.get(attack, source, victim).and_then(MatrixEntry::rate)
    }

    /// One row per entry; rates with two decimals, empty when undefined.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{MATRIX_HEADER}\n");
        for e in &self.entries {
            let rate = e.rate().map(|r| format!("{r:.2}")).unwrap_or_default();
            writeln!(out, "{},{},{},{},{},{rate}", e.attack, e.source.name(), e.victim.name(), e.eligible, e.successes).unwrap();
        }
        out
    }

    /// Parses [`TransferMatrix::to_csv`] output. The rate column is checked
    /// against the counts.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == MATRIX_HEADER => {}
            _ => return Err(Error::Format(format!("matrix CSV must start with `{MATRIX_HEADER}`"))),
        }
        let mut entries: Vec<MatrixEntry> = Vec::new();
        for (i, line) in lines {
            let err = |m: String| Error::Format(format!("matrix CSV line {}: {m}", i + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let count = |s: &str| s.parse::<usize>().map_err(|_| err(format!("`{s}` is not a count")));
            let e = MatrixEntry {
                attack: f[0].parse().map_err(|e: Error| err(e.to_string()))?,
                source: f[1].parse().map_err(|e: Error| err(e.to_string()))?,
                victim: f[2].parse().map_err(|e: Error| err(e.to_string()))?,
                eligible: count(f[3])?,
                successes: count(f[4])?,
            };
            if e.successes > e.eligible {
                return Err(err("more successes than eligible samples".into()));
            }
            match (e.rate(), f[5]) {
                (None, "") => {}
                (Some(r), s) => {
                    let v: f64 = s.parse().map_err(|_| err(format!("`{s}` is not a rate")))?;
                    if (v - r).abs() > 0.005 + 1e-9 {
                        return Err(err(format!("rate {v} disagrees with {}/{}", e.successes, e.eligible)));
                    }
                }
                (None, s) => return Err(err(format!("rate `{s}` given without eligible samples"))),
            }
            if entries.iter().any(|o| (o.attack, o.source, o.victim) == (e.attack, e.source, e.victim)) {
                return Err(err("duplicate cell".into()));
            }
            entries.push(e);
        }
        Ok(TransferMatrix { entries })
    }

    /// Aligned text tables, one per attack: rows are sources, columns
    /// victims, cells success rates in percent.
    pub fn report(&self) -> String {
        let mut out = String::from(
            "Attack success rates (%). A cell counts only test samples its victim classifies\n\
             correctly when clean; diagonal cells (source = victim) are white-box attacks.\n",
        );
        let mut attacks: Vec<AttackMethod> = Vec::new();
        for e in &self.entries {
            if !attacks.contains(&e.attack) {
                attacks.push(e.attack);
            }
        }
        if attacks.is_empty() {
            out.push_str("\n(no results)\n");
        }
        for attack in attacks {
            let cells: Vec<&MatrixEntry> = self.entries.iter().filter(|e| e.attack == attack).collect();
            let mut sources: Vec<ArchId> = cells.iter().map(|e| e.source).collect();
            let mut victims: Vec<ArchId> = cells.iter().map(|e| e.victim).collect();
            sources.sort();
            sources.dedup();
            victims.sort();
            victims.dedup();
            write!(out, "\n{:<8}", attack.name().to_uppercase()).unwrap();
            for v in &victims {
                write!(out, "{:>9}", v.name()).unwrap();
            }
            out.push('\n');
            for s in &sources {
                write!(out, "{:<8}", s.name()).unwrap();
                for v in &victims {
                    let cell = match self.get(attack, *s, *v) {
                        Some(e) => e.rate().map(|r| format!("{r:.2}")).unwrap_or_else(|| "n/a".into()),
                        None => "-".into(),
                    };
                    let mark = if s == v { "*" } else { " " };
                    write!(out, "{:>8}{mark}", cell).unwrap();
                }
                out.push('\n');
            }
        }
        out.push_str("\n* white-box (self-attack)\n");
        out
    }
}
