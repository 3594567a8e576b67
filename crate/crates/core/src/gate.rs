//! Blacklist plus capacity-bounded admission driven by the benign probability.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use crate::classifiers::FlowClassifier;
use crate::data::{Dataset, FlowRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum GateVerdict {
    Allow,
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum GateReason {
    Blacklisted,
    OverCapacity,
    BelowThreshold,
    Admitted,
}

impl GateReason {
    pub const ALL: [GateReason; 4] = [
        GateReason::Blacklisted,
        GateReason::OverCapacity,
        GateReason::BelowThreshold,
        GateReason::Admitted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GateReason::Blacklisted => "blacklisted",
            GateReason::OverCapacity => "over_capacity",
            GateReason::BelowThreshold => "below_threshold",
            GateReason::Admitted => "admitted",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateDecision {
    pub verdict: GateVerdict,
    pub reason: GateReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateState {
    pub blacklist: BTreeSet<u32>,
    /// Admissions allowed per window; `None` is unbounded.
    pub capacity: Option<usize>,
    /// Flows per window; `None` makes the whole run one window.
    pub window_len: Option<usize>,
    pub window_admitted: usize,
    window_seen: usize,
    pub threshold: f64,
}

impl GateState {
    pub fn new(threshold: f64, capacity: Option<usize>, window_len: Option<usize>) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Argument(format!(
                "admit threshold {threshold} outside [0, 1]"
            )));
        }
        if window_len == Some(0) {
            return Err(Error::Argument("window length must be ≥ 1".into()));
        }
        Ok(Self {
            blacklist: BTreeSet::new(),
            capacity,
            window_len,
            window_admitted: 0,
            window_seen: 0,
            threshold,
        })
    }

    /// Everything passes.
    pub fn open() -> Self {
        Self::new(0.0, None, None).expect("valid")
    }
}

pub fn gate_decide(flow: &FlowRecord, prob_benign: f64, state: &mut GateState) -> GateDecision {
    if let Some(n) = state.window_len {
        if state.window_seen == n {
            state.window_seen = 0;
            state.window_admitted = 0;
        }
    }
    state.window_seen += 1;
    let block = |reason| GateDecision {
        verdict: GateVerdict::Block,
        reason,
    };
    if flow.src_ip.is_some_and(|ip| state.blacklist.contains(&ip)) {
        return block(GateReason::Blacklisted);
    }
    if !(prob_benign >= state.threshold) {
        return block(GateReason::BelowThreshold);
    }
    if state.capacity.is_some_and(|n| state.window_admitted >= n) {
        return block(GateReason::OverCapacity);
    }
    state.window_admitted += 1;
    GateDecision {
        verdict: GateVerdict::Allow,
        reason: GateReason::Admitted,
    }
}

/// Adds the flow's source on a malicious verdict; returns whether it was new.
pub fn blacklist_update(state: &mut GateState, flow: &FlowRecord, malicious: bool) -> bool {
    if !malicious {
        return false;
    }
    match flow.src_ip {
        Some(ip) => state.blacklist.insert(ip),
        None => {
            log::warn!("malicious flow without a source address; nothing to blacklist");
            false
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateReport {
    pub flows: usize,
    pub benign_total: usize,
    pub benign_allowed: usize,
    pub malicious_total: usize,
    pub malicious_allowed: usize,
    pub reasons: BTreeMap<GateReason, usize>,
    /// Admitted malicious flows per source address.
    pub malicious_leak_by_source: BTreeMap<u32, usize>,
    pub blacklist_size: usize,
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl GateReport {
    pub fn benign_pass_rate(&self) -> Option<f64> {
        rate(self.benign_allowed, self.benign_total)
    }

    pub fn malicious_pass_rate(&self) -> Option<f64> {
        rate(self.malicious_allowed, self.malicious_total)
    }

    pub fn allowed(&self) -> usize {
        self.reasons
            .get(&GateReason::Admitted)
            .copied()
            .unwrap_or(0)
    }

    pub fn blocked(&self) -> usize {
        self.flows - self.allowed()
    }

    pub fn write_reasons_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["reason", "verdict", "count"])?;
        for r in GateReason::ALL {
            let verdict = if r == GateReason::Admitted {
                "allow"
            } else {
                "block"
            };
            let n = self.reasons.get(&r).copied().unwrap_or(0);
            w.write_record([r.name(), verdict, &n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for GateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        writeln!(
            f,
            "flows: {} (allowed {}, blocked {})",
            self.flows,
            self.allowed(),
            self.blocked()
        )?;
        writeln!(
            f,
            "benign pass rate: {} ({}/{})",
            show(self.benign_pass_rate()),
            self.benign_allowed,
            self.benign_total
        )?;
        writeln!(
            f,
            "malicious pass rate: {} ({}/{})",
            show(self.malicious_pass_rate()),
            self.malicious_allowed,
            self.malicious_total
        )?;
        for r in GateReason::ALL {
            writeln!(
                f,
                "  {}: {}",
                r.name(),
                self.reasons.get(&r).copied().unwrap_or(0)
            )?;
        }
        write!(f, "blacklisted sources: {}", self.blacklist_size)
    }
}

/// Streams `trace` in order through classifier, gate and blacklist. Labels
/// only feed the report.
pub fn run_gate_sim(
    trace: &Dataset,
    model: &dyn FlowClassifier,
    state: &mut GateState,
) -> Result<GateReport> {
    let probs = model.predict_proba(trace)?;
    let benign = model.benign_index();
    let mut report = GateReport {
        flows: trace.len(),
        benign_total: 0,
        benign_allowed: 0,
        malicious_total: 0,
        malicious_allowed: 0,
        reasons: BTreeMap::new(),
        malicious_leak_by_source: BTreeMap::new(),
        blacklist_size: 0,
    };
    for (i, p) in probs.iter().enumerate() {
        let flow = trace.record(i);
        let decision = gate_decide(&flow, p[benign], state);
        let predicted_malicious = crate::classifiers::argmax(p) != benign;
        blacklist_update(state, &flow, predicted_malicious);
        *report.reasons.entry(decision.reason).or_default() += 1;
        let allowed = decision.verdict == GateVerdict::Allow;
        if trace.is_benign(i) {
            report.benign_total += 1;
            report.benign_allowed += usize::from(allowed);
        } else {
            report.malicious_total += 1;
            report.malicious_allowed += usize::from(allowed);
            if allowed {
                if let Some(ip) = flow.src_ip {
                    *report.malicious_leak_by_source.entry(ip).or_default() += 1;
                }
            }
        }
    }
    report.blacklist_size = state.blacklist.len();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, BENIGN, MALICIOUS};

    fn flow(src: Option<u32>) -> FlowRecord {
        FlowRecord {
            features: vec![0.0],
            label: 0,
            src_ip: src,
            dst_ip: None,
        }
    }

    #[test]
    fn blacklist_wins() {
        let mut s = GateState::open();
        s.blacklist.insert(7);
        let d = gate_decide(&flow(Some(7)), 1.0, &mut s);
        assert_eq!(
            (d.verdict, d.reason),
            (GateVerdict::Block, GateReason::Blacklisted)
        );
    }

    #[test]
    fn open_gate_allows_everything() {
        let mut s = GateState::open();
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(
                gate_decide(&flow(None), p, &mut s).verdict,
                GateVerdict::Allow
            );
        }
    }

    #[test]
    fn capacity_counter() {
        let mut s = GateState::new(0.5, Some(2), None).unwrap();
        let r: Vec<GateReason> = (0..3)
            .map(|_| gate_decide(&flow(None), 0.9, &mut s).reason)
            .collect();
        assert_eq!(
            r,
            vec![
                GateReason::Admitted,
                GateReason::Admitted,
                GateReason::OverCapacity
            ]
        );
    }

    #[test]
    fn windows_reset_the_counter() {
        let mut s = GateState::new(0.0, Some(1), Some(2)).unwrap();
        let r: Vec<GateVerdict> = (0..4)
            .map(|_| gate_decide(&flow(None), 1.0, &mut s).verdict)
            .collect();
        use GateVerdict::*;
        assert_eq!(r, vec![Allow, Block, Allow, Block]);
    }

    #[test]
    fn blacklist_semantics() {
        let mut s = GateState::open();
        assert!(!blacklist_update(&mut s, &flow(Some(1)), false));
        assert!(s.blacklist.is_empty());
        assert!(blacklist_update(&mut s, &flow(Some(1)), true));
        assert!(!blacklist_update(&mut s, &flow(Some(1)), true));
        assert!(!blacklist_update(&mut s, &flow(None), true));
        assert_eq!(s.blacklist.len(), 1);
    }

    struct Fixed {
        classes: Vec<String>,
        probs: Vec<Vec<f64>>,
    }

    impl FlowClassifier for Fixed {
        fn classes(&self) -> &[String] {
            &self.classes
        }

        fn benign_index(&self) -> usize {
            0
        }

        fn predict_proba(&self, _ds: &Dataset) -> Result<Vec<Vec<f64>>> {
            Ok(self.probs.clone())
        }
    }

    fn trace() -> Dataset {
        let labels = vec![0, 1, 1, 0, 1, 1, 0];
        let src = vec![
            Some(1),
            Some(9),
            Some(9),
            Some(2),
            Some(8),
            Some(9),
            Some(1),
        ];
        let n = labels.len();
        let schema =
            FeatureSchema::new(vec!["x".into()], vec![BENIGN.into(), MALICIOUS.into()]).unwrap();
        Dataset::new(schema, vec![vec![0.0; n]], labels, src, vec![None; n]).unwrap()
    }

    fn classes() -> Vec<String> {
        vec![BENIGN.into(), MALICIOUS.into()]
    }

    #[test]
    fn perfect_classifier_blocks_after_first_sight() {
        let t = trace();
        let probs = t
            .labels()
            .iter()
            .map(|&l| {
                if l == 0 {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 1.0]
                }
            })
            .collect();
        let m = Fixed {
            classes: classes(),
            probs,
        };
        let mut s = GateState::new(0.5, None, None).unwrap();
        let r = run_gate_sim(&t, &m, &mut s).unwrap();
        assert_eq!(r.benign_pass_rate(), Some(1.0));
        assert_eq!(r.malicious_allowed, 0);
        assert_eq!(r.reasons[&GateReason::BelowThreshold], 2);
        assert_eq!(r.reasons[&GateReason::Blacklisted], 2);
        assert_eq!(r.allowed() + r.blocked(), t.len());
    }

    #[test]
    fn undecided_classifier_below_threshold() {
        let t = trace();
        let m = Fixed {
            classes: classes(),
            probs: vec![vec![0.5, 0.5]; t.len()],
        };
        let mut s = GateState::new(0.6, None, None).unwrap();
        let r = run_gate_sim(&t, &m, &mut s).unwrap();
        assert_eq!(r.reasons.get(&GateReason::BelowThreshold), Some(&t.len()));
        let mut buf = Vec::new();
        r.write_reasons_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .contains("below_threshold,block,7"));
    }

    #[test]
    fn invalid_threshold_rejected() {
        assert!(GateState::new(1.5, None, None).is_err());
    }
}
