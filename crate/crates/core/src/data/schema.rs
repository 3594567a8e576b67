use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "Label";
pub const SRC_IP: &str = "Src IP";
pub const DST_IP: &str = "Dst IP";
pub const BENIGN: &str = "Benign";
pub const MALICIOUS: &str = "Malicious";

/// The 76 numeric flow columns shared by the 2017 and 2018 CSVs, in file order.
pub const CICIDS_FEATURES: [&str; 76] = [
    "Src IP",
    "Dst IP",
    "Dst Port",
    "Protocol",
    "Flow Duration",
    "Tot Fwd Pkts",
    "Tot Bwd Pkts",
    "TotLen Fwd Pkts",
    "TotLen Bwd Pkts",
    "Fwd Pkt Len Max",
    "Fwd Pkt Len Min",
    "Fwd Pkt Len Mean",
    "Fwd Pkt Len Std",
    "Bwd Pkt Len Max",
    "Bwd Pkt Len Min",
    "Bwd Pkt Len Mean",
    "Bwd Pkt Len Std",
    "Flow IAT Mean",
    "Flow IAT Std",
    "Flow IAT Max",
    "Flow IAT Min",
    "Fwd IAT Tot",
    "Fwd IAT Mean",
    "Fwd IAT Std",
    "Fwd IAT Max",
    "Fwd IAT Min",
    "Bwd IAT Tot",
    "Bwd IAT Mean",
    "Bwd IAT Std",
    "Bwd IAT Max",
    "Bwd IAT Min",
    "Fwd PSH Flags",
    "Bwd PSH Flags",
    "Fwd URG Flags",
    "Bwd URG Flags",
    "Fwd Header Len",
    "Bwd Header Len",
    "Pkt Len Min",
    "Pkt Len Max",
    "Pkt Len Mean",
    "Pkt Len Std",
    "Pkt Len Var",
    "FIN Flag Cnt",
    "SYN Flag Cnt",
    "RST Flag Cnt",
    "PSH Flag Cnt",
    "ACK Flag Cnt",
    "URG Flag Cnt",
    "CWE Flag Count",
    "ECE Flag Cnt",
    "Down/Up Ratio",
    "Pkt Size Avg",
    "Fwd Seg Size Avg",
    "Bwd Seg Size Avg",
    "Fwd Byts/b Avg",
    "Fwd Pkts/b Avg",
    "Fwd Blk Rate Avg",
    "Bwd Byts/b Avg",
    "Bwd Pkts/b Avg",
    "Bwd Blk Rate Avg",
    "Subflow Fwd Pkts",
    "Subflow Fwd Byts",
    "Subflow Bwd Pkts",
    "Subflow Bwd Byts",
    "Init Fwd Win Byts",
    "Init Bwd Win Byts",
    "Fwd Act Data Pkts",
    "Fwd Seg Size Min",
    "Active Mean",
    "Active Std",
    "Active Max",
    "Active Min",
    "Idle Mean",
    "Idle Std",
    "Idle Max",
    "Idle Min",
];

/// Feature-importance ranked subset, most impactful first.
pub const TOP40_FEATURES: [&str; 40] = [
    "Bwd IAT Std",
    "Pkt Len Mean",
    "Fwd IAT Max",
    "Bwd IAT Min",
    "Dst Port",
    "Init Bwd Win Byts",
    "Pkt Size Avg",
    "Pkt Len Max",
    "Idle Mean",
    "Init Fwd Win Byts",
    "Bwd Pkt Len Mean",
    "Bwd Pkt Len Max",
    "Active Min",
    "Idle Max",
    "Flow Duration",
    "Bwd Pkt Len Std",
    "Fwd IAT Std",
    "Bwd IAT Mean",
    "Pkt Len Var",
    "Bwd IAT Max",
    "Fwd Header Len",
    "Pkt Len Std",
    "Fwd Pkt Len Max",
    "TotLen Fwd Pkts",
    "Subflow Fwd Byts",
    "Flow IAT Min",
    "Fwd IAT Mean",
    "Flow IAT Mean",
    "Fwd Seg Size Avg",
    "Fwd IAT Min",
    "Fwd IAT Tot",
    "Bwd Pkt Len Min",
    "Bwd IAT Tot",
    "Flow IAT Max",
    "Bwd Header Len",
    "Subflow Fwd Pkts",
    "Active Std",
    "TotLen Bwd Pkts",
    "Idle Min",
    "Pkt Len Min",
];

pub const CICIDS_CLASSES: [&str; 8] = [
    "Benign",
    "DoS Slowloris",
    "DoS Slowhttptest",
    "DoS Hulk",
    "DoS Goldeneye",
    "DDoS LOIC-HTTP",
    "DDoS LOIC-UDP",
    "DDoS HOIC-HTTP",
];

/// Raw label spellings of both dataset years mapped to the shared class names.
pub const LABEL_ALIASES: [(&str, &str); 13] = [
    ("BENIGN", "Benign"),
    ("DDoS", "DDoS LOIC-HTTP"),
    ("DDoS attacks-LOIC-HTTP", "DDoS LOIC-HTTP"),
    ("DDOS attack-LOIC-UDP", "DDoS LOIC-UDP"),
    ("DDOS attack-HOIC", "DDoS HOIC-HTTP"),
    ("DoS attacks-Slowloris", "DoS Slowloris"),
    ("DoS slowloris", "DoS Slowloris"),
    ("DoS attacks-SlowHTTPTest", "DoS Slowhttptest"),
    ("DoS Slowhttptest", "DoS Slowhttptest"),
    ("DoS attacks-Hulk", "DoS Hulk"),
    ("DoS attacks-GoldenEye", "DoS Goldeneye"),
    ("DoS GoldenEye", "DoS Goldeneye"),
    ("DDoS-LOIC-HTTP", "DDoS LOIC-HTTP"),
];

fn norm(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != '-' && *c != '_')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Column names compare trimmed and case-insensitively.
pub fn column_key(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Ordered numeric features plus the class registry.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    features: Vec<String>,
    label_column: String,
    classes: Vec<String>,
    benign: usize,
}

impl FeatureSchema {
    pub fn new(features: Vec<String>, classes: Vec<String>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("schema needs at least one feature".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &features {
            if !seen.insert(column_key(f)) {
                return Err(Error::Schema(format!("duplicate feature name {f:?}")));
            }
        }
        if classes.len() < 2 {
            return Err(Error::Schema("schema needs at least two classes".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &classes {
            if !seen.insert(norm(c)) {
                return Err(Error::Schema(format!("duplicate class name {c:?}")));
            }
        }
        let benign = classes
            .iter()
            .position(|c| norm(c) == norm(BENIGN))
            .unwrap_or(0);
        Ok(Self {
            features,
            label_column: LABEL_COLUMN.to_string(),
            classes,
            benign,
        })
    }

    /// The 76-feature, 8-class layout of the flow CSVs.
    pub fn cicids() -> Self {
        Self::new(
            CICIDS_FEATURES.iter().map(|s| s.to_string()).collect(),
            CICIDS_CLASSES.iter().map(|s| s.to_string()).collect(),
        )
        .expect("built-in schema is valid")
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn benign_index(&self) -> usize {
        self.benign
    }

    pub fn is_binary(&self) -> bool {
        self.classes.len() == 2
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        let key = column_key(name);
        self.features.iter().position(|f| column_key(f) == key)
    }

    /// Class index for a raw label, after alias harmonization.
    pub fn class_index(&self, raw: &str) -> Option<usize> {
        let key = norm(raw);
        if let Some(i) = self.classes.iter().position(|c| norm(c) == key) {
            return Some(i);
        }
        let key = match LABEL_ALIASES.iter().find(|(a, _)| norm(a) == key) {
            Some((_, canonical)) => norm(canonical),
            None => key,
        };
        if let Some(i) = self.classes.iter().position(|c| norm(c) == key) {
            return Some(i);
        }
        // Binary schemas absorb every known attack class.
        if self.is_binary() && CICIDS_CLASSES.iter().any(|c| norm(c) == key) {
            return Some(1 - self.benign);
        }
        None
    }

    /// Same features, classes collapsed to benign / malicious.
    pub fn binary(&self) -> Self {
        Self::new(
            self.features.clone(),
            vec![BENIGN.to_string(), MALICIOUS.to_string()],
        )
        .expect("binary schema is valid")
    }

    /// Same classes, features replaced.
    pub fn with_features(&self, features: Vec<String>) -> Result<Self> {
        let mut s = Self::new(features, self.classes.clone())?;
        s.label_column = self.label_column.clone();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_tables_are_consistent() {
        let s = FeatureSchema::cicids();
        assert_eq!(s.width(), 76);
        assert_eq!(s.class_count(), 8);
        assert_eq!(s.benign_index(), 0);
        for f in TOP40_FEATURES {
            assert!(s.feature_index(f).is_some(), "{f}");
        }
        let uniq: std::collections::BTreeSet<_> = TOP40_FEATURES.iter().collect();
        assert_eq!(uniq.len(), 40);
    }

    #[test]
    fn label_harmonization() {
        let s = FeatureSchema::cicids();
        assert_eq!(s.class_index("BENIGN"), Some(0));
        assert_eq!(s.class_index("DDoS"), Some(5));
        assert_eq!(s.class_index("DoS attacks-GoldenEye"), Some(4));
        assert_eq!(s.class_index("ddos hoic-http"), Some(7));
        assert_eq!(s.class_index("PortScan"), None);
        let b = s.binary();
        assert_eq!(b.class_index("DoS Hulk"), Some(1));
        assert_eq!(b.class_index("benign"), Some(0));
    }

    #[test]
    fn duplicates_rejected() {
        let r = FeatureSchema::new(vec!["a".into(), "A ".into()], vec!["x".into(), "y".into()]);
        assert!(matches!(r, Err(Error::Schema(_))));
    }
}
