//! Disentanglement metric suite.
//!
//! Scores follow the usual definitions from the disentanglement literature,
//! computed from a [`ReprDataset`]. Every score is deterministic given
//! [`MetricConfig::seed`], and degenerate inputs (constant codes) produce a
//! documented fallback instead of an error.

mod linear;
mod mi;
mod repr;
mod scores;

#[cfg(test)]
mod tests;

use std::fmt::Write as _;
use std::path::Path;

pub use linear::{roc_auc, LogisticRegression, Standardizer};
pub use mi::{discretize, entropy, factor_entropies, joint_entropy, mi_matrix, mutual_info};
pub use repr::ReprDataset;
pub use scores::{apa, dcimig, dcimig_of, explicitness, irs, jemmig, modularity, sap, split, z_diff, z_max, z_min};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricConfig {
    pub bins: usize,
    pub votes: usize,
    pub pairs: usize,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            bins: 20,
            votes: 800,
            pairs: 64,
            train_frac: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub z_diff: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub modularity: f64,
    pub irs: f64,
    pub dcimig: f64,
    pub jemmig: f64,
    pub sap: f64,
    pub explicitness: f64,
    pub apa: Vec<f64>,
}

const REPORT_HEADER: &str = "metric,value";
const REPORT_VERSION: &str = "version,1";

impl MetricReport {
    pub fn apa_mean(&self) -> f64 {
        self.apa.iter().sum::<f64>() / self.apa.len() as f64
    }

    fn rows(&self) -> Vec<(String, f64)> {
        let mut rows: Vec<(String, f64)> = [
            ("z_diff", self.z_diff),
            ("z_min", self.z_min),
            ("z_max", self.z_max),
            ("modularity", self.modularity),
            ("irs", self.irs),
            ("dcimig", self.dcimig),
            ("jemmig", self.jemmig),
            ("sap", self.sap),
            ("explicitness", self.explicitness),
            ("apa", self.apa_mean()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        rows.extend(self.apa.iter().enumerate().map(|(f, &v)| (format!("apa_f{f}"), v)));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n{REPORT_VERSION}\n");
        for (k, v) in self.rows() {
            writeln!(s, "{k},{v:?}").unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("metric report: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) || lines.next() != Some(REPORT_VERSION) {
            return Err(bad("unexpected header"));
        }
        let mut map = std::collections::BTreeMap::new();
        for line in lines {
            let (k, v) = line.split_once(',').ok_or_else(|| bad("malformed row"))?;
            map.insert(k.to_string(), v.parse::<f64>().map_err(|_| bad("bad value"))?);
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| bad(&format!("missing `{k}`")));
        let apa: Vec<f64> = (0..).map_while(|f| map.get(&format!("apa_f{f}")).copied()).collect();
        Ok(MetricReport {
            z_diff: get("z_diff")?,
            z_min: get("z_min")?,
            z_max: get("z_max")?,
            modularity: get("modularity")?,
            irs: get("irs")?,
            dcimig: get("dcimig")?,
            jemmig: get("jemmig")?,
            sap: get("sap")?,
            explicitness: get("explicitness")?,
            apa,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write_str(path, &self.to_csv())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn is_finite(&self) -> bool {
        self.rows().iter().all(|(_, v)| v.is_finite())
    }
}

/// Computes the whole suite.
pub fn evaluate(r: &ReprDataset, cfg: &MetricConfig) -> Result<MetricReport> {
    r.validate()?;
    if r.len() < 4 {
        return Err(Error::Data("at least four representations are needed".into()));
    }
    let mi = mi_matrix(r, cfg.bins);
    let h = factor_entropies(r);
    Ok(MetricReport {
        z_diff: z_diff(r, cfg.votes, cfg.pairs, cfg.seed),
        z_min: z_min(r, cfg.votes, cfg.pairs, cfg.seed),
        z_max: z_max(r, cfg.votes, cfg.pairs, cfg.seed),
        modularity: modularity(&mi),
        irs: irs(r),
        dcimig: dcimig(&mi, &h),
        jemmig: jemmig(r, cfg.bins),
        sap: sap(r, cfg.train_frac, cfg.seed),
        explicitness: explicitness(r, cfg.train_frac, cfg.seed),
        apa: apa(r, cfg.train_frac, cfg.seed),
    })
}
