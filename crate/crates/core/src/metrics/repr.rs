use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const HEADER: &str = "# rfdisent representations v1";

/// Code matrix with ground-truth factor labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprDataset {
    /// `M` rows of width `D`.
    pub codes: Vec<Vec<f64>>,
    /// `M` rows of `N` labels.
    pub factors: Vec<Vec<usize>>,
    pub cardinalities: Vec<usize>,
}

impl ReprDataset {
    pub fn new(codes: Vec<Vec<f64>>, factors: Vec<Vec<usize>>, cardinalities: Vec<usize>) -> Result<Self> {
        let r = ReprDataset {
            codes,
            factors,
            cardinalities,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }

    pub fn n_factors(&self) -> usize {
        self.cardinalities.len()
    }

    /// Label column of factor `f`.
    pub fn labels(&self, f: usize) -> Vec<usize> {
        self.factors.iter().map(|r| r[f]).collect()
    }

    /// Column `j` of the code matrix.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.codes.iter().map(|r| r[j]).collect()
    }

    /// Same rows with code dimensions reordered: new column `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        ReprDataset {
            codes: self.codes.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect(),
            factors: self.factors.clone(),
            cardinalities: self.cardinalities.clone(),
        }
    }

    /// Row subset.
    pub fn select(&self, rows: &[usize]) -> Self {
        ReprDataset {
            codes: rows.iter().map(|&i| self.codes[i].clone()).collect(),
            factors: rows.iter().map(|&i| self.factors[i].clone()).collect(),
            cardinalities: self.cardinalities.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.codes.is_empty() {
            return Err(Error::Data("representation set is empty".into()));
        }
        if self.codes.len() != self.factors.len() {
            return Err(Error::Data("code/label row count mismatch".into()));
        }
        if self.cardinalities.is_empty() || self.cardinalities.contains(&0) {
            return Err(Error::Data("factor cardinalities must be positive".into()));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::Data("codes have no columns".into()));
        }
        for (i, (c, f)) in self.codes.iter().zip(&self.factors).enumerate() {
            if c.len() != d {
                return Err(Error::Data(format!("row {i} has {} columns, expected {d}", c.len())));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {i} holds a non-finite code")));
            }
            if f.len() != self.n_factors() || f.iter().zip(&self.cardinalities).any(|(&l, &k)| l >= k) {
                return Err(Error::Data(format!("row {i} has invalid factor labels")));
            }
        }
        Ok(())
    }

    /// True when there are fewer than `10·max K` rows, below which the
    /// estimators get unreliable.
    pub fn is_small(&self) -> bool {
        self.len() < 10 * self.cardinalities.iter().max().copied().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let ks: Vec<String> = self.cardinalities.iter().map(|k| k.to_string()).collect();
        writeln!(s, "{HEADER}").unwrap();
        writeln!(s, "# cardinalities={}", ks.join(";")).unwrap();
        let mut cols: Vec<String> = (0..self.n_factors()).map(|f| format!("f{f}")).collect();
        cols.extend((0..self.dim()).map(|j| format!("z{j}")));
        writeln!(s, "{}", cols.join(",")).unwrap();
        for (c, f) in self.codes.iter().zip(&self.factors) {
            let mut row: Vec<String> = f.iter().map(|v| v.to_string()).collect();
            // `{:?}` prints the shortest string that parses back to the same bits
            row.extend(c.iter().map(|v| format!("{v:?}")));
            writeln!(s, "{}", row.join(",")).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Data(format!("representation file: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing version header".into()));
        }
        let card_line = lines.next().unwrap_or("");
        let ks = card_line
            .strip_prefix("# cardinalities=")
            .ok_or_else(|| bad("missing cardinalities".into()))?;
        let cardinalities = ks
            .split(';')
            .map(|k| k.parse::<usize>().map_err(|_| bad(format!("bad cardinality `{k}`"))))
            .collect::<Result<Vec<_>>>()?;
        let n = cardinalities.len();
        let columns = lines.next().ok_or_else(|| bad("missing column row".into()))?.split(',').count();
        if columns <= n {
            return Err(bad("no code columns".into()));
        }
        let mut codes = Vec::new();
        let mut factors = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != columns {
                return Err(bad(format!("row {i} has {} cells, expected {columns}", cells.len())));
            }
            factors.push(
                cells[..n]
                    .iter()
                    .map(|c| c.parse().map_err(|_| bad(format!("row {i}: bad label `{c}`"))))
                    .collect::<Result<Vec<usize>>>()?,
            );
            codes.push(
                cells[n..]
                    .iter()
                    .map(|c| c.parse().map_err(|_| bad(format!("row {i}: bad value `{c}`"))))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        Self::new(codes, factors, cardinalities)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write_str(path, &self.to_csv())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}
