//! In-memory dataset and the little-endian `RFDS` file format.
//!
//! Layout: magic `RFDS`, u16 version (1), u16 factor count N, u32 signal count,
//! u32 length L, N × u16 class counts, then per signal N × u16 labels followed
//! by 2·L f32 samples interleaved as I, Q.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const N_FACTORS: usize = 3;
pub const FACTOR_NAMES: [&str; N_FACTORS] = ["snr", "mod", "rff"];

const MAGIC: &[u8; 4] = b"RFDS";
const VERSION: u16 = 1;

/// Fixed-length complex baseband signal.
#[derive(Clone, Debug, PartialEq)]
pub struct IqSignal {
    pub samples: Vec<Complex64>,
}

impl IqSignal {
    pub fn new(samples: Vec<Complex64>) -> Self {
        IqSignal { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Planar `[I_0..I_{L-1}, Q_0..Q_{L-1}]`, the model's 2×L input layout.
    pub fn to_planar(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|v| v.re)
            .chain(self.samples.iter().map(|v| v.im))
            .collect()
    }

    pub fn from_planar(data: &[f64]) -> Self {
        let len = data.len() / 2;
        IqSignal {
            samples: (0..len).map(|n| Complex64::new(data[n], data[len + n])).collect(),
        }
    }

    pub fn power(&self) -> f64 {
        super::impairments::mean_power(&self.samples)
    }
}

/// Ground-truth factor classes of one signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FactorLabels {
    pub snr_class: usize,
    pub mod_class: usize,
    pub tx_class: usize,
}

impl FactorLabels {
    pub fn as_array(&self) -> [usize; N_FACTORS] {
        [self.snr_class, self.mod_class, self.tx_class]
    }

    pub fn from_array(a: [usize; N_FACTORS]) -> Self {
        FactorLabels {
            snr_class: a[0],
            mod_class: a[1],
            tx_class: a[2],
        }
    }

    pub fn get(&self, factor: usize) -> usize {
        self.as_array()[factor]
    }

    pub fn with(&self, factor: usize, class: usize) -> Self {
        let mut a = self.as_array();
        a[factor] = class;
        Self::from_array(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub length: usize,
    pub cardinalities: [usize; N_FACTORS],
    pub signals: Vec<IqSignal>,
    pub labels: Vec<FactorLabels>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.signals.len() != self.labels.len() {
            return Err(Error::Data("signal/label count mismatch".into()));
        }
        if self.signals.len() > u32::MAX as usize || self.length > u32::MAX as usize {
            return Err(Error::Data("dataset too large for the RFDS format".into()));
        }
        for (i, (s, l)) in self.signals.iter().zip(&self.labels).enumerate() {
            if s.len() != self.length {
                return Err(Error::Data(format!("signal {i} has length {} != {}", s.len(), self.length)));
            }
            for (f, (&c, &k)) in l.as_array().iter().zip(&self.cardinalities).enumerate() {
                if c >= k {
                    return Err(Error::Data(format!("signal {i}: {} label {c} >= {k}", FACTOR_NAMES[f])));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        if self.cardinalities.iter().any(|&k| k == 0 || k > u16::MAX as usize) {
            return Err(Error::Data("class counts must fit in u16".into()));
        }
        let mut out = Vec::with_capacity(20 + self.len() * (6 + 8 * self.length));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(N_FACTORS as u16).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.length as u32).to_le_bytes());
        for &k in &self.cardinalities {
            out.extend_from_slice(&(k as u16).to_le_bytes());
        }
        for (s, l) in self.signals.iter().zip(&self.labels) {
            for c in l.as_array() {
                out.extend_from_slice(&(c as u16).to_le_bytes());
            }
            for v in &s.samples {
                out.extend_from_slice(&(v.re as f32).to_le_bytes());
                out.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Data("bad magic, expected RFDS".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported RFDS version {version}")));
        }
        let n = r.u16()? as usize;
        if n != N_FACTORS {
            return Err(Error::Data(format!("expected {N_FACTORS} factors, file has {n}")));
        }
        let count = r.u32()? as usize;
        let length = r.u32()? as usize;
        let mut cardinalities = [0usize; N_FACTORS];
        for k in cardinalities.iter_mut() {
            *k = r.u16()? as usize;
        }
        let record = 2 * N_FACTORS + 8 * length;
        if bytes.len() - r.pos != count * record {
            return Err(Error::Data(format!(
                "payload is {} bytes, header promises {count} records of {record}",
                bytes.len() - r.pos
            )));
        }
        let mut signals = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let mut l = [0usize; N_FACTORS];
            for c in l.iter_mut() {
                *c = r.u16()? as usize;
            }
            labels.push(FactorLabels::from_array(l));
            let samples = (0..length)
                .map(|_| Ok(Complex64::new(r.f32()? as f64, r.f32()? as f64)))
                .collect::<Result<Vec<_>>>()?;
            signals.push(IqSignal { samples });
        }
        let ds = Dataset {
            length,
            cardinalities,
            signals,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Rows `rows` in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            length: self.length,
            cardinalities: self.cardinalities,
            signals: rows.iter().map(|&i| self.signals[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Indices of signals whose `factor` label equals `class`.
    pub fn indices_with(&self, factor: usize, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.get(factor) == class)
            .map(|(i, _)| i)
            .collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Data("unexpected end of file".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
