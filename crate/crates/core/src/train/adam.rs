use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ParamStore, Record};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adaptive-moment optimiser state, one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    m: Vec<Tensor<f64>>,
    v: Vec<Tensor<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f64>, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. `grads` are aligned with the store's parameters;
    /// `None` means the parameter received no gradient this step.
    pub fn update(&mut self, params: &mut ParamStore<f64>, grads: &[Option<Tensor<f64>>]) {
        assert_eq!(grads.len(), self.m.len(), "one gradient slot per parameter");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for ((id, g), (m, v)) in ids.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let Some(g) = g else { continue };
            let p = params.get_mut(id).data_mut();
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }

    pub fn to_records(&self, params: &ParamStore<f64>) -> Vec<Record> {
        let mut out = vec![
            Record::new("adam.step", Tensor::scalar(self.step as f64)),
            Record::new("adam.lr", Tensor::scalar(self.lr)),
        ];
        for (i, (name, _)) in params.iter().enumerate() {
            out.push(Record::new(format!("m/{name}"), self.m[i].clone()));
            out.push(Record::new(format!("v/{name}"), self.v[i].clone()));
        }
        out
    }

    pub fn from_records(records: &[Record], params: &ParamStore<f64>) -> Result<Self> {
        let find = |key: &str| {
            records
                .iter()
                .find(|r| r.name == key)
                .map(|r| &r.tensor)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing `{key}`")))
        };
        let step = find("adam.step")?.item();
        if !(step >= 0.0 && step.fract() == 0.0) {
            return Err(Error::Data("bad optimiser step count".into()));
        }
        let lr = find("adam.lr")?.item();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in params.iter() {
            for (prefix, out) in [("m", &mut m), ("v", &mut v)] {
                let rec = find(&format!("{prefix}/{name}"))?;
                if rec.shape() != t.shape() {
                    return Err(Error::Data(format!("optimiser state `{prefix}/{name}` has the wrong shape")));
                }
                out.push(rec.clone());
            }
        }
        Ok(Adam {
            lr,
            step: step as u64,
            m,
            v,
        })
    }
}
