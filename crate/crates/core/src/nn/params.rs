use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mat::Mat;

/// Handle of a registered parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter arrays in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, usize>,
}

/// Serialized form of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    /// Gaussian init with the given standard deviation.
    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        self.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.values
            .iter()
            .map(|m| Mat::zeros(m.rows, m.cols))
            .collect()
    }

    pub fn to_named(&self) -> Vec<NamedArray> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, m)| NamedArray {
                name: n.clone(),
                rows: m.rows,
                cols: m.cols,
                data: m.data.clone(),
            })
            .collect()
    }

    /// Overwrites every parameter from `arrays`, which must list exactly the
    /// registered names with matching shapes.
    pub fn load_named(&mut self, arrays: &[NamedArray]) -> Result<(), String> {
        if arrays.len() != self.values.len() {
            return Err(format!(
                "expected {} parameter arrays, found {}",
                self.values.len(),
                arrays.len()
            ));
        }
        for a in arrays {
            let id = self
                .id(&a.name)
                .ok_or_else(|| format!("unexpected parameter {}", a.name))?;
            let m = &mut self.values[id.0];
            if (m.rows, m.cols) != (a.rows, a.cols) || a.data.len() != a.rows * a.cols {
                return Err(format!(
                    "parameter {} has shape {}x{}, expected {}x{}",
                    a.name, a.rows, a.cols, m.rows, m.cols
                ));
            }
            m.data.clone_from(&a.data);
        }
        Ok(())
    }
}
