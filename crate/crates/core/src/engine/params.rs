use indexmap::IndexMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named collection of tensors in a fixed insertion order.
///
/// Used both for model parameters and for gradients with matching layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::contract("param_set", format!("no parameter named {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn total_count(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.map(|t| Tensor::zeros(t.shape()))
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), f(v)))
                .collect(),
        }
    }

    /// Combines two sets with identical names and shapes entrywise.
    pub fn zip_map(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<ParamSet> {
        self.check_layout(other)?;
        let mut out = IndexMap::with_capacity(self.entries.len());
        for ((k, a), b) in self.entries.iter().zip(other.entries.values()) {
            out.insert(k.clone(), a.zip_map(b, &f)?);
        }
        Ok(ParamSet { entries: out })
    }

    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        let same = self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, a), (kb, b))| ka == kb && a.shape() == b.shape());
        if same {
            Ok(())
        } else {
            Err(Error::contract("param_set", "parameter layouts differ"))
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .map(Tensor::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, c: f64) -> ParamSet {
        self.map(|t| t.map(|x| x * c))
    }

    /// `self + c * other`
    pub fn add_scaled(&self, other: &ParamSet, c: f64) -> Result<ParamSet> {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }

    /// Flattened values in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Rebuilds a set with this layout from flattened values.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.total_count() {
            return Err(Error::contract(
                "param_set",
                format!("expected {} values, got {}", self.total_count(), flat.len()),
            ));
        }
        let mut offset = 0;
        let mut out = IndexMap::with_capacity(self.entries.len());
        for (k, t) in &self.entries {
            let n = t.numel();
            out.insert(
                k.clone(),
                Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec())?,
            );
            offset += n;
        }
        Ok(ParamSet { entries: out })
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            entries: iter.into_iter().collect(),
        }
    }
}
