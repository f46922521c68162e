use indexmap::IndexMap;

use super::{NnError, Tensor};

/// Named parameter tensors in fixed insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: IndexMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter; a repeated name is an error.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), NnError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(NnError::DuplicateParameter(name));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, NnError> {
        self.entries
            .get(name)
            .ok_or_else(|| NnError::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
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

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Concatenates all values in insertion order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for t in self.entries.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten), using `self` as the layout.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self, NnError> {
        if flat.len() != self.numel() {
            return Err(NnError::ShapeMismatch(format!(
                "unflatten: layout holds {} values, got {}",
                self.numel(),
                flat.len()
            )));
        }
        let mut entries = IndexMap::with_capacity(self.entries.len());
        let mut at = 0;
        for (k, v) in &self.entries {
            let n = v.len();
            let t = Tensor::new(v.shape().to_vec(), flat[at..at + n].to_vec())?;
            entries.insert(k.clone(), t);
            at += n;
        }
        Ok(Self { entries })
    }

    /// Errors unless `other` has exactly the same names, order and shapes.
    pub fn check_same_layout(&self, other: &Self, context: &str) -> Result<(), NnError> {
        if self.entries.len() != other.entries.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{context}: {} parameters vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.entries.iter().zip(other.entries.iter()) {
            if ka != kb {
                return Err(NnError::ShapeMismatch(format!(
                    "{context}: parameter `{ka}` vs `{kb}`"
                )));
            }
            if va.shape() != vb.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "{context}: `{ka}` has shape {:?} vs {:?}",
                    va.shape(),
                    vb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Euclidean norm over every scalar parameter.
    pub fn l2_norm(&self) -> f64 {
        self.entries.values().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    /// Keeps entries whose name starts with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }
}

/// Polyak averaging: `target ← (1 − tau)·target + tau·source`, in place.
pub fn soft_update(target: &mut ParameterSet, source: &ParameterSet, tau: f64) -> Result<(), NnError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NnError::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    target.check_same_layout(source, "soft_update")?;
    for ((_, t), (_, s)) in target.entries.iter_mut().zip(source.entries.iter()) {
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = (1.0 - tau) * *a + tau * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_set(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn soft_update_endpoints() {
        let src = scalar_set(0.0);
        let mut t = scalar_set(10.0);
        soft_update(&mut t, &src, 0.0).unwrap();
        assert_eq!(t.get("w").unwrap().data()[0], 10.0);
        soft_update(&mut t, &src, 1.0).unwrap();
        assert_eq!(t.get("w").unwrap().data()[0], 0.0);
    }

    #[test]
    fn soft_update_small_tau() {
        let src = scalar_set(0.0);
        let mut t = scalar_set(10.0);
        soft_update(&mut t, &src, 0.005).unwrap();
        // 0.995 * 10
        assert!((t.get("w").unwrap().data()[0] - 9.95).abs() < 1e-12);
    }

    #[test]
    fn soft_update_rejects_mismatch() {
        let mut t = scalar_set(1.0);
        let mut other = ParameterSet::new();
        other.insert("v", Tensor::scalar(1.0)).unwrap();
        assert!(soft_update(&mut t, &other, 0.5).is_err());
        let mut other = ParameterSet::new();
        other.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(soft_update(&mut t, &other, 0.5).is_err());
        assert!(soft_update(&mut t, &scalar_set(0.0), 1.5).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = scalar_set(1.0);
        assert!(matches!(
            p.insert("w", Tensor::scalar(2.0)),
            Err(NnError::DuplicateParameter(_))
        ));
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(
            a in proptest::collection::vec(-1e6f64..1e6, 6),
            b in proptest::collection::vec(-1e6f64..1e6, 3),
        ) {
            let mut p = ParameterSet::new();
            p.insert("a", Tensor::new(vec![2, 3], a).unwrap()).unwrap();
            p.insert("b", Tensor::new(vec![3], b).unwrap()).unwrap();
            let flat = p.flatten();
            let back = p.unflatten(&flat).unwrap();
            prop_assert_eq!(&back, &p);
            let bits: Vec<u64> = back.flatten().iter().map(|v| v.to_bits()).collect();
            let orig: Vec<u64> = flat.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, orig);
        }
    }
}
