use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    /// Axis indexed by input features, if any. Components along this axis
    /// beyond the active dimensionality are likelihood-flat.
    pub feature_axis: Option<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ThetaLayout {
    entries: Vec<LayoutEntry>,
}

impl ThetaLayout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder { entries: Vec::new(), offset: 0 }
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(LayoutEntry::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Marks the components that touch only the first `d_active` features.
    pub fn active_mask(&self, d_active: usize) -> Vec<bool> {
        let mut mask = vec![true; self.len()];
        for e in &self.entries {
            let Some(axis) = e.feature_axis else { continue };
            for (flat, m) in mask[e.offset..e.offset + e.len()].iter_mut().enumerate() {
                if unravel(flat, &e.shape)[axis] >= d_active {
                    *m = false;
                }
            }
        }
        mask
    }

    /// Zero-pads `theta` laid out by `low` into this (wider) layout. Entry
    /// names and non-feature axes must agree.
    pub fn embed_from(&self, low: &ThetaLayout, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != low.len() {
            return Err(Error::DimensionMismatch { expected: low.len(), got: theta.len() });
        }
        let mut out = vec![0.0; self.len()];
        for le in &low.entries {
            let he = self.get(&le.name).ok_or_else(|| {
                Error::InvalidSpec(format!("layout entry `{}` missing in target", le.name))
            })?;
            if he.shape.len() != le.shape.len() || he.feature_axis != le.feature_axis {
                return Err(Error::InvalidSpec(format!("entry `{}` has incompatible shape", le.name)));
            }
            for (a, (hs, ls)) in he.shape.iter().zip(&le.shape).enumerate() {
                let ok = if Some(a) == he.feature_axis { hs >= ls } else { hs == ls };
                if !ok {
                    return Err(Error::InvalidSpec(format!(
                        "entry `{}` axis {a}: {ls} does not embed into {hs}",
                        le.name
                    )));
                }
            }
            for flat in 0..le.len() {
                let idx = unravel(flat, &le.shape);
                out[he.offset + ravel(&idx, &he.shape)] = theta[le.offset + flat];
            }
        }
        Ok(out)
    }
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for a in (0..shape.len()).rev() {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
    idx
}

fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (i, s)| acc * s + i)
}

pub struct LayoutBuilder {
    entries: Vec<LayoutEntry>,
    offset: usize,
}

impl LayoutBuilder {
    pub fn push(mut self, name: impl Into<String>, shape: &[usize], feature_axis: Option<usize>) -> Self {
        let name = name.into();
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate layout name {name}");
        let entry = LayoutEntry { name, offset: self.offset, shape: shape.to_vec(), feature_axis };
        self.offset += entry.len();
        self.entries.push(entry);
        self
    }

    pub fn build(self) -> ThetaLayout {
        ThetaLayout { entries: self.entries }
    }
}

/// A flat parameter vector together with its named layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub values: Vec<f64>,
    pub layout: ThetaLayout,
}

impl ThetaVector {
    pub fn new(values: Vec<f64>, layout: ThetaLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch { expected: layout.len(), got: values.len() });
        }
        Ok(Self { values, layout })
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|e| &self.values[e.offset..e.offset + e.len()])
    }
}

impl AsRef<[f64]> for ThetaVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents_sum_to_length() {
        let l = ThetaLayout::builder().push("W", &[2, 3], Some(1)).push("b", &[2], None).build();
        assert_eq!(l.len(), 8);
        assert_eq!(l.get("b").unwrap().offset, 6);
    }

    #[test]
    fn embed_pads_feature_axis() {
        let low = ThetaLayout::builder().push("W", &[2, 1], Some(1)).push("b", &[2], None).build();
        let high = ThetaLayout::builder().push("W", &[2, 3], Some(1)).push("b", &[2], None).build();
        let out = high.embed_from(&low, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 3.0, 4.0]);
        let mask = high.active_mask(1);
        assert_eq!(mask, vec![true, false, false, true, false, false, true, true]);
    }
}
