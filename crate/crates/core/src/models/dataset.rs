use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Targets attached to a dataset, padded to the row capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    None,
    Real(Vec<f64>),
    Class(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> Option<usize> {
        match self {
            Targets::None => None,
            Targets::Real(v) => Some(v.len()),
            Targets::Class(v) => Some(v.len()),
        }
    }
}

/// Padded observation matrix with observation and feature masks.
///
/// Entries of `x` (and `y`) outside the active rows/columns are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_max: usize,
    pub d_max: usize,
    /// Row-major `n_max x d_max`.
    pub x: Vec<f64>,
    pub y: Targets,
    pub obs_mask: Vec<bool>,
    pub feat_mask: Vec<bool>,
    pub n_active: usize,
    pub d_active: usize,
}

impl Dataset {
    pub fn new(
        n_max: usize,
        d_max: usize,
        x: Vec<f64>,
        y: Targets,
        obs_mask: Vec<bool>,
        feat_mask: Vec<bool>,
    ) -> Result<Self> {
        let n_active = obs_mask.iter().filter(|m| **m).count();
        let d_active = feat_mask.iter().filter(|m| **m).count();
        let ds = Self { n_max, d_max, x, y, obs_mask, feat_mask, n_active, d_active };
        ds.validate()?;
        Ok(ds)
    }

    /// An empty dataset (all rows inactive) with the first `d_active` features active.
    pub fn empty(n_max: usize, d_max: usize, d_active: usize, y: Targets) -> Self {
        let feat_mask = (0..d_max).map(|j| j < d_active).collect();
        Self {
            n_max,
            d_max,
            x: vec![0.0; n_max * d_max],
            y,
            obs_mask: vec![false; n_max],
            feat_mask,
            n_active: 0,
            d_active,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.n_max * self.d_max {
            return Err(Error::MaskInconsistent(format!(
                "x has {} entries, expected {}x{}",
                self.x.len(),
                self.n_max,
                self.d_max
            )));
        }
        if self.obs_mask.len() != self.n_max || self.feat_mask.len() != self.d_max {
            return Err(Error::MaskInconsistent("mask lengths do not match capacity".into()));
        }
        if self.n_active != self.obs_mask.iter().filter(|m| **m).count()
            || self.d_active != self.feat_mask.iter().filter(|m| **m).count()
        {
            return Err(Error::MaskInconsistent("active counts disagree with masks".into()));
        }
        if let Some(len) = self.y.len() {
            if len != self.n_max {
                return Err(Error::MaskInconsistent(format!(
                    "y has {len} entries, expected {}",
                    self.n_max
                )));
            }
        }
        for i in 0..self.n_max {
            for j in 0..self.d_max {
                let v = self.x[i * self.d_max + j];
                if !(self.obs_mask[i] && self.feat_mask[j]) && v != 0.0 {
                    return Err(Error::MaskInconsistent(format!(
                        "padded entry ({i},{j}) is nonzero"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::MaskInconsistent(format!("entry ({i},{j}) is not finite")));
                }
            }
            match &self.y {
                Targets::Real(y) if !self.obs_mask[i] && y[i] != 0.0 => {
                    return Err(Error::MaskInconsistent(format!("padded target {i} is nonzero")))
                }
                Targets::Class(y) if !self.obs_mask[i] && y[i] != 0 => {
                    return Err(Error::MaskInconsistent(format!("padded target {i} is nonzero")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d_max..(i + 1) * self.d_max]
    }

    pub fn active_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.obs_mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i)
    }

    pub fn active_features(&self) -> Vec<usize> {
        self.feat_mask.iter().enumerate().filter(|(_, m)| **m).map(|(j, _)| j).collect()
    }

    pub fn real_target(&self, i: usize) -> Option<f64> {
        match &self.y {
            Targets::Real(y) => Some(y[i]),
            _ => None,
        }
    }

    pub fn class_target(&self, i: usize) -> Option<usize> {
        match &self.y {
            Targets::Class(y) => Some(y[i]),
            _ => None,
        }
    }

    /// Drops padding: returns an `n_active x d_active` dataset with every entry active.
    pub fn compact(&self) -> Dataset {
        let rows: Vec<usize> = self.active_rows().collect();
        let cols = self.active_features();
        let mut x = Vec::with_capacity(rows.len() * cols.len());
        for &i in &rows {
            for &j in &cols {
                x.push(self.x[i * self.d_max + j]);
            }
        }
        let y = match &self.y {
            Targets::None => Targets::None,
            Targets::Real(v) => Targets::Real(rows.iter().map(|&i| v[i]).collect()),
            Targets::Class(v) => Targets::Class(rows.iter().map(|&i| v[i]).collect()),
        };
        Dataset {
            n_max: rows.len(),
            d_max: cols.len(),
            x,
            y,
            obs_mask: vec![true; rows.len()],
            feat_mask: vec![true; cols.len()],
            n_active: rows.len(),
            d_active: cols.len(),
        }
    }

    /// Reorders rows: row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Dataset {
        assert_eq!(perm.len(), self.n_max);
        let mut out = self.clone();
        for (dst, &src) in perm.iter().enumerate() {
            out.x[dst * self.d_max..(dst + 1) * self.d_max].copy_from_slice(self.row(src));
            out.obs_mask[dst] = self.obs_mask[src];
        }
        out.y = match &self.y {
            Targets::None => Targets::None,
            Targets::Real(v) => Targets::Real(perm.iter().map(|&i| v[i]).collect()),
            Targets::Class(v) => Targets::Class(perm.iter().map(|&i| v[i]).collect()),
        };
        out
    }

    /// Keeps only the listed rows (in the given order), all active.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.d_max);
        for &i in rows {
            x.extend_from_slice(self.row(i));
        }
        let y = match &self.y {
            Targets::None => Targets::None,
            Targets::Real(v) => Targets::Real(rows.iter().map(|&i| v[i]).collect()),
            Targets::Class(v) => Targets::Class(rows.iter().map(|&i| v[i]).collect()),
        };
        let obs_mask: Vec<bool> = rows.iter().map(|&i| self.obs_mask[i]).collect();
        let n_active = obs_mask.iter().filter(|m| **m).count();
        Dataset {
            n_max: rows.len(),
            d_max: self.d_max,
            x,
            y,
            obs_mask,
            feat_mask: self.feat_mask.clone(),
            n_active,
            d_active: self.d_active,
        }
    }

    /// Concatenates the rows of two datasets with identical feature layout.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.d_max != other.d_max || self.feat_mask != other.feat_mask {
            return Err(Error::MaskInconsistent("feature layouts differ".into()));
        }
        let y = match (&self.y, &other.y) {
            (Targets::None, Targets::None) => Targets::None,
            (Targets::Real(a), Targets::Real(b)) => Targets::Real([a.clone(), b.clone()].concat()),
            (Targets::Class(a), Targets::Class(b)) => {
                Targets::Class([a.clone(), b.clone()].concat())
            }
            _ => return Err(Error::MaskInconsistent("target kinds differ".into())),
        };
        Dataset::new(
            self.n_max + other.n_max,
            self.d_max,
            [self.x.clone(), other.x.clone()].concat(),
            y,
            [self.obs_mask.clone(), other.obs_mask.clone()].concat(),
            self.feat_mask.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::new(
            3,
            2,
            vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0],
            Targets::Real(vec![0.5, -0.5, 0.0]),
            vec![true, true, false],
            vec![true, true],
        )
        .unwrap()
    }

    #[test]
    fn counts_follow_masks() {
        let ds = small();
        assert_eq!(ds.n_active, 2);
        assert_eq!(ds.d_active, 2);
    }

    #[test]
    fn nonzero_padding_rejected() {
        let err = Dataset::new(
            2,
            1,
            vec![1.0, 5.0],
            Targets::None,
            vec![true, false],
            vec![true],
        );
        assert!(matches!(err, Err(Error::MaskInconsistent(_))));
    }

    #[test]
    fn compact_drops_padding() {
        let c = small().compact();
        assert_eq!(c.n_max, 2);
        assert_eq!(c.x, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(c.y, Targets::Real(vec![0.5, -0.5]));
    }

    #[test]
    fn permute_moves_rows_and_targets() {
        let p = small().permute_rows(&[1, 0, 2]);
        assert_eq!(p.row(0), &[3.0, 4.0]);
        assert_eq!(p.y, Targets::Real(vec![-0.5, 0.5, 0.0]));
        p.validate().unwrap();
    }
}
