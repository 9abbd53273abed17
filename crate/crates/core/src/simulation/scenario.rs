use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross, norm, sub, KeyPointSet, ManipulatedKeySet, Mesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub point: Vec3,
    pub direction: Vec3,
}

/// Axis-aligned box in mesh coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: Vec3,
    pub max: Vec3,
}

impl Region {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|d| p[d] >= self.min[d] && p[d] <= self.max[d])
    }
}

/// One designer-chosen key deviation; `key_index` is a position in the key set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyDeviation {
    pub key_index: usize,
    pub deviation: f64,
}

/// Designer scenario, shared by the command line and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Scenario {
    Bend {
        axis: Axis,
        max_dev: f64,
    },
    Patch {
        #[serde(rename = "box")]
        region: Region,
        dev: f64,
        #[serde(default)]
        pin_others: bool,
    },
    /// Every key point pinned to zero deviation.
    FormOnly,
    Manual {
        manipulated: Vec<KeyDeviation>,
    },
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self, keys: &KeyPointSet, mesh: &Mesh) -> Result<ManipulatedKeySet> {
        match self {
            Scenario::Bend { axis, max_dev } => scenario_bend(keys, mesh, axis, *max_dev),
            Scenario::Patch {
                region,
                dev,
                pin_others,
            } => scenario_patch(keys, mesh, region, *dev, *pin_others),
            Scenario::FormOnly => Ok(form_only(keys)),
            Scenario::Manual { manipulated } => manual(keys, manipulated),
        }
    }
}

/// Every key deviates in proportion to its distance from `axis`, reaching
/// `max_dev` at the farthest key.
pub fn scenario_bend(keys: &KeyPointSet, mesh: &Mesh, axis: &Axis, max_dev: f64) -> Result<ManipulatedKeySet> {
    keys.validate(mesh)?;
    let len = norm(&axis.direction);
    if !(len > 0.0 && len.is_finite()) {
        return Err(Error::Invalid("bend axis direction must be nonzero".into()));
    }
    if !max_dev.is_finite() {
        return Err(Error::Invalid("max_dev must be finite".into()));
    }
    let dist: Vec<f64> = keys
        .coordinates(mesh)
        .iter()
        .map(|x| norm(&cross(&sub(x, &axis.point), &axis.direction)) / len)
        .collect();
    let d_max = dist.iter().copied().fold(0.0, f64::max);
    if d_max <= 0.0 {
        return Err(Error::DegenerateAxis);
    }
    let deviations = dist.iter().map(|d| max_dev * d / d_max).collect();
    ManipulatedKeySet::new(keys, (0..keys.len()).collect(), deviations)
}

/// Keys inside `region` deviate by `dev`; with `pin_others` every other key is
/// held at zero.
pub fn scenario_patch(keys: &KeyPointSet, mesh: &Mesh, region: &Region, dev: f64, pin_others: bool) -> Result<ManipulatedKeySet> {
    keys.validate(mesh)?;
    if (0..3).any(|d| !(region.min[d] <= region.max[d])) {
        return Err(Error::Invalid("patch box is empty".into()));
    }
    if !dev.is_finite() {
        return Err(Error::Invalid("dev must be finite".into()));
    }
    let coords = keys.coordinates(mesh);
    let inside: Vec<bool> = coords.iter().map(|p| region.contains(p)).collect();
    if !inside.iter().any(|&b| b) {
        return Err(Error::EmptySelection);
    }
    let (mut selected, mut deviations) = (Vec::new(), Vec::new());
    for (k, &inn) in inside.iter().enumerate() {
        if inn || pin_others {
            selected.push(k);
            deviations.push(if inn { dev } else { 0.0 });
        }
    }
    ManipulatedKeySet::new(keys, selected, deviations)
}

/// All keys pinned at zero: pure form error around the nominal.
pub fn form_only(keys: &KeyPointSet) -> ManipulatedKeySet {
    ManipulatedKeySet {
        selected: (0..keys.len()).collect(),
        deviations: vec![0.0; keys.len()],
    }
}

fn manual(keys: &KeyPointSet, entries: &[KeyDeviation]) -> Result<ManipulatedKeySet> {
    let mut sorted = entries.to_vec();
    sorted.sort_by_key(|e| e.key_index);
    ManipulatedKeySet::new(
        keys,
        sorted.iter().map(|e| e.key_index).collect(),
        sorted.iter().map(|e| e.deviation).collect(),
    )
}
