use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::geometry::{CameraModel, EquirectPanorama};
use crate::imaging::{write_ppm, SegMask};
use crate::rng::{mix_seed, SeqRng};
use crate::world::{gen_scene, render_equirect, Condition, ConditionKind, Moment, SceneSpec};

pub const MANIFEST_VERSION: &str = "pano-orient-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const N_BINS: usize = 8;
pub const PANO_HEIGHT: usize = 128;
pub const SLICE_HFOV: f64 = 90.0;
/// Horizontal field of view of a 27 mm-equivalent phone camera in landscape.
pub const USER_HFOV: f64 = 67.4;
/// Street captures are aligned to the standard directions up to this error.
pub const STREET_HEADING_JITTER_DEG: f64 = 3.0;
/// Users hold the phone anywhere within this many degrees of a bin center.
pub const USER_HEADING_JITTER_DEG: f64 = 10.0;
pub const MIN_LOCATIONS: usize = 10;

const SCENE_TAG: u64 = 0x5343_454E;
const MOMENT_TAG: u64 = 0x4D4F_4D54;
const SPLIT_TAG: u64 = 0x5350_4C54;
const HEADING_TAG: u64 = 0x4845_4144;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationEntry {
    pub location_id: usize,
    pub scene_seed: u64,
    pub split: Split,
    /// `moments[0]` is the reference moment the contexts come from.
    pub moments: Vec<u64>,
    pub conditions: Vec<ConditionKind>,
    /// Test locations only: one street-slice target heading per bin.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub street_headings: Vec<f64>,
    /// Test locations only: one user-view heading per bin, shared by all conditions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub user_headings: Vec<f64>,
}

impl LocationEntry {
    pub fn reference_moment(&self) -> u64 {
        self.moments[0]
    }

    pub fn other_moment(&self) -> u64 {
        self.moments[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub seed: u64,
    pub n_bins: usize,
    pub pano_height: usize,
    pub slice_hfov: f64,
    pub user_hfov: f64,
    pub street_heading_jitter_deg: f64,
    pub user_heading_jitter_deg: f64,
    pub locations: Vec<LocationEntry>,
}

impl DatasetManifest {
    /// Deterministic manifest for `n_locations` scenes; every tenth location
    /// (rounded) goes to the test split.
    pub fn generate(n_locations: usize, seed: u64) -> Result<Self> {
        if n_locations < MIN_LOCATIONS {
            return arg(format!(
                "need at least {MIN_LOCATIONS} locations, got {n_locations}"
            ));
        }
        let n_test = (n_locations as f64 / 10.0).round() as usize;
        let mut order: Vec<usize> = (0..n_locations).collect();
        let mut rng = SeqRng::new(mix_seed(&[seed, SPLIT_TAG]));
        for i in (1..n_locations).rev() {
            let j = rng.int_inclusive(0, i);
            order.swap(i, j);
        }
        let mut is_test = vec![false; n_locations];
        for &i in &order[..n_test] {
            is_test[i] = true;
        }
        let locations = (0..n_locations)
            .map(|id| {
                let split = if is_test[id] {
                    Split::Test
                } else {
                    Split::Train
                };
                let mut hr = SeqRng::new(mix_seed(&[seed, HEADING_TAG, id as u64]));
                let mut headings = |jitter: f64| -> Vec<f64> {
                    if split == Split::Train {
                        return Vec::new();
                    }
                    (0..N_BINS)
                        .map(|k| {
                            let center = k as f64 * 360.0 / N_BINS as f64;
                            (center + hr.range(-jitter, jitter)).rem_euclid(360.0)
                        })
                        .collect()
                };
                let street_headings = headings(STREET_HEADING_JITTER_DEG);
                let user_headings = headings(USER_HEADING_JITTER_DEG);
                LocationEntry {
                    location_id: id,
                    scene_seed: mix_seed(&[seed, SCENE_TAG, id as u64]),
                    split,
                    moments: (0..2)
                        .map(|j| mix_seed(&[seed, MOMENT_TAG, id as u64, j]))
                        .collect(),
                    conditions: match split {
                        Split::Train => vec![ConditionKind::ClearDay],
                        Split::Test => ConditionKind::ALL.to_vec(),
                    },
                    street_headings,
                    user_headings,
                }
            })
            .collect();
        Ok(Self {
            version: MANIFEST_VERSION.to_string(),
            seed,
            n_bins: N_BINS,
            pano_height: PANO_HEIGHT,
            slice_hfov: SLICE_HFOV,
            user_hfov: USER_HFOV,
            street_heading_jitter_deg: STREET_HEADING_JITTER_DEG,
            user_heading_jitter_deg: USER_HEADING_JITTER_DEG,
            locations,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version '{}'",
                m.version
            )));
        }
        if m.locations.iter().any(|l| l.moments.len() < 2) {
            return Err(Error::Format(
                "every location needs at least two moments".into(),
            ));
        }
        Ok(m)
    }

    pub fn location(&self, id: usize) -> Result<&LocationEntry> {
        self.locations
            .iter()
            .find(|l| l.location_id == id)
            .ok_or_else(|| Error::NotFound(format!("location {id} is not in the manifest")))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LocationEntry> {
        self.locations.iter().filter(move |l| l.split == split)
    }

    pub fn slice_camera(&self, size: usize) -> Result<CameraModel> {
        CameraModel::new(self.slice_hfov, size, size)
    }

    pub fn user_camera(&self, size: usize) -> Result<CameraModel> {
        CameraModel::new(self.user_hfov, size, size)
    }
}

/// A location with its scene and rendered clear-day panoramas, one per moment.
#[derive(Clone, Debug)]
pub struct LocationData {
    pub entry: LocationEntry,
    pub scene: SceneSpec,
    pub moments: Vec<Moment>,
    pub panoramas: Vec<EquirectPanorama>,
    pub masks: Vec<SegMask>,
}

impl LocationData {
    pub fn render(entry: &LocationEntry, pano_height: usize) -> Result<Self> {
        let scene = gen_scene(entry.scene_seed)?;
        let moments: Vec<Moment> = entry
            .moments
            .iter()
            .map(|&s| Moment::with_occluders(s))
            .collect();
        let mut panoramas = Vec::new();
        let mut masks = Vec::new();
        for m in &moments {
            let (p, mask) = render_equirect(&scene, &Condition::clear_day(), m, pano_height)?;
            panoramas.push(p);
            masks.push(mask);
        }
        Ok(Self {
            entry: entry.clone(),
            scene,
            moments,
            panoramas,
            masks,
        })
    }

    pub fn moment(&self, seed: u64) -> Result<(&Moment, &EquirectPanorama)> {
        let i = self
            .entry
            .moments
            .iter()
            .position(|&m| m == seed)
            .ok_or_else(|| {
                Error::NotFound(format!(
                    "moment {seed} at location {}",
                    self.entry.location_id
                ))
            })?;
        Ok((&self.moments[i], &self.panoramas[i]))
    }
}

/// Manifest plus every location rendered in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub locations: Vec<LocationData>,
}

impl Dataset {
    pub fn from_manifest(manifest: DatasetManifest) -> Result<Self> {
        let locations = manifest
            .locations
            .par_iter()
            .map(|e| LocationData::render(e, manifest.pano_height))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest,
            locations,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_manifest(DatasetManifest::read(dir)?)
    }

    pub fn location(&self, id: usize) -> Result<&LocationData> {
        self.locations
            .iter()
            .find(|l| l.entry.location_id == id)
            .ok_or_else(|| Error::NotFound(format!("location {id} is not in the dataset")))
    }
}

/// Writes `manifest.json` plus each location's clear-day panoramas
/// (`panos/loc{id}_m{j}.ppm`) and road masks (`..._mask.pgm`).
pub fn build_dataset(n_locations: usize, seed: u64, out_dir: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::generate(n_locations, seed)?;
    let dataset = Dataset::from_manifest(manifest)?;
    let pano_dir = out_dir.join("panos");
    fs::create_dir_all(&pano_dir)?;
    for loc in &dataset.locations {
        for (j, (p, m)) in loc.panoramas.iter().zip(&loc.masks).enumerate() {
            let stem = format!("loc{:04}_m{j}", loc.entry.location_id);
            write_ppm(pano_dir.join(format!("{stem}.ppm")), p.image())?;
            fs::write(pano_dir.join(format!("{stem}_mask.pgm")), m.encode_pgm())?;
        }
    }
    fs::write(out_dir.join(MANIFEST_FILE), dataset.manifest.to_json()?)?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_nine_to_one() {
        let m = DatasetManifest::generate(100, 5).unwrap();
        assert_eq!(m.split(Split::Test).count(), 10);
        assert_eq!(m.split(Split::Train).count(), 90);
        let m = DatasetManifest::generate(256, 5).unwrap();
        assert_eq!(m.split(Split::Test).count(), 26);
        assert!(DatasetManifest::generate(9, 5).is_err());
    }

    #[test]
    fn test_headings_fall_in_their_bins() {
        let m = DatasetManifest::generate(40, 2).unwrap();
        for loc in m.split(Split::Test) {
            assert_eq!(loc.street_headings.len(), N_BINS);
            assert_eq!(loc.user_headings.len(), N_BINS);
            for hs in [&loc.street_headings, &loc.user_headings] {
                for (k, &h) in hs.iter().enumerate() {
                    assert_eq!(crate::geometry::azimuth_to_label(h, N_BINS).unwrap().0, k);
                }
            }
            assert_eq!(loc.conditions.len(), 3);
        }
        for loc in m.split(Split::Train) {
            assert!(loc.street_headings.is_empty() && loc.user_headings.is_empty());
            assert_eq!(loc.moments.len(), 2);
        }
    }

    #[test]
    fn manifest_is_deterministic_and_round_trips() {
        let a = DatasetManifest::generate(30, 11).unwrap();
        let b = DatasetManifest::generate(30, 11).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_ne!(a, DatasetManifest::generate(30, 12).unwrap());
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), a.to_json().unwrap()).unwrap();
        assert_eq!(DatasetManifest::read(dir.path()).unwrap(), a);
        assert!(matches!(a.location(99), Err(Error::NotFound(_))));
    }
}
