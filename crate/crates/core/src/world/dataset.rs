use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LayerSet;

use super::container::{read_sealed_tensor, read_tensor, write_tensor, SEALED_DIR};
use super::scene::{generate_scene, Representation, WorldConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Validation,
    /// One pool per self-training iteration; only sensors are visible.
    Unlabeled,
    /// Held out for scoring; only sensors are visible outside evaluation.
    Evaluation,
}

impl SplitRole {
    pub fn ships_ground_truth(self) -> bool {
        matches!(self, SplitRole::Train | SplitRole::Validation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub role: SplitRole,
    pub scene_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub splits: Vec<SplitSpec>,
}

impl SplitPlan {
    /// Contiguous id ranges: train, validation, one unlabeled pool per
    /// entry of `unlabeled`, then evaluation.
    pub fn contiguous(train: usize, validation: usize, unlabeled: &[usize], evaluation: usize) -> Self {
        let mut next = 0u64;
        let mut take = |n: usize| {
            let ids: Vec<u64> = (next..next + n as u64).collect();
            next += n as u64;
            ids
        };
        let mut splits = vec![
            SplitSpec {
                name: "train".into(),
                role: SplitRole::Train,
                scene_ids: take(train),
            },
            SplitSpec {
                name: "validation".into(),
                role: SplitRole::Validation,
                scene_ids: take(validation),
            },
        ];
        for (i, &n) in unlabeled.iter().enumerate() {
            splits.push(SplitSpec {
                name: format!("unlabeled{}", i + 1),
                role: SplitRole::Unlabeled,
                scene_ids: take(n),
            });
        }
        splits.push(SplitSpec {
            name: "evaluation".into(),
            role: SplitRole::Evaluation,
            scene_ids: take(evaluation),
        });
        SplitPlan { splits }
    }

    /// 800 / 200 / 1000 / 1000 / 1000: two unlabeled pools.
    pub fn default_plan() -> Self {
        Self::contiguous(800, 200, &[1000, 1000], 1000)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        let mut seen: BTreeMap<u64, &str> = BTreeMap::new();
        for s in &self.splits {
            if s.name.is_empty() || s.name == SEALED_DIR || s.name.contains(['/', '\\', '.']) {
                return Err(Error::invalid(format!("bad split name `{}`", s.name)));
            }
            if !names.insert(s.name.as_str()) {
                return Err(Error::invalid(format!("duplicate split name `{}`", s.name)));
            }
            if s.scene_ids.is_empty() {
                return Err(Error::invalid(format!("split `{}` is empty", s.name)));
            }
            for &id in &s.scene_ids {
                if let Some(other) = seen.insert(id, &s.name) {
                    return Err(Error::invalid(format!(
                        "scene {id} appears in both `{other}` and `{}`",
                        s.name
                    )));
                }
            }
        }
        for role in [SplitRole::Train, SplitRole::Validation, SplitRole::Evaluation] {
            if self.splits.iter().filter(|s| s.role == role).count() != 1 {
                return Err(Error::invalid(format!("plan needs exactly one {role:?} split")));
            }
        }
        Ok(())
    }

    pub fn by_role(&self, role: SplitRole) -> Vec<&SplitSpec> {
        self.splits.iter().filter(|s| s.role == role).collect()
    }

    pub fn get(&self, name: &str) -> Option<&SplitSpec> {
        self.splits.iter().find(|s| s.name == name)
    }
}

/// Relative file paths of one scene, keyed by representation name.
pub type SceneFiles = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSplit {
    pub name: String,
    pub role: SplitRole,
    pub scene_ids: Vec<u64>,
    /// Visible files per scene.
    pub files: BTreeMap<u64, SceneFiles>,
    /// Ground truth under `sealed/`, for unlabeled and evaluation splits.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sealed: BTreeMap<u64, SceneFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub world: WorldConfig,
    pub splits: Vec<ManifestSplit>,
}

impl DatasetManifest {
    pub fn split(&self, name: &str) -> Result<&ManifestSplit> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::invalid(format!("no split named `{name}`")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn scene_dir(split: &str, id: u64) -> PathBuf {
    PathBuf::from(split).join(format!("scene_{id:06}"))
}

/// Generates every scene of `plan` under `root` and writes `manifest.json`.
/// Refuses to write into a directory that already holds a manifest.
pub fn make_dataset(config: &WorldConfig, plan: &SplitPlan, root: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    plan.validate()?;
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() {
        return Err(Error::invalid(format!("{} already exists", manifest_path.display())));
    }
    for s in &plan.splits {
        for dir in [root.join(&s.name), root.join(SEALED_DIR).join(&s.name)] {
            if dir.exists() {
                return Err(Error::invalid(format!("path collision: {} exists", dir.display())));
            }
        }
    }

    let mut splits = Vec::with_capacity(plan.splits.len());
    for s in &plan.splits {
        let written: Vec<(u64, SceneFiles, SceneFiles)> = s
            .scene_ids
            .par_iter()
            .map(|&id| -> Result<(u64, SceneFiles, SceneFiles)> {
                let scene = generate_scene(config, id)?;
                let visible_dir = scene_dir(&s.name, id);
                let sealed_dir = PathBuf::from(SEALED_DIR).join(&visible_dir);
                fs::create_dir_all(root.join(&visible_dir)).map_err(|e| Error::io(root.join(&visible_dir), e))?;
                let mut visible = SceneFiles::new();
                let mut sealed = SceneFiles::new();
                for (r, t) in &scene.layers {
                    let file = format!("{}.ngct", r.name());
                    let rel = if r.is_sensor() || s.role.ships_ground_truth() {
                        visible.insert(r.name().into(), visible_dir.join(&file).to_string_lossy().into_owned());
                        visible_dir.join(&file)
                    } else {
                        fs::create_dir_all(root.join(&sealed_dir)).map_err(|e| Error::io(root.join(&sealed_dir), e))?;
                        sealed.insert(r.name().into(), sealed_dir.join(&file).to_string_lossy().into_owned());
                        sealed_dir.join(&file)
                    };
                    write_tensor(&root.join(rel), t)?;
                }
                Ok((id, visible, sealed))
            })
            .collect::<Result<_>>()?;
        let mut files = BTreeMap::new();
        let mut sealed = BTreeMap::new();
        for (id, v, h) in written {
            files.insert(id, v);
            if !h.is_empty() {
                sealed.insert(id, h);
            }
        }
        splits.push(ManifestSplit {
            name: s.name.clone(),
            role: s.role,
            scene_ids: s.scene_ids.clone(),
            files,
            sealed,
        });
    }
    let manifest = DatasetManifest {
        world: config.clone(),
        splits,
    };
    manifest.write(&manifest_path)?;
    Ok(manifest)
}

fn load_files(root: &Path, files: &SceneFiles, sealed: bool) -> Result<LayerSet> {
    let mut layers = LayerSet::new();
    for (name, rel) in files {
        let r = Representation::from_name(name).ok_or_else(|| Error::MissingRepresentation(name.clone()))?;
        let path = root.join(rel);
        let t = if sealed { read_sealed_tensor(&path)? } else { read_tensor(&path)? };
        layers.insert(r.node_id(), t);
    }
    Ok(layers)
}

/// Visible layers of every scene in a split, in manifest order.
pub fn load_split(root: &Path, split: &ManifestSplit) -> Result<Vec<(u64, LayerSet)>> {
    split
        .scene_ids
        .iter()
        .map(|id| {
            let files = split
                .files
                .get(id)
                .ok_or_else(|| Error::invalid(format!("scene {id} has no files")))?;
            Ok((*id, load_files(root, files, false)?))
        })
        .collect()
}

/// Sealed ground truth of a split. Evaluation only.
pub fn load_sealed_split(root: &Path, split: &ManifestSplit) -> Result<Vec<(u64, LayerSet)>> {
    split
        .scene_ids
        .iter()
        .map(|id| {
            let files = split.sealed.get(id).cloned().unwrap_or_default();
            Ok((*id, load_files(root, &files, true)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_world() -> WorldConfig {
        WorldConfig {
            height: 8,
            width: 8,
            ..Default::default()
        }
    }

    #[test]
    fn default_plan_sizes() {
        let plan = SplitPlan::default_plan();
        plan.validate().unwrap();
        let sizes: Vec<usize> = plan.splits.iter().map(|s| s.scene_ids.len()).collect();
        assert_eq!(sizes, vec![800, 200, 1000, 1000, 1000]);
    }

    #[test]
    fn overlapping_plans_are_rejected() {
        let mut plan = SplitPlan::contiguous(2, 2, &[2], 2);
        plan.splits[3].scene_ids[0] = 0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn unlabeled_ground_truth_is_sealed() {
        let dir = tempfile::tempdir().unwrap();
        let plan = SplitPlan::contiguous(2, 1, &[2], 1);
        let m = make_dataset(&small_world(), &plan, dir.path()).unwrap();
        let train = load_split(dir.path(), m.split("train").unwrap()).unwrap();
        assert_eq!(train[0].1.len(), 8);
        let unl = m.split("unlabeled1").unwrap();
        let visible = load_split(dir.path(), unl).unwrap();
        assert_eq!(visible[0].1.len(), 1);
        assert!(visible[0].1.contains_key(&Representation::Rgb.node_id()));
        let sealed = load_sealed_split(dir.path(), unl).unwrap();
        assert_eq!(sealed[0].1.len(), 7);
        let sealed_path = dir.path().join(&unl.sealed[&unl.scene_ids[0]]["depth"]);
        assert!(matches!(read_tensor(&sealed_path), Err(Error::SealedAccess(_))));

        assert_eq!(DatasetManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
        assert!(make_dataset(&small_world(), &plan, dir.path()).is_err());
    }
}
