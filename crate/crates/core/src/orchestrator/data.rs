use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LayerSet, NodeSpec};
use crate::world::{
    generate_scene, load_sealed_split, load_split, world_nodes, DatasetManifest, SplitPlan, SplitRole, WorldConfig,
    MANIFEST_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usage {
    TrainSupervised,
    Validate,
    PseudoLabel,
    TrainUnsupervised,
    Evaluate,
}

impl Usage {
    pub fn name(self) -> &'static str {
        match self {
            Usage::TrainSupervised => "train_supervised",
            Usage::Validate => "validate",
            Usage::PseudoLabel => "pseudo_label",
            Usage::TrainUnsupervised => "train_unsupervised",
            Usage::Evaluate => "evaluate",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [
            Usage::TrainSupervised,
            Usage::Validate,
            Usage::PseudoLabel,
            Usage::TrainUnsupervised,
            Usage::Evaluate,
        ]
        .into_iter()
        .find(|u| u.name() == s)
    }

    pub fn is_training(self) -> bool {
        matches!(self, Usage::TrainSupervised | Usage::TrainUnsupervised | Usage::PseudoLabel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AuditEntry {
    pub scene: u64,
    pub usage: Usage,
    pub split: String,
}

impl fmt::Display for AuditEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.scene, self.usage.name(), self.split)
    }
}

/// Every (scene, usage) pair touched by a stage, one line per pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn record(&mut self, split: &str, usage: Usage, scenes: impl IntoIterator<Item = u64>) {
        self.entries.extend(scenes.into_iter().map(|scene| AuditEntry {
            scene,
            usage,
            split: split.to_string(),
        }));
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn extend(&mut self, other: AuditLog) {
        self.entries.extend(other.entries);
    }

    /// Entries that used one of `held_out` for training or pseudo-labelling.
    pub fn leaks(&self, held_out: &BTreeSet<u64>) -> Vec<&AuditEntry> {
        self.entries
            .iter()
            .filter(|e| e.usage.is_training() && held_out.contains(&e.scene))
            .collect()
    }

    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&e.to_string());
            text.push('\n');
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for line in text.lines() {
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Parse {
                offset,
                reason: format!("bad audit line `{line}`"),
            };
            if parts.len() != 3 {
                return Err(bad());
            }
            entries.push(AuditEntry {
                scene: parts[0].parse().map_err(|_| bad())?,
                usage: Usage::from_name(parts[1]).ok_or_else(bad)?,
                split: parts[2].to_string(),
            });
            offset += line.len() as u64 + 1;
        }
        Ok(AuditLog { entries })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    name: String,
    role: SplitRole,
    ids: Vec<u64>,
    visible: Vec<LayerSet>,
    sealed: Vec<LayerSet>,
}

impl DataSplit {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Scenes of every split held in memory. Layers hidden from training are
/// only reachable through [`Dataset::evaluation_scenes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    nodes: Vec<NodeSpec>,
    splits: Vec<DataSplit>,
}

impl Dataset {
    /// Generates every scene of `plan` in memory.
    pub fn generate(world: &WorldConfig, plan: &SplitPlan) -> Result<Self> {
        world.validate()?;
        plan.validate()?;
        let nodes = world_nodes(world);
        let splits = plan
            .splits
            .iter()
            .map(|s| {
                let scenes = s
                    .scene_ids
                    .par_iter()
                    .map(|&id| generate_scene(world, id).map(|sc| sc.to_layer_set()))
                    .collect::<Result<Vec<_>>>()?;
                let (visible, sealed) = scenes
                    .into_iter()
                    .map(|layers| split_visible(&nodes, s.role, layers))
                    .unzip();
                Ok(DataSplit {
                    name: s.name.clone(),
                    role: s.role,
                    ids: s.scene_ids.clone(),
                    visible,
                    sealed,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { nodes, splits })
    }

    /// Loads a dataset written by [`crate::world::make_dataset`].
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(&root.join(MANIFEST_FILE))?;
        let nodes = world_nodes(&manifest.world);
        let splits = manifest
            .splits
            .iter()
            .map(|s| {
                let visible = load_split(root, s)?;
                let sealed = load_sealed_split(root, s)?;
                Ok(DataSplit {
                    name: s.name.clone(),
                    role: s.role,
                    ids: s.scene_ids.clone(),
                    visible: visible.into_iter().map(|(_, l)| l).collect(),
                    sealed: sealed.into_iter().map(|(_, l)| l).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { nodes, splits })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn splits(&self) -> &[DataSplit] {
        &self.splits
    }

    pub fn split(&self, name: &str) -> Result<&DataSplit> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::invalid(format!("no split named `{name}`")))
    }

    pub fn by_role(&self, role: SplitRole) -> Vec<&DataSplit> {
        self.splits.iter().filter(|s| s.role == role).collect()
    }

    /// Labeled scenes of a train or validation split.
    pub fn labeled(&self, name: &str, usage: Usage, audit: &mut AuditLog) -> Result<&[LayerSet]> {
        let s = self.split(name)?;
        if !s.role.ships_ground_truth() {
            return Err(Error::invalid(format!("split `{name}` has no labels")));
        }
        audit.record(name, usage, s.ids.iter().copied());
        Ok(&s.visible)
    }

    /// Sensor-only scenes of an unlabeled split.
    pub fn unlabeled(&self, name: &str, usage: Usage, audit: &mut AuditLog) -> Result<&[LayerSet]> {
        let s = self.split(name)?;
        if s.role != SplitRole::Unlabeled {
            return Err(Error::invalid(format!("split `{name}` is not an unlabeled pool")));
        }
        audit.record(name, usage, s.ids.iter().copied());
        Ok(&s.visible)
    }

    /// Full scenes (sensors and sealed ground truth) for scoring.
    pub fn evaluation_scenes(&self, name: &str, audit: &mut AuditLog) -> Result<Vec<LayerSet>> {
        let s = self.split(name)?;
        audit.record(name, Usage::Evaluate, s.ids.iter().copied());
        Ok(s
            .visible
            .iter()
            .zip(&s.sealed)
            .map(|(v, h)| v.iter().chain(h).map(|(k, t)| (*k, t.clone())).collect())
            .collect())
    }
}

fn split_visible(nodes: &[NodeSpec], role: SplitRole, layers: LayerSet) -> (LayerSet, LayerSet) {
    if role.ships_ground_truth() {
        return (layers, LayerSet::new());
    }
    layers
        .into_iter()
        .partition(|(id, _)| nodes.iter().any(|n| n.id == *id && n.sensor))
}
