use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gate, Graph, IntermediateMode, LearnerConfig, Topology, DEFAULT_MAX_HOPS};
use crate::learner::write_checkpoint;
use crate::world::{SplitPlan, SplitRole, WorldConfig};

use super::data::{AuditLog, Dataset, Usage};
use super::evaluate::{evaluate_generation, MetricRow, PredictionSet};
use super::greedy::{GreedySelection, SelectionRule};
use super::pipeline::{
    build_edges, build_graph_greedy, default_candidate_edges, pretrain_supervised, run_unsupervised_iteration, EdgeDef,
    IterationConfig, IterationReport, LabeledPool, Schedule, TrainingConfig,
};
use super::report::{read_csv, read_json, write_csv, write_json, PretrainRow, SummaryTable};

pub const CONFIG_FILE: &str = "config.json";
pub const TOPOLOGY_FILE: &str = "topology.json";
pub const AUDIT_FILE: &str = "audit.log";
pub const TIMINGS_FILE: &str = "timings.json";
pub const LOCK_FILE: &str = ".lock";
pub const REPORTS_DIR: &str = "reports";

/// Everything a run needs; stored as `config.json` in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub splits: SplitPlan,
    /// Read scenes from a dataset directory instead of generating them.
    pub data: Option<PathBuf>,
    pub edges: Vec<EdgeDef>,
    pub learner: LearnerConfig,
    pub training: TrainingConfig,
    pub max_hops: usize,
    pub selection: SelectionRule,
    pub gate: Gate,
    pub intermediates: IntermediateMode,
    pub schedule: Schedule,
    pub mix_labeled: bool,
    /// Re-run graph selection on the new generation after every iteration.
    pub reselect: bool,
    pub iterations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let it = IterationConfig::default();
        ExperimentConfig {
            world: WorldConfig::default(),
            splits: SplitPlan::default_plan(),
            data: None,
            edges: default_candidate_edges(),
            learner: LearnerConfig::default(),
            training: it.training,
            max_hops: DEFAULT_MAX_HOPS,
            selection: SelectionRule::default(),
            gate: it.gate,
            intermediates: it.intermediates,
            schedule: it.schedule,
            mix_labeled: it.mix_labeled,
            reselect: false,
            iterations: 2,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.splits.validate()?;
        self.training.validate()?;
        self.gate.validate()?;
        if self.edges.is_empty() {
            return Err(Error::invalid("no candidate edges"));
        }
        if self.max_hops == 0 {
            return Err(Error::invalid("max hops must be at least 1"));
        }
        let pools = self.splits.by_role(SplitRole::Unlabeled).len();
        if self.iterations > pools {
            return Err(Error::invalid(format!(
                "{} iterations need as many unlabeled sets, the plan has {pools}",
                self.iterations
            )));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.training.seed
    }

    pub fn iteration_config(&self) -> IterationConfig {
        IterationConfig {
            training: self.training.clone(),
            gate: self.gate,
            intermediates: self.intermediates,
            schedule: self.schedule,
            mix_labeled: self.mix_labeled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Outputs were already on disk.
    Skipped,
}

struct RunLock(PathBuf);

impl RunLock {
    fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(root.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// A run directory. Every stage writes its outputs there and is skipped
/// when they already exist, so an interrupted run resumes where it stopped.
pub struct Experiment {
    root: PathBuf,
    config: ExperimentConfig,
    data: OnceLock<Dataset>,
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl Experiment {
    /// Opens `root`, writing `config` there on first use. An existing run
    /// must have been created with the same config.
    pub fn create(root: &Path, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        ensure_dir(root)?;
        let path = root.join(CONFIG_FILE);
        if path.exists() {
            let old: ExperimentConfig = read_json(&path)?;
            if old != config {
                return Err(Error::invalid(format!(
                    "{} holds a run with a different config",
                    root.display()
                )));
            }
        } else {
            write_json(&path, &config)?;
        }
        Ok(Experiment {
            root: root.to_path_buf(),
            config,
            data: OnceLock::new(),
        })
    }

    /// Opens an existing run directory.
    pub fn open(root: &Path) -> Result<Self> {
        let config: ExperimentConfig = read_json(&root.join(CONFIG_FILE))?;
        config.validate()?;
        Ok(Experiment {
            root: root.to_path_buf(),
            config,
            data: OnceLock::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join(REPORTS_DIR)
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.reports_dir().join(name)
    }

    pub fn generation_dir(&self, k: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("gen{k}"))
    }

    fn topology_path(&self, k: usize) -> PathBuf {
        if k == 0 {
            self.root.join(TOPOLOGY_FILE)
        } else {
            self.generation_dir(k).join(TOPOLOGY_FILE)
        }
    }

    fn dataset(&self) -> Result<&Dataset> {
        if let Some(d) = self.data.get() {
            return Ok(d);
        }
        let d = match &self.config.data {
            Some(dir) => Dataset::load(dir)?,
            None => Dataset::generate(&self.config.world, &self.config.splits)?,
        };
        Ok(self.data.get_or_init(|| d))
    }

    fn stage<T>(&self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let _lock = RunLock::acquire(&self.root)?;
        let start = Instant::now();
        let out = f().map_err(|e| match e {
            e @ (Error::Locked(_) | Error::TopologyMissing | Error::Stage { .. }) => e,
            e => Error::Stage {
                stage: name.to_string(),
                seed: self.config.seed(),
                message: e.to_string(),
            },
        })?;
        self.record_time(name, start.elapsed().as_secs_f64())?;
        Ok(out)
    }

    fn record_time(&self, stage: &str, seconds: f64) -> Result<()> {
        let path = self.root.join(TIMINGS_FILE);
        let mut t: BTreeMap<String, f64> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
        t.insert(stage.to_string(), seconds);
        write_json(&path, &t)
    }

    /// Seconds spent per stage, as last recorded.
    pub fn timings(&self) -> Result<BTreeMap<String, f64>> {
        let path = self.root.join(TIMINGS_FILE);
        if path.exists() {
            read_json(&path)
        } else {
            Ok(BTreeMap::new())
        }
    }

    fn split_name(&self, role: SplitRole) -> Result<String> {
        self.config
            .splits
            .by_role(role)
            .first()
            .map(|s| s.name.clone())
            .ok_or_else(|| Error::invalid(format!("plan has no {role:?} split")))
    }

    fn unlabeled_name(&self, iteration: usize) -> Result<String> {
        self.config
            .splits
            .by_role(SplitRole::Unlabeled)
            .get(iteration - 1)
            .map(|s| s.name.clone())
            .ok_or_else(|| Error::invalid(format!("no unlabeled set for iteration {iteration}")))
    }

    fn save_generation(&self, graph: &Graph, k: usize) -> Result<()> {
        let dir = self.generation_dir(k);
        ensure_dir(&dir)?;
        for e in graph.edges() {
            write_checkpoint(&dir.join(checkpoint_name(e.id)), &e.model)?;
        }
        Ok(())
    }

    /// Graph of generation `k` with its selected ensembles.
    pub fn load_generation(&self, k: usize) -> Result<Graph> {
        let mut path = self.topology_path(k);
        if k > 0 && !path.exists() {
            path = self.topology_path(0);
        }
        Topology::read(&path)?.load(&self.generation_dir(k))
    }

    /// Generation zero edges before graph selection.
    fn load_pretrained(&self) -> Result<Vec<crate::graph::HyperEdge>> {
        let nodes = self.dataset()?.nodes().to_vec();
        let mut edges = build_edges(&nodes, &self.config.edges, &self.config.learner, self.config.seed())?;
        for e in &mut edges {
            e.model = crate::learner::read_checkpoint(&self.generation_dir(0).join(checkpoint_name(e.id)))?;
        }
        Ok(edges)
    }

    pub fn pretrain(&self) -> Result<StageOutcome> {
        let done = self.report_path("pretrain.csv");
        if done.exists() {
            return Ok(StageOutcome::Skipped);
        }
        self.stage("pretrain", || {
            let data = self.dataset()?;
            let mut audit = AuditLog::default();
            let train = self.split_name(SplitRole::Train)?;
            let val = self.split_name(SplitRole::Validation)?;
            let train_scenes = data.labeled(&train, Usage::TrainSupervised, &mut audit)?;
            let train_ids = data.split(&train)?.ids();
            let val_scenes = data.labeled(&val, Usage::Validate, &mut audit)?;
            let edges = build_edges(data.nodes(), &self.config.edges, &self.config.learner, self.config.seed())?;
            let (edges, metrics) =
                pretrain_supervised(data.nodes(), edges, train_scenes, train_ids, val_scenes, &self.config.training)?;
            let graph = Graph::new(data.nodes().to_vec(), edges)?;
            self.save_generation(&graph, 0)?;
            let rows: Vec<PretrainRow> = graph
                .edges()
                .iter()
                .zip(metrics)
                .map(|(e, m)| PretrainRow {
                    edge: e.id.to_string(),
                    inputs: e
                        .inputs
                        .iter()
                        .map(|&i| graph.node(i).map(|n| n.name.clone()))
                        .collect::<Result<Vec<_>>>()
                        .map(|v| v.join("+"))
                        .unwrap_or_default(),
                    output: m.output,
                    metric: m.metric,
                    value: m.value,
                })
                .collect();
            audit.append_to(&self.root.join(AUDIT_FILE))?;
            ensure_dir(&self.reports_dir())?;
            write_csv(&done, &rows)?;
            Ok(StageOutcome::Ran)
        })
    }

    pub fn build_graph(&self) -> Result<StageOutcome> {
        if self.topology_path(0).exists() {
            return Ok(StageOutcome::Skipped);
        }
        if !self.report_path("pretrain.csv").exists() {
            return Err(Error::invalid("pretraining has not run"));
        }
        self.stage("build_graph", || {
            let data = self.dataset()?;
            let mut audit = AuditLog::default();
            let val = data.labeled(&self.split_name(SplitRole::Validation)?, Usage::Validate, &mut audit)?;
            let (graph, selections) = build_graph_greedy(
                data.nodes().to_vec(),
                self.load_pretrained()?,
                val,
                self.config.max_hops,
                self.config.selection,
            )?;
            audit.append_to(&self.root.join(AUDIT_FILE))?;
            write_json(&self.report_path("greedy.json"), &selections)?;
            Topology::of(&graph, checkpoint_name).write(&self.topology_path(0))?;
            Ok(StageOutcome::Ran)
        })
    }

    /// Runs iteration `k` (1-based) on top of generation `k - 1`.
    pub fn iterate(&self, k: usize) -> Result<StageOutcome> {
        if k == 0 || k > self.config.iterations {
            return Err(Error::invalid(format!(
                "iteration must lie in 1..={}, got {k}",
                self.config.iterations
            )));
        }
        let done = self.report_path(&format!("iteration_{k}.json"));
        if done.exists() {
            return Ok(StageOutcome::Skipped);
        }
        if !self.topology_path(0).exists() {
            return Err(Error::TopologyMissing);
        }
        if k > 1 && !self.report_path(&format!("iteration_{}.json", k - 1)).exists() {
            return Err(Error::invalid(format!("iteration {} has not run", k - 1)));
        }
        self.stage(&format!("iterate_{k}"), || {
            let data = self.dataset()?;
            let mut audit = AuditLog::default();
            let graph = self.load_generation(k - 1)?;
            let val = data.labeled(&self.split_name(SplitRole::Validation)?, Usage::Validate, &mut audit)?;
            let pool = self.unlabeled_name(k)?;
            let scenes = data.unlabeled(&pool, Usage::PseudoLabel, &mut audit)?;
            audit.record(&pool, Usage::TrainUnsupervised, data.split(&pool)?.ids().iter().copied());
            let labeled = if self.config.mix_labeled {
                let train = self.split_name(SplitRole::Train)?;
                Some(LabeledPool {
                    scenes: data.labeled(&train, Usage::TrainSupervised, &mut audit)?,
                    ids: data.split(&train)?.ids(),
                })
            } else {
                None
            };
            let (mut next, report) = run_unsupervised_iteration(
                &graph,
                scenes,
                data.split(&pool)?.ids(),
                val,
                labeled.as_ref(),
                &self.config.iteration_config(),
                k,
            )?;
            self.save_generation(&next, k)?;
            if self.config.reselect {
                next.clear_ensembles();
                let edges = next.edges().to_vec();
                let (g, selections) =
                    build_graph_greedy(next.nodes().to_vec(), edges, val, self.config.max_hops, self.config.selection)?;
                next = g;
                write_json(&self.report_path(&format!("greedy_{k}.json")), &selections)?;
            }
            Topology::of(&next, checkpoint_name).write(&self.topology_path(k))?;
            audit.append_to(&self.root.join(AUDIT_FILE))?;
            self.record_time(&format!("iterate_{k}_core"), report.wall_time)?;
            write_json(&done, &report)?;
            Ok(StageOutcome::Ran)
        })
    }

    /// Scores every generation on the evaluation set.
    pub fn evaluate(&self) -> Result<StageOutcome> {
        let done = self.report_path("metrics.csv");
        if done.exists() {
            return Ok(StageOutcome::Skipped);
        }
        let k_max = self.config.iterations;
        if !self.topology_path(0).exists() {
            return Err(Error::TopologyMissing);
        }
        if k_max > 0 && !self.report_path(&format!("iteration_{k_max}.json")).exists() {
            return Err(Error::invalid(format!("iteration {k_max} has not run")));
        }
        self.stage("evaluate", || {
            let data = self.dataset()?;
            let mut audit = AuditLog::default();
            let scenes = data.evaluation_scenes(&self.split_name(SplitRole::Evaluation)?, &mut audit)?;
            let mut rows: Vec<MetricRow> = Vec::new();
            let mut baseline: Option<PredictionSet> = None;
            for k in 0..=k_max {
                let graph = self.load_generation(k)?;
                let ev = evaluate_generation(&graph, &scenes, k, self.config.intermediates, baseline.as_ref())?;
                rows.extend(ev.rows);
                baseline.get_or_insert(ev.direct);
            }
            audit.append_to(&self.root.join(AUDIT_FILE))?;
            write_json(&self.report_path("evaluation.json"), &rows)?;
            write_csv(&done, &rows)?;
            Ok(StageOutcome::Ran)
        })
    }

    pub fn iteration_reports(&self) -> Result<Vec<IterationReport>> {
        (1..=self.config.iterations)
            .map(|k| self.report_path(&format!("iteration_{k}.json")))
            .filter(|p| p.exists())
            .map(|p| read_json(&p))
            .collect()
    }

    pub fn greedy_report(&self) -> Result<Vec<GreedySelection>> {
        read_json(&self.report_path("greedy.json"))
    }

    pub fn metrics(&self) -> Result<Vec<MetricRow>> {
        read_csv(&self.report_path("metrics.csv"))
    }

    /// Writes `summary.json` and `summary.txt` from the evaluation rows.
    pub fn report(&self) -> Result<SummaryTable> {
        self.stage("report", || {
            let rows = self.metrics()?;
            let nodes = Topology::read(&self.topology_path(0))?.nodes;
            let table = SummaryTable::from_rows(&nodes, &rows, self.config.iterations)
                .with_dispersion(&self.iteration_reports()?);
            write_json(&self.report_path("summary.json"), &table)?;
            let path = self.report_path("summary.txt");
            fs::write(&path, table.render()).map_err(|e| Error::io(&path, e))?;
            Ok(table)
        })
    }

    /// Every stage in order; finished stages are skipped.
    pub fn run(&self) -> Result<SummaryTable> {
        self.pretrain()?;
        self.build_graph()?;
        for k in 1..=self.config.iterations {
            self.iterate(k)?;
        }
        self.evaluate()?;
        self.report()
    }

    pub fn audit(&self) -> Result<AuditLog> {
        let path = self.root.join(AUDIT_FILE);
        if path.exists() {
            AuditLog::read(&path)
        } else {
            Ok(AuditLog::default())
        }
    }

    /// Audit entries that trained or pseudo-labelled on evaluation scenes.
    pub fn leaks(&self) -> Result<usize> {
        let held: BTreeSet<u64> = self
            .config
            .splits
            .by_role(SplitRole::Evaluation)
            .iter()
            .flat_map(|s| s.scene_ids.iter().copied())
            .collect();
        Ok(self.audit()?.leaks(&held).len())
    }
}

pub fn checkpoint_name(id: crate::graph::EdgeId) -> String {
    format!("edge_{}.ngcm", id.0)
}

/// Creates (or resumes) a run in `root` and executes every stage.
pub fn run_experiment(root: &Path, config: ExperimentConfig) -> Result<SummaryTable> {
    Experiment::create(root, config)?.run()
}
