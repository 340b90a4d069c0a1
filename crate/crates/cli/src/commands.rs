use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use acdc::engine::{self, world, ArchiveState, RunConfig};
use acdc::genome::{GenomeId, ModelGenome};
use acdc::metrics::{coverage, ResponseMatrix, SelectionStrategy, TaskForce};
use acdc::oracles::{evaluate_task, Providers};
use acdc::population::TaskScore;
use acdc::taskspace::SeedTask;
use serde::Serialize;

use crate::export::{self, ExportKind};
use crate::manifest::RunDir;
use crate::{io_err, CliError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub generations: u64,
    pub archive_size: usize,
    pub global_tasks: usize,
    pub task_force: TaskForce,
}

fn evolve(dir: &mut RunDir, state: ArchiveState, providers: &Providers) -> Result<RunSummary, CliError> {
    let config = dir.config().clone();
    let state = engine::continue_run(state, &config, providers, |next, log| {
        dir.commit(next, &log.transcripts).map_err(|e| match e {
            CliError::Engine(e) => e,
            other => acdc::engine::EngineError::Io(other.to_string()),
        })
    })?;
    let (task_force, _) = engine::final_task_force(&state, &config, providers)?;
    dir.write_json("taskforce.json", &task_force)?;
    Ok(RunSummary {
        generations: state.generation,
        archive_size: state.archive.len(),
        global_tasks: state.tasks.global.len(),
        task_force,
    })
}

/// Starts a run in `out`; a snapshot is committed after every generation.
pub fn run(config: &RunConfig, out: &Path) -> Result<RunSummary, CliError> {
    config.validate()?;
    let providers = world::build_providers(config)?;
    let mut dir = RunDir::create(out, config)?;
    let (state, log) = engine::initialize(config, &providers)?;
    dir.commit(&state, &log.transcripts)?;
    evolve(&mut dir, state, &providers)
}

/// Continues from the newest snapshot recorded in the manifest.
pub fn resume(manifest: &Path) -> Result<RunSummary, CliError> {
    let mut dir = RunDir::open(manifest)?;
    let state = dir.latest_snapshot()?;
    dir.truncate_transcripts(state.generation)?;
    let providers = world::build_providers(dir.config())?;
    evolve(&mut dir, state, &providers)
}

fn open_with_state(manifest: &Path) -> Result<(RunDir, ArchiveState, Providers), CliError> {
    let dir = RunDir::open(manifest)?;
    let state = dir.latest_snapshot()?;
    let providers = world::build_providers(dir.config())?;
    Ok((dir, state, providers))
}

pub fn select_taskforce(manifest: &Path, n: usize, strategy: SelectionStrategy) -> Result<TaskForce, CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    let (dir, state, providers) = open_with_state(manifest)?;
    let config = RunConfig {
        taskforce_size: n,
        taskforce_strategy: strategy,
        ..dir.config().clone()
    };
    Ok(engine::final_task_force(&state, &config, &providers)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub id: GenomeId,
    pub solved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub tasks: usize,
    pub coverage: f64,
    pub models: Vec<ModelReport>,
}

pub fn parse_model_ids(text: &str) -> Result<Vec<GenomeId>, CliError> {
    let ids: Vec<GenomeId> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;
    if ids.is_empty() {
        return Err(CliError::Usage("--models needs at least one id".into()));
    }
    Ok(ids)
}

pub fn read_task_file(path: &Path) -> Result<Vec<SeedTask>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut tasks = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: SeedTask = serde_json::from_str(line).map_err(|e| CliError::Parse {
            path: path.display().to_string(),
            message: format!("line {}: {e}", n + 1),
        })?;
        tasks.push(task);
    }
    Ok(tasks)
}

/// Coverage of the given models on the global task archive, or on a
/// held-out task file.
pub fn eval_coverage(manifest: &Path, models: &[GenomeId], holdout: Option<&Path>) -> Result<CoverageReport, CliError> {
    let (_, state, providers) = open_with_state(manifest)?;
    let genomes: Vec<&ModelGenome> = models
        .iter()
        .map(|id| {
            state
                .genome(*id)
                .ok_or_else(|| CliError::Usage(format!("model {id} is not in the archive or a historical snapshot")))
        })
        .collect::<Result<_, _>>()?;
    let tasks: Vec<(String, acdc::oracles::ScorerSpec)> = match holdout {
        Some(path) => read_task_file(path)?
            .into_iter()
            .map(|t| (t.instruction, t.scorer))
            .collect(),
        None => state
            .tasks
            .global
            .iter()
            .map(|t| (t.instruction_template.clone(), t.scorer.clone()))
            .collect(),
    };
    if tasks.is_empty() {
        return Err(CliError::Usage("no tasks to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(genomes.len());
    for g in &genomes {
        let row = tasks
            .iter()
            .map(|(instruction, spec)| {
                evaluate_task(g, instruction, spec, &providers).map(|s| matches!(s, TaskScore::Score(x) if x == 1.0))
            })
            .collect::<Result<Vec<bool>, _>>()
            .map_err(acdc::engine::EngineError::from)?;
        rows.push(row);
    }
    let matrix = ResponseMatrix::new(rows, models.to_vec(), (0..tasks.len()).map(|i| i.to_string()).collect())
        .map_err(acdc::engine::EngineError::from)?;
    let cov = coverage(&matrix, None).map_err(acdc::engine::EngineError::from)?;
    Ok(CoverageReport {
        tasks: tasks.len(),
        coverage: cov,
        models: models
            .iter()
            .enumerate()
            .map(|(i, id)| ModelReport {
                id: *id,
                solved: matrix.correct[i].iter().filter(|b| **b).count(),
            })
            .collect(),
    })
}

/// Indented ancestry of one model, down to its seed genomes.
pub fn lineage(manifest: &Path, model: GenomeId) -> Result<String, CliError> {
    let dir = RunDir::open(manifest)?;
    let state = dir.latest_snapshot()?;
    if !state.lineage.contains_key(&model) {
        return Err(CliError::Usage(format!("model {model} has no lineage record")));
    }
    let mut out = String::new();
    let mut seen = BTreeSet::new();
    render_lineage(&state, model, 0, &mut seen, &mut out);
    Ok(out)
}

fn render_lineage(state: &ArchiveState, id: GenomeId, depth: usize, seen: &mut BTreeSet<GenomeId>, out: &mut String) {
    let indent = "  ".repeat(depth);
    let Some(node) = state.lineage.get(&id) else {
        let _ = writeln!(out, "{indent}{id} (unknown)");
        return;
    };
    let _ = write!(out, "{indent}{id} gen {}", node.generation_born);
    match node.operator {
        None => {
            let _ = write!(out, " seed");
        }
        Some(op) => {
            let _ = write!(out, " {}", op.tag());
        }
    }
    if let Some((w1, w2)) = node.weights {
        let _ = write!(out, " w=({w1:.4}, {w2:.4})");
    }
    if !node.mutated.is_empty() {
        let _ = write!(out, " mutated=[{}]", node.mutated.join(","));
    }
    if !seen.insert(id) {
        let _ = writeln!(out, " (repeated)");
        return;
    }
    let _ = writeln!(out);
    for p in &node.parents {
        render_lineage(state, *p, depth + 1, seen, out);
    }
}

pub fn export(manifest: &Path, kind: ExportKind, out: &Path) -> Result<usize, CliError> {
    let dir = RunDir::open(manifest)?;
    let state = dir.latest_snapshot()?;
    let bytes = export::to_csv(&state, kind);
    acdc::persist::write_atomic(out, &bytes)?;
    Ok(export::table(&state, kind).1.len())
}
