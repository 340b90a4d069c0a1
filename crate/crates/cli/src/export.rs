//! CSV tables for plotting. Each table has one header row naming its
//! columns in a fixed order.

use std::str::FromStr;

use acdc::engine::ArchiveState;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    /// generation, task_epoch, active_coverage, best_fitness, mean_fitness, archive_size
    CoverageOverGenerations,
    /// generation, offspring, new_models, discarded_gibberish, discarded_invalid
    NewModelsPerGen,
    /// generation, task_epoch, vendi_active, vendi_global, active_tasks, global_tasks;
    /// task-phase generations only
    VendiOverEpochs,
    /// generation, harder, easier, novel, accepted, proposed, replaced_impossible;
    /// task-phase generations only
    AdaptationMix,
}

impl FromStr for ExportKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "coverage_over_generations" => Self::CoverageOverGenerations,
            "new_models_per_gen" => Self::NewModelsPerGen,
            "vendi_over_epochs" => Self::VendiOverEpochs,
            "adaptation_mix" => Self::AdaptationMix,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown export kind `{other}` (coverage_over_generations|new_models_per_gen|vendi_over_epochs|adaptation_mix)"
                )))
            }
        })
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

pub fn table(state: &ArchiveState, kind: ExportKind) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let h = &state.history;
    match kind {
        ExportKind::CoverageOverGenerations => (
            vec!["generation", "task_epoch", "active_coverage", "best_fitness", "mean_fitness", "archive_size"],
            h.iter()
                .map(|r| {
                    vec![
                        r.generation.to_string(),
                        r.task_epoch.to_string(),
                        f(r.active_coverage),
                        f(r.best_fitness),
                        f(r.mean_fitness),
                        r.archive_size.to_string(),
                    ]
                })
                .collect(),
        ),
        ExportKind::NewModelsPerGen => (
            vec!["generation", "offspring", "new_models", "discarded_gibberish", "discarded_invalid"],
            h.iter()
                .map(|r| {
                    vec![
                        r.generation.to_string(),
                        r.offspring.to_string(),
                        r.new_models.to_string(),
                        r.discarded_gibberish.to_string(),
                        r.discarded_invalid.to_string(),
                    ]
                })
                .collect(),
        ),
        ExportKind::VendiOverEpochs => (
            vec!["generation", "task_epoch", "vendi_active", "vendi_global", "active_tasks", "global_tasks"],
            h.iter()
                .filter_map(|r| r.task_phase.as_ref().map(|p| (r, p)))
                .map(|(r, p)| {
                    vec![
                        r.generation.to_string(),
                        (r.task_epoch + 1).to_string(),
                        f(p.vendi_active),
                        f(p.vendi_global),
                        r.active_tasks.to_string(),
                        r.global_tasks.to_string(),
                    ]
                })
                .collect(),
        ),
        ExportKind::AdaptationMix => (
            vec!["generation", "harder", "easier", "novel", "accepted", "proposed", "replaced_impossible"],
            h.iter()
                .filter_map(|r| r.task_phase.as_ref().map(|p| (r, p)))
                .map(|(r, p)| {
                    vec![
                        r.generation.to_string(),
                        p.harder.to_string(),
                        p.easier.to_string(),
                        p.novel.to_string(),
                        p.accepted.to_string(),
                        p.proposed.to_string(),
                        p.replaced_impossible.to_string(),
                    ]
                })
                .collect(),
        ),
    }
}

pub fn to_csv(state: &ArchiveState, kind: ExportKind) -> Vec<u8> {
    let (header, rows) = table(state, kind);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
