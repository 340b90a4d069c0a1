//! Prompt templates shipped as text assets with `{placeholder}` substitution.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    TaskSystem,
    TaskInitialNovel,
    TaskInitialSimilar,
    TaskNovel,
    TaskAdaptSimilar,
    TaskHarder,
    TaskEasier,
    TaskReflection,
    EvalSystem,
    TaskEmbedding,
    NoveltySystem,
    NoveltyUser,
    GibberishSystem,
    GibberishUser,
    JudgeSystem,
    JudgeUser,
    BonPairSystem,
    BonPairUser,
    BonMonarchSystem,
    BonMonarchUser,
    RewardUser,
}

impl PromptKind {
    pub const ALL: [PromptKind; 21] = [
        PromptKind::TaskSystem,
        PromptKind::TaskInitialNovel,
        PromptKind::TaskInitialSimilar,
        PromptKind::TaskNovel,
        PromptKind::TaskAdaptSimilar,
        PromptKind::TaskHarder,
        PromptKind::TaskEasier,
        PromptKind::TaskReflection,
        PromptKind::EvalSystem,
        PromptKind::TaskEmbedding,
        PromptKind::NoveltySystem,
        PromptKind::NoveltyUser,
        PromptKind::GibberishSystem,
        PromptKind::GibberishUser,
        PromptKind::JudgeSystem,
        PromptKind::JudgeUser,
        PromptKind::BonPairSystem,
        PromptKind::BonPairUser,
        PromptKind::BonMonarchSystem,
        PromptKind::BonMonarchUser,
        PromptKind::RewardUser,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::TaskSystem => "task_system.txt",
            PromptKind::TaskInitialNovel => "task_initial_novel.txt",
            PromptKind::TaskInitialSimilar => "task_initial_similar.txt",
            PromptKind::TaskNovel => "task_novel.txt",
            PromptKind::TaskAdaptSimilar => "task_adapt_similar.txt",
            PromptKind::TaskHarder => "task_harder.txt",
            PromptKind::TaskEasier => "task_easier.txt",
            PromptKind::TaskReflection => "task_reflection.txt",
            PromptKind::EvalSystem => "eval_system.txt",
            PromptKind::TaskEmbedding => "task_embedding.txt",
            PromptKind::NoveltySystem => "novelty_system.txt",
            PromptKind::NoveltyUser => "novelty_user.txt",
            PromptKind::GibberishSystem => "gibberish_system.txt",
            PromptKind::GibberishUser => "gibberish_user.txt",
            PromptKind::JudgeSystem => "judge_system.txt",
            PromptKind::JudgeUser => "judge_user.txt",
            PromptKind::BonPairSystem => "bon_pair_system.txt",
            PromptKind::BonPairUser => "bon_pair_user.txt",
            PromptKind::BonMonarchSystem => "bon_monarch_system.txt",
            PromptKind::BonMonarchUser => "bon_monarch_user.txt",
            PromptKind::RewardUser => "reward_user.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::TaskSystem => include_str!("../../prompts/task_system.txt"),
            PromptKind::TaskInitialNovel => include_str!("../../prompts/task_initial_novel.txt"),
            PromptKind::TaskInitialSimilar => include_str!("../../prompts/task_initial_similar.txt"),
            PromptKind::TaskNovel => include_str!("../../prompts/task_novel.txt"),
            PromptKind::TaskAdaptSimilar => include_str!("../../prompts/task_adapt_similar.txt"),
            PromptKind::TaskHarder => include_str!("../../prompts/task_harder.txt"),
            PromptKind::TaskEasier => include_str!("../../prompts/task_easier.txt"),
            PromptKind::TaskReflection => include_str!("../../prompts/task_reflection.txt"),
            PromptKind::EvalSystem => include_str!("../../prompts/eval_system.txt"),
            PromptKind::TaskEmbedding => include_str!("../../prompts/task_embedding.txt"),
            PromptKind::NoveltySystem => include_str!("../../prompts/novelty_system.txt"),
            PromptKind::NoveltyUser => include_str!("../../prompts/novelty_user.txt"),
            PromptKind::GibberishSystem => include_str!("../../prompts/gibberish_system.txt"),
            PromptKind::GibberishUser => include_str!("../../prompts/gibberish_user.txt"),
            PromptKind::JudgeSystem => include_str!("../../prompts/judge_system.txt"),
            PromptKind::JudgeUser => include_str!("../../prompts/judge_user.txt"),
            PromptKind::BonPairSystem => include_str!("../../prompts/bon_pair_system.txt"),
            PromptKind::BonPairUser => include_str!("../../prompts/bon_pair_user.txt"),
            PromptKind::BonMonarchSystem => include_str!("../../prompts/bon_monarch_system.txt"),
            PromptKind::BonMonarchUser => include_str!("../../prompts/bon_monarch_user.txt"),
            PromptKind::RewardUser => include_str!("../../prompts/reward_user.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    texts: BTreeMap<PromptKind, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            texts: PromptKind::ALL
                .iter()
                .map(|&k| (k, k.builtin().to_string()))
                .collect(),
        }
    }
}

impl PromptSet {
    /// Built-in templates, overridden by any same-named file in `dir`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                set.texts.insert(kind, std::fs::read_to_string(&path)?);
            }
        }
        Ok(set)
    }

    pub fn set(&mut self, kind: PromptKind, text: impl Into<String>) {
        self.texts.insert(kind, text.into());
    }

    pub fn get(&self, kind: PromptKind) -> &str {
        &self.texts[&kind]
    }

    pub fn render(&self, kind: PromptKind, vars: &[(&str, &str)]) -> String {
        render_template(self.get(kind), vars)
    }
}

/// Replaces `{name}` for every `name` in `vars` in a single left-to-right pass;
/// inserted values are never rescanned and unknown braces are left alone.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
