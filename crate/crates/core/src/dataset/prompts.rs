//! Instruction prompts: every action phrasing crossed with every target
//! region description. Regions, not phrasings, decide the task.

use serde::{Deserialize, Serialize};

use crate::magsim::TaskId;

const ACTIONS: [&str; 10] = [
    "Push the cargo to",
    "Move the cargo into",
    "Transport the object to",
    "Deliver the cargo to",
    "Guide the microrobot to carry the cargo to",
    "Bring the object to",
    "Carry the cargo into",
    "Steer the cargo toward",
    "Relocate the object to",
    "Shift the cargo over to",
];

const REGIONS: [(&str, TaskId); 7] = [
    ("target region A", TaskId::A),
    ("the well past the shallow bend", TaskId::A),
    ("the right-hand chamber", TaskId::A),
    ("target region B", TaskId::B),
    ("the lower pocket beyond the right-angle turn", TaskId::B),
    ("target region C", TaskId::C),
    ("the far chamber behind the hairpin", TaskId::C),
];

pub const N_PROMPTS: usize = ACTIONS.len() * REGIONS.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBank {
    pub prompts: Vec<String>,
    /// Indexed by prompt id.
    pub prompt_to_task: Vec<TaskId>,
}

/// Builds the fixed 70-entry bank. Prompt id = `region * 10 + phrasing`.
pub fn build_prompt_bank() -> PromptBank {
    let mut prompts = Vec::with_capacity(N_PROMPTS);
    let mut prompt_to_task = Vec::with_capacity(N_PROMPTS);
    for (region, task) in REGIONS {
        for action in ACTIONS {
            prompts.push(format!("{action} {region}."));
            prompt_to_task.push(task);
        }
    }
    PromptBank {
        prompts,
        prompt_to_task,
    }
}

impl PromptBank {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn task_of(&self, prompt_id: usize) -> Option<TaskId> {
        self.prompt_to_task.get(prompt_id).copied()
    }

    pub fn prompts_for(&self, task: TaskId) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.prompt_to_task[i] == task)
            .collect()
    }

    pub fn region_of(prompt_id: usize) -> usize {
        prompt_id / ACTIONS.len()
    }
}

/// Task of a prompt id without materializing the bank.
pub fn task_of_prompt(prompt_id: usize) -> Option<TaskId> {
    REGIONS.get(prompt_id / ACTIONS.len()).map(|r| r.1)
}
