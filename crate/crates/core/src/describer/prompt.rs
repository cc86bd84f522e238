use serde::{Deserialize, Serialize};

use crate::memory::RetrievalBundle;
use crate::model::HierarchyLevel;

const GOAL_TEMPLATE: &str = include_str!("templates/goal.txt");
const STEP_TEMPLATE: &str = include_str!("templates/step.txt");
const SUBSTEP_TEMPLATE: &str = include_str!("templates/substep.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub level: HierarchyLevel,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn for_level(level: HierarchyLevel) -> Self {
        let text = match level {
            HierarchyLevel::Goal => GOAL_TEMPLATE,
            HierarchyLevel::Step => STEP_TEMPLATE,
            HierarchyLevel::Substep => SUBSTEP_TEMPLATE,
        };
        Self { level, text }
    }

    pub fn placeholder(&self) -> &'static str {
        match self.level {
            HierarchyLevel::Goal => "{short_form_step}",
            _ => "{prediction_list}",
        }
    }

    pub fn render(&self, items: &[String]) -> String {
        self.text.replace(self.placeholder(), &serialize_list(items))
    }
}

/// Oldest-first list as a JSON array of strings.
pub fn serialize_list(items: &[String]) -> String {
    serde_json::to_string(items).expect("string lists always serialize")
}

/// Prompt plus the frame handles to attach, in timestamp order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescribeRequest {
    pub level: HierarchyLevel,
    pub prompt: String,
    pub frame_handles: Vec<String>,
    /// Set when a goal request is built without any step predictions.
    pub empty_history: bool,
}

pub fn build_request(bundle: &RetrievalBundle) -> DescribeRequest {
    let template = PromptTemplate::for_level(bundle.level);
    DescribeRequest {
        level: bundle.level,
        prompt: template.render(&bundle.prior_predictions),
        frame_handles: bundle.frames.iter().map(|f| f.handle.clone()).collect(),
        empty_history: bundle.level == HierarchyLevel::Goal && bundle.prior_predictions.is_empty(),
    }
}
