// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::taxonomy::{Functionality, LabelSet};

/// One chat instance: prompt and response token ids plus functionality labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub prompt_tokens: Vec<u32>,
    pub response_tokens: Vec<u32>,
    pub labels: LabelSet,
}

impl InstanceRecord {
    pub fn new(
        id: impl Into<String>,
        prompt_tokens: Vec<u32>,
        response_tokens: Vec<u32>,
        functionality: Functionality,
    ) -> Self {
        Self {
            id: id.into(),
            prompt_tokens,
            response_tokens,
            labels: LabelSet::single(functionality),
        }
    }

    /// The single functionality of an exclusively-labelled instance.
    pub fn functionality(&self) -> Option<Functionality> {
        self.labels.exclusive()
    }
}
