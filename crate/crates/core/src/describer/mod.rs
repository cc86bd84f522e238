//! Description generation: per-level prompts, reply parsing, a deterministic
//! mock and an HTTP client.

pub mod http;
pub mod prompt;
pub mod response;

use std::sync::atomic::{AtomicUsize, Ordering};

pub use http::{Described, HttpConfig, HttpDescriber, ImageEncoding};
pub use prompt::{build_request, serialize_list, DescribeRequest, PromptTemplate};
pub use response::{format_response, parse_response, DescriberResponse};

use crate::error::Result;
use crate::memory::RetrievalBundle;
use crate::model::HierarchyLevel;

/// Anything that can turn a retrieval bundle into a description.
pub trait Describer: Send + Sync {
    fn describe(&self, bundle: &RetrievalBundle) -> Result<DescriberResponse>;
}

/// Deterministic text from the bundle's level, interval and frame count.
pub fn mock_describe(bundle: &RetrievalBundle) -> DescriberResponse {
    let short = format!(
        "{}[{:.1}-{:.1}]x{}",
        bundle.level,
        bundle.interval.start,
        bundle.interval.end,
        bundle.frames.len()
    );
    if bundle.level == HierarchyLevel::Goal {
        return DescriberResponse { short_form: short, ..Default::default() };
    }
    DescriberResponse {
        long_form_before: format!("{short} observed over {} frames", bundle.frames.len()),
        long_form_after: format!("{short} observed over {} frames, revised", bundle.frames.len()),
        short_form: short,
    }
}

/// [`mock_describe`] behind the [`Describer`] trait, counting calls.
#[derive(Debug, Default)]
pub struct MockDescriber {
    calls: AtomicUsize,
}

impl MockDescriber {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Describer for MockDescriber {
    fn describe(&self, bundle: &RetrievalBundle) -> Result<DescriberResponse> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(mock_describe(bundle))
    }
}
