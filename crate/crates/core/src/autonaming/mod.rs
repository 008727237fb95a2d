//! Automated latent naming with a vision-language model.
//!
//! 1. The top-activating images of a latent go to the model in one request,
//!    which answers with a one-line description of their shared concept.
//! 2. The description is scored by detection: a balanced set of activating
//!    and non-activating images is shown one image per request, the model
//!    answers yes/no, and accuracy is computed over the parsed answers.
//!
//! The model sits behind [`VlmClient`]; [`HttpVlmClient`] speaks a minimal
//! chat-completion JSON protocol and the mocks in [`mock`] make the whole
//! flow testable offline.

mod client;
mod detection;
pub mod mock;
mod request;
mod transcript;

pub use client::{
    extract_answer_text, send_with_retry, ClientError, HttpVlmClient, RetryPolicy, VlmClient,
    VlmEndpointConfig,
};
pub use detection::{
    build_detection_set, parse_yes_no, rank_findings, run_detection, ConceptFinding,
    DetectionConfig, DetectionContext, DetectionSet, ReportRow,
};
pub use request::{
    build_detection_prompt, build_naming_prompt, ContentPart, ImageManifest, ImageRef, ImageSource,
    Message, Phase, Probe, PromptOptions, VlmRequest, DEFAULT_DETECTION_TEMPLATE,
    DEFAULT_NAMING_TEMPLATE,
};
pub use transcript::{TranscriptRecord, TranscriptWriter};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NamingError {
    #[error("endpoint unreachable after {attempts} attempts: {last}")]
    EndpointUnreachable { attempts: usize, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("model returned an empty concept")]
    EmptyConcept,
    #[error("cannot load image {path}: {reason}")]
    ImageLoadFailure { path: String, reason: String },
    #[error("request payload of {bytes} bytes exceeds limit {limit}")]
    OversizePayload { bytes: usize, limit: usize },
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("neuron {neuron}: {available} positive candidates, need {needed}")]
    InsufficientPositives {
        neuron: usize,
        available: usize,
        needed: usize,
    },
    #[error("neuron {neuron}: {available} negative candidates, need {needed}")]
    InsufficientNegatives {
        neuron: usize,
        available: usize,
        needed: usize,
    },
    #[error("{unparseable} of {total} detection answers were unparseable")]
    TooManyUnparseable { unparseable: usize, total: usize },
    #[error("neuron index {index} out of range for {len} neurons")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("transcript: {0}")]
    Transcript(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NamingError>;

/// Everything needed to name one latent.
pub struct NamingInputs<'a> {
    pub neuron_id: usize,
    /// Top-activating samples, strongest first.
    pub images: &'a [ImageRef],
    pub template: &'a str,
    pub options: &'a PromptOptions,
}

/// Result of [`name_neuron`].
#[derive(Debug, Clone, PartialEq)]
pub struct NamingOutcome {
    pub concept: String,
    pub attempts: usize,
}

/// Asks the model for the shared concept of `inputs.images`.
///
/// The first non-empty line of the answer, trimmed, is the concept. Every
/// request/response pair is appended to `transcript` when one is given.
pub fn name_neuron(
    client: &dyn VlmClient,
    inputs: &NamingInputs<'_>,
    retry: &RetryPolicy,
    transcript: Option<&TranscriptWriter>,
) -> Result<NamingOutcome> {
    let request = build_naming_prompt(
        inputs.neuron_id,
        inputs.images,
        inputs.template,
        inputs.options,
    )?;
    let (result, attempts) = send_with_retry(client, &request, retry);
    let response = match result {
        Ok(text) => text,
        Err(err) => {
            if let Some(t) = transcript {
                t.append(&request, None, serde_json::Value::Null)?;
            }
            return Err(err);
        }
    };
    let concept = response
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string);
    if let Some(t) = transcript {
        t.append(
            &request,
            Some(&response),
            concept
                .clone()
                .map_or(serde_json::Value::Null, serde_json::Value::String),
        )?;
    }
    let concept = concept.ok_or(NamingError::EmptyConcept)?;
    Ok(NamingOutcome { concept, attempts })
}
