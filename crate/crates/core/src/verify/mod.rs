//! Verification: show a multimodal model the whole series with the screening
//! proposals, then keep what it confirms with enough confidence.

mod client;
mod parse;
mod prompt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::TimeSeries;
use crate::interval::DetectionSet;
use crate::raster::{render_full_annotated, AnnotatedPlotSpec, RasterImage};

pub use client::{ChatClient, ChatConfig, Completion, MockEchoClient, TokenStats, VisionClient};
pub use parse::{filter_confidence, parse_response, VerificationResult};
pub use prompt::{build_prompt, format_proposals, PROMPT_TEMPLATE};

/// One request per series: the annotated plot, the prompt, and the
/// proposals the prompt lists.
#[derive(Debug, Clone)]
pub struct VerificationRequest {
    pub image: RasterImage,
    pub prompt: String,
    pub proposals: DetectionSet,
    pub series_len: usize,
}

impl VerificationRequest {
    pub fn build(
        series: &TimeSeries,
        proposals: &DetectionSet,
        plot: &AnnotatedPlotSpec,
    ) -> Result<Self> {
        Ok(VerificationRequest {
            image: render_full_annotated(series, plot)?,
            prompt: build_prompt(proposals, series.len()),
            proposals: proposals.clone(),
            series_len: series.len(),
        })
    }
}

/// What happened to one series during verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    #[serde(rename = "final")]
    pub final_set: DetectionSet,
    /// Model verdict before filtering, in wire form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Why the proposals were kept unchanged, if they were.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    pub usage: TokenStats,
    pub retries: u32,
}

/// Calls the client once. An unparseable completion falls back to the
/// proposals; transport and configuration failures propagate.
pub fn verify(
    req: &VerificationRequest,
    client: &dyn VisionClient,
    min_conf: u8,
) -> Result<VerifyOutcome> {
    let completion = client.complete(req)?;
    Ok(match parse_response(&completion.text, req.series_len) {
        Ok(mut result) => {
            result.usage = completion.usage;
            VerifyOutcome {
                final_set: filter_confidence(&result, min_conf).without_confidence(),
                response: serde_json::from_str(&result.to_json()).ok(),
                description: Some(result.description),
                fallback: None,
                usage: completion.usage,
                retries: completion.retries,
            }
        }
        Err(e) => {
            log::warn!("keeping proposals: {e}");
            VerifyOutcome {
                final_set: req.proposals.without_confidence(),
                response: None,
                description: None,
                fallback: Some(e.to_string()),
                usage: completion.usage,
                retries: completion.retries,
            }
        }
    })
}
