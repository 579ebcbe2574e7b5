use crate::interval::DetectionSet;

/// Instructions sent with every plot. `{proposals}` and `{length}` are
/// substituted by [`build_prompt`].
pub const PROMPT_TEMPLATE: &str = "\
You are an expert in both time-series analysis and multimodal (vision + language) reasoning. You will be shown:

1. A plot of raw time-series data
   - X-axis: time step index
   - Y-axis: signal value over time

2. Preliminary \"vision-based\" anomaly windows
   - A list of intervals detected by a coarse, purely visual model (may include false positives and false negatives)

Your goal is to integrate both sources (the visual plot and the preliminary windows) and produce a refined, final anomaly detection for the entire series. Specifically:
- Eliminate any preliminary windows that look anomalous in isolation but are consistent with the overall trend.
- Add any intervals that the visual model missed but which break temporal continuity or exhibit clear statistical irregularities (spikes, level shifts, abrupt changes).

Response format
Reply only with a JSON object containing these fields:
{
  \"interval_index\": [[start1,end1],[start2,end2],...],
  \"confidence\":    [c1,c2,...],
  \"abnormal_description\": \"...\"
}
where:
- \"interval_index\": an array of [start, end] pairs (inclusive indices).
- \"confidence\": a parallel array of integers (1-3 scale).
- \"abnormal_description\": a single paragraph (less than 100 words) summarizing why these intervals are anomalous.

Confidence scale:
- 1 = Low confidence: ambiguous or very subtle deviation.
- 2 = Medium confidence: clear local irregularity but moderate global uncertainty.
- 3 = High confidence: strong statistical or contextual evidence of anomaly.

Important:
- Estimate interval boundaries using the tick marks on the x-axis as precisely as possible.
- The very first segment may appear atypical due to slicing; do not flag it without clear anomaly evidence.
- Do not include any extra keys or commentary, only the JSON object above.

The series has {length} time steps (indices 0 to {last}).
Preliminary vision-based anomaly windows (inclusive [start, end] indices): {proposals}
";

/// Renders proposals as `[[s,e],[s,e]]`.
pub fn format_proposals(proposals: &DetectionSet) -> String {
    let body: Vec<String> = proposals
        .intervals()
        .iter()
        .map(|iv| format!("[{},{}]", iv.start, iv.end))
        .collect();
    format!("[{}]", body.join(","))
}

/// The verification prompt for a series of length `len`.
///
/// Multivariate series would need one subplot description per channel; this
/// builder covers the univariate case only.
pub fn build_prompt(proposals: &DetectionSet, len: usize) -> String {
    PROMPT_TEMPLATE
        .replace("{length}", &len.to_string())
        .replace("{last}", &len.saturating_sub(1).to_string())
        .replace("{proposals}", &format_proposals(proposals))
}
