use serde_json::{json, Value};

use super::client::TokenStats;
use crate::error::{Error, Result};
use crate::interval::{DetectionSet, Interval};

/// A verdict as returned by the model, in the model's order. `confidence`
/// runs parallel to `intervals`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationResult {
    pub intervals: Vec<Interval>,
    pub confidence: Vec<u8>,
    pub description: String,
    pub usage: TokenStats,
}

impl VerificationResult {
    /// Wire form: the JSON object the prompt asks for.
    pub fn to_json(&self) -> String {
        let pairs: Vec<[usize; 2]> = self.intervals.iter().map(|iv| [iv.start, iv.end]).collect();
        json!({
            "interval_index": pairs,
            "confidence": self.confidence,
            "abnormal_description": self.description,
        })
        .to_string()
    }
}

/// Body of the first fenced block, if any; otherwise the input unchanged.
fn strip_fences(raw: &str) -> &str {
    let Some(open) = raw.find("```") else {
        return raw;
    };
    let after = &raw[open + 3..];
    // skip an info string such as `json`
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => after,
    };
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

fn first_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (pos, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

fn as_index(v: &Value, last: usize) -> Option<usize> {
    let x = v.as_f64()?;
    if !x.is_finite() {
        return None;
    }
    Some(x.round().clamp(0.0, last as f64) as usize)
}

/// Extracts the first JSON object from a completion (code fences allowed),
/// validates the required fields, clamps intervals to `[0, len-1]`, pads a
/// short confidence list with 1, and clamps confidences to `1..=3`.
pub fn parse_response(raw: &str, len: usize) -> Result<VerificationResult> {
    let bad = |msg: &str| Error::VerificationParse(msg.to_string());
    if len == 0 {
        return Err(bad("series length is zero"));
    }
    let last = len - 1;
    let obj = first_object(strip_fences(raw))
        .or_else(|| first_object(raw))
        .ok_or_else(|| bad("no JSON object in response"))?;

    let pairs = obj
        .get("interval_index")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing interval_index array"))?;
    let mut intervals = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let ends = pair
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| bad("interval_index entries must be [start, end] pairs"))?;
        let (a, b) = match (as_index(&ends[0], last), as_index(&ends[1], last)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(bad("interval endpoints must be numbers")),
        };
        intervals.push(Interval::new(a, b));
    }

    let confs = obj
        .get("confidence")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing confidence array"))?;
    let mut confidence = confs
        .iter()
        .map(|c| {
            c.as_f64()
                .filter(|x| x.is_finite())
                .map(|x| x.round().clamp(1.0, 3.0) as u8)
                .ok_or_else(|| bad("confidence entries must be numbers"))
        })
        .collect::<Result<Vec<u8>>>()?;
    if confidence.len() != intervals.len() {
        log::warn!(
            "{} intervals but {} confidences; padding with 1",
            intervals.len(),
            confidence.len()
        );
    }
    confidence.resize(intervals.len(), 1);

    let description = obj
        .get("abnormal_description")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing abnormal_description string"))?
        .to_string();

    Ok(VerificationResult {
        intervals,
        confidence,
        description,
        usage: TokenStats::default(),
    })
}

/// Keeps intervals whose confidence reaches `min_conf`, then sorts and merges.
pub fn filter_confidence(r: &VerificationResult, min_conf: u8) -> DetectionSet {
    DetectionSet::with_confidence(
        r.intervals
            .iter()
            .zip(&r.confidence)
            .filter(|(_, &c)| c >= min_conf)
            .map(|(&iv, &c)| (iv, c))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const WELL_FORMED: &str =
        r#"{"interval_index":[[10,20]],"confidence":[3],"abnormal_description":"spike"}"#;

    #[test]
    fn well_formed() {
        let r = parse_response(WELL_FORMED, 100).unwrap();
        assert_eq!(r.intervals, vec![Interval::new(10, 20)]);
        assert_eq!(r.confidence, vec![3]);
        assert_eq!(r.description, "spike");
    }

    #[test]
    fn fenced_matches_plain() {
        let fenced = format!("Here you go:\n```json\n{WELL_FORMED}\n```\nthanks");
        assert_eq!(
            parse_response(&fenced, 100).unwrap(),
            parse_response(WELL_FORMED, 100).unwrap()
        );
    }

    #[test]
    fn short_confidence_is_padded() {
        let raw = r#"{"interval_index":[[1,2],[5,9]],"confidence":[3],"abnormal_description":""}"#;
        assert_eq!(parse_response(raw, 100).unwrap().confidence, vec![3, 1]);
    }

    #[test]
    fn clamps_out_of_range() {
        let raw =
            r#"{"interval_index":[[-4,3],[90,250]],"confidence":[7,0],"abnormal_description":"x"}"#;
        let r = parse_response(raw, 100).unwrap();
        assert_eq!(
            r.intervals,
            vec![Interval::new(0, 3), Interval::new(90, 99)]
        );
        assert_eq!(r.confidence, vec![3, 1]);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(matches!(
            parse_response("no idea", 10),
            Err(Error::VerificationParse(_))
        ));
        assert!(parse_response(r#"{"confidence":[1]}"#, 10).is_err());
    }

    #[test]
    fn filter_examples() {
        let r = VerificationResult {
            intervals: vec![Interval::new(1, 2), Interval::new(5, 6)],
            confidence: vec![1, 3],
            ..Default::default()
        };
        assert_eq!(filter_confidence(&r, 2).intervals(), &[Interval::new(5, 6)]);
        let r = VerificationResult {
            intervals: vec![Interval::new(5, 10), Interval::new(8, 12)],
            confidence: vec![2, 3],
            ..Default::default()
        };
        assert_eq!(
            filter_confidence(&r, 2).intervals(),
            &[Interval::new(5, 12)]
        );
        let r = VerificationResult {
            intervals: vec![Interval::new(5, 10)],
            confidence: vec![1],
            ..Default::default()
        };
        assert!(filter_confidence(&r, 2).is_empty());
    }

    #[test]
    fn round_trip() {
        let r = parse_response(WELL_FORMED, 100).unwrap();
        assert_eq!(parse_response(&r.to_json(), 100).unwrap(), r);
    }
}
