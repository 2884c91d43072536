//! Character error rate and language-identification accuracy.
//!
//! Transcript tokens map one-to-one to characters in the synthetic setup, so
//! CER is computed directly over token id sequences. The corpus-level rate is
//! edit-weighted: total edits over total reference length, not a mean of
//! per-utterance rates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ActivePrompts, BaseModel};
use crate::synthdata::Utterance;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditBreakdown {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein distance with a full DP table and backtrace.
/// Returns the edit breakdown and the rate `distance / max(1, |ref|)`.
pub fn cer(reference: &[usize], hypothesis: &[usize]) -> (EditBreakdown, f64) {
    let n = reference.len();
    let m = hypothesis.len();
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = dp[i - 1][j] + 1;
            let ins = dp[i][j - 1] + 1;
            dp[i][j] = sub.min(del).min(ins);
        }
    }

    // backtrace, preferring diagonal, then deletion, then insertion
    let mut edits = EditBreakdown::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if dp[i][j] == dp[i - 1][j - 1] + cost {
                if cost == 1 {
                    edits.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            edits.deletions += 1;
            i -= 1;
        } else {
            edits.insertions += 1;
            j -= 1;
        }
    }
    debug_assert_eq!(edits.distance(), dp[n][m]);
    let rate = dp[n][m] as f64 / n.max(1) as f64;
    (edits, rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEval {
    pub tag: String,
    pub ref_len: usize,
    pub edits: EditBreakdown,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Aggregate {
    pub total_edits: usize,
    pub total_ref_len: usize,
}

impl Aggregate {
    pub fn rate(&self) -> f64 {
        self.total_edits as f64 / self.total_ref_len.max(1) as f64
    }

    fn absorb(&mut self, edits: &EditBreakdown, ref_len: usize) {
        self.total_edits += edits.distance();
        self.total_ref_len += ref_len;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CerReport {
    pub utterances: Vec<UtteranceEval>,
    pub per_language: BTreeMap<String, Aggregate>,
    pub overall: Aggregate,
    /// Utterances evaluated with an empty reference (denominator clamped to 1).
    pub empty_reference_count: usize,
    /// Trainable parameter count of the evaluated configuration, when known.
    pub trainable_params: Option<usize>,
}

impl CerReport {
    pub fn record(&mut self, tag: &str, ref_len: usize, edits: EditBreakdown, truncated: bool) {
        if ref_len == 0 {
            self.empty_reference_count += 1;
        }
        self.per_language
            .entry(tag.to_string())
            .or_default()
            .absorb(&edits, ref_len);
        self.overall.absorb(&edits, ref_len);
        self.utterances.push(UtteranceEval {
            tag: tag.to_string(),
            ref_len,
            edits,
            truncated,
        });
    }

    pub fn language_cer(&self, tag: &str) -> Option<f64> {
        self.per_language.get(tag).map(|a| a.rate())
    }

    /// One row of per-language CER percentages plus the average and the
    /// trainable parameter count.
    pub fn render_table(&self, label: &str) -> String {
        let mut header = String::from("method");
        let mut row = label.to_string();
        for (tag, agg) in &self.per_language {
            header.push_str(&format!("\t{tag}"));
            row.push_str(&format!("\t{:.2}", 100.0 * agg.rate()));
        }
        header.push_str("\tavg\t#params");
        row.push_str(&format!("\t{:.2}", 100.0 * self.overall.rate()));
        match self.trainable_params {
            Some(n) => row.push_str(&format!("\t{n}")),
            None => row.push_str("\t/"),
        }
        if self.empty_reference_count > 0 {
            row.push_str(&format!("\t(empty-ref x{})", self.empty_reference_count));
        }
        format!("{header}\n{row}\n")
    }
}

/// Resolves a language tag to its inference configuration.
pub type ActivationResolver<'a> = dyn Fn(&str) -> Result<(usize, ActivePrompts)> + 'a;

/// Greedy-decode every utterance under its language's activation and
/// aggregate edit-weighted CER per language and overall.
pub fn evaluate(
    model: &BaseModel,
    resolve: &ActivationResolver,
    utterances: &[Utterance],
) -> Result<CerReport> {
    let mut report = CerReport::default();
    for utt in utterances {
        let (lang_token, prompts) = resolve(&utt.tag)?;
        let decoded = model.greedy_decode(&utt.features, lang_token, &prompts)?;
        let (edits, _) = cer(&utt.transcript, &decoded.tokens);
        report.record(&utt.tag, utt.transcript.len(), edits, decoded.truncated);
    }
    Ok(report)
}

/// Fraction of labeled segments whose language-identification argmax matches
/// the label. Ties resolve to the lowest index, like every argmax here.
pub fn lid_accuracy(model: &BaseModel, segments: &[Utterance]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::InvalidArgument("no labeled segments".to_string()));
    }
    let tags = model.config.base_language_tags();
    let mut correct = 0usize;
    for utt in segments {
        let truth = tags
            .iter()
            .position(|t| *t == utt.tag)
            .ok_or_else(|| Error::UnknownLanguage(utt.tag.clone()))?;
        let probs = model.identify_language(&utt.features)?;
        let mut best = 0;
        for (j, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = j;
            }
        }
        if best == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / segments.len() as f64)
}
