//! Local explanations by token masking and a proximity-weighted linear
//! surrogate.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{score_all, AdapterRequest, BatchOptions, Classifier, ClassifierError, ScoreOutcome};
use crate::lexicon::tokenize;

pub const RIDGE_DAMPING: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("invalid explain config: {0}")]
    InvalidConfig(String),
    #[error("sentence has no tokens")]
    NoTokens,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("surrogate system is singular")]
    Singular,
}

impl ExplainError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExplainError::InvalidConfig(_) => "InvalidConfig",
            ExplainError::NoTokens => "NoTokens",
            ExplainError::Classifier(e) => e.kind(),
            ExplainError::Singular => "Singular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub n_samples: usize,
    /// `None` means 0.75 × sqrt(token count).
    pub kernel_width: Option<f64>,
    pub top_k: usize,
    pub seed: u64,
    /// Classifier requests per call.
    pub batch_size: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            n_samples: 1000,
            kernel_width: None,
            top_k: 8,
            seed: 0,
            batch_size: 256,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<(), ExplainError> {
        if self.n_samples < 10 {
            return Err(ExplainError::InvalidConfig(format!(
                "n_samples {} < 10",
                self.n_samples
            )));
        }
        if self.top_k < 1 {
            return Err(ExplainError::InvalidConfig("top_k must be at least 1".into()));
        }
        if let Some(w) = self.kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(ExplainError::InvalidConfig(format!(
                    "kernel width {w} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn width_for(&self, n_tokens: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (n_tokens as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token: String,
    /// Token ordinal in the sentence.
    pub position: usize,
    /// Character offsets, end exclusive.
    pub start: usize,
    pub end: usize,
    /// Positive pushes toward Biased.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub item_id: String,
    pub text: String,
    /// Sorted by |weight| descending, ties by position.
    pub token_weights: Vec<TokenWeight>,
    pub intercept: f64,
    /// Weighted R² of the surrogate on the samples.
    pub local_fit_r2: f64,
    /// Set when the classifier was constant over every sample.
    pub degenerate_variance: bool,
    pub original_score: f64,
    pub n_samples: usize,
    pub kernel_width: f64,
    pub seed: u64,
}

/// Presence masks over `n_tokens` positions. The first mask keeps every
/// token; each later one drops a uniform count in 1..=n of uniformly chosen
/// positions.
pub fn perturb_samples(n_tokens: usize, n_samples: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(n_samples);
    if n_samples == 0 {
        return masks;
    }
    masks.push(vec![true; n_tokens]);
    for _ in 1..n_samples {
        let mut mask = vec![true; n_tokens];
        if n_tokens > 0 {
            let drop = rng.gen_range(1..=n_tokens);
            for i in sample(&mut rng, n_tokens, drop) {
                mask[i] = false;
            }
        }
        masks.push(mask);
    }
    masks
}

/// Kept tokens joined by single spaces.
pub fn masked_text(tokens: &[&str], mask: &[bool]) -> String {
    tokens
        .iter()
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|(t, _)| *t)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Cosine distance between a mask and the all-ones vector.
pub fn cosine_distance(mask: &[bool]) -> f64 {
    let n = mask.len();
    let k = mask.iter().filter(|&&b| b).count();
    if n == 0 || k == 0 {
        return 1.0;
    }
    1.0 - (k as f64 / n as f64).sqrt()
}

pub fn kernel(distance: f64, width: f64) -> f64 {
    (-(distance * distance) / (width * width)).exp()
}

/// Weighted ridge fit of `y ~ b + X w`; the intercept is not damped.
/// Returns (intercept, coefficients).
pub fn weighted_ridge(
    features: &[Vec<bool>],
    targets: &[f64],
    weights: &[f64],
    damping: f64,
) -> Result<(f64, Vec<f64>), ExplainError> {
    let p = features.first().map_or(0, Vec::len) + 1;
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for ((row, &y), &w) in features.iter().zip(targets).zip(weights) {
        let x: Vec<f64> = std::iter::once(1.0)
            .chain(row.iter().map(|&v| if v { 1.0 } else { 0.0 }))
            .collect();
        for i in 0..p {
            if x[i] == 0.0 {
                continue;
            }
            b[i] += w * x[i] * y;
            for j in 0..p {
                a[i][j] += w * x[i] * x[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += damping;
    }
    let solution = solve(a, b)?;
    Ok((solution[0], solution[1..].to_vec()))
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, ExplainError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(ExplainError::Singular);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for (offset, row) in lower.iter_mut().enumerate() {
            let f = row[col] / pivot_row[col];
            if f == 0.0 {
                continue;
            }
            for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[col + 1 + offset] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Explains one prediction of `classifier` on `text`.
///
/// Abstentions score 0. A per-sample inference error fails the explanation.
pub fn explain_instance(
    item_id: &str,
    text: &str,
    classifier: &dyn Classifier,
    config: &ExplainConfig,
) -> Result<Explanation, ExplainError> {
    config.validate()?;
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(ExplainError::NoTokens);
    }
    let words: Vec<&str> = tokens.iter().map(|t| t.text).collect();
    let masks = perturb_samples(words.len(), config.n_samples, config.seed);
    let requests: Vec<AdapterRequest> = masks
        .iter()
        .enumerate()
        .map(|(i, m)| AdapterRequest {
            id: format!("{item_id}#{i}"),
            text: masked_text(&words, m),
            context_before: String::new(),
            context_after: String::new(),
        })
        .collect();
    let options = BatchOptions {
        chunk_size: config.batch_size.max(1),
        max_in_flight: 4,
        retries: 1,
        ..Default::default()
    };
    let scores: Vec<f64> = score_all(classifier, &requests, &options)?
        .into_iter()
        .zip(&requests)
        .map(|((outcome, _), req)| match outcome {
            ScoreOutcome::Score(s) => Ok(s),
            ScoreOutcome::Abstain => Ok(0.0),
            ScoreOutcome::Error(message) => Err(ClassifierError::InferenceError {
                id: req.id.clone(),
                message,
            }),
        })
        .collect::<Result<_, _>>()?;

    let width = config.width_for(words.len());
    let sample_weights: Vec<f64> = masks.iter().map(|m| kernel(cosine_distance(m), width)).collect();
    let original_score = scores[0];
    let degenerate = scores.iter().all(|s| (s - original_score).abs() < 1e-12);
    let (intercept, coefs, r2) = if degenerate {
        (original_score, vec![0.0; words.len()], 1.0)
    } else {
        let (b0, w) = weighted_ridge(&masks, &scores, &sample_weights, RIDGE_DAMPING)?;
        let r2 = weighted_r2(&masks, &scores, &sample_weights, b0, &w);
        (b0, w, r2)
    };

    let mut ranked: Vec<TokenWeight> = tokens
        .iter()
        .zip(&coefs)
        .enumerate()
        .map(|(i, (t, &w))| TokenWeight {
            token: t.text.to_string(),
            position: i,
            start: t.char_start,
            end: t.char_end,
            weight: w,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then(a.position.cmp(&b.position))
    });
    ranked.truncate(config.top_k);
    Ok(Explanation {
        item_id: item_id.to_string(),
        text: text.to_string(),
        token_weights: ranked,
        intercept,
        local_fit_r2: r2,
        degenerate_variance: degenerate,
        original_score,
        n_samples: masks.len(),
        kernel_width: width,
        seed: config.seed,
    })
}

fn weighted_r2(masks: &[Vec<bool>], y: &[f64], w: &[f64], b0: f64, coefs: &[f64]) -> f64 {
    let wsum: f64 = w.iter().sum();
    let mean = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for ((m, &yi), &wi) in masks.iter().zip(y).zip(w) {
        let pred = b0 + m.iter().zip(coefs).filter(|(&on, _)| on).map(|(_, c)| c).sum::<f64>();
        ss_res += wi * (yi - pred).powi(2);
        ss_tot += wi * (yi - mean).powi(2);
    }
    if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Self-contained HTML page: weighted tokens shaded red (toward Biased) or
/// blue (away), opacity proportional to |weight|.
pub fn render_html(explanations: &[Explanation]) -> String {
    let mut body = String::new();
    for e in explanations {
        let max = e
            .token_weights
            .iter()
            .map(|t| t.weight.abs())
            .fold(0.0, f64::max)
            .max(1e-12);
        let chars: Vec<char> = e.text.chars().collect();
        let mut spans: Vec<&TokenWeight> = e.token_weights.iter().collect();
        spans.sort_by_key(|t| t.start);
        let mut cursor = 0;
        let mut sentence = String::new();
        for t in spans {
            sentence.push_str(&escape_html(&chars[cursor..t.start].iter().collect::<String>()));
            let (r, g, b) = if t.weight >= 0.0 { (214, 39, 40) } else { (31, 119, 180) };
            let alpha = (t.weight.abs() / max).clamp(0.0, 1.0);
            sentence.push_str(&format!(
                "<span style=\"background:rgba({r},{g},{b},{alpha:.3})\" title=\"{:+.4}\">{}</span>",
                t.weight,
                escape_html(&chars[t.start..t.end].iter().collect::<String>())
            ));
            cursor = t.end;
        }
        sentence.push_str(&escape_html(&chars[cursor..].iter().collect::<String>()));
        let rows: String = e
            .token_weights
            .iter()
            .map(|t| format!("<tr><td>{}</td><td>{:+.4}</td></tr>", escape_html(&t.token), t.weight))
            .collect();
        body.push_str(&format!(
            "<section><h2>{}</h2><p class=\"s\">{sentence}</p><p>score {:.3}, intercept {:.4}, R\u{b2} {:.3}{}</p><table>{rows}</table></section>\n",
            escape_html(&e.item_id),
            e.original_score,
            e.intercept,
            e.local_fit_r2,
            if e.degenerate_variance { ", constant classifier" } else { "" },
        ));
    }
    format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>explanations</title><style>body{{font-family:sans-serif;max-width:60em;margin:auto}}.s{{font-size:1.2em;line-height:1.8}}td{{padding:0 1em}}</style></head><body>\n{body}</body></html>\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::FnClassifier;

    #[test]
    fn mask_edge_cases() {
        assert_eq!(perturb_samples(4, 1, 9), vec![vec![true; 4]]);
        let one = perturb_samples(1, 50, 3);
        assert!(one.iter().skip(1).all(|m| m == &vec![false]));
        assert_eq!(perturb_samples(6, 100, 5), perturb_samples(6, 100, 5));
    }

    #[test]
    fn distance_and_kernel() {
        assert_eq!(cosine_distance(&[true, true, true, true]), 0.0);
        assert!((cosine_distance(&[true, false, false, false]) - 0.5).abs() < 1e-15);
        assert_eq!(kernel(0.0, 1.0), 1.0);
    }

    #[test]
    fn ridge_recovers_exact_linear_map() {
        let masks: Vec<Vec<bool>> = (0..8u32).map(|m| (0..3).map(|b| m >> b & 1 == 1).collect()).collect();
        let y: Vec<f64> = masks
            .iter()
            .map(|m| 0.1 + 0.5 * f64::from(u8::from(m[0])) - 0.2 * f64::from(u8::from(m[2])))
            .collect();
        let (b0, w) = weighted_ridge(&masks, &y, &[1.0; 8], 0.0).unwrap();
        assert!((b0 - 0.1).abs() < 1e-12);
        assert!((w[0] - 0.5).abs() < 1e-12 && w[1].abs() < 1e-12 && (w[2] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn constant_classifier_is_degenerate() {
        let c = FnClassifier::new("const", |_: &str| 0.5);
        let e = explain_instance("x", "een grote stroom mensen", &c, &ExplainConfig::default()).unwrap();
        assert!(e.degenerate_variance);
        assert!(e.token_weights.iter().all(|t| t.weight == 0.0));
    }

    #[test]
    fn planted_token_is_top() {
        let c = FnClassifier::new(
            "plant",
            |t: &str| if t.split(' ').any(|w| w == "stroom") { 1.0 } else { 0.0 },
        );
        let e = explain_instance(
            "x",
            "in 2022 kende men een grote stroom vluchtelingen",
            &c,
            &ExplainConfig::default(),
        )
        .unwrap();
        assert_eq!(e.token_weights[0].token, "stroom");
        assert!(e.token_weights[0].weight > 0.0);
        let html = render_html(&[e]);
        assert!(html.contains("title=\"+") && html.starts_with("<!DOCTYPE html>"));
    }

    #[test]
    fn config_validation() {
        let bad = ExplainConfig {
            n_samples: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
