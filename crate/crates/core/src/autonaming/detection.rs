use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_detection_prompt, send_with_retry, ImageSource, NamingError, PromptOptions, Result,
    RetryPolicy, TranscriptWriter, VlmClient,
};
use crate::matrix::Matrix;
use crate::metrics::top_of_column;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub n_per_side: usize,
    /// Fraction of all samples, by activation, that forms the positive pool.
    pub positive_quantile: f64,
    /// Concurrent queries per neuron.
    pub in_flight: usize,
    pub max_unparseable_fraction: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            n_per_side: 10,
            positive_quantile: 0.1,
            in_flight: 4,
            max_unparseable_fraction: 0.2,
        }
    }
}

/// Balanced activating / non-activating samples for one neuron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub neuron_id: usize,
    /// Ascending sample indices.
    pub positives: Vec<usize>,
    /// Ascending sample indices.
    pub negatives: Vec<usize>,
    pub seed: u64,
}

/// Draws `n_per_side` positives uniformly from the top `quantile` of samples
/// (restricted to strictly positive activations) and as many negatives from
/// the zero-activation samples. When fewer than `n_per_side` zeros exist the
/// negatives come from the bottom `quantile` instead, keeping only samples
/// below every positive candidate.
pub fn build_detection_set(
    z: &Matrix,
    neuron: usize,
    n_per_side: usize,
    quantile: f64,
    seed: u64,
) -> Result<DetectionSet> {
    if neuron >= z.cols() {
        return Err(NamingError::IndexOutOfRange {
            index: neuron,
            len: z.cols(),
        });
    }
    let col = z.column(neuron);
    let n = col.len();
    let band = ((quantile * n as f64).ceil() as usize).clamp(1, n.max(1));

    let pool: Vec<usize> = top_of_column(&col, band)
        .into_iter()
        .filter(|&s| col[s] > 0.0)
        .collect();
    if pool.len() < n_per_side || n_per_side == 0 {
        return Err(NamingError::InsufficientPositives {
            neuron,
            available: pool.len(),
            needed: n_per_side,
        });
    }
    let floor = pool.iter().map(|&s| col[s]).fold(f64::INFINITY, f64::min);

    let zeros: Vec<usize> = (0..n).filter(|&s| col[s] == 0.0).collect();
    let negative_pool = if zeros.len() >= n_per_side {
        zeros
    } else {
        let mut bottom: Vec<usize> = (0..n).collect();
        bottom.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        bottom.truncate(band);
        bottom.retain(|&s| col[s] < floor);
        bottom
    };
    if negative_pool.len() < n_per_side {
        return Err(NamingError::InsufficientNegatives {
            neuron,
            available: negative_pool.len(),
            needed: n_per_side,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |from: &[usize]| {
        let mut v: Vec<usize> = index::sample(&mut rng, from.len(), n_per_side)
            .into_iter()
            .map(|i| from[i])
            .collect();
        v.sort_unstable();
        v
    };
    let positives = pick(&pool);
    let negatives = pick(&negative_pool);
    Ok(DetectionSet {
        neuron_id: neuron,
        positives,
        negatives,
        seed,
    })
}

/// Case-insensitive leading `yes` / `no` token. Anything else is `None`.
pub fn parse_yes_no(answer: &str) -> Option<bool> {
    let token: String = answer
        .trim()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match token.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptFinding {
    pub neuron_id: usize,
    pub concept_text: String,
    pub detection_accuracy: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub unparseable: usize,
    pub positive_set: Vec<usize>,
    pub negative_set: Vec<usize>,
    pub transcript_ref: Option<String>,
    /// Per-run accuracies when the finding pools several detection runs.
    #[serde(default)]
    pub repeat_accuracies: Vec<f64>,
}

impl ConceptFinding {
    fn from_counts(
        neuron_id: usize,
        concept_text: &str,
        set: &DetectionSet,
        counts: [usize; 5],
        transcript_ref: Option<String>,
    ) -> Self {
        let [tp, fp, tn, fn_, unparseable] = counts;
        let answered = tp + fp + tn + fn_;
        let detection_accuracy = if answered == 0 {
            0.0
        } else {
            (tp + tn) as f64 / answered as f64
        };
        Self {
            neuron_id,
            concept_text: concept_text.to_string(),
            detection_accuracy,
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
            unparseable,
            positive_set: set.positives.clone(),
            negative_set: set.negatives.clone(),
            transcript_ref,
            repeat_accuracies: vec![detection_accuracy],
        }
    }

    /// Sums the confusion counts of repeated runs for the same neuron and
    /// concept. Sample sets are taken from the first run.
    pub fn pooled(runs: &[ConceptFinding]) -> Option<ConceptFinding> {
        let first = runs.first()?;
        let mut out = first.clone();
        for r in &runs[1..] {
            out.true_positives += r.true_positives;
            out.false_positives += r.false_positives;
            out.true_negatives += r.true_negatives;
            out.false_negatives += r.false_negatives;
            out.unparseable += r.unparseable;
        }
        let answered =
            out.true_positives + out.false_positives + out.true_negatives + out.false_negatives;
        out.detection_accuracy = if answered == 0 {
            0.0
        } else {
            (out.true_positives + out.true_negatives) as f64 / answered as f64
        };
        out.repeat_accuracies = runs.iter().map(|r| r.detection_accuracy).collect();
        Some(out)
    }
}

/// Everything [`run_detection`] needs besides the concept and the set.
pub struct DetectionContext<'a> {
    pub images: &'a ImageSource,
    pub template: &'a str,
    pub options: &'a PromptOptions,
    pub retry: &'a RetryPolicy,
    pub transcript: Option<&'a TranscriptWriter>,
    pub config: &'a DetectionConfig,
}

/// Asks the model, one image per request, whether each sample of `set` shows
/// `concept`. Queries go out in a shuffled order with up to
/// `config.in_flight` in flight; counts are reduced in set order.
pub fn run_detection(
    client: &dyn VlmClient,
    concept: &str,
    set: &DetectionSet,
    ctx: &DetectionContext<'_>,
    shuffle_seed: u64,
) -> Result<ConceptFinding> {
    if concept.trim().is_empty() {
        return Err(NamingError::EmptyConcept);
    }
    let mut queue: Vec<(usize, bool)> = set
        .positives
        .iter()
        .map(|&s| (s, true))
        .chain(set.negatives.iter().map(|&s| (s, false)))
        .collect();
    queue.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

    let requests = queue
        .iter()
        .map(|&(s, _)| {
            let img = ctx.images.image(s)?;
            build_detection_prompt(set.neuron_id, &img, concept, ctx.template, ctx.options)
        })
        .collect::<Result<Vec<_>>>()?;

    let answers: Mutex<BTreeMap<usize, Result<Option<bool>>>> = Mutex::new(BTreeMap::new());
    let next = AtomicUsize::new(0);
    let workers = ctx.config.in_flight.clamp(1, requests.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(req) = requests.get(i) else { break };
                let (res, _) = send_with_retry(client, req, ctx.retry);
                let outcome = match res {
                    Ok(text) => {
                        let parsed = parse_yes_no(&text);
                        let logged = match ctx.transcript {
                            Some(t) => t
                                .append(
                                    req,
                                    Some(&text),
                                    parsed.map_or(serde_json::Value::Null, Into::into),
                                )
                                .map_err(NamingError::from),
                            None => Ok(()),
                        };
                        logged.map(|_| parsed)
                    }
                    Err(e) => {
                        if let Some(t) = ctx.transcript {
                            let _ = t.append(req, None, serde_json::Value::Null);
                        }
                        Err(e)
                    }
                };
                answers.lock().expect("answers mutex").insert(i, outcome);
            });
        }
    });

    let mut by_sample = BTreeMap::new();
    for (i, outcome) in answers.into_inner().expect("answers mutex") {
        by_sample.insert(queue[i], outcome?);
    }
    // tp, fp, tn, fn, unparseable
    let mut counts = [0usize; 5];
    for ((_, truth), answer) in &by_sample {
        let slot = match (truth, answer) {
            (true, Some(true)) => 0,
            (false, Some(true)) => 1,
            (false, Some(false)) => 2,
            (true, Some(false)) => 3,
            (_, None) => 4,
        };
        counts[slot] += 1;
    }
    let total = by_sample.len();
    if counts[4] as f64 > ctx.config.max_unparseable_fraction * total as f64 {
        return Err(NamingError::TooManyUnparseable {
            unparseable: counts[4],
            total,
        });
    }
    Ok(ConceptFinding::from_counts(
        set.neuron_id,
        concept,
        set,
        counts,
        ctx.transcript.map(|t| t.path().display().to_string()),
    ))
}

/// One line of the ranked report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub neuron_id: usize,
    pub accuracy: f64,
    pub concept_text: String,
}

/// Findings at or above `threshold`, one per distinct (trimmed) concept text,
/// sorted by accuracy descending then neuron id ascending. A duplicated
/// concept keeps its most accurate row, the lowest neuron id on ties.
pub fn rank_findings(findings: &[ConceptFinding], threshold: f64) -> Vec<ReportRow> {
    let better = |a: &ReportRow, b: &ReportRow| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(a.neuron_id.cmp(&b.neuron_id))
    };
    let mut best: BTreeMap<&str, ReportRow> = BTreeMap::new();
    for f in findings
        .iter()
        .filter(|f| f.detection_accuracy >= threshold)
    {
        let key = f.concept_text.trim();
        let row = ReportRow {
            neuron_id: f.neuron_id,
            accuracy: f.detection_accuracy,
            concept_text: key.to_string(),
        };
        match best.get(key) {
            Some(cur) if better(cur, &row).is_le() => {}
            _ => {
                best.insert(key, row);
            }
        }
    }
    let mut rows: Vec<ReportRow> = best.into_values().collect();
    rows.sort_by(better);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonaming::mock::{ConstantMock, OracleMock, ScriptedMock};

    fn finding(neuron_id: usize, acc: f64, text: &str) -> ConceptFinding {
        ConceptFinding {
            neuron_id,
            concept_text: text.into(),
            detection_accuracy: acc,
            true_positives: 0,
            false_positives: 0,
            true_negatives: 0,
            false_negatives: 0,
            unparseable: 0,
            positive_set: vec![],
            negative_set: vec![],
            transcript_ref: None,
            repeat_accuracies: vec![],
        }
    }

    /// Neuron 0 active (1..=30) on samples 0..30 of 300.
    fn thirty_of_300() -> Matrix {
        Matrix::from_fn(300, 2, |r, c| match c {
            0 if r < 30 => (r + 1) as f64,
            1 => 0.0,
            _ => 0.0,
        })
    }

    #[test]
    fn set_from_thirty_active() {
        let z = thirty_of_300();
        let s = build_detection_set(&z, 0, 10, 0.1, 4).unwrap();
        assert_eq!(s.positives.len(), 10);
        assert_eq!(s.negatives.len(), 10);
        assert!(s.positives.iter().all(|&p| p < 30));
        assert!(s.negatives.iter().all(|&p| p >= 30));
        assert_eq!(s, build_detection_set(&z, 0, 10, 0.1, 4).unwrap());
        assert_ne!(
            s.positives,
            build_detection_set(&z, 0, 10, 0.1, 5).unwrap().positives
        );
    }

    #[test]
    fn dead_neuron_has_no_positives() {
        let z = thirty_of_300();
        assert!(matches!(
            build_detection_set(&z, 1, 10, 0.1, 0),
            Err(NamingError::InsufficientPositives { available: 0, .. })
        ));
        assert!(matches!(
            build_detection_set(&z, 2, 10, 0.1, 0),
            Err(NamingError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn bottom_band_fallback_without_zeros() {
        let z = Matrix::from_fn(100, 1, |r, _| (r + 1) as f64);
        let s = build_detection_set(&z, 0, 5, 0.1, 1).unwrap();
        assert!(s.positives.iter().all(|&p| p >= 90));
        assert!(s.negatives.iter().all(|&p| p < 10));
        assert!(matches!(
            build_detection_set(&z, 0, 11, 0.1, 1),
            Err(NamingError::InsufficientPositives { available: 10, .. })
        ));
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no("Yes."), Some(true));
        assert_eq!(parse_yes_no("  NO, it does not"), Some(false));
        assert_eq!(parse_yes_no("yesterday"), None);
        assert_eq!(parse_yes_no("maybe"), None);
        assert_eq!(parse_yes_no(""), None);
    }

    fn run(
        client: &dyn VlmClient,
        set: &DetectionSet,
        cfg: &DetectionConfig,
    ) -> Result<ConceptFinding> {
        let ctx = DetectionContext {
            images: &ImageSource::Placeholder,
            template: super::super::DEFAULT_DETECTION_TEMPLATE,
            options: &PromptOptions::default(),
            retry: &RetryPolicy {
                max_retries: 0,
                backoff: std::time::Duration::ZERO,
            },
            transcript: None,
            config: cfg,
        };
        run_detection(client, "concept", set, &ctx, 9)
    }

    fn set() -> DetectionSet {
        build_detection_set(&thirty_of_300(), 0, 10, 0.1, 3).unwrap()
    }

    #[test]
    fn oracle_and_constant_calibration() {
        let oracle = OracleMock::new(|_, s| s < 30, |_| "x".into());
        let f = run(&oracle, &set(), &DetectionConfig::default()).unwrap();
        assert_eq!(f.detection_accuracy, 1.0);
        assert_eq!((f.true_positives, f.true_negatives), (10, 10));
        assert_eq!(oracle.calls(), 20);
        let yes = ConstantMock::new("yes");
        let f = run(&yes, &set(), &DetectionConfig::default()).unwrap();
        assert_eq!(f.detection_accuracy, 0.5);
        assert_eq!(f.false_positives, 10);
    }

    #[test]
    fn unparseable_budget() {
        let cfg = DetectionConfig {
            in_flight: 1,
            ..DetectionConfig::default()
        };
        let mut lines = vec!["yes"; 16];
        lines.extend(["hmm"; 4]);
        let f = run(&ScriptedMock::new(lines.clone()), &set(), &cfg).unwrap();
        assert_eq!(f.unparseable, 4);
        assert_eq!(
            f.true_positives + f.false_positives + f.true_negatives + f.false_negatives,
            16
        );
        lines[0] = "hmm";
        assert!(matches!(
            run(&ScriptedMock::new(lines), &set(), &cfg),
            Err(NamingError::TooManyUnparseable {
                unparseable: 5,
                total: 20
            })
        ));
    }

    #[test]
    fn endpoint_failure_propagates() {
        let err = run(
            &ScriptedMock::new(["!error"]),
            &set(),
            &DetectionConfig::default(),
        );
        assert!(matches!(err, Err(NamingError::EndpointUnreachable { .. })));
    }

    #[test]
    fn ranking_threshold_and_dedup() {
        let rows = rank_findings(
            &[
                finding(1, 0.82, "a"),
                finding(2, 0.75, "b"),
                finding(3, 0.69, "c"),
            ],
            0.70,
        );
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].neuron_id, 1);

        let dup = "Pulmonary edema with cardiomegaly";
        let rows = rank_findings(&[finding(9, 0.71, dup), finding(4, 0.73, dup)], 0.70);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].neuron_id, rows[0].accuracy), (4, 0.73));
    }

    #[test]
    fn ranking_ties_by_neuron_id() {
        let fs = [
            finding(7, 0.8, "x"),
            finding(3, 0.8, "y"),
            finding(5, 0.8, "x"),
        ];
        let rows = rank_findings(&fs, 0.7);
        assert_eq!(
            rows.iter().map(|r| r.neuron_id).collect::<Vec<_>>(),
            vec![3, 5]
        );
    }

    #[test]
    fn pooled_repeats() {
        let mut a = finding(1, 1.0, "c");
        a.true_positives = 10;
        a.true_negatives = 10;
        let mut b = finding(1, 0.5, "c");
        b.true_positives = 10;
        b.false_positives = 10;
        let p = ConceptFinding::pooled(&[a, b]).unwrap();
        assert_eq!(p.detection_accuracy, 0.75);
        assert_eq!(p.repeat_accuracies, vec![1.0, 0.5]);
    }
}
