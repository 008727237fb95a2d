use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use saekit::autonaming::mock::{ConstantMock, OracleMock, RandomMock, ScriptedMock};
use saekit::autonaming::{
    build_detection_set, name_neuron, run_detection, ConceptFinding, DetectionContext,
    HttpVlmClient, ImageManifest, ImageSource, NamingError, NamingInputs, PromptOptions,
    RetryPolicy, TranscriptWriter, VlmClient, DEFAULT_DETECTION_TEMPLATE, DEFAULT_NAMING_TEMPLATE,
};
use saekit::metrics::{activation_matrix, top_activating, NeuronProfile};
use saekit::Matrix;
use serde::{Deserialize, Serialize};

use crate::analyze::load_eval;
use crate::config::{
    PipelineConfig, FINDINGS_FILE, NAMES_FILE, SAE_PROFILES_FILE, TRANSCRIPT_FILE,
};
use crate::error::CliError;
use crate::files::{append_jsonl, read_jsonl, write_jsonl};

/// Offline stand-in for the model endpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum MockSpec {
    /// Names a neuron after its best-correlated label and says `yes` exactly
    /// for samples in its activating pool.
    Oracle,
    /// Seeded coin flips.
    Random,
    /// Always `yes`.
    Yes,
    /// Replays the lines of a file.
    Scripted(PathBuf),
}

impl FromStr for MockSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oracle" => Ok(MockSpec::Oracle),
            "random" => Ok(MockSpec::Random),
            "yes" => Ok(MockSpec::Yes),
            _ => s
                .strip_prefix("scripted:")
                .filter(|p| !p.is_empty())
                .map(|p| MockSpec::Scripted(PathBuf::from(p)))
                .ok_or_else(|| {
                    format!("unknown mock {s:?}; expected oracle, random, yes or scripted:PATH")
                }),
        }
    }
}

/// One line of `names.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameRecord {
    pub neuron_id: usize,
    pub concept: String,
    pub attempts: usize,
    pub images: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamingSummary {
    pub selected: usize,
    pub named: usize,
    pub scored: usize,
    /// Neurons whose detection set could not be built.
    pub skipped: Vec<usize>,
    /// Neurons already complete from an earlier run.
    pub resumed: usize,
    pub mean_accuracy: Option<f64>,
}

/// Neurons sent for naming: alive ones with a defined entropy, strongest
/// label correlation first (ties by id), capped at `max`.
pub fn select_neurons(profiles: &[NeuronProfile], max: usize) -> Vec<usize> {
    let mut eligible: Vec<&NeuronProfile> = profiles
        .iter()
        .filter(|p| p.alive && p.entropy.is_some() && !p.top_samples.is_empty())
        .collect();
    eligible.sort_by(|a, b| {
        b.best_abs_correlation
            .total_cmp(&a.best_abs_correlation)
            .then(a.neuron_id.cmp(&b.neuron_id))
    });
    eligible
        .into_iter()
        .take(max)
        .map(|p| p.neuron_id)
        .collect()
}

struct Stage {
    z: Matrix,
    profiles: BTreeMap<usize, NeuronProfile>,
    images: ImageSource,
    client: Box<dyn VlmClient>,
    transcript: TranscriptWriter,
}

fn prepare(cfg: &PipelineConfig, mock: Option<&MockSpec>) -> Result<Stage, CliError> {
    cfg.validate()?;
    let profiles_path = cfg.out(SAE_PROFILES_FILE);
    cfg.require_inputs(&[("neuron profiles (run analyze first)", profiles_path.clone())])?;
    let ev = load_eval(cfg)?;
    let z = activation_matrix(&ev.params, &ev.x, cfg.metrics.chunk_rows)?;
    let profiles: BTreeMap<usize, NeuronProfile> = read_jsonl::<NeuronProfile>(&profiles_path)?
        .into_iter()
        .map(|p| (p.neuron_id, p))
        .collect();
    let images = match &cfg.paths.image_manifest {
        Some(p) => ImageSource::Manifest(ImageManifest::read(p)?),
        None => ImageSource::Placeholder,
    };
    let client = make_client(cfg, mock, &z, &profiles)?;
    let transcript = TranscriptWriter::open(&cfg.out(TRANSCRIPT_FILE))?;
    Ok(Stage {
        z,
        profiles,
        images,
        client,
        transcript,
    })
}

fn make_client(
    cfg: &PipelineConfig,
    mock: Option<&MockSpec>,
    z: &Matrix,
    profiles: &BTreeMap<usize, NeuronProfile>,
) -> Result<Box<dyn VlmClient>, CliError> {
    Ok(match mock {
        None => Box::new(
            HttpVlmClient::new(&cfg.naming.endpoint)
                .map_err(|e| CliError::Endpoint(e.to_string()))?,
        ),
        Some(MockSpec::Yes) => Box::new(ConstantMock::new("yes")),
        Some(MockSpec::Random) => Box::new(RandomMock::new(cfg.stage_seed("mock/random"))),
        Some(MockSpec::Scripted(p)) => Box::new(
            ScriptedMock::from_file(p)
                .map_err(|e| CliError::Config(format!("script {}: {e}", p.display())))?,
        ),
        Some(MockSpec::Oracle) => {
            let floors = pool_floors(z, cfg.naming.detection.positive_quantile);
            let act = z.clone();
            let names: BTreeMap<usize, String> = profiles
                .iter()
                .map(|(&i, p)| {
                    let name = p
                        .best_label
                        .as_ref()
                        .map_or_else(|| format!("neuron {i}"), |b| b.name.clone());
                    (i, name)
                })
                .collect();
            Box::new(OracleMock::new(
                move |n, s| act.get(s, n) >= floors[n],
                move |n| names.get(&n).cloned().unwrap_or_default(),
            ))
        }
    })
}

/// Smallest activation in each neuron's positive pool (top quantile, strictly
/// positive). Every detection positive is at or above it, every negative
/// below. Neurons without a pool get `+inf`.
fn pool_floors(z: &Matrix, quantile: f64) -> Vec<f64> {
    let band = ((quantile * z.rows() as f64).ceil() as usize).max(1);
    (0..z.cols())
        .map(|n| {
            top_activating(z, n, band)
                .expect("neuron in range")
                .into_iter()
                .map(|s| z.get(s, n))
                .filter(|v| *v > 0.0)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn retry_policy(cfg: &PipelineConfig) -> RetryPolicy {
    RetryPolicy {
        max_retries: cfg.naming.endpoint.max_retries,
        backoff: Duration::from_millis(cfg.naming.backoff_ms),
    }
}

fn prompt_options(cfg: &PipelineConfig) -> PromptOptions {
    PromptOptions {
        model: cfg.naming.endpoint.model_name.clone(),
        temperature: cfg.naming.endpoint.temperature,
        max_images: cfg.naming.n_top,
        max_payload_bytes: cfg.naming.max_payload_bytes,
    }
}

/// Runs `repeats` detection rounds, each with its own set and order, and pools
/// them. `Ok(None)` when no detection set can be built for the neuron.
fn detect_neuron(
    cfg: &PipelineConfig,
    stage: &Stage,
    neuron: usize,
    concept: &str,
) -> Result<Option<ConceptFinding>, CliError> {
    let n = &cfg.naming;
    let template = n
        .detection_template
        .as_deref()
        .unwrap_or(DEFAULT_DETECTION_TEMPLATE);
    let options = prompt_options(cfg);
    let retry = retry_policy(cfg);
    let ctx = DetectionContext {
        images: &stage.images,
        template,
        options: &options,
        retry: &retry,
        transcript: Some(&stage.transcript),
        config: &n.detection,
    };
    let mut runs = Vec::with_capacity(n.repeats);
    for r in 0..n.repeats {
        let set = match build_detection_set(
            &stage.z,
            neuron,
            n.detection.n_per_side,
            n.detection.positive_quantile,
            cfg.stage_seed(&format!("detect/set/{neuron}/{r}")),
        ) {
            Ok(set) => set,
            Err(
                e @ (NamingError::InsufficientPositives { .. }
                | NamingError::InsufficientNegatives { .. }),
            ) => {
                tracing::warn!(neuron, error = %e, "skipping detection");
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        };
        let shuffle = cfg.stage_seed(&format!("detect/shuffle/{neuron}/{r}"));
        runs.push(run_detection(
            stage.client.as_ref(),
            concept,
            &set,
            &ctx,
            shuffle,
        )?);
    }
    Ok(ConceptFinding::pooled(&runs))
}

fn mean_accuracy(findings: &[ConceptFinding]) -> Option<f64> {
    (!findings.is_empty())
        .then(|| findings.iter().map(|f| f.detection_accuracy).sum::<f64>() / findings.len() as f64)
}

/// Names the selected neurons and scores each name by detection.
///
/// Progress is appended to `names.jsonl` and `findings.jsonl` as it happens.
/// A rerun skips neurons that already have a finding and reuses stored names,
/// so completed work is never sent to the model again.
pub fn cmd_name(cfg: &PipelineConfig, mock: Option<&MockSpec>) -> Result<NamingSummary, CliError> {
    let stage = prepare(cfg, mock)?;
    let all: Vec<NeuronProfile> = stage.profiles.values().cloned().collect();
    let selected = select_neurons(&all, cfg.naming.max_neurons);

    let names_path = cfg.out(NAMES_FILE);
    let findings_path = cfg.out(FINDINGS_FILE);
    let mut names: BTreeMap<usize, NameRecord> = read_jsonl::<NameRecord>(&names_path)?
        .into_iter()
        .map(|r| (r.neuron_id, r))
        .collect();
    let done: BTreeSet<usize> = read_jsonl::<ConceptFinding>(&findings_path)?
        .iter()
        .map(|f| f.neuron_id)
        .collect();

    let template = cfg
        .naming
        .naming_template
        .as_deref()
        .unwrap_or(DEFAULT_NAMING_TEMPLATE);
    let options = prompt_options(cfg);
    let retry = retry_policy(cfg);
    let mut skipped = Vec::new();
    let mut resumed = 0;

    for &neuron in &selected {
        if done.contains(&neuron) {
            resumed += 1;
            continue;
        }
        if let std::collections::btree_map::Entry::Vacant(slot) = names.entry(neuron) {
            let profile = &stage.profiles[&neuron];
            let top: Vec<usize> = profile
                .top_samples
                .iter()
                .copied()
                .take(cfg.naming.n_top)
                .collect();
            let imgs = stage.images.images(&top)?;
            let inputs = NamingInputs {
                neuron_id: neuron,
                images: &imgs,
                template,
                options: &options,
            };
            let outcome = match name_neuron(
                stage.client.as_ref(),
                &inputs,
                &retry,
                Some(&stage.transcript),
            ) {
                Ok(o) => o,
                Err(NamingError::EmptyConcept) => {
                    tracing::warn!(neuron, "model returned no concept");
                    skipped.push(neuron);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let rec = NameRecord {
                neuron_id: neuron,
                concept: outcome.concept,
                attempts: outcome.attempts,
                images: top,
            };
            append_jsonl(&names_path, &rec)?;
            slot.insert(rec);
        }
        let concept = names[&neuron].concept.clone();
        match detect_neuron(cfg, &stage, neuron, &concept)? {
            Some(f) => {
                tracing::info!(neuron, accuracy = f.detection_accuracy, concept = %f.concept_text, "scored");
                append_jsonl(&findings_path, &f)?;
            }
            None => skipped.push(neuron),
        }
    }

    let findings: Vec<ConceptFinding> = read_jsonl(&findings_path)?;
    Ok(NamingSummary {
        selected: selected.len(),
        named: names.len(),
        scored: findings.len(),
        skipped,
        resumed,
        mean_accuracy: mean_accuracy(&findings),
    })
}

/// Rescores every stored name from scratch and rewrites `findings.jsonl`.
pub fn cmd_detect(
    cfg: &PipelineConfig,
    mock: Option<&MockSpec>,
) -> Result<NamingSummary, CliError> {
    let names_path = cfg.out(NAMES_FILE);
    cfg.require_inputs(&[("names (run name first)", names_path.clone())])?;
    let stage = prepare(cfg, mock)?;
    let names: Vec<NameRecord> = read_jsonl(&names_path)?;
    let mut findings = Vec::new();
    let mut skipped = Vec::new();
    for rec in &names {
        match detect_neuron(cfg, &stage, rec.neuron_id, &rec.concept)? {
            Some(f) => findings.push(f),
            None => skipped.push(rec.neuron_id),
        }
    }
    write_jsonl(&cfg.out(FINDINGS_FILE), &findings)?;
    Ok(NamingSummary {
        selected: names.len(),
        named: names.len(),
        scored: findings.len(),
        skipped,
        resumed: 0,
        mean_accuracy: mean_accuracy(&findings),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use saekit::metrics::BestLabel;

    fn profile(id: usize, corr: f64, alive: bool) -> NeuronProfile {
        NeuronProfile {
            neuron_id: id,
            entropy: Some(1.0),
            best_label: Some(BestLabel {
                index: 0,
                name: "a".into(),
            }),
            best_abs_correlation: corr,
            alive,
            distribution: Some(vec![1.0]),
            top_samples: vec![0],
        }
    }

    #[test]
    fn mock_spec_parsing() {
        assert_eq!("oracle".parse::<MockSpec>().unwrap(), MockSpec::Oracle);
        assert_eq!(
            "scripted:/tmp/a.txt".parse::<MockSpec>().unwrap(),
            MockSpec::Scripted("/tmp/a.txt".into())
        );
        assert!("scripted:".parse::<MockSpec>().is_err());
        assert!("gpt".parse::<MockSpec>().is_err());
    }

    #[test]
    fn selection_order_and_cap() {
        let ps = [
            profile(0, 0.2, true),
            profile(1, 0.9, true),
            profile(2, 0.95, false),
            profile(3, 0.9, true),
            profile(4, 0.5, true),
        ];
        assert_eq!(select_neurons(&ps, 3), vec![1, 3, 4]);
    }

    #[test]
    fn floors_split_pool_from_rest() {
        let z = Matrix::from_fn(20, 2, |r, c| if c == 0 { r as f64 } else { 0.0 });
        let f = pool_floors(&z, 0.1);
        assert_eq!(f[0], 18.0);
        assert!(f[1].is_infinite());
    }
}
