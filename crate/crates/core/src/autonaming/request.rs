use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NamingError, Result};

/// `{count}` is replaced by the number of attached images.
pub const DEFAULT_NAMING_TEMPLATE: &str = "The following {count} images all strongly activate \
the same internal feature of an image model. Identify the single concept they share. It may be \
a pathology, an anatomical finding, a device, patient positioning or an image artifact. Reply \
with exactly one line containing only a short description of that concept.";

/// `{concept}` is replaced by the concept under test.
pub const DEFAULT_DETECTION_TEMPLATE: &str = "Concept: {concept}\nDoes the following image \
show this concept? Reply with a single word, yes or no.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Naming,
    Detection,
}

/// What a request is about. Never sent over the wire; mocks use it to answer
/// without decoding images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Probe {
    pub neuron_id: usize,
    pub phase: Phase,
    pub sample_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentPart {
    Text { text: String },
    Image { base64: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: Vec<ContentPart>,
}

/// Chat-completion request body plus local routing metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
    #[serde(skip)]
    pub probe: Probe,
}

impl VlmRequest {
    /// Canonical JSON encoding (object keys sorted). Re-encoding a request
    /// parsed back from these bytes reproduces them exactly.
    pub fn wire_bytes(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("request serializes");
        serde_json::to_vec(&value).expect("value serializes")
    }

    /// Hex SHA-256 of [`VlmRequest::wire_bytes`].
    pub fn digest(&self) -> String {
        hex_digest(&self.wire_bytes())
    }

    pub fn image_count(&self) -> usize {
        self.messages
            .iter()
            .flat_map(|m| &m.content)
            .filter(|p| matches!(p, ContentPart::Image { .. }))
            .count()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptOptions {
    pub model: String,
    pub temperature: f64,
    pub max_images: usize,
    pub max_payload_bytes: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            model: "medgemma".into(),
            temperature: 0.0,
            max_images: 10,
            max_payload_bytes: 32 << 20,
        }
    }
}

/// An image for one sample. Samples without a file (synthetic data) get a
/// small placeholder payload naming the sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub sample_index: usize,
    pub path: Option<PathBuf>,
}

impl ImageRef {
    pub fn load_bytes(&self) -> Result<Vec<u8>> {
        match &self.path {
            Some(p) => fs::read(p).map_err(|e| NamingError::ImageLoadFailure {
                path: p.display().to_string(),
                reason: e.to_string(),
            }),
            None => Ok(format!("placeholder-image:sample={}", self.sample_index).into_bytes()),
        }
    }

    fn base64(&self) -> Result<String> {
        Ok(base64::engine::general_purpose::STANDARD.encode(self.load_bytes()?))
    }
}

/// Sample index to image file, read from a `sample_index,path` CSV.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageManifest {
    pub paths: BTreeMap<usize, PathBuf>,
}

impl ImageManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let load_err = |reason: String| NamingError::ImageLoadFailure {
            path: path.display().to_string(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut paths = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (idx, file) = line
                .split_once(',')
                .ok_or_else(|| load_err(format!("line {}: expected `index,path`", i + 1)))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| load_err(format!("line {}: bad sample index", i + 1)))?;
            let file = PathBuf::from(file.trim());
            paths.insert(
                idx,
                if file.is_absolute() {
                    file
                } else {
                    base.join(file)
                },
            );
        }
        Ok(Self { paths })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum ImageSource {
    Manifest(ImageManifest),
    #[default]
    Placeholder,
}

impl ImageSource {
    pub fn image(&self, sample_index: usize) -> Result<ImageRef> {
        match self {
            ImageSource::Placeholder => Ok(ImageRef {
                sample_index,
                path: None,
            }),
            ImageSource::Manifest(m) => m
                .paths
                .get(&sample_index)
                .map(|p| ImageRef {
                    sample_index,
                    path: Some(p.clone()),
                })
                .ok_or_else(|| NamingError::ImageLoadFailure {
                    path: format!("<manifest entry {sample_index}>"),
                    reason: "sample missing from manifest".into(),
                }),
        }
    }

    pub fn images(&self, samples: &[usize]) -> Result<Vec<ImageRef>> {
        samples.iter().map(|&s| self.image(s)).collect()
    }
}

fn check_size(req: &VlmRequest, opts: &PromptOptions) -> Result<()> {
    let bytes = req.wire_bytes().len();
    if bytes > opts.max_payload_bytes {
        return Err(NamingError::OversizePayload {
            bytes,
            limit: opts.max_payload_bytes,
        });
    }
    Ok(())
}

/// One user message: the instruction text, then every image in the given
/// (activation) order.
pub fn build_naming_prompt(
    neuron_id: usize,
    images: &[ImageRef],
    template: &str,
    opts: &PromptOptions,
) -> Result<VlmRequest> {
    if images.is_empty() || images.len() > opts.max_images {
        return Err(NamingError::InvalidPrompt(format!(
            "naming needs 1..={} images, got {}",
            opts.max_images,
            images.len()
        )));
    }
    let mut content = vec![ContentPart::Text {
        text: template.replace("{count}", &images.len().to_string()),
    }];
    for img in images {
        content.push(ContentPart::Image {
            base64: img.base64()?,
        });
    }
    let req = VlmRequest {
        model: opts.model.clone(),
        temperature: opts.temperature,
        messages: vec![Message {
            role: "user".into(),
            content,
        }],
        probe: Probe {
            neuron_id,
            phase: Phase::Naming,
            sample_index: None,
        },
    };
    check_size(&req, opts)?;
    Ok(req)
}

/// Yes/no query for a single image against `concept`.
pub fn build_detection_prompt(
    neuron_id: usize,
    image: &ImageRef,
    concept: &str,
    template: &str,
    opts: &PromptOptions,
) -> Result<VlmRequest> {
    let req = VlmRequest {
        model: opts.model.clone(),
        temperature: opts.temperature,
        messages: vec![Message {
            role: "user".into(),
            content: vec![
                ContentPart::Text {
                    text: template.replace("{concept}", concept),
                },
                ContentPart::Image {
                    base64: image.base64()?,
                },
            ],
        }],
        probe: Probe {
            neuron_id,
            phase: Phase::Detection,
            sample_index: Some(image.sample_index),
        },
    };
    check_size(&req, opts)?;
    Ok(req)
}
