//! TOML configuration covering every stage; missing keys take defaults.

use std::fs;
use std::path::Path;

use mitosis_core::classification::ClassifierConfig;
use mitosis_core::data::SynthSpec;
use mitosis_core::detection::DetectorConfig;
use mitosis_core::evaluation::EvalConfig;
use mitosis_core::pipeline::{PipelineConfig, TilingConfig};
use mitosis_core::split::SplitConfig;
use mitosis_core::translation::TranslationConfig;
use serde::{Deserialize, Serialize};

use crate::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub merge_nms_iou: f64,
    pub crops_from_translated: bool,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            merge_nms_iou: p.merge_nms_iou,
            crops_from_translated: p.crops_from_translated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Random translation patches drawn per slide for each domain.
    pub translation_patches_per_slide: usize,
    /// Translate training slides before cutting detector tiles and
    /// classifier crops, when a translation checkpoint is given.
    pub translate_training_slides: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            translation_patches_per_slide: 16,
            translate_training_slides: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub translation: TranslationConfig,
    pub detector: DetectorConfig,
    pub classifier: ClassifierConfig,
    pub tiling: TilingConfig,
    pub inference: InferenceSection,
    pub training: TrainingSection,
    pub evaluation: EvalConfig,
    pub split: SplitConfig,
    pub synth: SynthSpec,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text).map_err(|source| Error::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is plain data")
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            translation: self.translation.clone(),
            detector: self.detector.clone(),
            classifier: self.classifier.clone(),
            tiling: self.tiling.clone(),
            merge_nms_iou: self.inference.merge_nms_iou,
            crops_from_translated: self.inference.crops_from_translated,
        }
    }
}
