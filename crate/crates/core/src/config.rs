//! Model size profiles.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub profile: String,
    /// Square input image side; the recurrent core runs at a quarter of it.
    pub image_size: usize,
    pub attention: bool,
    /// Recurrent state channels of the DRAW LSTMs.
    pub state_channels: usize,
    pub canvas_channels: usize,
    pub latent_channels: usize,
    /// Recurrent layers: DRAW steps for the generative model, attention
    /// steps for the discriminative one.
    pub layers: usize,
    pub lstm_kernel: usize,
    pub disc_attention_layers: usize,
}

impl ModelConfig {
    /// Sizes reported for the original experiments.
    pub fn paper(attention: bool) -> Self {
        Self {
            profile: "paper".into(),
            image_size: 32,
            attention,
            state_channels: 128,
            canvas_channels: 128,
            latent_channels: 8,
            layers: 8,
            lstm_kernel: 5,
            disc_attention_layers: 10,
        }
    }

    /// Halved recurrent width for single-machine runs.
    pub fn desk(attention: bool) -> Self {
        Self { profile: "desk".into(), state_channels: 64, canvas_channels: 64, ..Self::paper(attention) }
    }

    /// Narrow, shallow recurrent core that trains in minutes on one CPU core.
    pub fn lite(attention: bool) -> Self {
        Self {
            profile: "lite".into(),
            state_channels: 32,
            canvas_channels: 32,
            latent_channels: 4,
            layers: 4,
            lstm_kernel: 3,
            disc_attention_layers: 4,
            ..Self::paper(attention)
        }
    }

    /// 8x8 images and two recurrent layers, for gradient checks.
    pub fn tiny(attention: bool) -> Self {
        Self {
            profile: "tiny".into(),
            image_size: 8,
            attention,
            state_channels: 4,
            canvas_channels: 4,
            latent_channels: 2,
            layers: 2,
            lstm_kernel: 3,
            disc_attention_layers: 2,
        }
    }

    pub fn by_profile(name: &str, attention: bool) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(attention)),
            "desk" => Ok(Self::desk(attention)),
            "lite" => Ok(Self::lite(attention)),
            "tiny" => Ok(Self::tiny(attention)),
            other => Err(CoreError::Config(format!("unknown profile `{other}` (paper, desk, lite, tiny)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || !self.image_size.is_multiple_of(4) {
            return Err(CoreError::Config(format!("image size {} must be a multiple of 4 and >= 8", self.image_size)));
        }
        if self.layers == 0 || self.state_channels == 0 || self.canvas_channels == 0 || self.latent_channels == 0 {
            return Err(CoreError::Config("layer and channel counts must be positive".into()));
        }
        if self.lstm_kernel.is_multiple_of(2) {
            return Err(CoreError::Config(format!("lstm kernel {} must be odd", self.lstm_kernel)));
        }
        Ok(())
    }

    /// Side of the recurrent feature grid.
    pub fn grid(&self) -> usize {
        self.image_size / 4
    }

    /// Patches per image side: 8x8 windows at stride 4.
    pub fn patches_per_side(&self) -> usize {
        (self.image_size - PATCH) / PATCH_STRIDE + 1
    }

    pub fn patches_per_image(&self) -> usize {
        self.patches_per_side() * self.patches_per_side()
    }
}

pub const PATCH: usize = 8;
pub const PATCH_STRIDE: usize = 4;
pub const POSE_ENC: usize = 7;
pub const REPR_CHANNELS: usize = 64;
pub const KEY_CHANNELS: usize = 64;
/// Pixels, pose encoding, patch center and key.
pub const VALUE_DIM: usize = PATCH * PATCH * 3 + POSE_ENC + 2 + KEY_CHANNELS;

/// Stored alongside checkpoint parameters and checked on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub iteration: u64,
    pub trained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

/// Training protocol settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub profile: String,
    pub batch_size: usize,
    pub iterations: u64,
    pub context_size: usize,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub sigma_end_step: u64,
    pub eval_interval: u64,
    /// Held-out tasks scored at every evaluation.
    pub eval_tasks: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            profile: "paper".into(),
            batch_size: 36,
            iterations: 4_000_000,
            context_size: 20,
            sigma_start: 1.5,
            sigma_end: 0.3,
            sigma_end_step: 300_000,
            eval_interval: 10_000,
            eval_tasks: 36,
            learning_rate: 5e-4,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self::paper().scaled("desk", 8, 50_000, 1_000, 32)
    }

    /// Budget used with the `lite` model profile.
    pub fn lite() -> Self {
        Self::paper().scaled("lite", 4, 30_000, 1_000, 32)
    }

    /// A handful of iterations, for tests and dry runs.
    pub fn smoke() -> Self {
        Self::paper().scaled("smoke", 2, 20, 10, 2)
    }

    /// Same protocol with a new budget; the anneal ends at a tenth of it.
    pub fn scaled(self, profile: &str, batch_size: usize, iterations: u64, eval_interval: u64, eval_tasks: usize) -> Self {
        Self {
            profile: profile.into(),
            batch_size,
            iterations,
            sigma_end_step: iterations / 10,
            eval_interval,
            eval_tasks,
            ..self
        }
    }

    pub fn by_profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "lite" => Ok(Self::lite()),
            "smoke" | "tiny" => Ok(Self::smoke()),
            other => Err(CoreError::Config(format!("unknown training profile `{other}` (paper, desk, lite, smoke)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch size must be at least 1".into()));
        }
        if self.sigma_end_step > self.iterations {
            return Err(CoreError::Config(format!(
                "anneal end step {} exceeds {} iterations",
                self.sigma_end_step, self.iterations
            )));
        }
        if self.eval_interval == 0 {
            return Err(CoreError::Config("eval interval must be positive".into()));
        }
        if !(self.sigma_end > 0.0 && self.sigma_start > 0.0 && self.learning_rate > 0.0) {
            return Err(CoreError::Config("sigma endpoints and learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Generative,
    Discriminative,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Generative => "generative",
            ModelKind::Discriminative => "discriminative",
        }
    }
}

impl CheckpointMeta {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("meta serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CoreError::Config(format!("checkpoint meta: {e}")))
    }
}
