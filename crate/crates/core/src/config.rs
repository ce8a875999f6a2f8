//! Flat `key = value` run configuration shared by every pipeline stage.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::codec::{CodecConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::proxy::{MogParams, ProxyConfig};
use crate::sonargen::SceneConfig;
use crate::stream::{DropPolicy, QueuePolicy, TraceStats};

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Invalid(format!("{key}: cannot parse {value:?}")))
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr,)*) => {
        /// Every tunable of a run. Unknown keys are rejected on parse.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $name: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name),)*];

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($name) => self.$name = parse(key, value)?,)*
                    _ => return Err(Error::Invalid(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// The fully resolved config in the same format `parse` reads.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(writeln!(s, "{} = {}", stringify!($name), self.$name).expect("writing to a String");)*
                s
            }
        }
    };
}

run_config! {
    seed: u64 = 0,
    width: usize = 256,
    height: usize = 256,
    n_frames: usize = 64,
    n_objects: usize = 6,
    speckle_strength: f32 = 1.0,
    shadow_on: bool = true,
    reverb_on: bool = true,
    blur_on: bool = true,
    fps: f64 = 15.0,
    /// Clips generated for training.
    n_clips: usize = 20,
    /// Clips generated for evaluation, seeded after the training clips.
    n_heldout: usize = 5,
    mog_k: usize = 3,
    mog_alpha: f32 = 0.01,
    mog_threshold: f32 = 0.7,
    mog_match_sigma: f32 = 2.5,
    mog_initial_variance: f32 = 0.05,
    mog_variance_floor: f32 = 1e-4,
    gf_radius: usize = 8,
    gf_eps: f64 = 1e-3,
    k: usize = 4,
    codebook_size: usize = 64,
    latent_dim: usize = 64,
    lambda1: f32 = 0.6,
    lambda2: f32 = 0.4,
    beta: f32 = 0.25,
    ema_decay: f32 = 0.99,
    dead_epochs: u32 = 5,
    epochs: usize = 40,
    /// Frames sampled from each training clip per epoch.
    frames_per_clip: usize = 8,
    batch_size: usize = 8,
    /// Peak learning rate, decayed along a cosine to `lr_min`.
    lr: f64 = 1e-3,
    lr_min: f64 = 1e-4,
    layer1_weight: f32 = 1.0,
    /// `shared-uplink` or `single-uplink`.
    trace: String = "shared-uplink".into(),
    trace_duration_s: usize = 3600,
    queue_cap_frames: usize = 30,
    /// `oldest` or `newest`.
    drop_policy: String = "oldest".into(),
    propagation_ms: f64 = 0.0,
    refresh_every: u64 = 900,
    stream_width: usize = 1280,
    stream_height: usize = 800,
}

impl RunConfig {
    /// Reads `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Invalid(format!("config line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.trace_stats()?;
        self.drop()?;
        self.codec().validate()?;
        if self.fps <= 0.0 || self.refresh_every == 0 {
            return Err(Error::Invalid("fps and refresh_every must be positive".into()));
        }
        Ok(())
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            width: self.width,
            height: self.height,
            n_frames: self.n_frames,
            n_objects: self.n_objects,
            speckle_strength: self.speckle_strength,
            shadow_on: self.shadow_on,
            reverb_on: self.reverb_on,
            blur_on: self.blur_on,
            fps: self.fps,
        }
    }

    pub fn proxy(&self) -> ProxyConfig {
        ProxyConfig {
            mog: MogParams {
                k: self.mog_k,
                alpha: self.mog_alpha,
                background_threshold: self.mog_threshold,
                match_sigma: self.mog_match_sigma,
                initial_variance: self.mog_initial_variance,
                variance_floor: self.mog_variance_floor,
            },
            radius: self.gf_radius,
            eps: self.gf_eps,
        }
    }

    pub fn codec(&self) -> CodecConfig {
        CodecConfig {
            k: self.k,
            latent_dim: self.latent_dim,
            codebook_size: self.codebook_size,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            beta: self.beta,
            frame_width: self.width,
            frame_height: self.height,
            ema_decay: self.ema_decay,
            dead_epochs: self.dead_epochs,
            ..CodecConfig::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            frames_per_clip: self.frames_per_clip,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_min: self.lr_min,
            seed: self.seed,
            layer1_weight: self.layer1_weight,
            checkpoint: None,
        }
    }

    pub fn trace_stats(&self) -> Result<TraceStats> {
        TraceStats::preset(&self.trace).ok_or_else(|| {
            Error::Invalid(format!("trace: unknown preset {:?} (shared-uplink | single-uplink)", self.trace))
        })
    }

    pub fn drop(&self) -> Result<DropPolicy> {
        match self.drop_policy.as_str() {
            "oldest" => Ok(DropPolicy::Oldest),
            "newest" => Ok(DropPolicy::Newest),
            other => Err(Error::Invalid(format!("drop_policy: {other:?} is not oldest | newest"))),
        }
    }

    pub fn queue(&self) -> Result<QueuePolicy> {
        Ok(QueuePolicy {
            queue_cap_frames: self.queue_cap_frames,
            drop: self.drop()?,
            propagation_ms: self.propagation_ms,
        })
    }
}
