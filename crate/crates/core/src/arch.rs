//! Declarative network architecture and seeded weight generation.
//!
//! The text form is one `key = value` pair per line; `#` starts a comment.
//! Layer lists are comma separated, each layer written as
//! `<filters>x<kh>x<kw>/<stride><down|up>[:lrelu]`, e.g. `64x5x5/2down:lrelu`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::entropy::FactorizedPrior;
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayer, Mode};
use crate::weights::{
    ModelWeights, Precision, SubNetwork, HYPER_DECODER, HYPER_ENCODER, MV_DECODER, MV_ENCODER, POSTPROC,
};

/// Frame channels (3) + target channels (3) + flow (2).
pub const ENCODER_INPUT_CHANNELS: usize = 8;
pub const POSTPROC_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub mode: Mode,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(filters: usize, kernel: usize, stride: usize, mode: Mode, activation: Activation) -> Self {
        Self { filters, kernel_h: kernel, kernel_w: kernel, stride, mode, activation }
    }

    fn parse(token: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse layer spec '{token}'"));
        let (shape, rest) = token.split_once('/').ok_or_else(bad)?;
        let (stride_mode, activation) = match rest.split_once(':') {
            Some((s, "lrelu")) => (s, Activation::LeakyRelu),
            Some((s, "none")) => (s, Activation::None),
            Some(_) => return Err(bad()),
            None => (rest, Activation::None),
        };
        let (stride, mode) = if let Some(s) = stride_mode.strip_suffix("down") {
            (s, Mode::Down)
        } else if let Some(s) = stride_mode.strip_suffix("up") {
            (s, Mode::Up)
        } else {
            return Err(bad());
        };
        let dims: Vec<usize> = shape.split('x').map(|d| d.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let [filters, kernel_h, kernel_w] = dims[..] else { return Err(bad()) };
        let stride = stride.parse().map_err(|_| bad())?;
        if filters == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 {
            return Err(bad());
        }
        Ok(Self { filters, kernel_h, kernel_w, stride, mode, activation })
    }

    fn render(&self) -> String {
        let mode = match self.mode {
            Mode::Down => "down",
            Mode::Up => "up",
        };
        let act = match self.activation {
            Activation::LeakyRelu => ":lrelu",
            Activation::None => "",
        };
        format!("{}x{}x{}/{}{}{}", self.filters, self.kernel_h, self.kernel_w, self.stride, mode, act)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureConfig {
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub sdc_taps: usize,
    pub mv_encoder: Vec<LayerSpec>,
    pub mv_decoder: Vec<LayerSpec>,
    pub hyper_encoder: Vec<LayerSpec>,
    pub hyper_decoder: Vec<LayerSpec>,
    pub postproc: Vec<LayerSpec>,
}

use Activation::{LeakyRelu as Lr, None as Lin};
use Mode::{Down, Up};

impl Default for ArchitectureConfig {
    fn default() -> Self {
        let taps = 5;
        Self {
            latent_channels: 192,
            hyper_channels: 128,
            sdc_taps: taps,
            mv_encoder: vec![
                LayerSpec::new(64, 5, 2, Down, Lr),
                LayerSpec::new(128, 5, 2, Down, Lr),
                LayerSpec::new(128, 5, 2, Down, Lr),
                LayerSpec::new(192, 5, 2, Down, Lin),
            ],
            mv_decoder: vec![
                LayerSpec::new(128, 5, 2, Up, Lr),
                LayerSpec::new(128, 5, 2, Up, Lr),
                LayerSpec::new(64, 5, 2, Up, Lr),
                LayerSpec::new(2 + 2 * taps + 3, 5, 2, Up, Lin),
            ],
            hyper_encoder: vec![
                LayerSpec::new(128, 3, 1, Down, Lr),
                LayerSpec::new(128, 5, 2, Down, Lr),
                LayerSpec::new(128, 5, 2, Down, Lin),
            ],
            hyper_decoder: vec![
                LayerSpec::new(128, 5, 2, Up, Lr),
                LayerSpec::new(192, 5, 2, Up, Lr),
                LayerSpec::new(384, 3, 1, Down, Lin),
            ],
            postproc: postproc_specs(64),
        }
    }
}

fn postproc_specs(hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(hidden, 3, 1, Down, Lr),
        LayerSpec::new(hidden, 3, 1, Down, Lr),
        LayerSpec::new(hidden, 3, 1, Down, Lr),
        LayerSpec::new(3, 3, 1, Down, Lin),
    ]
}

impl ArchitectureConfig {
    /// Narrow variant with the same stride structure, for fast tests and sweeps.
    pub fn compact() -> Self {
        let taps = 5;
        Self {
            latent_channels: 32,
            hyper_channels: 16,
            sdc_taps: taps,
            mv_encoder: vec![
                LayerSpec::new(16, 5, 2, Down, Lr),
                LayerSpec::new(24, 5, 2, Down, Lr),
                LayerSpec::new(24, 5, 2, Down, Lr),
                LayerSpec::new(32, 5, 2, Down, Lin),
            ],
            mv_decoder: vec![
                LayerSpec::new(24, 5, 2, Up, Lr),
                LayerSpec::new(24, 5, 2, Up, Lr),
                LayerSpec::new(16, 5, 2, Up, Lr),
                LayerSpec::new(2 + 2 * taps + 3, 5, 2, Up, Lin),
            ],
            hyper_encoder: vec![
                LayerSpec::new(16, 3, 1, Down, Lr),
                LayerSpec::new(16, 5, 2, Down, Lr),
                LayerSpec::new(16, 5, 2, Down, Lin),
            ],
            hyper_decoder: vec![
                LayerSpec::new(16, 5, 2, Up, Lr),
                LayerSpec::new(32, 5, 2, Up, Lr),
                LayerSpec::new(64, 3, 1, Down, Lin),
            ],
            postproc: postproc_specs(8),
        }
    }

    pub fn head_channels(&self) -> usize {
        2 + 2 * self.sdc_taps + 3
    }

    pub fn input_channels(&self, network: &str) -> Option<usize> {
        Some(match network {
            MV_ENCODER => ENCODER_INPUT_CHANNELS,
            MV_DECODER | HYPER_ENCODER => self.latent_channels,
            HYPER_DECODER => self.hyper_channels,
            POSTPROC => 3,
            _ => return None,
        })
    }

    pub fn networks(&self) -> [(&'static str, &[LayerSpec]); 5] {
        [
            (MV_ENCODER, &self.mv_encoder),
            (MV_DECODER, &self.mv_decoder),
            (HYPER_ENCODER, &self.hyper_encoder),
            (HYPER_DECODER, &self.hyper_decoder),
            (POSTPROC, &self.postproc),
        ]
    }

    fn downscale(specs: &[LayerSpec]) -> usize {
        specs
            .iter()
            .map(|s| match s.mode {
                Down => s.stride,
                Up => 1,
            })
            .product()
    }

    fn upscale(specs: &[LayerSpec]) -> usize {
        specs
            .iter()
            .map(|s| match s.mode {
                Up => s.stride,
                Down => 1,
            })
            .product()
    }

    /// Latent grid downscale factor (16 for the default).
    pub fn latent_factor(&self) -> usize {
        Self::downscale(&self.mv_encoder)
    }

    /// Frame dimensions must be multiples of this (64 for the default).
    pub fn frame_multiple(&self) -> usize {
        self.latent_factor() * Self::downscale(&self.hyper_encoder)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sdc_taps % 2 == 0 || self.sdc_taps == 0 {
            return Err(Error::Config(format!("sdc_taps must be odd, got {}", self.sdc_taps)));
        }
        for (name, specs) in self.networks() {
            if specs.is_empty() {
                return Err(Error::Config(format!("{name} has no layers")));
            }
        }
        let last = |specs: &[LayerSpec]| specs.last().map(|s| s.filters).unwrap_or(0);
        if last(&self.mv_encoder) != self.latent_channels {
            return Err(Error::Config(format!(
                "mv_encoder ends with {} channels, latent_channels is {}",
                last(&self.mv_encoder),
                self.latent_channels
            )));
        }
        if last(&self.hyper_encoder) != self.hyper_channels {
            return Err(Error::Config(format!(
                "hyper_encoder ends with {} channels, hyper_channels is {}",
                last(&self.hyper_encoder),
                self.hyper_channels
            )));
        }
        if last(&self.hyper_decoder) != 2 * self.latent_channels {
            return Err(Error::Config(format!(
                "hyper_decoder must end with 2 x {} channels, has {}",
                self.latent_channels,
                last(&self.hyper_decoder)
            )));
        }
        if last(&self.mv_decoder) != self.head_channels() {
            return Err(Error::Config(format!(
                "mv_decoder must end with {} head channels (flow 2 + kernels 2x{} + residual 3), has {}",
                self.head_channels(),
                self.sdc_taps,
                last(&self.mv_decoder)
            )));
        }
        if self.postproc.len() != POSTPROC_LAYERS
            || last(&self.postproc) != 3
            || self.postproc.iter().any(|s| s.stride != 1)
        {
            return Err(Error::Config(format!(
                "postproc must be {POSTPROC_LAYERS} stride-1 layers ending in 3 channels"
            )));
        }
        if Self::upscale(&self.mv_encoder) != 1 || Self::upscale(&self.hyper_encoder) != 1 {
            return Err(Error::Config("encoders may only contain down layers".into()));
        }
        if Self::upscale(&self.mv_decoder) != self.latent_factor()
            || Self::downscale(&self.mv_decoder) != 1
        {
            return Err(Error::Config("mv_decoder must exactly undo the mv_encoder downscale".into()));
        }
        if Self::upscale(&self.hyper_decoder) != Self::downscale(&self.hyper_encoder)
            || Self::downscale(&self.hyper_decoder) != 1
        {
            return Err(Error::Config("hyper_decoder must exactly undo the hyper_encoder downscale".into()));
        }
        Ok(())
    }

    /// Check that a weight set has exactly the shapes this config describes.
    pub fn check_weights(&self, weights: &ModelWeights) -> Result<()> {
        for (name, specs) in self.networks() {
            let layers = weights.layers(name)?;
            if layers.len() != specs.len() {
                return Err(Error::Config(format!(
                    "{name}: weights have {} layers, architecture has {}",
                    layers.len(),
                    specs.len()
                )));
            }
            let mut in_c = self.input_channels(name).expect("known network");
            for (k, (l, s)) in layers.iter().zip(specs).enumerate() {
                let ok = l.in_channels == in_c
                    && l.out_channels == s.filters
                    && l.kernel_h == s.kernel_h
                    && l.kernel_w == s.kernel_w
                    && l.stride == s.stride
                    && l.mode == s.mode
                    && l.activation == s.activation;
                if !ok {
                    return Err(Error::Config(format!(
                        "{name} layer {k}: weights {}->{} {}x{}/{} {:?} do not match {} (input {in_c})",
                        l.in_channels,
                        l.out_channels,
                        l.kernel_h,
                        l.kernel_w,
                        l.stride,
                        l.mode,
                        s.render()
                    )));
                }
                in_c = s.filters;
            }
        }
        if let Some(prior) = &weights.z_prior {
            if prior.num_channels() != self.hyper_channels {
                return Err(Error::Config(format!(
                    "z_prior has {} channels, hyper_channels is {}",
                    prior.num_channels(),
                    self.hyper_channels
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "latent_channels = {}", self.latent_channels);
        let _ = writeln!(s, "hyper_channels = {}", self.hyper_channels);
        let _ = writeln!(s, "sdc_taps = {}", self.sdc_taps);
        for (name, specs) in self.networks() {
            let layers: Vec<String> = specs.iter().map(LayerSpec::render).collect();
            let _ = writeln!(s, "{name} = {}", layers.join(", "));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ArchitectureConfig {
            latent_channels: 0,
            hyper_channels: 0,
            sdc_taps: 0,
            mv_encoder: vec![],
            mv_decoder: vec![],
            hyper_encoder: vec![],
            hyper_decoder: vec![],
            postproc: vec![],
        };
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let number = || -> Result<usize> {
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("line {}: '{value}' is not a count", lineno + 1)))
            };
            let layers = || -> Result<Vec<LayerSpec>> {
                value.split(',').map(|t| LayerSpec::parse(t.trim())).collect()
            };
            match key {
                "latent_channels" => cfg.latent_channels = number()?,
                "hyper_channels" => cfg.hyper_channels = number()?,
                "sdc_taps" => cfg.sdc_taps = number()?,
                MV_ENCODER => cfg.mv_encoder = layers()?,
                MV_DECODER => cfg.mv_decoder = layers()?,
                HYPER_ENCODER => cfg.hyper_encoder = layers()?,
                HYPER_DECODER => cfg.hyper_decoder = layers()?,
                POSTPROC => cfg.postproc = layers()?,
                other => return Err(Error::Config(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
            seen.insert(key.to_string());
        }
        for required in ["latent_channels", "hyper_channels", "sdc_taps", MV_ENCODER, MV_DECODER, HYPER_ENCODER, HYPER_DECODER, POSTPROC] {
            if !seen.contains(required) {
                return Err(Error::Config(format!("missing key '{required}'")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// All-zero weights with this architecture.
    pub fn zero_weights(&self, quality: u8) -> ModelWeights {
        self.generate(quality, |_, _, _| (0.0, 0.0), None)
    }

    /// Seeded random weights, scaled so signals neither vanish nor explode and
    /// the entropy model roughly matches the latent scale.
    ///
    /// Higher quality indices get a larger latent gain, so rate grows with `quality`.
    pub fn seeded_weights(&self, seed: u64, quality: u8) -> ModelWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ quality as u64);
        let latent_gain = 6.0 * (1.0 + 0.25 * quality as f32);
        let prior = FactorizedPrior::seeded_default(self.hyper_channels, seed ^ ((quality as u64) << 32));
        let c_y = self.latent_channels;
        self.generate(
            quality,
            |net, role, fan_in| {
                let gain = match role {
                    Role::Hidden => 2.0 / (1.0 + 0.04),
                    Role::Last => 1.0,
                };
                let mut amp = (3.0 * gain / fan_in as f32).sqrt();
                match (net, role) {
                    (MV_ENCODER, Role::Last) => amp *= latent_gain,
                    (HYPER_ENCODER, Role::Last) => amp *= 0.5,
                    (POSTPROC, Role::Last) => amp *= 0.05,
                    _ => {}
                }
                (rng.gen_range(-amp..=amp), 0.0)
            },
            Some(prior),
        )
        .with_entropy_heads(c_y, latent_gain)
    }

    fn generate(
        &self,
        quality: u8,
        mut draw: impl FnMut(&str, Role, usize) -> (f32, f32),
        z_prior: Option<FactorizedPrior>,
    ) -> ModelWeights {
        let mut networks = Vec::new();
        for (name, specs) in self.networks() {
            let mut in_c = self.input_channels(name).expect("known network");
            let mut layers = Vec::new();
            for (k, s) in specs.iter().enumerate() {
                let role = if k + 1 == specs.len() { Role::Last } else { Role::Hidden };
                let taps = s.kernel_h * s.kernel_w;
                let fan_in = match s.mode {
                    Down => in_c * taps,
                    Up => (in_c * taps / (s.stride * s.stride)).max(1),
                };
                let mut weights = Vec::with_capacity(s.filters * in_c * taps);
                let mut bias = Vec::with_capacity(s.filters);
                for _ in 0..s.filters * in_c * taps {
                    weights.push(draw(name, role, fan_in).0);
                }
                for _ in 0..s.filters {
                    bias.push(draw(name, role, fan_in).1);
                }
                layers.push(ConvLayer {
                    out_channels: s.filters,
                    in_channels: in_c,
                    kernel_h: s.kernel_h,
                    kernel_w: s.kernel_w,
                    stride: s.stride,
                    mode: s.mode,
                    activation: s.activation,
                    weights,
                    bias,
                });
                in_c = s.filters;
            }
            networks.push(SubNetwork::new(name, layers));
        }
        ModelWeights { precision: Precision::F32, quality, networks, z_prior }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Hidden,
    Last,
}

trait EntropyHeads {
    fn with_entropy_heads(self, latent_channels: usize, latent_gain: f32) -> Self;
}

impl EntropyHeads for ModelWeights {
    /// Give the hyper-decoder's mean head a small gain and bias the scale head
    /// so that `softplus(raw)` lands near the latent magnitude.
    fn with_entropy_heads(mut self, latent_channels: usize, latent_gain: f32) -> Self {
        let net = self.networks.iter_mut().find(|n| n.name == HYPER_DECODER).expect("present");
        let last = net.layers.last_mut().expect("non-empty");
        let per_out = last.in_channels * last.kernel_h * last.kernel_w;
        let target_sigma = 0.35 * latent_gain;
        let scale_bias = (target_sigma.exp() - 1.0).ln();
        for o in 0..last.out_channels {
            let is_scale = o >= latent_channels;
            let shrink = if is_scale { 0.05 } else { 0.1 };
            last.weights[o * per_out..(o + 1) * per_out].iter_mut().for_each(|w| *w *= shrink);
            last.bias[o] = if is_scale { scale_bias } else { 0.0 };
        }
        self
    }
}
