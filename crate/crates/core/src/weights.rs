//! Model weight container and its little-endian file format.
//!
//! ```text
//! "MVRW"  u32 version = 1  u8 precision (0 = f32, 1 = f16)  u8 quality
//! repeated until end of file:
//!   u32 name length, name bytes (UTF-8)
//!   name == "z_prior":
//!     u32 channels; per channel: u32 knots, knots x f32 positions, knots x f32 cdf values
//!   otherwise:
//!     u32 layer count; per layer:
//!       u8 mode (0 down, 1 up), u32 stride, u8 activation (0 none, 1 leaky relu),
//!       u32 out, u32 in, u32 kh, u32 kw,
//!       out*in*kh*kw weights, out biases   (f32 or f16 per the precision flag)
//! ```
//!
//! The prior is always stored as f32 so its CDFs keep exact 0/1 endpoints.

use std::path::Path;

use half::f16;

use crate::entropy::{ChannelCdf, FactorizedPrior};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayer, Mode};

pub const MAGIC: [u8; 4] = *b"MVRW";
pub const VERSION: u32 = 1;
pub const Z_PRIOR_SECTION: &str = "z_prior";

pub const MV_ENCODER: &str = "mv_encoder";
pub const MV_DECODER: &str = "mv_decoder";
pub const HYPER_ENCODER: &str = "hyper_encoder";
pub const HYPER_DECODER: &str = "hyper_decoder";
pub const POSTPROC: &str = "postproc";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F16,
}

impl Precision {
    pub fn bytes_per_value(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubNetwork {
    pub name: String,
    pub layers: Vec<ConvLayer>,
}

impl SubNetwork {
    pub fn new(name: impl Into<String>, layers: Vec<ConvLayer>) -> Self {
        Self { name: name.into(), layers }
    }

    pub fn check_chain(&self) -> Result<()> {
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::ShapeChain {
                    network: self.name.clone(),
                    layer: k + 1,
                    detail: format!(
                        "previous layer emits {} channels, this one takes {}",
                        pair[0].out_channels, pair[1].in_channels
                    ),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub precision: Precision,
    pub quality: u8,
    pub networks: Vec<SubNetwork>,
    pub z_prior: Option<FactorizedPrior>,
}

impl ModelWeights {
    pub fn network(&self, name: &str) -> Option<&SubNetwork> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn layers(&self, name: &str) -> Result<&[ConvLayer]> {
        self.network(name)
            .map(|n| n.layers.as_slice())
            .ok_or_else(|| Error::Config(format!("weights have no '{name}' section")))
    }

    /// Number of bytes the conv weights and biases occupy on disk.
    pub fn payload_bytes(&self) -> usize {
        let values: usize = self
            .networks
            .iter()
            .flat_map(|n| &n.layers)
            .map(|l| l.weights.len() + l.bias.len())
            .sum();
        values * self.precision.bytes_per_value()
    }

    pub fn validate(&self) -> Result<()> {
        for net in &self.networks {
            for layer in &net.layers {
                layer.validate().map_err(|e| e.context(format!("network {}", net.name)))?;
            }
            net.check_chain()?;
        }
        Ok(())
    }

    /// Round every stored value to half precision, as a save/load cycle at f16 would.
    pub fn quantized_to_f16(&self) -> ModelWeights {
        let mut out = self.clone();
        out.precision = Precision::F16;
        for layer in out.networks.iter_mut().flat_map(|n| n.layers.iter_mut()) {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = f16::from_f32(*v).to_f32();
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.payload_bytes());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.precision {
            Precision::F32 => 0,
            Precision::F16 => 1,
        });
        out.push(self.quality);
        for net in &self.networks {
            put_name(&mut out, &net.name);
            put_u32(&mut out, net.layers.len() as u32);
            for l in &net.layers {
                out.push(match l.mode {
                    Mode::Down => 0,
                    Mode::Up => 1,
                });
                put_u32(&mut out, l.stride as u32);
                out.push(match l.activation {
                    Activation::None => 0,
                    Activation::LeakyRelu => 1,
                });
                for dim in [l.out_channels, l.in_channels, l.kernel_h, l.kernel_w] {
                    put_u32(&mut out, dim as u32);
                }
                for &v in l.weights.iter().chain(&l.bias) {
                    match self.precision {
                        Precision::F32 => out.extend_from_slice(&v.to_le_bytes()),
                        Precision::F16 => out.extend_from_slice(&f16::from_f32(v).to_le_bytes()),
                    }
                }
            }
        }
        if let Some(prior) = &self.z_prior {
            put_name(&mut out, Z_PRIOR_SECTION);
            put_u32(&mut out, prior.num_channels() as u32);
            for cdf in prior.channels() {
                put_u32(&mut out, cdf.knots().len() as u32);
                for &x in cdf.knots().iter().chain(cdf.values()) {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { expected: VERSION, found: version });
        }
        let precision = match r.u8("precision flag")? {
            0 => Precision::F32,
            1 => Precision::F16,
            other => return Err(Error::Format(format!("unknown precision flag {other}"))),
        };
        let quality = r.u8("quality index")?;
        let mut networks = Vec::new();
        let mut z_prior = None;
        while !r.at_end() {
            let name_len = r.u32("section name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "section name")?.to_vec())
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?;
            if name == Z_PRIOR_SECTION {
                z_prior = Some(read_prior(&mut r)?);
                continue;
            }
            let count = r.u32("layer count")? as usize;
            let mut layers = Vec::with_capacity(count.min(1024));
            for k in 0..count {
                let ctx = format!("{name} layer {k}");
                let mode = match r.u8(&ctx)? {
                    0 => Mode::Down,
                    1 => Mode::Up,
                    other => return Err(Error::Format(format!("{ctx}: unknown mode {other}"))),
                };
                let stride = r.u32(&ctx)? as usize;
                let activation = match r.u8(&ctx)? {
                    0 => Activation::None,
                    1 => Activation::LeakyRelu,
                    other => return Err(Error::Format(format!("{ctx}: unknown activation {other}"))),
                };
                let out_c = r.u32(&ctx)? as usize;
                let in_c = r.u32(&ctx)? as usize;
                let kh = r.u32(&ctx)? as usize;
                let kw = r.u32(&ctx)? as usize;
                let n_w = out_c
                    .checked_mul(in_c)
                    .and_then(|v| v.checked_mul(kh))
                    .and_then(|v| v.checked_mul(kw))
                    .ok_or_else(|| Error::Format(format!("{ctx}: absurd dimensions")))?;
                let weights = r.values(n_w, precision, &ctx)?;
                let bias = r.values(out_c, precision, &ctx)?;
                let layer = ConvLayer::new(out_c, in_c, kh, kw, stride, mode, activation, weights, bias)
                    .map_err(|e| e.context(ctx.clone()))?;
                layers.push(layer);
            }
            let net = SubNetwork::new(name, layers);
            net.check_chain()?;
            networks.push(net);
        }
        Ok(Self { precision, quality, networks, z_prior })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
}

fn read_prior(r: &mut Reader<'_>) -> Result<FactorizedPrior> {
    let channels = r.u32("prior channel count")? as usize;
    let mut list = Vec::with_capacity(channels.min(4096));
    for c in 0..channels {
        let ctx = format!("z_prior channel {c}");
        let n = r.u32(&ctx)? as usize;
        let knots: Vec<f64> = r.values(n, Precision::F32, &ctx)?.into_iter().map(f64::from).collect();
        let values: Vec<f64> = r.values(n, Precision::F32, &ctx)?.into_iter().map(f64::from).collect();
        list.push(ChannelCdf::new(knots, values).map_err(|e| e.context(ctx))?);
    }
    Ok(FactorizedPrior::new(list))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "weight file ends at byte {} while reading {what} ({n} bytes needed at {})",
                self.bytes.len(),
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn values(&mut self, n: usize, precision: Precision, what: &str) -> Result<Vec<f32>> {
        let width = precision.bytes_per_value();
        let len = n.checked_mul(width).ok_or_else(|| Error::Format(format!("{what}: absurd size")))?;
        let raw = self.take(len, what)?;
        Ok(match precision {
            Precision::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            Precision::F16 => raw
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect(),
        })
    }
}
