//! Versioned binary checkpoints.
//!
//! Layout, all little-endian: magic `HNCK`, version u32 = 1, layer count u32,
//! widths `[D, hidden..., K]` as u32, one f64 learning-rate multiplier per
//! layer, the current stage's beta as f64, every parameter (per layer: weights
//! row-major, then bias) as f64, the momentum buffers in the same order, then a
//! one-byte flag followed, when set, by the trainer cursor (see
//! [`TrainerCursor`]). Writing the same state always yields the same bytes.

use std::io::{Read, Write};

use crate::codes::{read_u32, read_u64};
use crate::encoder::{EncoderParams, Gradients, Layer, LayerGrad};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HNCK";
const VERSION: u32 = 1;

/// Where an interrupted training run resumes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerCursor {
    pub stage: u32,
    pub epoch: u32,
    pub stage_open: bool,
    pub prev_j: Option<f64>,
    pub stalls: u32,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub velocity: Gradients,
    pub beta: f64,
    pub cursor: Option<TrainerCursor>,
}

impl Checkpoint {
    /// Parameters only, zero momentum, no resume information.
    pub fn from_params(params: EncoderParams, beta: f64) -> Self {
        let velocity = Gradients::zeros_like(&params);
        Self {
            params,
            velocity,
            beta,
            cursor: None,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let layers = self.params.layers();
        let widths = self.params.widths();
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(layers.len() as u32).to_le_bytes())?;
        for w in &widths {
            out.write_all(&(*w as u32).to_le_bytes())?;
        }
        let put = |v: f64, out: &mut W| out.write_all(&v.to_le_bytes());
        for l in layers {
            put(l.lr_mult, &mut out)?;
        }
        put(self.beta, &mut out)?;
        for l in layers {
            for &v in l.weights.iter().chain(&l.bias) {
                put(v, &mut out)?;
            }
        }
        for l in &self.velocity.layers {
            for &v in l.weights.iter().chain(&l.bias) {
                put(v, &mut out)?;
            }
        }
        match &self.cursor {
            None => out.write_all(&[0])?,
            Some(c) => {
                out.write_all(&[1])?;
                out.write_all(&c.stage.to_le_bytes())?;
                out.write_all(&c.epoch.to_le_bytes())?;
                out.write_all(&[u8::from(c.stage_open)])?;
                out.write_all(&[u8::from(c.prev_j.is_some())])?;
                out.write_all(&c.prev_j.unwrap_or(0.0).to_le_bytes())?;
                out.write_all(&c.stalls.to_le_bytes())?;
                out.write_all(&c.rng_seed)?;
                out.write_all(&c.rng_stream.to_le_bytes())?;
                out.write_all(&c.rng_word_pos.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let bad = |reason: &str| Error::format("checkpoint", reason.to_string());
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        if read_u32(&mut input)? != VERSION {
            return Err(bad("unsupported version"));
        }
        let n_layers = read_u32(&mut input)? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(bad("implausible layer count"));
        }
        let widths = (0..=n_layers)
            .map(|_| read_u32(&mut input).map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        if widths.iter().any(|&w| w == 0 || w > 1 << 20) {
            return Err(bad("implausible layer width"));
        }
        let mults = (0..n_layers)
            .map(|_| read_f64(&mut input))
            .collect::<Result<Vec<_>>>()?;
        let beta = read_f64(&mut input)?;
        let read_block = |input: &mut R| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
            (0..n_layers)
                .map(|l| {
                    let w = (0..widths[l] * widths[l + 1])
                        .map(|_| read_f64(input))
                        .collect::<Result<Vec<_>>>()?;
                    let b = (0..widths[l + 1])
                        .map(|_| read_f64(input))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((w, b))
                })
                .collect()
        };
        let params = read_block(&mut input)?;
        let velocity = read_block(&mut input)?;
        let layers = params
            .into_iter()
            .enumerate()
            .map(|(l, (weights, bias))| Layer {
                inputs: widths[l],
                outputs: widths[l + 1],
                weights,
                bias,
                lr_mult: mults[l],
            })
            .collect();
        let params = EncoderParams::from_layers(layers).map_err(|e| bad(&e.to_string()))?;
        let velocity = Gradients {
            layers: velocity
                .into_iter()
                .map(|(weights, bias)| LayerGrad { weights, bias })
                .collect(),
        };
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        let cursor = match flag[0] {
            0 => None,
            1 => {
                let stage = read_u32(&mut input)?;
                let epoch = read_u32(&mut input)?;
                let mut b = [0u8; 2];
                input.read_exact(&mut b)?;
                let prev = read_f64(&mut input)?;
                let stalls = read_u32(&mut input)?;
                let mut rng_seed = [0u8; 32];
                input.read_exact(&mut rng_seed)?;
                let rng_stream = read_u64(&mut input)?;
                let mut pos = [0u8; 16];
                input.read_exact(&mut pos)?;
                Some(TrainerCursor {
                    stage,
                    epoch,
                    stage_open: b[0] == 1,
                    prev_j: (b[1] == 1).then_some(prev),
                    stalls,
                    rng_seed,
                    rng_stream,
                    rng_word_pos: u128::from_le_bytes(pos),
                })
            }
            _ => return Err(bad("bad cursor flag")),
        };
        Ok(Self {
            params,
            velocity,
            beta,
            cursor,
        })
    }
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
