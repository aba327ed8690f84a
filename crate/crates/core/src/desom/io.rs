use std::fs;
use std::path::Path;

use super::{DesomModel, ModelConfig, STAMP_SHAPE};
use crate::error::{ParseError, Result, Section};
use crate::formats::{put_counted_f32, put_u32, put_u64, Reader};
use crate::nn::Autoencoder;
use crate::som::SomMap;

pub const MODEL_MAGIC: [u8; 4] = *b"DSOM";
pub const MODEL_VERSION: u32 = 1;

/// DSOM layout: magic, version, u64-length JSON config, then encoder,
/// decoder and SOM weights, each a u64 count of f32 values.
pub fn encode_model(model: &DesomModel) -> Vec<u8> {
    let config = serde_json::to_vec(&model.config).expect("model config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    put_u32(&mut out, MODEL_VERSION);
    put_u64(&mut out, config.len() as u64);
    out.extend_from_slice(&config);
    put_counted_f32(&mut out, &model.autoencoder.encoder.flat_params());
    put_counted_f32(&mut out, &model.autoencoder.decoder.flat_params());
    put_counted_f32(&mut out, model.som.weights());
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<DesomModel> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    r.version(MODEL_VERSION)?;
    let len_at = r.offset();
    let len = r.u64(Section::Config)?;
    let len = usize::try_from(len)
        .ok()
        .filter(|&l| l <= r.remaining())
        .ok_or(ParseError::Truncated {
            section: Section::Config,
            offset: r.offset(),
            expected: len,
            actual: r.remaining() as u64,
        })?;
    let json_at = r.offset();
    let config: ModelConfig = serde_json::from_slice(r.take(len, Section::Config)?)
        .map_err(|e| r.invalid(Section::Config, json_at, format!("bad JSON: {e}")))?;
    let mut ae = Autoencoder::<f32>::new(STAMP_SHAPE, &config.encoder, &config.decoder, config.ae_seed)
        .map_err(|e| r.invalid(Section::Config, len_at, e.to_string()))?;
    if ae.latent_dim() != config.d {
        return Err(r
            .invalid(
                Section::Config,
                json_at,
                format!("encoder emits {} values but d = {}", ae.latent_dim(), config.d),
            )
            .into());
    }

    let at = r.offset();
    let enc = r.counted_f32(Section::EncoderParams)?;
    ae.encoder
        .set_flat_params(&enc)
        .map_err(|e| r.invalid(Section::EncoderParams, at, e.to_string()))?;
    let at = r.offset();
    let dec = r.counted_f32(Section::DecoderParams)?;
    ae.decoder
        .set_flat_params(&dec)
        .map_err(|e| r.invalid(Section::DecoderParams, at, e.to_string()))?;
    let at = r.offset();
    let w = r.counted_f32(Section::SomWeights)?;
    let som = SomMap::new(config.m, config.d, w).map_err(|e| r.invalid(Section::SomWeights, at, e.to_string()))?;
    r.finish()?;
    DesomModel::new(config, ae, som)
}

pub fn save_model(path: impl AsRef<Path>, model: &DesomModel) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DesomModel> {
    decode_model(&fs::read(path)?)
}
