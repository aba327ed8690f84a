use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{AeConfig, LayerSpec, OptimConfig, UpdateRule};
use crate::som::{DecaySchedule, SomInit, SomTrainConfig};

pub const PRESET_NAMES: [&str; 3] = ["paper-30x30", "desk-8x8", "desk-16x16"];

fn conv(filters: usize) -> [LayerSpec; 3] {
    [
        LayerSpec::Conv2d {
            filters,
            kernel: 3,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Maxpool2d { size: 2, stride: None },
    ]
}

fn tconv(filters: usize, relu: bool) -> Vec<LayerSpec> {
    let mut v = vec![LayerSpec::TransposedConv2d {
        filters,
        kernel: 3,
        stride: 2,
    }];
    if relu {
        v.push(LayerSpec::Relu);
    }
    v
}

/// Encoder: conv blocks (3x3, ReLU, 2x2 max-pool), flatten, dense+ReLU, dense latent.
/// Decoder mirrors it with transposed convolutions of stride 2.
fn architecture(channels: &[usize], hidden: usize, latent: usize) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let mut enc = Vec::new();
    for &c in channels {
        enc.extend(conv(c));
    }
    let last = *channels.last().expect("at least one conv block");
    let side = 32 >> channels.len();
    enc.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { units: hidden },
        LayerSpec::Relu,
        LayerSpec::Dense { units: latent },
    ]);
    let mut dec = vec![
        LayerSpec::Dense { units: hidden },
        LayerSpec::Relu,
        LayerSpec::Dense {
            units: last * side * side,
        },
        LayerSpec::Relu,
        LayerSpec::Reshape {
            channels: last,
            height: side,
            width: side,
        },
    ];
    for &c in channels.iter().rev().skip(1) {
        dec.extend(tconv(c, true));
    }
    dec.extend(tconv(1, false));
    (enc, dec)
}

/// Named training recipes.
///
/// `paper-30x30` is the full-size architecture (conv 32/64/128, dense 512,
/// 120-d latent, 30x30 map, 15,000 SOM iterations). The desk presets use a
/// small conv 8/16 network with a 16-d latent so they train in minutes on
/// one CPU core.
pub fn preset(name: &str) -> Result<TrainConfig> {
    let (channels, hidden, latent, m, epochs, lr): (&[usize], usize, usize, usize, usize, f64) = match name {
        "paper-30x30" => (&[32, 64, 128], 512, 120, 30, 20, 1e-3),
        "desk-8x8" => (&[8, 16], 64, 16, 8, 6, 3e-3),
        "desk-16x16" => (&[8, 16], 64, 16, 16, 6, 3e-3),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    let (encoder, decoder) = architecture(channels, hidden, latent);
    Ok(TrainConfig {
        encoder,
        decoder,
        m,
        ae: AeConfig {
            epochs,
            batch_size: 64,
            optimizer: OptimConfig {
                rule: UpdateRule::Adam,
                learning_rate: lr,
                momentum: 0.9,
            },
            seed: 0,
        },
        schedule: DecaySchedule::default(),
        som: SomTrainConfig::default(),
        som_init: SomInit::Sample,
        gamma: 1e-3,
        init_samples: 1000,
    }
    .with_seed(0))
}
