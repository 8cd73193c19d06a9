//! Plain-text checkpoint format.
//!
//! ```text
//! STANN v1
//! variant discovered
//! steps 500
//! ...
//! end
//! tensor Z 1000 8
//! -1.2e-1
//! ...
//! ```
//!
//! A header line, `key value` manifest lines up to `end`, then tensor blocks:
//! `tensor <name> <dims...>` followed by one value per line in shortest
//! round-trip notation. Every model parameter, the prior relation tensor, the
//! normalization statistics and the last normalized observation are stored.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::{DeltaKind, ModelConfig, SpatialVariant, StackConfig, Stann};
use crate::diff::{Activation, Tensor};
use crate::Error;

pub const CHECKPOINT_HEADER: &str = "STANN v1";

/// A trained model plus everything needed to forecast in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Stann,
    /// Per-series normalization center.
    pub center: Vec<f64>,
    /// Per-series normalization spread.
    pub spread: Vec<f64>,
    /// Last observation in normalized units (`n·m` values).
    pub last_obs: Vec<f64>,
    pub epochs_trained: usize,
    pub delta: DeltaKind,
}

fn stack_str(s: &StackConfig) -> String {
    format!("{},{},{},{}", s.blocks, s.layers, s.width, s.residual)
}

fn parse_stack(v: &str) -> Option<StackConfig> {
    let p: Vec<&str> = v.split(',').collect();
    if p.len() != 4 {
        return None;
    }
    Some(StackConfig {
        blocks: p[0].parse().ok()?,
        layers: p[1].parse().ok()?,
        width: p[2].parse().ok()?,
        residual: p[3].parse().ok()?,
    })
}

fn write_tensor<W: Write>(out: &mut W, name: &str, t: &Tensor) -> std::io::Result<()> {
    write!(out, "tensor {name}")?;
    for d in t.shape() {
        write!(out, " {d}")?;
    }
    writeln!(out)?;
    for v in t.data() {
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(ck: &Checkpoint, mut out: W) -> Result<(), Error> {
    let m = &ck.model;
    let c = m.config();
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    let manifest = [
        ("variant", c.variant.name().to_string()),
        ("steps", m.steps().to_string()),
        ("series", c.series.to_string()),
        ("latent_dim", c.latent_dim.to_string()),
        ("relations", c.relations.to_string()),
        ("features", c.features.to_string()),
        ("max_lag", c.max_lag.to_string()),
        ("kappa", format!("{:e}", c.kappa)),
        ("actm_hidden", c.actm_hidden.to_string()),
        ("h_g", c.h_g.name().to_string()),
        ("h_d", c.h_d.name().to_string()),
        ("decoder_stack", stack_str(&c.decoder_stack)),
        ("dynamic_stack", stack_str(&c.dynamic_stack)),
        ("delta", ck.delta.name().to_string()),
        ("epochs_trained", ck.epochs_trained.to_string()),
    ];
    for (k, v) in manifest {
        writeln!(out, "{k} {v}")?;
    }
    writeln!(out, "end")?;
    write_tensor(&mut out, "prior", m.prior())?;
    let vec_tensor = |v: &[f64]| Tensor::from_raw(vec![v.len()], v.to_vec());
    write_tensor(&mut out, "scale.center", &vec_tensor(&ck.center))?;
    write_tensor(&mut out, "scale.spread", &vec_tensor(&ck.spread))?;
    write_tensor(&mut out, "last_obs", &vec_tensor(&ck.last_obs))?;
    for (name, t) in m.store().names().iter().zip(m.store().tensors()) {
        write_tensor(&mut out, name, t)?;
    }
    out.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Checkpoint, Error> {
    let mut lines = input.lines();
    let mut next = || -> Result<Option<String>, Error> { Ok(lines.next().transpose()?) };
    match next()? {
        Some(h) if h.trim() == CHECKPOINT_HEADER => {}
        other => {
            return Err(bad(format!(
                "expected header {CHECKPOINT_HEADER:?}, found {other:?}"
            )))
        }
    }
    let mut manifest = HashMap::new();
    loop {
        let line = next()?.ok_or_else(|| bad("manifest is not terminated by `end`"))?;
        let line = line.trim();
        if line == "end" {
            break;
        }
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("malformed manifest line {line:?}")))?;
        manifest.insert(k.to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        manifest
            .get(k)
            .ok_or_else(|| bad(format!("manifest lacks `{k}`")))
    };
    let num = |k: &str| -> Result<usize, Error> {
        get(k)?
            .parse()
            .map_err(|_| bad(format!("`{k}` is not an integer")))
    };
    let act = |k: &str| -> Result<Activation, Error> {
        Activation::parse(get(k)?).ok_or_else(|| bad(format!("unknown activation in `{k}`")))
    };
    let stack = |k: &str| -> Result<StackConfig, Error> {
        parse_stack(get(k)?).ok_or_else(|| bad(format!("malformed `{k}`")))
    };
    let config = ModelConfig {
        series: num("series")?,
        latent_dim: num("latent_dim")?,
        relations: num("relations")?,
        features: num("features")?,
        max_lag: num("max_lag")?,
        kappa: get("kappa")?
            .parse()
            .map_err(|_| bad("`kappa` is not a number"))?,
        variant: SpatialVariant::parse(get("variant")?).ok_or_else(|| bad("unknown variant"))?,
        decoder_stack: stack("decoder_stack")?,
        dynamic_stack: stack("dynamic_stack")?,
        actm_hidden: num("actm_hidden")?,
        h_g: act("h_g")?,
        h_d: act("h_d")?,
    };
    let steps = num("steps")?;
    let epochs_trained = num("epochs_trained")?;
    let delta = DeltaKind::parse(get("delta")?).ok_or_else(|| bad("unknown delta"))?;

    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    while let Some(line) = next()? {
        let line = line.trim().to_string();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(bad(format!("expected tensor block, found {line:?}")));
        }
        let name = parts
            .next()
            .ok_or_else(|| bad("tensor block without a name"))?;
        let shape = parts
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad shape for tensor {name}")))?;
        let len = shape.iter().product::<usize>();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let v = next()?.ok_or_else(|| bad(format!("tensor {name} is truncated")))?;
            data.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad value {v:?} in tensor {name}")))?,
            );
        }
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("tensor {name}: {e}")))?;
        if tensors.insert(name.to_string(), t).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }

    let mut take = |k: &str| {
        tensors
            .remove(k)
            .ok_or_else(|| bad(format!("missing tensor {k}")))
    };
    let prior = take("prior")?;
    let center = take("scale.center")?.into_data();
    let spread = take("scale.spread")?.into_data();
    let last_obs = take("last_obs")?.into_data();
    let mut model = Stann::new(config, steps, prior, 0, 0)?;
    let names = model.store().names().to_vec();
    for (i, name) in names.iter().enumerate() {
        let t = take(name)?;
        let slot = &mut model.store_mut().tensors_mut()[i];
        if slot.shape() != t.shape() {
            return Err(bad(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(bad(format!("unexpected tensor {extra}")));
    }
    let n = model.config().series;
    if center.len() != n || spread.len() != n || last_obs.len() != n * model.config().features {
        return Err(bad(
            "normalization statistics do not match the series count",
        ));
    }
    Ok(Checkpoint {
        model,
        center,
        spread,
        last_obs,
        epochs_trained,
        delta,
    })
}
