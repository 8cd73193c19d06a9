//! Doubly residual stack of fully connected blocks.
//!
//! Each block reads the running residual, emits a backcast that is subtracted
//! from it and a forecast that is added to the stack output.

use rand::Rng;

use crate::diff::{DiffError, Graph, Var};
use crate::params::{Dense, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackConfig {
    pub blocks: usize,
    pub layers: usize,
    pub width: usize,
    /// `false` replaces the whole stack by one dense layer.
    pub residual: bool,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            layers: 2,
            width: 32,
            residual: true,
        }
    }
}

impl StackConfig {
    pub fn linear() -> Self {
        Self {
            residual: false,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackBlock {
    pub layers: Vec<Dense>,
    pub backcast: Dense,
    pub forecast: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResidualStack {
    Blocks(Vec<StackBlock>),
    Linear(Dense),
}

impl ResidualStack {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        cfg: &StackConfig,
        rng: &mut R,
    ) -> Self {
        if !cfg.residual || cfg.blocks == 0 {
            return ResidualStack::Linear(Dense::init(
                store,
                &format!("{name}.linear"),
                input,
                output,
                rng,
            ));
        }
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let mut width_in = input;
                let layers = (0..cfg.layers)
                    .map(|l| {
                        let d = Dense::init(
                            store,
                            &format!("{name}.b{b}.l{l}"),
                            width_in,
                            cfg.width,
                            rng,
                        );
                        width_in = cfg.width;
                        d
                    })
                    .collect();
                StackBlock {
                    layers,
                    backcast: Dense::init(
                        store,
                        &format!("{name}.b{b}.backcast"),
                        width_in,
                        input,
                        rng,
                    ),
                    forecast: Dense::init(
                        store,
                        &format!("{name}.b{b}.forecast"),
                        width_in,
                        output,
                        rng,
                    ),
                }
            })
            .collect();
        ResidualStack::Blocks(blocks)
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var, DiffError> {
        match self {
            ResidualStack::Linear(d) => d.forward(g, vars, x),
            ResidualStack::Blocks(blocks) => {
                let mut residual = x;
                let mut output: Option<Var> = None;
                for (b, block) in blocks.iter().enumerate() {
                    let mut h = residual;
                    for layer in &block.layers {
                        let pre = layer.forward(g, vars, h)?;
                        h = g.relu(pre);
                    }
                    let fore = block.forecast.forward(g, vars, h)?;
                    output = Some(match output {
                        Some(acc) => g.add(acc, fore)?,
                        None => fore,
                    });
                    if b + 1 < blocks.len() {
                        let back = block.backcast.forward(g, vars, h)?;
                        residual = g.sub(residual, back)?;
                    }
                }
                Ok(output.expect("at least one block"))
            }
        }
    }
}
