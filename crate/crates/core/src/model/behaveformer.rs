use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stdat::{init_stdat, stdat_forward};
use super::{ModelError, StdatConfig, EMBED_DIM};
use crate::numerics::{glorot_uniform, BufferUpdate, Graph, Mode, ParamStore, Tensor, Var};
use crate::parallel;

pub const KEYSTROKE_TOWER: &str = "keystroke";
pub const IMU_TOWER: &str = "imu";
pub const FUSION: &str = "fusion";

/// Samples per eval-mode graph in [`BehaveFormer::embed`].
const EMBED_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaveFormerConfig {
    pub keystroke: StdatConfig,
    pub imu: Option<StdatConfig>,
    /// Width of the composite embedding produced by the fusion layer.
    pub fusion_dim: usize,
}

impl BehaveFormerConfig {
    pub fn keystroke_only(keystroke: StdatConfig) -> Self {
        Self {
            keystroke,
            imu: None,
            fusion_dim: EMBED_DIM,
        }
    }

    pub fn dual(keystroke: StdatConfig, imu: StdatConfig) -> Self {
        Self {
            keystroke,
            imu: Some(imu),
            fusion_dim: EMBED_DIM,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.keystroke.validate()?;
        if let Some(imu) = &self.imu {
            imu.validate()?;
            if self.fusion_dim == 0 {
                return Err(ModelError::Config("fusion dim must be positive".into()));
            }
        }
        Ok(())
    }

    /// Dimension of the final embedding.
    pub fn output_dim(&self) -> usize {
        match self.imu {
            Some(_) => self.fusion_dim,
            None => self.keystroke.embed_dim,
        }
    }

    fn fusion_in(&self) -> usize {
        self.keystroke.embed_dim + self.imu.as_ref().map_or(0, |c| c.embed_dim)
    }
}

/// One sample's model inputs: keystroke `[N, M]` and optional IMU `[100, M']`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub keystroke: Tensor,
    pub imu: Option<Tensor>,
}

/// Model configuration plus every learnable tensor and buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaveFormer {
    pub config: BehaveFormerConfig,
    pub params: ParamStore,
}

impl BehaveFormer {
    pub fn new(config: BehaveFormerConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_stdat(&mut params, KEYSTROKE_TOWER, &config.keystroke, &mut rng)?;
        if let Some(imu) = &config.imu {
            init_stdat(&mut params, IMU_TOWER, imu, &mut rng)?;
            let fin = config.fusion_in();
            params.add_param(
                &format!("{FUSION}.w"),
                glorot_uniform(&mut rng, &[fin, config.fusion_dim], fin, config.fusion_dim),
            )?;
            params.add_param(&format!("{FUSION}.b"), Tensor::zeros(&[config.fusion_dim]))?;
        }
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters after checking them against the configuration's shape table.
    pub fn from_params(config: BehaveFormerConfig, params: ParamStore) -> Result<Self, ModelError> {
        let reference = Self::new(config.clone(), 0)?;
        let want = reference.shape_table();
        let got: Vec<(String, Vec<usize>)> = params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.tensor.shape().to_vec()))
            .collect();
        if want != got {
            let diff = want
                .iter()
                .zip(&got)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| format!("expected {} tensors, found {}", want.len(), got.len()));
            return Err(ModelError::Config(format!("parameter table mismatch: {diff}")));
        }
        Ok(Self { config, params })
    }

    /// `(name, shape)` of every parameter and buffer, in storage order.
    pub fn shape_table(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.tensor.shape().to_vec()))
            .collect()
    }

    pub fn is_dual(&self) -> bool {
        self.config.imu.is_some()
    }

    /// Composite embedding `[B, output_dim]` from batched tower inputs.
    pub fn forward(&self, g: &mut Graph, keystroke: Var, imu: Option<Var>) -> Result<Var, ModelError> {
        let ek = stdat_forward(g, &self.params, KEYSTROKE_TOWER, keystroke, &self.config.keystroke)?;
        match (&self.config.imu, imu) {
            (None, None) => Ok(ek),
            (Some(cfg), Some(x)) => {
                let ei = stdat_forward(g, &self.params, IMU_TOWER, x, cfg)?;
                let cat = g.concat(&[ek, ei], 1)?;
                let w = g.param(&self.params, &format!("{FUSION}.w"))?;
                let b = g.param(&self.params, &format!("{FUSION}.b"))?;
                Ok(g.affine(cat, w, b)?)
            }
            (None, Some(_)) => Err(ModelError::Modality("IMU input given to a keystroke-only model".into())),
            (Some(_), None) => Err(ModelError::Modality("dual model needs an IMU input".into())),
        }
    }

    /// Stacks samples into batched graph inputs.
    pub fn stack(&self, g: &mut Graph, inputs: &[&ModelInput]) -> Result<(Var, Option<Var>), ModelError> {
        let ks = stack_tensors(inputs.iter().map(|i| &i.keystroke))?;
        let xk = g.input(ks)?;
        let imu: Option<Vec<&Tensor>> = inputs.iter().map(|i| i.imu.as_ref()).collect();
        let xi = match (self.is_dual(), imu) {
            (false, _) => None,
            (true, Some(ts)) => Some(g.input(stack_tensors(ts.into_iter())?)?),
            (true, None) => return Err(ModelError::Modality("dual model needs IMU input for every sample".into())),
        };
        Ok((xk, xi))
    }

    /// Eval-mode embeddings, one row per input. Chunks run on separate graphs in parallel.
    pub fn embed(&self, inputs: &[ModelInput]) -> Result<Vec<Vec<f64>>, ModelError> {
        let chunks: Vec<&[ModelInput]> = inputs.chunks(EMBED_CHUNK).collect();
        let results = parallel::map(&chunks, |chunk| -> Result<Vec<Vec<f64>>, ModelError> {
            let mut g = Graph::new(Mode::Eval, 0);
            let refs: Vec<&ModelInput> = chunk.iter().collect();
            let (xk, xi) = self.stack(&mut g, &refs)?;
            let out = self.forward(&mut g, xk, xi)?;
            Ok(g.value(out).rows().map(<[f64]>::to_vec).collect())
        });
        let mut all = Vec::with_capacity(inputs.len());
        for r in results {
            all.extend(r?);
        }
        Ok(all)
    }

    /// Writes running statistics recorded by a train-mode graph.
    pub fn apply_buffer_updates(&mut self, updates: &[BufferUpdate]) -> Result<(), ModelError> {
        for u in updates {
            self.params.set(&format!("{}.running_mean", u.key), u.mean.clone())?;
            self.params.set(&format!("{}.running_var", u.key), u.var.clone())?;
        }
        Ok(())
    }
}

fn stack_tensors<'a>(ts: impl Iterator<Item = &'a Tensor>) -> Result<Tensor, ModelError> {
    let mut shape: Option<Vec<usize>> = None;
    let mut data = Vec::new();
    let mut count = 0;
    for t in ts {
        match &shape {
            None => shape = Some(t.shape().to_vec()),
            Some(s) if s != t.shape() => {
                return Err(ModelError::Modality(format!("ragged batch: {s:?} vs {:?}", t.shape())));
            }
            _ => {}
        }
        data.extend_from_slice(t.data());
        count += 1;
    }
    let mut full = vec![count];
    full.extend(shape.ok_or_else(|| ModelError::Modality("empty batch".into()))?);
    Ok(Tensor::new(full, data)?)
}
