use ndarray::{Array1, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::ParityBatch;
use crate::rnn::{
    backward_full, forward, sigmoid, CellVariant, ClipPolicy, RnnError, RnnParams, SequenceBatch,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_heads: usize,
    pub head_dim: usize,
}

/// Bit embedding, one recurrent cell and a linear readout of the hidden state
/// at each sequence's last valid step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityModel {
    pub variant: CellVariant,
    pub cell: RnnParams,
    /// `[2, N_g, d]`, the gate inputs for bit 0 and bit 1.
    pub embedding: Array3<f64>,
    pub readout: Array1<f64>,
    pub readout_bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParityGrads {
    pub embedding: Array3<f64>,
    pub recurrent: Array4<f64>,
    pub bias: ndarray::Array2<f64>,
    pub readout: Array1<f64>,
    pub readout_bias: f64,
}

impl ParityGrads {
    pub fn slices(&self) -> [&[f64]; 5] {
        [
            self.embedding.as_slice().expect("standard layout"),
            self.recurrent.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
            self.readout.as_slice().expect("standard layout"),
            std::slice::from_ref(&self.readout_bias),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub accuracy: f64,
}

fn normal<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * scale
}

/// `log(1 + e^z) - y z`, the binary cross-entropy of a logit.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl ParityModel {
    pub fn init<R: Rng>(variant: CellVariant, dims: ModelDims, rng: &mut R) -> Self {
        let (h, dh) = (dims.num_heads, dims.head_dim);
        let d = h * dh;
        let ng = variant.num_gates();
        let mut cell = RnnParams::zeros(variant, h, dh);
        let rs = 1.0 / (dh as f64).sqrt();
        cell.recurrent.mapv_inplace(|_| normal(rng, rs));
        let embedding = Array3::from_shape_simple_fn((2, ng, d), || normal(rng, 1.0));
        let readout = Array1::from_shape_simple_fn(d, || normal(rng, 1.0 / (d as f64).sqrt()));
        ParityModel {
            variant,
            cell,
            embedding,
            readout,
            readout_bias: 0.0,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            num_heads: self.cell.num_heads,
            head_dim: self.cell.head_dim,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.embedding.len()
            + self.cell.recurrent.len()
            + self.cell.bias.len()
            + self.readout.len()
            + 1
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.embedding.as_slice_mut().expect("standard layout"),
            self.cell.recurrent.as_slice_mut().expect("standard layout"),
            self.cell.bias.as_slice_mut().expect("standard layout"),
            self.readout.as_slice_mut().expect("standard layout"),
            std::slice::from_mut(&mut self.readout_bias),
        ]
    }

    fn gate_inputs(&self, batch: &ParityBatch) -> SequenceBatch {
        let (b_n, t_n) = batch.bits.dim();
        let mut sb = SequenceBatch::zeros(self.variant, t_n, b_n, self.cell.dim());
        for t in 0..t_n {
            for b in 0..b_n {
                let bit = batch.bits[[b, t]] as usize & 1;
                sb.inputs
                    .index_axis_mut(Axis(0), t)
                    .index_axis_mut(Axis(0), b)
                    .assign(&self.embedding.index_axis(Axis(0), bit));
            }
        }
        sb
    }

    fn readout_of(&self, states: &Array4<f64>, batch: &ParityBatch) -> Vec<f64> {
        (0..batch.len())
            .map(|b| {
                let h = states.slice(ndarray::s![batch.lengths[b], 0, b, ..]);
                h.iter()
                    .zip(self.readout.iter())
                    .map(|(a, w)| a * w)
                    .sum::<f64>()
                    + self.readout_bias
            })
            .collect()
    }

    pub fn logits(&self, batch: &ParityBatch) -> Result<Vec<f64>, RnnError> {
        let tr = forward(self.variant, &self.cell, &self.gate_inputs(batch))?;
        Ok(self.readout_of(&tr.states, batch))
    }

    pub fn accuracy(&self, batch: &ParityBatch) -> Result<f64, RnnError> {
        let z = self.logits(batch)?;
        Ok(correct(&z, &batch.labels) as f64 / batch.len().max(1) as f64)
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grads(
        &self,
        batch: &ParityBatch,
    ) -> Result<(BatchStats, ParityGrads), RnnError> {
        let inputs = self.gate_inputs(batch);
        let tr = forward(self.variant, &self.cell, &inputs)?;
        let z = self.readout_of(&tr.states, batch);
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut d_states = Array4::zeros(tr.states.dim());
        let mut d_readout = Array1::zeros(self.readout.len());
        let mut d_rbias = 0.0;
        for (b, &zb) in z.iter().enumerate() {
            let y = batch.labels[b] as f64;
            loss += bce_with_logit(zb, y);
            let dz = (sigmoid(zb) - y) / n;
            d_rbias += dz;
            let len = batch.lengths[b];
            d_readout.scaled_add(dz, &tr.states.slice(ndarray::s![len, 0, b, ..]));
            d_states
                .slice_mut(ndarray::s![len, 0, b, ..])
                .scaled_add(dz, &self.readout);
        }
        let g = backward_full(
            self.variant,
            &self.cell,
            &inputs,
            &tr,
            &d_states,
            ClipPolicy::Off,
        )?;
        let mut d_emb = Array3::zeros(self.embedding.dim());
        for b in 0..batch.len() {
            for t in 0..batch.lengths[b] {
                let bit = batch.bits[[b, t]] as usize & 1;
                let mut row = d_emb.index_axis_mut(Axis(0), bit);
                row += &g.d_inputs.slice(ndarray::s![t, b, .., ..]);
            }
        }
        let stats = BatchStats {
            loss: loss / n,
            accuracy: correct(&z, &batch.labels) as f64 / n,
        };
        Ok((
            stats,
            ParityGrads {
                embedding: d_emb,
                recurrent: g.d_recurrent,
                bias: g.d_bias,
                readout: d_readout,
                readout_bias: d_rbias,
            },
        ))
    }
}

fn correct(logits: &[f64], labels: &[u8]) -> usize {
    logits
        .iter()
        .zip(labels)
        .filter(|(z, &y)| (**z > 0.0) == (y == 1))
        .count()
}
