//! The trainable model (encoder followed by message passing) and its checkpoint file.
//!
//! A checkpoint is a text manifest followed by the parameter matrices in
//! `MAT` format, in manifest order:
//!
//! ```text
//! SAMPCKPT 1
//! encoder <input_dim> <layer_count>
//! samp <dim> <heads> <steps>
//! param <name> <rows> <cols>
//! ...
//! END
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::encoder::{DenseLayer, EncoderParams, EncoderVars};
use crate::error::{shape_err, Error, Result};
use crate::numcore::{Matrix, Rng, Tape, Var};
use crate::samp::{HeadWeights, SampParams, SampVars};

/// Anything holding named trainable matrices in a stable order.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Matrix)>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.data().len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub samp: SampParams,
}

impl Model {
    /// Default architecture: MLP `input → 64 → dim` followed by SAMP.
    pub fn init(input_dim: usize, dim: usize, steps: usize, heads: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let encoder = EncoderParams::default_mlp(input_dim, dim, &mut rng)?;
        let samp = SampParams::new(dim, steps, heads, &mut rng)?;
        Self::new(encoder, samp)
    }

    pub fn new(encoder: EncoderParams, samp: SampParams) -> Result<Self> {
        if encoder.output_dim() != samp.dim() {
            return Err(shape_err!("encoder emits {} dimensions, SAMP expects {}", encoder.output_dim(), samp.dim()));
        }
        Ok(Self { encoder, samp })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn dim(&self) -> usize {
        self.samp.dim()
    }

    /// Register all parameters as trainable leaves.
    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars { encoder: self.encoder.register(tape), samp: self.samp.register(tape) }
    }

    pub fn register_frozen(&self, tape: &mut Tape) -> ModelVars {
        ModelVars { encoder: self.encoder.register_frozen(tape), samp: self.samp.register_frozen(tape) }
    }

    /// Handles for this architecture from a flat list in [`Parameterized::named_params`] order.
    pub fn vars_from_flat(&self, vars: &[Var]) -> Result<ModelVars> {
        let split = 2 * self.encoder.layers().len();
        let expected = split + 3 * self.samp.heads() * self.samp.num_steps();
        if vars.len() != expected {
            return Err(shape_err!("{} handles for {expected} parameters", vars.len()));
        }
        Ok(ModelVars {
            encoder: EncoderVars::from_flat(self.encoder.input_dim(), &vars[..split]),
            samp: SampVars::from_flat(self.samp.dim(), self.samp.heads(), &vars[split..]),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "SAMPCKPT 1")?;
        writeln!(w, "encoder {} {}", self.encoder.input_dim(), self.encoder.layers().len())?;
        writeln!(w, "samp {} {} {}", self.samp.dim(), self.samp.heads(), self.samp.num_steps())?;
        let params = self.named_params();
        for (name, m) in &params {
            writeln!(w, "param {name} {} {}", m.rows(), m.cols())?;
        }
        writeln!(w, "END")?;
        for (_, m) in &params {
            m.write_to(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |r: &mut R| -> Result<Vec<String>> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Parse("unexpected end of checkpoint manifest".into()));
            }
            Ok(line.split_whitespace().map(str::to_string).collect())
        };
        let num = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse(format!("bad number {s:?} in checkpoint")))
        };

        if next_line(r)? != ["SAMPCKPT", "1"] {
            return Err(Error::Parse("not a version 1 checkpoint".into()));
        }
        let enc = next_line(r)?;
        let samp = next_line(r)?;
        if enc.len() != 3 || enc[0] != "encoder" || samp.len() != 4 || samp[0] != "samp" {
            return Err(Error::Parse("malformed checkpoint architecture lines".into()));
        }
        let (input_dim, layer_count) = (num(&enc[1])?, num(&enc[2])?);
        let (dim, heads, steps) = (num(&samp[1])?, num(&samp[2])?, num(&samp[3])?);

        let mut shapes = Vec::new();
        loop {
            let fields = next_line(r)?;
            match fields.first().map(String::as_str) {
                Some("END") => break,
                Some("param") if fields.len() == 4 => {
                    shapes.push((fields[1].clone(), num(&fields[2])?, num(&fields[3])?))
                }
                _ => return Err(Error::Parse(format!("bad manifest line {fields:?}"))),
            }
        }
        let mut mats = Vec::with_capacity(shapes.len());
        for (name, rows, cols) in &shapes {
            let m = Matrix::read_from(r)?;
            if m.shape() != (*rows, *cols) {
                return Err(shape_err!("{name} stored as {}x{}, manifest says {rows}x{cols}", m.rows(), m.cols()));
            }
            mats.push(m);
        }
        if mats.len() != 2 * layer_count + 3 * steps * heads {
            return Err(shape_err!(
                "checkpoint holds {} matrices, architecture needs {}",
                mats.len(),
                2 * layer_count + 3 * steps * heads
            ));
        }
        let mut it = mats.into_iter();
        let layers = (0..layer_count)
            .map(|_| DenseLayer { weight: it.next().expect("counted"), bias: it.next().expect("counted") })
            .collect();
        let encoder = EncoderParams::from_layers(input_dim, layers)?;
        let samp_steps = (0..steps)
            .map(|_| {
                (0..heads)
                    .map(|_| HeadWeights {
                        query: it.next().expect("counted"),
                        key: it.next().expect("counted"),
                        value: it.next().expect("counted"),
                    })
                    .collect()
            })
            .collect();
        let samp = SampParams::from_weights(dim, heads, samp_steps)?;
        Self::new(encoder, samp)
    }
}

/// A [`Model`] living on a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub samp: SampVars,
}

impl ModelVars {
    pub fn vars(&self) -> Vec<Var> {
        self.encoder.vars().chain(self.samp.vars()).collect()
    }
}

impl Parameterized for Model {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.encoder.named_params();
        out.extend(self.samp.named_params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.params_mut();
        out.extend(self.samp.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = Model::init(5, 8, 2, 4, 3).unwrap();
        let bytes = m.to_bytes();
        let back = Model::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_mismatched_architecture() {
        let mut rng = Rng::new(0);
        let enc = EncoderParams::mlp(&[3, 6], &mut rng).unwrap();
        let samp = SampParams::new(8, 1, 2, &mut rng).unwrap();
        assert!(Model::new(enc, samp).is_err());
        assert!(Model::read_from(&mut b"SAMPCKPT 2\n".as_slice()).is_err());
    }

    #[test]
    fn parameter_order_is_encoder_then_samp() {
        let m = Model::init(3, 4, 1, 2, 0).unwrap();
        let names: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "encoder.0.weight");
        assert_eq!(names[4], "samp.0.0.query");
        assert_eq!(names.len(), 4 + 6);
        assert_eq!(m.param_count(), 3 * 64 + 64 + 64 * 4 + 4 + 6 * 2 * 4);
    }
}
