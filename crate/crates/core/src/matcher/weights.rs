//! Matcher parameters and their on-disk format.
//!
//! The file is a text header (config echo and shape manifest, terminated by a
//! line `end`) followed by every tensor, row-major, as little-endian `f64`.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{AggregationMode, MatcherConfig};
use crate::rng::{stream, StreamKind};
use crate::{Error, Result};

const MAGIC: &str = "objpose-matcher-weights";
const FORMAT_VERSION: u32 = 1;

/// Query/key/value/output projections of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
}

impl AttentionWeights {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: DMatrix::zeros(d, d),
            wk: DMatrix::zeros(d, d),
            wv: DMatrix::zeros(d, d),
            wo: DMatrix::zeros(d, d),
        }
    }

    #[cfg(test)]
    pub(crate) fn tensor_mut(&mut self, idx: usize) -> &mut DMatrix<f64> {
        match idx {
            0 => &mut self.wq,
            1 => &mut self.wk,
            2 => &mut self.wv,
            _ => &mut self.wo,
        }
    }
}

/// One attention group: aggregation, self and cross attention.
///
/// The self layer is shared by the query set and the 3D set, and the cross
/// layer by both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupWeights {
    pub aggregation: DMatrix<f64>,
    pub self_attention: AttentionWeights,
    pub cross_attention: AttentionWeights,
}

impl GroupWeights {
    pub fn zeros(d: usize) -> Self {
        Self {
            aggregation: DMatrix::zeros(d, d),
            self_attention: AttentionWeights::zeros(d),
            cross_attention: AttentionWeights::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherWeights {
    pub config: MatcherConfig,
    pub groups: Vec<GroupWeights>,
}

/// Weight gradients share the weights' layout.
pub type WeightGradients = MatcherWeights;

const LAYER_NAMES: [&str; 9] = [
    "aggregation.w",
    "self.wq",
    "self.wk",
    "self.wv",
    "self.wo",
    "cross.wq",
    "cross.wk",
    "cross.wv",
    "cross.wo",
];

impl MatcherWeights {
    pub fn zeros(config: &MatcherConfig) -> Self {
        Self {
            config: config.clone(),
            groups: (0..config.num_groups)
                .map(|_| GroupWeights::zeros(config.descriptor_dim))
                .collect(),
        }
    }

    /// Gaussian initialization with standard deviation `gain / sqrt(d)`.
    pub fn random(config: &MatcherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.descriptor_dim;
        let std = 1.0 / (d as f64).sqrt();
        let mut w = Self::zeros(config);
        for (t, m) in w.tensors_mut().into_iter().enumerate() {
            let mut rng = stream(seed, StreamKind::Weights, t as u64);
            let gain = if t % LAYER_NAMES.len() == 0 { 1.0 } else { 0.5 };
            m.iter_mut()
                .for_each(|x| *x = gain * std * rng.sample::<f64, _>(StandardNormal));
        }
        Ok(w)
    }

    /// Tensors in manifest order.
    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        self.groups
            .iter()
            .flat_map(|g| {
                [
                    &g.aggregation,
                    &g.self_attention.wq,
                    &g.self_attention.wk,
                    &g.self_attention.wv,
                    &g.self_attention.wo,
                    &g.cross_attention.wq,
                    &g.cross_attention.wk,
                    &g.cross_attention.wv,
                    &g.cross_attention.wo,
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        self.groups
            .iter_mut()
            .flat_map(|g| {
                [
                    &mut g.aggregation,
                    &mut g.self_attention.wq,
                    &mut g.self_attention.wk,
                    &mut g.self_attention.wv,
                    &mut g.self_attention.wo,
                    &mut g.cross_attention.wq,
                    &mut g.cross_attention.wk,
                    &mut g.cross_attention.wv,
                    &mut g.cross_attention.wo,
                ]
            })
            .collect()
    }

    /// `(name, rows, cols)` for every tensor, in storage order.
    pub fn manifest(&self) -> Vec<(String, usize, usize)> {
        self.tensors()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let name = format!("group.{}.{}", i / LAYER_NAMES.len(), LAYER_NAMES[i % LAYER_NAMES.len()]);
                (name, m.nrows(), m.ncols())
            })
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// All entries, tensor by tensor, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for m in self.tensors() {
            for r in 0..m.nrows() {
                out.extend(m.row(r).iter());
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch {
                what: "flat weight vector",
                expected: self.num_parameters(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let (rows, cols) = m.shape();
            for r in 0..rows {
                for c in 0..cols {
                    m[(r, c)] = flat[offset + r * cols + c];
                }
            }
            offset += rows * cols;
        }
        Ok(())
    }

    /// Name of the first tensor containing a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        let manifest = self.manifest();
        self.tensors()
            .iter()
            .position(|m| m.iter().any(|x| !x.is_finite()))
            .map(|i| manifest[i].0.clone())
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        if self.groups.len() != self.config.num_groups {
            return Err(Error::DimensionMismatch {
                what: "attention groups",
                expected: self.config.num_groups,
                actual: self.groups.len(),
            });
        }
        let d = self.config.descriptor_dim;
        for m in self.tensors() {
            if m.shape() != (d, d) {
                return Err(Error::DimensionMismatch {
                    what: "weight tensor side",
                    expected: d,
                    actual: m.nrows().max(m.ncols()),
                });
            }
        }
        if let Some(name) = self.first_non_finite() {
            return Err(Error::NonFinite { layer: name });
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        writeln!(out, "{MAGIC} {FORMAT_VERSION}")?;
        writeln!(out, "num_groups {}", c.num_groups)?;
        writeln!(out, "descriptor_dim {}", c.descriptor_dim)?;
        writeln!(out, "track_sample {}", c.track_sample)?;
        writeln!(out, "confidence_threshold {:?}", c.confidence_threshold)?;
        writeln!(out, "kernel_epsilon {:?}", c.kernel_epsilon)?;
        writeln!(out, "score_scale {:?}", c.score_scale)?;
        writeln!(out, "aggregation {}", c.aggregation.as_str())?;
        let manifest = self.manifest();
        writeln!(out, "tensors {}", manifest.len())?;
        for (name, r, cols) in &manifest {
            writeln!(out, "{name} {r} {cols}")?;
        }
        writeln!(out, "end")?;
        for x in self.to_flat() {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::Format("unexpected end of weights header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let bad = |what: &str| Error::Format(format!("weights header: bad {what}"));

        let magic = next_line(&mut input)?;
        if magic != format!("{MAGIC} {FORMAT_VERSION}") {
            return Err(bad("magic/version line"));
        }
        let mut field = |input: &mut R, key: &str| -> Result<String> {
            let l = next_line(input)?;
            let (k, v) = l.split_once(' ').ok_or_else(|| bad(key))?;
            if k != key {
                return Err(bad(key));
            }
            Ok(v.to_string())
        };
        let parse_usize = |s: String, key: &str| s.parse::<usize>().map_err(|_| bad(key));
        let parse_f64 = |s: String, key: &str| s.parse::<f64>().map_err(|_| bad(key));

        let config = MatcherConfig {
            num_groups: parse_usize(field(&mut input, "num_groups")?, "num_groups")?,
            descriptor_dim: parse_usize(field(&mut input, "descriptor_dim")?, "descriptor_dim")?,
            track_sample: parse_usize(field(&mut input, "track_sample")?, "track_sample")?,
            confidence_threshold: parse_f64(field(&mut input, "confidence_threshold")?, "confidence_threshold")?,
            kernel_epsilon: parse_f64(field(&mut input, "kernel_epsilon")?, "kernel_epsilon")?,
            score_scale: parse_f64(field(&mut input, "score_scale")?, "score_scale")?,
            aggregation: AggregationMode::parse(&field(&mut input, "aggregation")?).ok_or_else(|| bad("aggregation"))?,
        };
        config.validate()?;
        let count = parse_usize(field(&mut input, "tensors")?, "tensors")?;
        let mut weights = MatcherWeights::zeros(&config);
        let expected = weights.manifest();
        if count != expected.len() {
            return Err(bad("tensor count"));
        }
        for (name, r, c) in &expected {
            let l = next_line(&mut input)?;
            if l != format!("{name} {r} {c}") {
                return Err(Error::Format(format!("weights header: expected `{name} {r} {c}`, found `{l}`")));
            }
        }
        if next_line(&mut input)? != "end" {
            return Err(bad("terminator"));
        }

        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let n = weights.num_parameters();
        if bytes.len() != n * 8 {
            return Err(Error::Format(format!(
                "weights payload has {} bytes, expected {}",
                bytes.len(),
                n * 8
            )));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        weights.set_flat(&flat)?;
        weights.check_shapes()?;
        Ok(weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
