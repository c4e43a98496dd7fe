//! Self-describing model files.
//!
//! Counts are stored as integers. Probabilities and weights are stored as
//! decimal text with 17 significant digits, which reproduces every `f64`
//! (and so every `f32`) bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backoff::{Model, ModelConfig};
use crate::counts::CountTable;
use crate::error::{Error, Result};
use crate::estimation::{DiscountTable, Fallback};
use crate::lattice::{LatticeSpec, NodeId};
use crate::mixture::MixtureWeights;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

/// A float written as `{:.16e}` text.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decimal(pub f64);

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:.16e}", self.0))
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse::<f64>()
            .map(Decimal)
            .map_err(|_| serde::de::Error::custom(format!("bad decimal {s:?}")))
    }
}

/// Which packaged task produced the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskInfo {
    Ngram { order: usize },
    Ppattach,
    Syncdep,
    Custom,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// File name to SHA-256 of its contents.
    pub corpus_hashes: BTreeMap<String, String>,
    pub k: u64,
    pub seed: Option<u64>,
    pub tool_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCounts {
    pub node: NodeId,
    /// `(outcome key, context key, count)`.
    pub entries: Vec<(String, String, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDiscounts {
    pub node: NodeId,
    pub k: u64,
    pub betas: Vec<Decimal>,
    pub fallbacks: Vec<Fallback>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub task: TaskInfo,
    pub config: ModelConfig,
    pub lattice: LatticeSpec,
    pub counts: Vec<NodeCounts>,
    pub discounts: Vec<NodeDiscounts>,
    /// Trained `Pr(Φ)` per edge id.
    pub weights: Vec<Decimal>,
    pub vocabulary: Vec<Vec<String>>,
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn from_model<T: Scalar>(model: &Model<T>, task: TaskInfo, provenance: Provenance) -> Self {
        let lattice = model.lattice();
        ModelFile {
            format_version: FORMAT_VERSION,
            task,
            config: model.config().clone(),
            lattice: LatticeSpec::from_lattice(lattice),
            counts: model
                .counts()
                .iter()
                .map(|t| NodeCounts {
                    node: t.node,
                    entries: t
                        .entries()
                        .map(|(o, c, n)| (o.to_owned(), c.to_owned(), n))
                        .collect(),
                })
                .collect(),
            discounts: model
                .discounts()
                .iter()
                .enumerate()
                .map(|(node, d)| NodeDiscounts {
                    node,
                    k: d.k(),
                    betas: d.betas().iter().map(|b| Decimal(b.as_f64())).collect(),
                    fallbacks: d.fallbacks().to_vec(),
                })
                .collect(),
            weights: model
                .weights()
                .as_slice()
                .iter()
                .map(|w| Decimal(w.as_f64()))
                .collect(),
            vocabulary: lattice
                .nodes()
                .iter()
                .map(|n| model.vocabulary(n.id).map(str::to_owned).collect())
                .collect(),
            provenance,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelFile::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        let lattice = self.lattice.to_lattice()?;
        let n = lattice.nodes().len();
        let bad = |what: &str| Error::ModelFile(format!("{what} do not match the lattice's {n} nodes"));
        if self.counts.len() != n || self.discounts.len() != n || self.vocabulary.len() != n {
            return Err(bad("per-node sections"));
        }
        let mut counts = Vec::with_capacity(n);
        for (i, nc) in self.counts.iter().enumerate() {
            if nc.node != i {
                return Err(bad("count tables"));
            }
            let mut t = CountTable::new(i);
            for (o, c, k) in &nc.entries {
                t.add(o, c, *k);
            }
            counts.push(t);
        }
        let discounts = self
            .discounts
            .iter()
            .map(|d| {
                let betas = d
                    .betas
                    .iter()
                    .map(|b| T::from_f64(b.0).ok_or_else(|| Error::ModelFile("bad discount".into())))
                    .collect::<Result<Vec<T>>>()?;
                DiscountTable::from_parts(d.k, betas, d.fallbacks.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = MixtureWeights::from_vec(
            &lattice,
            self.weights
                .iter()
                .map(|w| T::from_f64(w.0).ok_or_else(|| Error::ModelFile("bad weight".into())))
                .collect::<Result<Vec<T>>>()?,
        )?;
        Model::from_parts(
            lattice,
            counts,
            discounts,
            weights,
            self.vocabulary.clone(),
            self.config.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::Observation;
    use crate::events::{ConditionalQuery, Event};
    use crate::lattice::build_ngram_chain;

    #[test]
    fn decimal_round_trips_bits() {
        for x in [0.1f64, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 0.9999999999999999, f64::from(0.1f32)] {
            let s = serde_json::to_string(&Decimal(x)).unwrap();
            let back: Decimal = serde_json::from_str(&s).unwrap();
            assert_eq!(back.0.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn bigram_model_round_trip() {
        let l = build_ngram_chain(2).unwrap();
        let s = l.schema().clone();
        let toks = ["a", "b", "a", "c", "b", "b", "a", "d", "a", "b"];
        let obs: Vec<Observation> = toks
            .windows(2)
            .map(|w| {
                Observation::new(
                    ConditionalQuery::new(
                        Event::from_pairs(s.clone(), [(1, w[1])]).unwrap(),
                        Event::from_pairs(s.clone(), [(0, w[0])]).unwrap(),
                    )
                    .unwrap(),
                )
            })
            .collect();
        let m = Model::<f64>::from_observations(l, &obs, ModelConfig::with_k(3)).unwrap();
        let file = ModelFile::from_model(&m, TaskInfo::Ngram { order: 2 }, Provenance::default());
        let text = file.to_json().unwrap();
        let back: Model<f64> = ModelFile::from_json(&text).unwrap().to_model().unwrap();
        for h in ["a", "b", "c", "d", "e"] {
            for w in ["a", "b", "c", "d"] {
                let q = ConditionalQuery::new(
                    Event::from_pairs(s.clone(), [(1, w)]).unwrap(),
                    Event::from_pairs(s.clone(), [(0, h)]).unwrap(),
                )
                .unwrap();
                assert_eq!(m.prob(0, &q).unwrap().to_bits(), back.prob(0, &q).unwrap().to_bits());
            }
        }
        // saving the reloaded model reproduces the file
        let again = ModelFile::from_model(&back, TaskInfo::Ngram { order: 2 }, Provenance::default());
        assert_eq!(again.to_json().unwrap(), text);
    }

    #[test]
    fn rejects_other_versions() {
        let l = build_ngram_chain(1).unwrap();
        let m = Model::<f64>::new(l.clone(), crate::counts::ingest(&[], &l).unwrap(), ModelConfig::default()).unwrap();
        let mut file = ModelFile::from_model(&m, TaskInfo::Custom, Provenance::default());
        file.format_version = 99;
        let text = serde_json::to_string(&file).unwrap();
        assert!(matches!(ModelFile::from_json(&text), Err(Error::ModelFile(_))));
    }
}
