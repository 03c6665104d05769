//! JSON model files. Parameter arrays are stored as base64 of little-endian
//! `f64`s so every bit survives the round trip.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::FittedModel;
use crate::featurize::Vocabulary;
use crate::models::{CrParams, McNetParams, ModelKind, ModelParams, PcrParams, PriceScale};
use crate::nonparametric::{KMEstimate, RSModel};

const FORMAT: &str = "landscape-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub kind: ModelKind,
    /// Checksum of the vocabulary the model was trained against.
    pub vocab_checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    /// Integer metadata (KM `max_bid`, RS `z_max`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub integers: BTreeMap<String, u64>,
    pub arrays: BTreeMap<String, String>,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::ModelFile(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::ModelFile(
            "array length is not a multiple of 8 bytes".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl ModelFile {
    pub fn from_model(model: &FittedModel, vocab: &Vocabulary) -> Result<Self> {
        let mut f = ModelFile {
            format: FORMAT.into(),
            kind: model.kind(),
            vocab_checksum: vocab.checksum(),
            dimension: model.dimension(),
            hidden: None,
            components: None,
            integers: BTreeMap::new(),
            arrays: BTreeMap::new(),
        };
        let mut put = |name: &str, v: &[f64]| {
            f.arrays.insert(name.into(), encode_f64s(v));
        };
        match model {
            FittedModel::Params(p) => {
                let price = match p {
                    ModelParams::Cr(c) => c.price,
                    ModelParams::Pcr(c) => c.price,
                    ModelParams::McNet(c) => c.price,
                };
                put("price", &[price.offset, price.scale]);
                match p {
                    ModelParams::Cr(c) => {
                        put("beta", c.beta());
                        put("s", &[c.s()]);
                    }
                    ModelParams::Pcr(c) => {
                        put("beta", c.beta());
                        put("alpha", c.alpha());
                    }
                    ModelParams::McNet(c) => {
                        put("w1", &c.w1_row_major());
                        put("b1", &c.b1_values());
                        put("w2", &c.w2_values());
                        put("b2", &c.b2_values());
                    }
                }
                if let ModelParams::McNet(c) = p {
                    f.hidden = Some(c.hidden());
                    f.components = Some(c.components());
                }
            }
            FittedModel::Km(k) => {
                let prices: Vec<f64> = k.prices().iter().map(|&v| f64::from(v)).collect();
                put("prices", &prices);
                put("pmf", k.pmf());
                put("tail", &[k.tail_mass()]);
                f.integers.insert("max_bid".into(), u64::from(k.max_bid()));
            }
            FittedModel::Rs(r) => {
                put("p_win", &[r.p_win]);
                f.integers.insert("z_max".into(), u64::from(r.z_max));
            }
        }
        Ok(f)
    }

    fn array(&self, name: &str) -> Result<Vec<f64>> {
        let text = self
            .arrays
            .get(name)
            .ok_or_else(|| Error::ModelFile(format!("missing array {name}")))?;
        let values = decode_f64s(text)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelFile(format!(
                "array {name} has non-finite entries"
            )));
        }
        Ok(values)
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        match self.array(name)?.as_slice() {
            [v] => Ok(*v),
            other => Err(Error::ModelFile(format!(
                "{name} has {} entries, expected 1",
                other.len()
            ))),
        }
    }

    fn integer(&self, name: &str) -> Result<u32> {
        let v = self
            .integers
            .get(name)
            .ok_or_else(|| Error::ModelFile(format!("missing field {name}")))?;
        u32::try_from(*v).map_err(|_| Error::ModelFile(format!("{name} out of range")))
    }

    fn need(field: Option<usize>, name: &str) -> Result<usize> {
        field.ok_or_else(|| Error::ModelFile(format!("missing field {name}")))
    }

    pub fn to_model(&self) -> Result<FittedModel> {
        if self.format != FORMAT {
            return Err(Error::ModelFile(format!(
                "unsupported format {:?}",
                self.format
            )));
        }
        let shape = |e: Error| match e {
            Error::DimensionMismatch { expected, got } => {
                Error::ModelFile(format!("array has {got} entries, expected {expected}"))
            }
            other => other,
        };
        let price = || -> Result<PriceScale> {
            match self.array("price")?.as_slice() {
                &[offset, scale] if scale > 0.0 => Ok(PriceScale { offset, scale }),
                _ => Err(Error::ModelFile("bad price scale".into())),
            }
        };
        Ok(match self.kind {
            ModelKind::Cr => {
                let d = Self::need(self.dimension, "dimension")?;
                let mut v = self.array("beta")?;
                v.push(self.scalar("s")?);
                FittedModel::Params(ModelParams::Cr(
                    CrParams::from_values(d, v, price()?).map_err(shape)?,
                ))
            }
            ModelKind::Pcr => {
                let d = Self::need(self.dimension, "dimension")?;
                let mut v = self.array("beta")?;
                if v.len() != d {
                    return Err(Error::ModelFile(format!(
                        "beta has {} entries, expected {d}",
                        v.len()
                    )));
                }
                v.extend(self.array("alpha")?);
                FittedModel::Params(ModelParams::Pcr(
                    PcrParams::from_values(d, v, price()?).map_err(shape)?,
                ))
            }
            ModelKind::McNet => {
                let d = Self::need(self.dimension, "dimension")?;
                let h = Self::need(self.hidden, "hidden")?;
                let k = Self::need(self.components, "components")?;
                FittedModel::Params(ModelParams::McNet(McNetParams::from_parts(
                    d,
                    h,
                    k,
                    &self.array("w1")?,
                    &self.array("b1")?,
                    &self.array("w2")?,
                    &self.array("b2")?,
                    price()?,
                )?))
            }
            ModelKind::Km => {
                let prices = self
                    .array("prices")?
                    .into_iter()
                    .map(|p| {
                        if p >= 0.0 && p <= f64::from(u32::MAX) && p.fract() == 0.0 {
                            Ok(p as u32)
                        } else {
                            Err(Error::ModelFile(format!("bad KM price {p}")))
                        }
                    })
                    .collect::<Result<_>>()?;
                let est = KMEstimate::new(
                    prices,
                    self.array("pmf")?,
                    self.scalar("tail")?,
                    self.integer("max_bid")?,
                )
                .map_err(|e| Error::ModelFile(e.to_string()))?;
                FittedModel::Km(est)
            }
            ModelKind::Rs => {
                let p_win = self.scalar("p_win")?;
                let z_max = self.integer("z_max")?;
                if !(0.0..=1.0).contains(&p_win) || z_max == 0 {
                    return Err(Error::ModelFile("bad RS parameters".into()));
                }
                FittedModel::Rs(RSModel { p_win, z_max })
            }
            ModelKind::Oracle => {
                return Err(Error::ModelFile("oracle models are not stored".into()))
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))
    }

    /// Errors unless `vocab` is the vocabulary this model was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let got = vocab.checksum();
        if got != self.vocab_checksum {
            return Err(Error::ChecksumMismatch {
                model: self.vocab_checksum.clone(),
                vocab: got,
            });
        }
        if let Some(d) = self.dimension {
            if d != vocab.dimension() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: vocab.dimension(),
                });
            }
        }
        Ok(())
    }
}

pub fn save_model(path: &Path, model: &FittedModel, vocab: &Vocabulary) -> Result<()> {
    let text = ModelFile::from_model(model, vocab)?.to_json()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a model and checks it against `vocab`.
pub fn load_model(path: &Path, vocab: &Vocabulary) -> Result<FittedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = ModelFile::from_json(&text)?;
    file.check_vocab(vocab)?;
    file.to_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{build_vocabulary, BinSpec, RawRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab(cities: &[&str]) -> Vocabulary {
        let recs: Vec<RawRecord> = cities
            .iter()
            .map(|c| RawRecord::new(vec![("City".into(), (*c).into())], 10, None).unwrap())
            .collect();
        build_vocabulary(&recs, 0, &BinSpec::new()).unwrap()
    }

    fn round_trip(m: &FittedModel, v: &Vocabulary) -> FittedModel {
        let f = ModelFile::from_model(m, v).unwrap();
        let back = ModelFile::from_json(&f.to_json().unwrap()).unwrap();
        back.check_vocab(v).unwrap();
        back.to_model().unwrap()
    }

    #[test]
    fn every_kind_round_trips_bitwise() {
        let v = vocab(&["A", "B"]);
        let d = v.dimension();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let price = PriceScale {
            offset: 123.456,
            scale: 7.0 / 3.0,
        };
        let models = [
            FittedModel::Params(ModelParams::Cr(
                CrParams::random(d, 1.0, &mut rng).with_price(price),
            )),
            FittedModel::Params(ModelParams::Pcr(
                PcrParams::random(d, 1.0, &mut rng).with_price(price),
            )),
            FittedModel::Params(ModelParams::McNet({
                let mut m = McNetParams::random(d, 5, 3, 0.3, &mut rng).unwrap();
                m.price = price;
                m
            })),
            FittedModel::Km(
                KMEstimate::new(vec![1, 4], vec![0.1, 1.0 / 3.0], 1.0 - 0.1 - 1.0 / 3.0, 9)
                    .unwrap(),
            ),
            FittedModel::Rs(RSModel {
                p_win: 0.2287,
                z_max: 300,
            }),
        ];
        for m in &models {
            assert_eq!(&round_trip(m, &v), m, "{:?}", m.kind());
        }
    }

    #[test]
    fn wrong_vocabulary_is_rejected() {
        let v = vocab(&["A", "B"]);
        let m = FittedModel::Params(ModelParams::Cr(CrParams::zeros(v.dimension())));
        let f = ModelFile::from_model(&m, &v).unwrap();
        assert!(matches!(
            f.check_vocab(&vocab(&["A", "C"])),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn truncated_or_tampered_files_fail() {
        let v = vocab(&["A"]);
        let m = FittedModel::Params(ModelParams::Pcr(
            PcrParams::new(vec![1.0; 3], vec![0.0; 3]).unwrap(),
        ));
        let text = ModelFile::from_model(&m, &v).unwrap().to_json().unwrap();
        assert!(ModelFile::from_json(&text[..text.len() / 2]).is_err());

        let mut f = ModelFile::from_json(&text).unwrap();
        f.arrays.insert("alpha".into(), encode_f64s(&[0.0; 2]));
        assert!(matches!(f.to_model(), Err(Error::ModelFile(_))));
        f.arrays.insert("alpha".into(), "@@@".into());
        assert!(f.to_model().is_err());
    }
}
